from __future__ import annotations

import pytest

from dualib.model import AdmissionOutcome, Config, Libraries, deprecate_tool
from dualib.providers.embedding import EmbeddingBank, HashingEmbedder, cosine
from dualib.providers.scripted import ScriptedProvider
from dualib.solver import retrieve_similar, run_candidate, select_best, solve_question

from conftest import make_example, make_tool


def test_select_best_lowest_index_on_ties():
    assert select_best([None, 9.0, 9.5, 9.5]) == 2
    assert select_best([None, None]) is None
    assert select_best([8.0]) == 0


def _library(room, questions):
    libs = Libraries()
    for eid, q in questions.items():
        libs.examples[eid] = make_example(eid, 'return len(loc("cup"))\n', room, libs, question=q)
    return libs


def test_retrieval_threshold_order_and_self_exclusion(room):
    qs = {
        "a": "How many cups are there in the image?",
        "b": "How many cups are there in the picture?",
        "c": "How many chairs are there in the image?",
        "d": "Which is farthest from the camera: the lamp or the sofa?",
    }
    libs = _library(room, qs)
    bank = EmbeddingBank(HashingEmbedder())
    cfg = Config()
    got = retrieve_similar(libs, "a", qs["a"], bank, cfg)
    assert "a" not in [e.id for e in got]
    qv = bank.get(qs["a"])
    sims = [cosine(qv, bank.get(e.question)) for e in got]
    assert all(s >= cfg.sim_threshold for s in sims)
    assert sims == sorted(sims, reverse=True)
    assert "d" not in [e.id for e in got]
    assert len(retrieve_similar(libs, "zz", qs["a"], bank, cfg.replace(retrieval_k_max=1))) == 1


def test_run_candidate_statuses(room):
    libs = Libraries()
    t = make_tool('def count_of(label: text) {\n  "n"\n  return len(loc(label))\n}\n', libs)
    libs.tools[t.name] = t
    assert run_candidate(0, "return (\n", room, libs).status == "parse_error"
    assert run_candidate(0, "return loc(1)\n", room, libs).status == "exec_error"
    assert run_candidate(0, "return null\n", room, libs).status == "no_result"
    ok = run_candidate(0, 'return count_of("cup")\n', room, libs)
    assert ok.status == "ok" and ok.tools_used == ("count_of",)
    deprecate_tool(libs, "count_of", "Merged into x")
    assert run_candidate(0, 'return count_of("cup")\n', room, libs).status == "deprecated_tool"


def test_solve_question_judges_survivors_only(room):
    progs = ["return (\n", 'return len(loc("cup"))\n', "return loc(1)\n", 'return len(loc("cup")) + 0\n']
    replies = {
        "prog_gen": {f"key:prog_gen/q1/i1/s{j}": f"<program>\n{p}</program>" for j, p in enumerate(progs)},
        "quality_judge": {"key:quality_judge/q1/i1/s1": "<rating>9.0</rating>",
                          "key:quality_judge/q1/i1/s3": "<rating>9.2</rating>"},
    }
    p = ScriptedProvider(replies)
    libs = Libraries()
    res = solve_question(libs, "q1", "How many cups?", room, p, EmbeddingBank(HashingEmbedder()), Config(),
                         step=1, tag="i1")
    assert [c.status for c in res.candidates.candidates] == ["parse_error", "ok", "exec_error", "ok"]
    assert p.calls["quality_judge"] == 2
    assert res.candidates.best_index == 3 and res.outcome is AdmissionOutcome.INSERTED
    assert libs.examples["q1"].result == 2 and libs.examples["q1"].quality == 9.2


def test_solve_question_malformed_generation_becomes_candidate_error(room):
    replies = {"prog_gen": {f"key:prog_gen/q1/s{j}": "no tags at all" for j in range(4)}}
    res = solve_question(Libraries(), "q1", "How many cups?", room, ScriptedProvider(replies),
                         EmbeddingBank(HashingEmbedder()), Config())
    assert res.outcome is None and {c.status for c in res.candidates.candidates} == {"reply_error"}


def test_low_quality_is_rejected(room):
    replies = {"prog_gen": {f"key:prog_gen/q1/s{j}": '<program>\nreturn 1\n</program>' for j in range(4)},
               "quality_judge": {f"key:quality_judge/q1/s{j}": "<rating>7</rating>" for j in range(4)}}
    libs = Libraries()
    res = solve_question(libs, "q1", "How many cups?", room, ScriptedProvider(replies),
                         EmbeddingBank(HashingEmbedder()), Config())
    assert res.outcome is AdmissionOutcome.REJECTED_QUALITY and not libs.examples


@pytest.mark.parametrize("workers", [1, 4])
def test_parallel_generation_is_deterministic(room, workers):
    from dualib.providers.desk import DeskPolicy

    p = ScriptedProvider({}, DeskPolicy({room.id: room}))
    libs = Libraries()
    res = solve_question(libs, "q1", "How many cups are there in the image?", room, p,
                         EmbeddingBank(HashingEmbedder()), Config(), workers=workers)
    assert res.answer == 2
