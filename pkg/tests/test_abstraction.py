from __future__ import annotations

import numpy as np
import pytest

from dualib.abstraction import (
    Cluster, abstraction_pass, apply_rewrites, assess_cluster, average_link, cluster_by_similarity,
    create_tool, draft_tool, validate_tool,
)
from dualib.errors import MalformedReplyError
from dualib.model import Config, Libraries, Status, deprecate_tool
from dualib.providers.embedding import EmbeddingBank, HashingEmbedder
from dualib.providers.scripted import ScriptedProvider

from conftest import COUNT_TOOL, gate_fixture, make_example, make_tool


def _unit(*rows):
    a = np.array(rows, dtype=float)
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def test_average_link_hand_example():
    v = _unit([1, 0, 0], [0.99, 0.1, 0], [0, 1, 0], [0, 0.98, 0.2], [0, 0, 1])
    assert average_link(v, 0.8) == [[0, 1], [2, 3], [4]]
    # all pairwise cosines are non-negative, so a zero threshold merges everything
    assert average_link(v, 0.0) == [[0, 1, 2, 3, 4]]
    assert average_link(v, 0.9999) == [[0], [1], [2], [3], [4]]


def test_average_link_uses_mean_not_max():
    # 0-1 and 1-2 are similar, 0-2 are not; their average drops below the threshold
    v = _unit([1, 0], [1, 1], [0, 1])
    groups = average_link(v, 0.7)
    assert [0, 1, 2] not in groups


def test_cluster_by_similarity_min_size_and_fresh_only(room):
    libs = Libraries()
    for i in range(5):
        libs.examples[f"e{i}"] = make_example(f"e{i}", 'return len(loc("cup"))\n', room, libs,
                                              question=f"How many cups are there in the image {i}?")
    bank = EmbeddingBank(HashingEmbedder())
    cfg = Config()
    (c,) = cluster_by_similarity(libs, bank, cfg)
    assert c.example_ids == ("e0", "e1", "e2", "e3", "e4")
    libs.examples["e0"].status = Status.ABSTRACTED
    libs.examples["e1"].status = Status.ABSTRACTED
    assert cluster_by_similarity(libs, bank, cfg) == []


def test_assess_cluster_refuses_small_clusters(room):
    libs, _, _, _ = gate_fixture(3)
    with pytest.raises(ValueError):
        assess_cluster(Cluster(tuple(libs.examples)), libs, ScriptedProvider(), Config())


def test_assess_cluster_rejects_out_of_range_ids():
    libs, _, _, _ = gate_fixture(4)
    p = ScriptedProvider({}, policy=lambda req: (
        "<cluster><example_ids>1, 9</example_ids><abstraction_potential>9.5</abstraction_potential></cluster>"))
    with pytest.raises(MalformedReplyError):
        assess_cluster(Cluster(tuple(libs.examples)), libs, p, Config())


def test_validate_passes_when_all_agree():
    libs, tool, p, scenes = gate_fixture(4)
    res = validate_tool(tool, list(libs.examples.values()), libs, p, Config(), scenes, key_prefix="t")
    assert res.passed and res.stage == "passed" and res.divergent_count == 0
    assert p.calls["correctness_judge"] == 0


def test_stage_one_exits_early_on_first_failure():
    libs, tool, p, scenes = gate_fixture(5, failing={"e2"})
    res = validate_tool(tool, list(libs.examples.values()), libs, p, Config(), scenes, key_prefix="t")
    assert not res.passed and res.stage == "execution"
    # e1 once, e2 twice (both attempts fail), then stop
    assert p.calls["rewriter"] == 3
    full = validate_tool(tool, list(libs.examples.values()), libs, gate_fixture(5, failing={"e2"})[2],
                         Config(), scenes, key_prefix="t", exhaustive=True)
    assert not full.passed and full.stage == "execution" and len(full.rewrite_failures) == 1


def test_rewrite_must_call_tool_and_avoid_forbidden(room):
    libs, tool, _, scenes = gate_fixture(4)
    echo = ScriptedProvider({}, policy=lambda req: '<program>\nreturn len(loc("cup"))\n</program>')
    res = validate_tool(tool, list(libs.examples.values()), libs, echo, Config(), scenes, key_prefix="t")
    assert not res.passed and "does not call" in res.failure_detail
    old = make_tool('def old_count(label: text) {\n  "n"\n  return len(loc(label))\n}\n', libs)
    libs.tools[old.name] = old
    uses_old = ScriptedProvider({}, policy=lambda req: '<program>\nreturn count_of("cup") + old_count("x")\n</program>')
    res = validate_tool(tool, list(libs.examples.values()), libs, uses_old, Config(), scenes, key_prefix="t",
                        forbidden=frozenset({"old_count"}))
    assert not res.passed and "retired" in res.failure_detail


def test_second_rewrite_attempt_can_rescue():
    libs, tool, p, scenes = gate_fixture(4)
    p.replies["rewriter"]["key:rewriter/t/count_of/e1/a0"] = "<program>\nreturn count_of(\n</program>"
    res = validate_tool(tool, list(libs.examples.values()), libs, p, Config(), scenes, key_prefix="t")
    assert res.passed and res.rewrites["e1"].attempts == 2


def test_divergent_but_correct_passes():
    libs, tool, p, scenes = gate_fixture(7, divergent={"e3": "CORRECT"})
    res = validate_tool(tool, list(libs.examples.values()), libs, p, Config(), scenes, key_prefix="t")
    assert res.passed and res.divergent_count == 1 and res.correct_divergent_count == 1
    assert res.overall_correct == 1.0


def test_apply_rewrites_marks_abstracted():
    libs, tool, p, scenes = gate_fixture(4)
    res = validate_tool(tool, list(libs.examples.values()), libs, p, Config(), scenes, key_prefix="t")
    libs.tools[tool.name] = tool
    changed = apply_rewrites(libs, res)
    assert changed == ["e1", "e2", "e3", "e4"]
    assert all(e.status is Status.ABSTRACTED and e.tools_used == ("count_of",) for e in libs.examples.values())


def test_draft_tool_checks():
    libs = Libraries()
    t = draft_tool(COUNT_TOOL, libs, source_ids=("e1",))
    assert t.level == 1 and t.name == "count_of"
    libs.tools[t.name] = t
    again = draft_tool(COUNT_TOOL, libs, source_ids=("e1",))
    assert again.name == "count_of_2" and "def count_of_2(" in again.body
    with pytest.raises(ValueError, match="docstring"):
        draft_tool("def f(a: text) {\n  return 1\n}\n", libs)
    with pytest.raises(ValueError, match="unknown"):
        draft_tool('def f(a: text) {\n  "d"\n  return ghost(a)\n}\n', libs)
    deprecate_tool(libs, "count_of", "Merged into x")
    with pytest.raises(ValueError, match="retired"):
        draft_tool('def f(a: text) {\n  "d"\n  return count_of(a)\n}\n', libs)
    two = draft_tool('def g(a: text) {\n  "d"\n  return count_of_2(a) + 1\n}\n',
                     _with(libs, again), source_ids=("e1",))
    assert two.level == 2


def _with(libs, tool):
    libs.tools[tool.name] = tool
    return libs


def _creation_provider(libs, first_draft, prefix="p"):
    replies = {"abstractor": {f"key:abstractor/{prefix}/a0": f"<tool>\n{first_draft}</tool>",
                              f"key:abstractor/{prefix}/a1": f"<tool>\n{COUNT_TOOL}</tool>"},
               "rewriter": {}}
    for eid in libs.examples:
        for a in range(2):
            replies["rewriter"][f"key:rewriter/{prefix}/a1/count_of/{eid}/a{a}"] = \
                '<program>\nreturn count_of("cup")\n</program>'
    return ScriptedProvider(replies)


def test_create_tool_retries_after_rejected_draft():
    libs, _, _, scenes = gate_fixture(4)
    p = _creation_provider(libs, "def broken(\n")
    records = []
    res = create_tool(Cluster(tuple(libs.examples)), libs, p, Config(), scenes, step=3, key_prefix="p",
                      archive=records.append)
    assert res.ok and res.tool.attempt == 2 and res.tool.created_at_step == 3
    assert "count_of" in libs.tools and records[0]["error"]
    assert all(e.status is Status.ABSTRACTED for e in libs.examples.values())


def test_create_tool_failure_leaves_library_unchanged():
    libs, _, _, scenes = gate_fixture(4)
    before = {k: e.to_json() for k, e in libs.examples.items()}
    p = ScriptedProvider({"abstractor": {"key:abstractor/p/a0": "<tool>\ndef x(\n</tool>",
                                         "key:abstractor/p/a1": "<tool>\nnope\n</tool>"}})
    res = create_tool(Cluster(tuple(libs.examples)), libs, p, Config(), scenes, key_prefix="p")
    assert not res.ok and len(res.attempts) == 2
    assert set(libs.tools) == set(Libraries().tools)
    assert {k: e.to_json() for k, e in libs.examples.items()} == before


def test_abstraction_pass_end_to_end_with_desk_policy(shipped):
    from dualib.providers.desk import DeskPolicy
    from dualib.scene import reference_program

    libs = Libraries()
    for q in [q for q in shipped.questions if q.template == "largest_3d"][:6]:
        libs.examples[q.id] = make_example(q.id, reference_program(q.template, q.params), shipped.scene_for(q),
                                           libs, question=q.text)
    p = ScriptedProvider({}, DeskPolicy(shipped.scenes))
    memo = {}
    assessed = []
    s = abstraction_pass(libs, EmbeddingBank(HashingEmbedder()), p, Config(), shipped.scenes, memo,
                         on_assess=assessed.append)
    assert s.created == ["find_largest_3d_object"]
    assert all(len(c) >= Config().cluster_min_size for c in assessed)
    # nothing fresh left to cluster; a second pass does no work
    calls = dict(p.calls)
    again = abstraction_pass(libs, EmbeddingBank(HashingEmbedder()), p, Config(), shipped.scenes, memo)
    assert again.created == [] and dict(p.calls) == calls
