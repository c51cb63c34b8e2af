from __future__ import annotations

import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from dualib.errors import AlignmentError, UndefinedMetricError
from dualib.evaluation import (
    mra, program_ccn, rating_bucket, report_for_run, score, usage_and_complexity_report, usage_histogram,
    within_tolerance, write_report,
)
from dualib.model import Libraries, Status
from dualib.scene import GroundTruth

from conftest import make_example, make_tool


def gt(qid, answer, kind):
    return GroundTruth(qid, answer, kind)


def test_mra_examples():
    assert mra(10, 10) == 1.0
    assert mra(11, 10) == 0.8
    assert mra(20, 10) == 0.0
    assert mra(-11, -10) == 0.8
    with pytest.raises(UndefinedMetricError):
        mra(1, 0)


def test_float_tolerance_edges():
    assert within_tolerance(1.95, 2.0)
    assert mra(1.95, 2.0) == 1.0  # relative error 0.025 beats every tolerance down to 0.05
    assert within_tolerance(11, 10) and not within_tolerance(11.01, 10)


def test_score_rows_and_aggregates():
    truths = {"a": gt("a", 2.0, "float"), "b": gt("b", 4, "counting"), "c": gt("c", "Lamp", "multiple_choice"),
              "d": gt("d", "yes", "yes_no"), "e": gt("e", 5.0, "float")}
    preds = {"a": 1.95, "b": 3, "c": "the lamp", "d": "YES", "e": None}
    card = score(preds, truths)
    a = card.row("a")
    assert a.within_10pct and a.mra == 1.0 and not a.exact
    assert card.row("b").exact is False
    assert card.row("c").exact and card.row("d").exact
    e = card.row("e")
    assert (e.exact, e.mra, e.within_10pct) == (False, 0.0, False)
    assert card.by_type["float"]["mra"] == 0.5
    assert card.overall["exact"] == 2 / 5


def test_all_correct_gives_ones():
    truths = {"a": gt("a", 2.0, "float"), "b": gt("b", 4, "counting"), "d": gt("d", "no", "yes_no")}
    card = score({"a": 2.0, "b": 4, "d": "no"}, truths)
    for agg in [card.overall, *card.by_type.values()]:
        for k in ("exact", "primary", "mra", "within_10pct"):
            if k in agg:
                assert agg[k] == 1.0


def test_zero_truth_is_recorded_and_excluded():
    card = score({"a": 1.0, "b": 2.0}, {"a": gt("a", 0.0, "float"), "b": gt("b", 2.0, "float")})
    assert card.row("a").mra is None and "undefined" in card.row("a").note
    assert card.by_type["float"]["mra"] == 1.0 and card.by_type["float"]["undefined"] == 1


def test_alignment_error_lists_orphans():
    with pytest.raises(AlignmentError) as exc:
        score({"a": 1, "x": 2}, {"a": gt("a", 1, "counting"), "y": gt("y", 1, "counting")})
    assert exc.value.orphans == ["x", "y"]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 100), st.floats(0.1, 100)), min_size=1, max_size=20), st.randoms())
def test_aggregates_permutation_invariant(pairs, rnd):
    truths = {f"q{i}": gt(f"q{i}", y, "float") for i, (_, y) in enumerate(pairs)}
    preds = {f"q{i}": p for i, (p, _) in enumerate(pairs)}
    keys = list(preds)
    rnd.shuffle(keys)
    a = score(preds, truths)
    b = score({k: preds[k] for k in keys}, {k: truths[k] for k in reversed(keys)})
    assert a.overall == b.overall


def test_usage_histogram_cases(room):
    libs = Libraries()
    libs.examples["e1"] = make_example("e1", 'return len(loc("cup"))\n', room, libs)
    assert usage_histogram(libs)["fractions"]["basic-only"] == 1.0
    t = make_tool('def count_of(label: text) {\n  "n"\n  return len(loc(label))\n}\n', libs)
    libs.tools[t.name] = t
    libs.examples["e1"] = make_example("e1", 'return count_of("cup")\n', room, libs)
    libs.examples["e2"] = make_example("e2", 'return count_of("cup") + len(loc("lamp"))\n', room, libs)
    h = usage_histogram(libs)
    assert h["counts"] == {"basic-only": 0, "mixed": 1, "abstracted-only": 1}
    del libs.examples["e2"]
    assert usage_histogram(libs)["fractions"]["abstracted-only"] == 1.0


def test_program_ccn():
    assert program_ccn('return f("x")\n') == 1
    src = "let b = null\nfor x in [1, 2] {\n  if b == null or x > b {\n    let b = x\n  }\n}\nreturn b\n"
    assert program_ccn(src) == 3


def test_rating_buckets():
    assert [rating_bucket(r) for r in (1, 3, 4, 6, 7, 10)] == ["easy", "easy", "medium", "medium", "hard", "hard"]
    assert rating_bucket(3.5) == "medium" and rating_bucket(6.5) == "medium"


def test_report_with_missing_logs_has_gaps(tmp_path):
    rep = usage_and_complexity_report(Libraries(), tmp_path)
    assert any("audit" in g for g in rep["gaps"]) and any("snapshots" in g for g in rep["gaps"])
    write_report(rep, tmp_path)
    assert (tmp_path / "reports" / "summary.json").exists()


def test_report_for_desk_run(desk_run):
    rep = report_for_run(desk_run.out_dir)
    assert rep["gaps"] == []
    assert set(rep["ccn_library"]) == {1, 2, 3}
    assert rep["scores"]["overall"]["n"] == 60
    rdir = write_report(rep, desk_run.out_dir)
    rows = list(csv.DictReader(open(rdir / "evolution.csv")))
    assert len(rows) == 181
    json.loads((rdir / "summary.json").read_text())


def test_ccn_direction_on_constructed_merge(room):
    """Four-branch programs collapsed into single calls lower the median."""
    from dualib.evaluation import ccn_summary, library_ccn

    libs = Libraries()
    long = ("let best = null\nlet bv = 0\nfor l in [\"cup\", \"lamp\"] {\n  for b in loc(l) {\n"
            "    if best == null or depth(b) > bv {\n      let best = l\n      let bv = depth(b)\n    }\n  }\n}\n"
            "return best\n")
    for i in range(4):
        libs.examples[f"e{i}"] = make_example(f"e{i}", long, room, libs)
    before = ccn_summary(library_ccn(libs))["median"]
    t = make_tool('def far(labels: list) {\n  "x"\n  return labels[0]\n}\n', libs)
    libs.tools[t.name] = t
    for e in libs.examples.values():
        e.program = 'return far(["cup", "lamp"])\n'
        e.status = Status.ABSTRACTED
    after = ccn_summary(library_ccn(libs))["median"]
    assert before == 4 and after == 1
