"""Scoring and run analysis: exact match, MRA, Float(10%), CCN and tool-usage tables."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import AlignmentError, DualibError, UndefinedMetricError
from .model import Libraries
from .vpl import ParseError, cyclomatic_complexity, parse
from .vpl.values import is_number

MRA_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
FLOAT_TOLERANCE = 0.10
EXACT_FLOAT_TOL = 1e-9
USAGE_BUCKETS = ("basic-only", "mixed", "abstracted-only")
RATING_BUCKETS = (("easy", 1.0, 3.0), ("medium", 4.0, 6.0), ("hard", 7.0, 10.0))


def _relative_error(pred: float, truth: float) -> float:
    if not (math.isfinite(pred) and math.isfinite(truth)):
        raise UndefinedMetricError("relative error of a non-finite value")
    if truth == 0:
        raise UndefinedMetricError("relative error is undefined for a zero truth")
    return abs(pred - truth) / abs(truth)


def mra(pred: float, truth: float) -> float:
    """Fraction of thresholds 0.5, 0.55, ..., 0.95 whose tolerance 1 - theta exceeds the relative error."""
    rel = _relative_error(float(pred), float(truth))
    return sum(1 for th in MRA_THRESHOLDS if rel < 1 - th) / len(MRA_THRESHOLDS)


def within_tolerance(pred: float, truth: float, tol: float = FLOAT_TOLERANCE) -> bool:
    return _relative_error(float(pred), float(truth)) <= tol


def normalize_choice(text: str) -> str:
    t = " ".join(str(text).strip().lower().split())
    return t[4:] if t.startswith("the ") else t


def _exact(pred: Any, truth: Any, answer_type: str) -> bool:
    if pred is None:
        return False
    if answer_type == "counting":
        return is_number(pred) and float(pred).is_integer() and int(pred) == int(truth)
    if answer_type == "float":
        return is_number(pred) and math.isclose(pred, truth, rel_tol=EXACT_FLOAT_TOL, abs_tol=EXACT_FLOAT_TOL)
    if answer_type == "yes_no" and isinstance(pred, bool):
        pred = "yes" if pred else "no"
    return isinstance(pred, str) and normalize_choice(pred) == normalize_choice(truth)


@dataclass(frozen=True)
class QuestionScore:
    question_id: str
    predicted: Any
    truth: Any
    answer_type: str
    exact: bool
    mra: float | None = None
    within_10pct: bool | None = None
    note: str | None = None

    @property
    def primary(self) -> float:
        """mra for float questions, exact match otherwise."""
        if self.answer_type == "float":
            return self.mra or 0.0
        return float(self.exact)

    def to_json(self) -> dict:
        return {"question_id": self.question_id, "predicted": self.predicted, "truth": self.truth,
                "answer_type": self.answer_type, "exact": self.exact, "mra": self.mra,
                "within_10pct": self.within_10pct, "note": self.note}


def score_one(question_id: str, pred: Any, truth: Any, answer_type: str) -> QuestionScore:
    exact = _exact(pred, truth, answer_type)
    if answer_type != "float":
        return QuestionScore(question_id, pred, truth, answer_type, exact)
    if pred is None or not is_number(pred):
        return QuestionScore(question_id, pred, truth, answer_type, False, 0.0, False,
                             "unanswered" if pred is None else "non-numeric prediction")
    try:
        return QuestionScore(question_id, pred, truth, answer_type, exact, mra(pred, truth),
                             within_tolerance(pred, truth))
    except UndefinedMetricError as exc:
        return QuestionScore(question_id, pred, truth, answer_type, exact, None, None, str(exc))


def _aggregate(rows: list) -> dict:
    out = {"n": len(rows), "exact": _mean([r.exact for r in rows])}
    floats = [r for r in rows if r.answer_type == "float"]
    if floats:
        defined = [r for r in floats if r.mra is not None]
        out["mra"] = _mean([r.mra for r in defined])
        out["within_10pct"] = _mean([r.within_10pct for r in defined])
        out["undefined"] = len(floats) - len(defined)
    out["primary"] = _mean([r.primary for r in rows if not (r.answer_type == "float" and r.mra is None)])
    return out


def _mean(xs) -> float | None:
    xs = list(xs)
    return sum(float(x) for x in xs) / len(xs) if xs else None


@dataclass
class ScoreCard:
    rows: list = field(default_factory=list)
    by_type: dict = field(default_factory=dict)
    overall: dict = field(default_factory=dict)
    usage: dict | None = None
    ccn_by_iteration: dict | None = None

    def row(self, question_id: str) -> QuestionScore:
        return next(r for r in self.rows if r.question_id == question_id)

    def to_json(self) -> dict:
        return {"overall": self.overall, "by_type": self.by_type, "usage": self.usage,
                "ccn_by_iteration": self.ccn_by_iteration, "rows": [r.to_json() for r in self.rows]}


def score(predictions: Mapping[str, Any], truths: Mapping[str, Any]) -> ScoreCard:
    """Score predictions against ground truth; ``None`` marks an unanswered question.

    ``truths`` maps ids to GroundTruth-like objects (``answer``, ``answer_type``).
    """
    orphans = set(predictions).symmetric_difference(truths)
    if orphans:
        raise AlignmentError(orphans)
    rows = [score_one(qid, predictions[qid], truths[qid].answer, truths[qid].answer_type)
            for qid in sorted(truths)]
    card = ScoreCard(rows)
    for t in sorted({r.answer_type for r in rows}):
        card.by_type[t] = _aggregate([r for r in rows if r.answer_type == t])
    card.overall = _aggregate(rows)
    return card


# library analysis


def program_ccn(source: str) -> int:
    """Largest per-function CCN of a program (its main body and any helpers)."""
    return cyclomatic_complexity(parse(source)).max


def usage_category(tools_used, tools: Mapping) -> str:
    levels = [tools[n].level for n in tools_used if n in tools]
    if not levels or all(lv == 0 for lv in levels):
        return "basic-only"
    if all(lv >= 1 for lv in levels):
        return "abstracted-only"
    return "mixed"


def usage_histogram(libs: Libraries) -> dict:
    counts = {b: 0 for b in USAGE_BUCKETS}
    for e in libs.examples.values():
        counts[usage_category(e.tools_used, libs.tools)] += 1
    n = sum(counts.values())
    return {"counts": counts, "fractions": {b: (c / n if n else None) for b, c in counts.items()}, "n": n}


def ccn_summary(values: list) -> dict:
    if not values:
        return {"n": 0, "median": None, "q1": None, "q3": None}
    a = np.asarray(values, dtype=float)
    return {"n": len(values), "median": float(np.median(a)), "q1": float(np.percentile(a, 25)),
            "q3": float(np.percentile(a, 75)), "min": int(a.min()), "max": int(a.max())}


def library_ccn(libs_json_or_libs) -> list:
    libs = libs_json_or_libs
    if isinstance(libs, Libraries):
        progs = [e.program for e in libs.examples.values()]
    else:
        ex = libs.get("examples", [])
        progs = [e["program"] for e in (ex.values() if isinstance(ex, dict) else ex)]
    out = []
    for src in progs:
        try:
            out.append(program_ccn(src))
        except ParseError:
            continue
    return out


def rating_bucket(rating: float) -> str:
    for name, lo, hi in RATING_BUCKETS:
        if lo <= rating <= hi:
            return name
    # ratings between bucket edges (e.g. 3.5) fall to the nearer bucket above
    return "medium" if rating < 7.0 else "hard"


def _read_jsonl(path: Path) -> list | None:
    if not path.exists():
        return None
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                break
    return rows


def usage_and_complexity_report(libs: Libraries, out_dir, truths: Mapping | None = None,
                                ratings: Mapping | None = None) -> dict:
    """Tables from a run directory; missing inputs leave explicit gaps instead of failing."""
    out = Path(out_dir)
    gaps = []
    report: dict = {"usage": usage_histogram(libs), "gaps": gaps}

    # CCN of the programs standing in the Example Library at the end of each iteration
    standing = {}
    snaps = sorted((out / "snapshots").glob("iteration-*.json"), key=lambda p: int(p.stem.split("-")[1]))
    if not snaps:
        gaps.append("snapshots: no iteration snapshots found")
    for p in snaps:
        try:
            standing[int(p.stem.split("-")[1])] = ccn_summary(library_ccn(json.loads(p.read_text("utf-8"))))
        except (OSError, json.JSONDecodeError) as exc:
            gaps.append(f"{p.name}: unreadable ({exc})")
    report["ccn_library"] = standing

    # CCN of programs admitted (inserted or replaced) during each iteration
    audit = _read_jsonl(out / "audit.jsonl")
    admitted: dict = {}
    if audit is None:
        gaps.append("audit.jsonl: missing")
    else:
        for row in audit:
            it = row.get("iteration")
            admitted.setdefault(it, [])
            if row.get("outcome") in ("inserted", "replaced") and row.get("best_index") is not None:
                src = row["candidates"][row["best_index"]]["source"]
                try:
                    admitted[it].append(program_ccn(src))
                except ParseError:
                    pass
    report["ccn_admitted"] = {it: ccn_summary(v) for it, v in sorted(admitted.items())}

    trace = _read_jsonl(out / "trace.jsonl")
    if trace is None:
        gaps.append("trace.jsonl: missing")
        report["evolution"] = []
    else:
        report["evolution"] = [
            {**{k: r.get(k) for k in ("step", "iteration", "question_id", "outcome", "examples", "created", "active")},
             "active_after_abstraction": (r.get("after_abstraction") or {}).get("active")}
            for r in trace
        ]

    if truths is not None:
        preds = {qid: (libs.examples[qid].result if qid in libs.examples else None) for qid in truths}
        card = score(preds, truths)
        report["scores"] = {"overall": card.overall, "by_type": card.by_type,
                            "rows": [r.to_json() for r in card.rows]}
        if ratings:
            buckets: dict = {}
            for r in card.rows:
                if r.question_id in ratings:
                    buckets.setdefault(rating_bucket(ratings[r.question_id]), []).append(r)
            report["buckets"] = {b: _aggregate(rows) for b, rows in sorted(buckets.items())}
    else:
        gaps.append("scores: no ground truth available")
    return report


def _csv(rows: list, fields: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_report(report: dict, out_dir) -> Path:
    """Write CSV tables and ``summary.json`` under ``<out>/reports``."""
    from .model import atomic_write, canonical_json

    rdir = Path(out_dir) / "reports"
    ccn_rows = []
    for kind in ("ccn_library", "ccn_admitted"):
        for it, s in sorted(report.get(kind, {}).items(), key=lambda kv: (kv[0] is None, kv[0])):
            ccn_rows.append({"source": kind.split("_")[1], "iteration": it, **s})
    atomic_write(rdir / "ccn.csv", _csv(ccn_rows, ["source", "iteration", "n", "median", "q1", "q3", "min", "max"]))
    u = report["usage"]
    atomic_write(rdir / "usage.csv", _csv([{"category": b, "count": u["counts"][b], "fraction": u["fractions"][b]}
                                           for b in USAGE_BUCKETS], ["category", "count", "fraction"]))
    atomic_write(rdir / "evolution.csv", _csv(report.get("evolution", []),
                                              ["step", "iteration", "question_id", "outcome", "examples",
                                               "created", "active_after_abstraction", "active"]))
    if "scores" in report:
        atomic_write(rdir / "scores.csv", _csv(report["scores"]["rows"],
                                               ["question_id", "answer_type", "predicted", "truth", "exact",
                                                "mra", "within_10pct", "note"]))
    summary = {k: v for k, v in report.items() if k not in ("evolution",)}
    if "scores" in summary:
        summary["scores"] = {k: v for k, v in summary["scores"].items() if k != "rows"}
    atomic_write(rdir / "summary.json", canonical_json(_stringify_keys(summary)))
    return rdir


def _stringify_keys(obj):
    if isinstance(obj, dict):
        return {str(k): _stringify_keys(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_stringify_keys(v) for v in obj]
    return obj


def report_for_run(out_dir) -> dict:
    """Load a run directory (checkpoint, libraries, dataset) and build its report."""
    from .model import load_libraries
    from .pipeline import read_checkpoint
    from .scene import load_dataset, oracle_answer

    out = Path(out_dir)
    ckpt = read_checkpoint(out / "checkpoint.json")
    libs = load_libraries(out / ckpt["libraries"]["file"])
    truths = None
    dpath = ckpt["dataset"].get("path")
    gaps = []
    if dpath and Path(dpath).exists():
        ds = load_dataset(dpath)
        truths = {}
        for q in ds.questions:
            try:
                truths[q.id] = oracle_answer(ds.scene_for(q), q)
            except DualibError as exc:
                gaps.append(f"{q.id}: no ground truth ({exc})")
    report = usage_and_complexity_report(libs, out, truths, ckpt.get("ratings"))
    report["gaps"].extend(gaps)
    report["counts"] = libs.counts()
    report["complete"] = ckpt.get("complete", False)
    return report
