"""Tag-grammar parsers for every role's reply."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass


class ReplyFormatError(ValueError):
    """The reply does not match its role's tag grammar."""


@dataclass(frozen=True)
class Rating:
    rating: float
    reasoning: str


@dataclass(frozen=True)
class Verdict:
    correct: bool
    reasoning: str


@dataclass(frozen=True)
class ClusterBlock:
    example_ids: tuple
    pattern: str
    parameters: tuple
    potential: float
    reasoning: str


@dataclass(frozen=True)
class ClusterAnalysis:
    clusters: tuple
    unclustered: tuple
    reasoning: str = ""


@dataclass(frozen=True)
class DedupGroup:
    tools: tuple
    similarity: float
    reasoning: str


@dataclass(frozen=True)
class Score:
    score: float
    reasoning: str


def _tags(raw: str, name: str) -> list[str]:
    opens = len(re.findall(rf"<{name}>", raw))
    found = re.findall(rf"<{name}>(.*?)</{name}>", raw, flags=re.S)
    if opens != len(found):
        raise ReplyFormatError(f"unbalanced <{name}> tag")
    return [f.strip() for f in found]


def _one(raw: str, name: str, required: bool = True) -> str | None:
    found = _tags(raw, name)
    if not found:
        if required:
            raise ReplyFormatError(f"missing <{name}>...</{name}>")
        return None
    if len(found) > 1:
        raise ReplyFormatError(f"more than one <{name}> tag")
    return found[0]


def _number(text: str, name: str, lo: float, hi: float) -> float:
    t = text.strip().strip("[]").strip()
    try:
        v = float(t)
    except ValueError:
        raise ReplyFormatError(f"<{name}> is not a number: {text!r}") from None
    if not math.isfinite(v) or not lo <= v <= hi:
        raise ReplyFormatError(f"<{name}> {v} outside [{lo}, {hi}]")
    return v


def _strip_fence(code: str) -> str:
    m = re.match(r"^```[a-zA-Z]*\n(.*?)\n?```$", code.strip(), flags=re.S)
    return (m.group(1) if m else code).strip() + "\n"


def _id_list(text: str, name: str) -> tuple:
    body = text.strip().strip("[]").strip()
    if not body:
        return ()
    out = []
    for part in re.split(r"[,\s]+", body):
        if not part:
            continue
        if not re.fullmatch(r"\d+", part):
            raise ReplyFormatError(f"<{name}> entry {part!r} is not an example number")
        out.append(int(part))
    return tuple(out)


def parse_program(raw: str) -> str:
    return _strip_fence(_one(raw, "program"))


def parse_tool(raw: str) -> str:
    return _strip_fence(_one(raw, "tool"))


def parse_rating(raw: str) -> Rating:
    return Rating(_number(_one(raw, "rating"), "rating", 1.0, 10.0), _one(raw, "reasoning", False) or "")


def parse_verdict(raw: str) -> Verdict:
    v = _one(raw, "verdict").upper()
    if v not in ("CORRECT", "INCORRECT"):
        raise ReplyFormatError(f"<verdict> must be CORRECT or INCORRECT, got {v!r}")
    return Verdict(v == "CORRECT", _one(raw, "reasoning", False) or "")


def parse_score(raw: str) -> Score:
    return Score(_number(_one(raw, "score"), "score", 1.0, 10.0), _one(raw, "reasoning", False) or "")


def parse_clusters(raw: str) -> ClusterAnalysis:
    blocks = []
    seen: set[int] = set()
    for body in _tags(raw, "cluster"):
        ids = _id_list(_one(body, "example_ids"), "example_ids")
        if not ids:
            raise ReplyFormatError("cluster block without example ids")
        dup = seen.intersection(ids) or {i for i in ids if ids.count(i) > 1}
        if dup:
            raise ReplyFormatError(f"example id {min(dup)} assigned to more than one cluster")
        seen.update(ids)
        params_text = _one(body, "parameters", False) or ""
        params = tuple(p.strip() for p in params_text.strip("[]").split(",") if p.strip())
        blocks.append(ClusterBlock(
            example_ids=ids,
            pattern=_one(body, "pattern", False) or "",
            parameters=params,
            potential=_number(_one(body, "abstraction_potential"), "abstraction_potential", 0.0, 10.0),
            reasoning=_one(body, "reasoning", False) or "",
        ))
    unclustered: tuple = ()
    rest = _one(raw, "unclustered", False)
    un_reason = ""
    if rest is not None:
        unclustered = _id_list(_one(rest, "example_ids", False) or "", "example_ids")
        un_reason = _one(rest, "reasoning", False) or ""
        dup = seen.intersection(unclustered)
        if dup:
            raise ReplyFormatError(f"example id {min(dup)} both clustered and unclustered")
    if not blocks and rest is None:
        raise ReplyFormatError("no <cluster> or <unclustered> block")
    return ClusterAnalysis(tuple(blocks), unclustered, un_reason)


def parse_groups(raw: str) -> tuple:
    wrapper = _one(raw, "groups")
    groups = []
    seen: set[str] = set()
    for body in _tags(wrapper, "group"):
        names = tuple(n.strip() for n in _one(body, "tools").strip("[]").split(",") if n.strip())
        if len(names) < 2:
            raise ReplyFormatError("a duplicate group needs at least two tools")
        dup = seen.intersection(names)
        if dup or len(set(names)) != len(names):
            raise ReplyFormatError(f"tool {sorted(dup or names)[0]} appears in more than one group")
        seen.update(names)
        groups.append(DedupGroup(names, _number(_one(body, "similarity"), "similarity", 0.0, 1.0),
                                 _one(body, "reasoning", False) or ""))
    return tuple(groups)


PARSERS = {
    "prog_gen": parse_program,
    "rewriter": parse_program,
    "quality_judge": parse_rating,
    "correctness_judge": parse_verdict,
    "cluster_analyst": parse_clusters,
    "abstractor": parse_tool,
    "merger": parse_tool,
    "dedup_analyst": parse_groups,
    "complexity_rater": parse_score,
}


def parse_reply(role: str, raw: str):
    if not isinstance(raw, str):
        raise ReplyFormatError("reply is not text")
    return PARSERS[role](raw)
