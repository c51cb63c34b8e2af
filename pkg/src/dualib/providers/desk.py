"""A deterministic stand-in for the model roles over the synthetic domain.

The policy reads the structured ``context`` of each request, recognizes the
question phrasing, and answers the way a competent but imperfect model would:
program samples sometimes carry seeded defects, the first abstraction attempt
for one template is wrong, and rewrites occasionally fail on the first try.
Judges compare against the scene, which they are shown as a table.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import Callable, Mapping

from ..scene import oracle as O
from ..scene.fixtures import SceneFixture
from ..errors import SceneError
from ..vpl.values import from_json, values_close
from .base import ChatRequest

MATCH_TOL = 1e-6

_W = r"([a-z]+)"
PHRASINGS = [
    (O.SIZE_RATIO, rf"what is the ratio of the 3d (height|width) of the {_W} to the 3d \1 of the {_W}\?",
     lambda m: {"a": m[2], "b": m[3], "dim": m[1]}),
    (O.SIZE_RATIO, rf"how many times (taller|wider) is the {_W} than the {_W} in real-world 3d terms\?",
     lambda m: {"a": m[2], "b": m[3], "dim": {"taller": "height", "wider": "width"}[m[1]]}),
    (O.EXTREME_DEPTH, rf"which is (closest to|farthest from) the camera: the {_W}, the {_W}, or the {_W}\?",
     lambda m: {"labels": [m[2], m[3], m[4]], "mode": m[1].split()[0]}),
    (O.EXTREME_DEPTH,
     rf"of the {_W}, the {_W} and the {_W}, which one sits (nearest to|furthest away from) the camera\?",
     lambda m: {"labels": [m[1], m[2], m[3]], "mode": "closest" if m[4].startswith("nearest") else "farthest"}),
    (O.DIMENSION_MATCH, rf"how many {_W}s would it take to match the 3d (height|width) of the {_W}\?",
     lambda m: {"unit": m[1], "target": m[3], "dim": m[2]}),
    (O.DIMENSION_MATCH, rf"if you lined up {_W}s, how many would equal the real-world (height|width) of the {_W}\?",
     lambda m: {"unit": m[1], "target": m[3], "dim": m[2]}),
    (O.DISTANCE_COMPARE, rf"is the {_W} closer to the {_W} than to the {_W} in 3d space\?",
     lambda m: {"anchor": m[1], "first": m[2], "second": m[3]}),
    (O.DISTANCE_COMPARE, rf"in three-dimensional space, is the {_W} nearer to the {_W} than the {_W} is\?",
     lambda m: {"anchor": m[2], "first": m[1], "second": m[3]}),
    (O.COUNTING, rf"how many {_W}s are there in the image\?", lambda m: {"label": m[1]}),
    (O.COUNTING, rf"what is the number of {_W}s visible in the scene\?", lambda m: {"label": m[1]}),
    (O.LARGEST_3D, rf"which is the largest in 3d (height|width): the {_W}, the {_W}, or the {_W}\?",
     lambda m: {"labels": [m[2], m[3], m[4]], "dim": m[1]}),
    (O.LARGEST_3D,
     rf"among the {_W}, the {_W} and the {_W}, which object has the greatest real-world (height|width)\?",
     lambda m: {"labels": [m[1], m[2], m[3]], "dim": m[4]}),
]
_COMPILED = [(t, re.compile(p), f) for t, p, f in PHRASINGS]


def understand(question: str):
    """Map a question to (template, params), or None when the phrasing is unfamiliar."""
    q = " ".join(question.strip().lower().split())
    for template, rx, build in _COMPILED:
        m = rx.fullmatch(q)
        if m:
            return template, build(m)
    return None


def _h(*parts) -> int:
    return int(hashlib.sha256("|".join(map(str, parts)).encode("utf-8")).hexdigest()[:12], 16)


def _q(s) -> str:
    return json.dumps(s)


# tool blueprints the abstractor and merger know how to write

_SIZE_BODY = """\
  let i = 1
  if dim == "width" {{
    let i = 0
  }}
  let a = loc({a})[0]
  let b = loc({b})[0]
  return get_2d_object_size(a)[i] * depth(a) / (get_2d_object_size(b)[i] * depth(b))
"""


@dataclass(frozen=True)
class Blueprint:
    name: str
    params: tuple
    docstring: str
    body: str
    families: tuple
    args: Callable[[str, dict], list]

    def source(self, name: str | None = None, body: str | None = None) -> str:
        sig = ", ".join(f"{n}: {t}" for n, t in self.params)
        return f"def {name or self.name}({sig}) {{\n  {_q(self.docstring)}\n{body or self.body}}}\n"


def _extreme_body(flipped: bool) -> str:
    closer, farther = ("<", ">") if not flipped else (">", "<")
    return f"""\
  let best = null
  let best_depth = 0
  for label in labels {{
    for b in loc(label) {{
      let d = depth(b)
      let better = false
      if mode == "closest" {{
        let better = d {closer} best_depth
      }} else {{
        let better = d {farther} best_depth
      }}
      if best == null or better {{
        let best = label
        let best_depth = d
      }}
    }}
  }}
  return best
"""


_LARGEST_BODY = """\
  let i = 1
  if dim == "width" {
    let i = 0
  }
  let best = null
  let best_size = 0
  for label in labels {
    for b in loc(label) {
      let s = get_2d_object_size(b)[i] * depth(b)
      if best == null or s > best_size {
        let best = label
        let best_size = s
      }
    }
  }
  return best
"""

_DISTANCE_BODY = """\
  let a = loc(anchor)[0]
  let f = loc(first)[0]
  let s = loc(second)[0]
  let dx1 = (a[0] + a[2]) / 2 - (f[0] + f[2]) / 2
  let dy1 = (a[1] + a[3]) / 2 - (f[1] + f[3]) / 2
  let p1 = sqrt(dx1 * dx1 + dy1 * dy1)
  let dz1 = depth(a) - depth(f)
  let dx2 = (a[0] + a[2]) / 2 - (s[0] + s[2]) / 2
  let dy2 = (a[1] + a[3]) / 2 - (s[1] + s[3]) / 2
  let p2 = sqrt(dx2 * dx2 + dy2 * dy2)
  let dz2 = depth(a) - depth(s)
  if sqrt(p1 * p1 + dz1 * dz1) < sqrt(p2 * p2 + dz2 * dz2) {
    return "yes"
  }
  return "no"
"""


def _ratio_args(t, p):
    return [p["a"], p["b"], p["dim"]] if t == O.SIZE_RATIO else [p["target"], p["unit"], p["dim"]]


BLUEPRINTS = {
    O.SIZE_RATIO: Blueprint(
        "compute_3d_ratio", (("obj_a", "text"), ("obj_b", "text"), ("dim", "text")),
        "Ratio of the 3D size of obj_a to that of obj_b along dim ('height' or 'width'); "
        "3D size is pixel size times depth.",
        _SIZE_BODY.format(a="obj_a", b="obj_b"), (O.SIZE_RATIO,),
        lambda t, p: [p["a"], p["b"], p["dim"]]),
    O.DIMENSION_MATCH: Blueprint(
        "compute_3d_dimension_match_count", (("unit", "text"), ("target", "text"), ("dim", "text")),
        "How many units laid end to end match the target's 3D size along dim ('height' or 'width').",
        _SIZE_BODY.format(a="target", b="unit"), (O.DIMENSION_MATCH,),
        lambda t, p: [p["unit"], p["target"], p["dim"]]),
    O.EXTREME_DEPTH: Blueprint(
        "find_extreme_depth_object", (("labels", "list"), ("mode", "text")),
        "Label among labels whose object is closest to ('closest') or farthest from ('farthest') the camera.",
        _extreme_body(False), (O.EXTREME_DEPTH,),
        lambda t, p: [p["labels"], p["mode"]]),
    O.LARGEST_3D: Blueprint(
        "find_largest_3d_object", (("labels", "list"), ("dim", "text")),
        "Label among labels with the largest 3D size along dim ('height' or 'width').",
        _LARGEST_BODY, (O.LARGEST_3D,),
        lambda t, p: [p["labels"], p["dim"]]),
    O.DISTANCE_COMPARE: Blueprint(
        "is_closer_in_3d", (("anchor", "text"), ("first", "text"), ("second", "text")),
        "'yes' if first is closer to anchor than second is, in 3D (pixel center distance combined with depth gap).",
        _DISTANCE_BODY, (O.DISTANCE_COMPARE,),
        lambda t, p: [p["anchor"], p["first"], p["second"]]),
    O.COUNTING: Blueprint(
        "count_objects", (("label", "text"),),
        "Number of objects of a category.",
        "  return len(loc(label))\n", (O.COUNTING,),
        lambda t, p: [p["label"]]),
}

MERGED = Blueprint(
    "compute_objects_size_ratio", (("numerator", "text"), ("denominator", "text"), ("dim", "text")),
    "Ratio of the 3D size of numerator to that of denominator along dim ('height' or 'width'); "
    "covers size ratios and 'how many fit' counts.",
    _SIZE_BODY.format(a="numerator", b="denominator"), (O.SIZE_RATIO, O.DIMENSION_MATCH),
    _ratio_args)

_BY_NAME = {b.name: b for b in [*BLUEPRINTS.values(), MERGED]}
RATIO_FAMILY = {O.SIZE_RATIO, O.DIMENSION_MATCH}


def base_name(name: str) -> str:
    return re.sub(r"_\d+$", "", name)


def blueprint_for(tool_name: str) -> Blueprint | None:
    return _BY_NAME.get(base_name(tool_name))


def _literal(v) -> str:
    if isinstance(v, list):
        return "[" + ", ".join(_literal(x) for x in v) + "]"
    return _q(v)


def tool_call_program(tool_name: str, bp: Blueprint, template: str, params: dict) -> str:
    args = ", ".join(_literal(a) for a in bp.args(template, params))
    return f"let answer = {tool_name}({args})\nreturn answer\n"


# basic-tool programs, with optional seeded defects


def basic_program(template: str, p: dict, flaw: str = "ok") -> str:
    scale = "" if flaw == "skip_depth" else " * depth({v})"
    if template in (O.SIZE_RATIO, O.DIMENSION_MATCH):
        i = 1 if p["dim"] == "height" else 0
        if template == O.SIZE_RATIO:
            num, den = p["a"], p["b"]
        else:
            num, den = p["target"], p["unit"]
        src = (
            f"let num_boxes = loc({_q(num)})\n"
            f"let den_boxes = loc({_q(den)})\n"
            "if len(num_boxes) == 0 or len(den_boxes) == 0 {\n  return null\n}\n"
            "let num = num_boxes[0]\n"
            "let den = den_boxes[0]\n"
            f"let num_3d = get_2d_object_size(num)[{i}]{scale.format(v='num')}\n"
            f"let den_3d = get_2d_object_size(den)[{i}]{scale.format(v='den')}\n"
            "return num_3d / den_3d\n"
        )
    elif template == O.EXTREME_DEPTH:
        closest = p["mode"] == "closest"
        if flaw == "skip_depth":
            # treats the biggest box as the nearest object
            measure, cmp = "get_2d_object_size(b)[0] * get_2d_object_size(b)[1]", ">" if closest else "<"
        else:
            measure, cmp = "depth(b)", "<" if closest else ">"
        src = (
            "let best = null\n"
            "let best_value = 0\n"
            f"for label in {_literal(p['labels'])} {{\n"
            "  for b in loc(label) {\n"
            f"    let v = {measure}\n"
            f"    if best == null or v {cmp} best_value {{\n"
            "      let best = label\n"
            "      let best_value = v\n"
            "    }\n"
            "  }\n"
            "}\n"
            "return best\n"
        )
    elif template == O.LARGEST_3D:
        i = 1 if p["dim"] == "height" else 0
        src = (
            "let best = null\n"
            "let best_size = 0\n"
            f"for label in {_literal(p['labels'])} {{\n"
            "  for b in loc(label) {\n"
            f"    let s = get_2d_object_size(b)[{i}]{scale.format(v='b')}\n"
            "    if best == null or s > best_size {\n"
            "      let best = label\n"
            "      let best_size = s\n"
            "    }\n"
            "  }\n"
            "}\n"
            "return best\n"
        )
    elif template == O.DISTANCE_COMPARE:
        dz = "0" if flaw == "skip_depth" else "depth(a) - depth(b)"
        src = (
            "def dist3d(a: box, b: box) {\n"
            '  "3D distance: pixel center distance combined with the depth gap."\n'
            "  let dx = (a[0] + a[2]) / 2 - (b[0] + b[2]) / 2\n"
            "  let dy = (a[1] + a[3]) / 2 - (b[1] + b[3]) / 2\n"
            "  let d2 = sqrt(dx * dx + dy * dy)\n"
            f"  let dz = {dz}\n"
            "  return sqrt(d2 * d2 + dz * dz)\n"
            "}\n"
            f"let anchor_boxes = loc({_q(p['anchor'])})\n"
            f"let first_boxes = loc({_q(p['first'])})\n"
            f"let second_boxes = loc({_q(p['second'])})\n"
            "if len(anchor_boxes) == 0 or len(first_boxes) == 0 or len(second_boxes) == 0 {\n"
            "  return null\n}\n"
            "let anchor = anchor_boxes[0]\n"
            "if dist3d(anchor, first_boxes[0]) < dist3d(anchor, second_boxes[0]) {\n"
            '  return "yes"\n}\n'
            'return "no"\n'
        )
    elif template == O.COUNTING:
        src = f"let boxes = loc({_q(p['label'])})\nlet count = len(boxes)\nreturn count\n"
    else:
        raise ValueError(template)
    if flaw == "syntax":
        src = src.replace("let ", "let", 1) if "let " in src else src + "}"
        src = src.rstrip("\n") + " )\n"
    elif flaw == "no_return":
        lines = src.rstrip("\n").split("\n")
        src = "\n".join(lines[:-1]) + "\n"
    return src


COMPLEXITY = {O.COUNTING: 2.0, O.EXTREME_DEPTH: 4.0, O.LARGEST_3D: 5.0, O.SIZE_RATIO: 5.5,
              O.DIMENSION_MATCH: 6.5, O.DISTANCE_COMPARE: 7.5}


class DeskPolicy:
    """Callable script policy; returns reply text for a request or None when it cannot help."""

    def __init__(self, scenes: Mapping[str, SceneFixture]):
        self.scenes = dict(scenes)

    def __call__(self, req: ChatRequest) -> str | None:
        handler = getattr(self, f"_{req.role}", None)
        if handler is None or not req.context:
            return None
        return handler(req, req.context)

    # helpers

    def _truth(self, question: str, scene_id: str):
        parsed = understand(question)
        scene = self.scenes.get(scene_id)
        if parsed is None or scene is None:
            return None
        try:
            return O.oracle_value(scene, *parsed)
        except SceneError:
            return None

    def _matches(self, value, question: str, scene_id: str) -> bool:
        truth = self._truth(question, scene_id)
        if truth is None or value is None:
            return False
        if isinstance(truth, str) and isinstance(value, str):
            return truth.strip().lower() == value.strip().lower()
        return values_close(value, truth, MATCH_TOL)

    # roles

    def _prog_gen(self, req, ctx):
        parsed = understand(ctx["question"])
        if parsed is None:
            return "<program>\nreturn vqa(" + _q(ctx["question"]) + ")\n</program>"
        template, params = parsed
        fitting = []
        for t in ctx.get("tools", []):
            bp = blueprint_for(t["name"]) if t.get("level", 0) >= 1 else None
            if bp is not None and template in bp.families:
                fitting.append((-len(bp.families), t["name"], bp))
        roll = _h(req.fingerprint) % 8
        if fitting:
            _, name, bp = min(fitting)
            src = tool_call_program(name, bp, template, params)
            if roll == 0:
                src = src.replace("(", " (", 1).replace("return answer", "return answer)")
            return f"<program>\n{src}</program>"
        flaw = {0: "syntax", 1: "skip_depth", 2: "no_return"}.get(roll, "ok")
        if template == O.COUNTING and flaw == "skip_depth":
            flaw = "no_return"
        return f"<program>\n{basic_program(template, params, flaw)}</program>"

    def _quality_judge(self, req, ctx):
        result = from_json(ctx.get("result"))
        qid = ctx.get("question_id", ctx["question"])
        if self._matches(result, ctx["question"], ctx["scene"]):
            rating = 8.6 + (_h("quality", qid) % 14) / 10
            why = "The answer agrees with the scene table and the 3D conventions are respected."
        else:
            rating = 4.0 + (_h("quality", qid, ctx.get("program", "")) % 30) / 10
            why = "The answer disagrees with what the scene table implies."
        return f"<rating>{rating:.1f}</rating>\n<reasoning>{why}</reasoning>"

    def _correctness_judge(self, req, ctx):
        ok = self._matches(from_json(ctx.get("new_result")), ctx["question"], ctx["scene"])
        verdict = "CORRECT" if ok else "INCORRECT"
        return f"<verdict>{verdict}</verdict>\n<reasoning>Checked against the scene table.</reasoning>"

    def _cluster_analyst(self, req, ctx):
        groups: dict[str, list] = {}
        loose = []
        for ex in ctx["examples"]:
            parsed = understand(ex["question"])
            if parsed is None:
                loose.append(ex["local_id"])
            else:
                groups.setdefault(parsed[0], []).append(ex)
        blocks = []
        for template in sorted(groups):
            members = groups[template]
            ids = ", ".join(str(e["local_id"]) for e in members)
            learned = sum(1 for e in members if e.get("uses_learned"))
            if learned * 2 >= len(members):
                potential, why = 3.0, "These programs already reduce to a learned-tool call."
            elif template == O.COUNTING:
                potential, why = 4.5, "A single loc and len; little to gain from a tool."
            else:
                potential, why = 9.5, "Same locate, measure and compare sequence with only labels varying."
            bp = BLUEPRINTS[template]
            blocks.append(
                f"<cluster>\n<example_ids>{ids}</example_ids>\n"
                f"<pattern>{bp.docstring}</pattern>\n"
                f"<parameters>{', '.join(n for n, _ in bp.params)}</parameters>\n"
                f"<abstraction_potential>{potential}</abstraction_potential>\n"
                f"<reasoning>{why}</reasoning>\n</cluster>"
            )
        if loose:
            blocks.append(f"<unclustered>\n<example_ids>{', '.join(map(str, loose))}</example_ids>\n"
                          "<reasoning>Unrecognized question types.</reasoning>\n</unclustered>")
        return "\n".join(blocks)

    def _abstractor(self, req, ctx):
        counts: dict[str, int] = {}
        for ex in ctx["examples"]:
            parsed = understand(ex["question"])
            if parsed:
                counts[parsed[0]] = counts.get(parsed[0], 0) + 1
        if not counts:
            return None
        template = max(sorted(counts), key=counts.get)
        bp = BLUEPRINTS[template]
        body = None
        if template == O.EXTREME_DEPTH and ctx.get("attempt", 0) == 0:
            body = _extreme_body(True)
        return f"<tool>\n{bp.source(body=body)}</tool>"

    def _rewriter(self, req, ctx):
        tool = ctx["tool"]
        bp = blueprint_for(tool["name"])
        parsed = understand(ctx["question"])
        if bp is None or parsed is None or parsed[0] not in bp.families:
            return f"<program>\n{ctx['program']}</program>"
        src = tool_call_program(tool["name"], bp, *parsed)
        if ctx.get("attempt", 0) == 0 and _h("rewrite", ctx.get("question_id"), tool["name"]) % 6 == 0:
            # drops the final argument; caught by execution
            src = re.sub(r", [^,()]*\)\n", ")\n", src, count=1)
        return f"<program>\n{src}</program>"

    def _dedup_analyst(self, req, ctx):
        tools = [t["name"] for t in ctx["tools"]]
        ratio = [n for n in tools if (bp := blueprint_for(n)) and set(bp.families) <= RATIO_FAMILY]
        groups = []
        if len(ratio) >= 2:
            groups.append((ratio, 0.97, "Both compute a quotient of 3D sizes along one dimension."))
        by_base: dict[str, list] = {}
        for n in tools:
            if n not in ratio:
                by_base.setdefault(base_name(n), []).append(n)
        for base in sorted(by_base):
            if len(by_base[base]) >= 2:
                groups.append((by_base[base], 0.99, "Same computation under different names."))
        inner = "".join(
            f"<group>\n<tools>{', '.join(names)}</tools>\n<similarity>{sim}</similarity>\n"
            f"<reasoning>{why}</reasoning>\n</group>\n" for names, sim, why in groups
        )
        return f"<groups>\n{inner}</groups>"

    def _merger(self, req, ctx):
        names = [t["name"] for t in ctx["tools"]]
        bps = [blueprint_for(n) for n in names]
        if any(b is None for b in bps):
            return None
        families = set().union(*(b.families for b in bps))
        if families <= RATIO_FAMILY and len(families) > 1:
            return f"<tool>\n{MERGED.source()}</tool>"
        if len({b.name for b in bps}) == 1:
            return f"<tool>\n{bps[0].source()}</tool>"
        return None

    def _complexity_rater(self, req, ctx):
        parsed = understand(ctx["question"])
        base = COMPLEXITY.get(parsed[0], 5.0) if parsed else 5.0
        score = base + ((_h("complexity", ctx["question"]) % 11) - 5) / 10
        return f"<score>{score:.1f}</score>\n<reasoning>Scored from the reasoning steps the question needs.</reasoning>"
