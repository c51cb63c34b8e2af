"""Hand-written VPL programs that answer each template with Level-0 tools only.

They are the independent route to the oracle: composing the basic tools per
a template's definition must reproduce :func:`oracle_answer` on every shipped
fixture.
"""

from __future__ import annotations

import json

from . import oracle as O

_DIM_INDEX = {"width": 0, "height": 1}


def _q(text: str) -> str:
    return json.dumps(text)


def _labels(labels) -> str:
    return "[" + ", ".join(_q(x) for x in labels) + "]"


def reference_program(template: str, params: dict) -> str:
    p = params
    if template == O.SIZE_RATIO:
        i = _DIM_INDEX[p["dim"]]
        return (
            f"let a = loc({_q(p['a'])})[0]\n"
            f"let b = loc({_q(p['b'])})[0]\n"
            f"let size_a = get_2d_object_size(a)[{i}] * depth(a)\n"
            f"let size_b = get_2d_object_size(b)[{i}] * depth(b)\n"
            "return size_a / size_b\n"
        )
    if template == O.DIMENSION_MATCH:
        i = _DIM_INDEX[p["dim"]]
        return (
            f"let unit = loc({_q(p['unit'])})[0]\n"
            f"let target = loc({_q(p['target'])})[0]\n"
            f"let unit_size = get_2d_object_size(unit)[{i}] * depth(unit)\n"
            f"let target_size = get_2d_object_size(target)[{i}] * depth(target)\n"
            "return target_size / unit_size\n"
        )
    if template == O.EXTREME_DEPTH:
        cmp = "<" if p["mode"] == "closest" else ">"
        return (
            "let best = null\n"
            "let best_depth = 0\n"
            f"for label in {_labels(p['labels'])} {{\n"
            "  for b in loc(label) {\n"
            "    let d = depth(b)\n"
            f"    if best == null or d {cmp} best_depth {{\n"
            "      let best = label\n"
            "      let best_depth = d\n"
            "    }\n"
            "  }\n"
            "}\n"
            "return best\n"
        )
    if template == O.LARGEST_3D:
        i = _DIM_INDEX[p["dim"]]
        return (
            "let best = null\n"
            "let best_size = 0\n"
            f"for label in {_labels(p['labels'])} {{\n"
            "  for b in loc(label) {\n"
            f"    let s = get_2d_object_size(b)[{i}] * depth(b)\n"
            "    if best == null or s > best_size {\n"
            "      let best = label\n"
            "      let best_size = s\n"
            "    }\n"
            "  }\n"
            "}\n"
            "return best\n"
        )
    if template == O.DISTANCE_COMPARE:
        return (
            "def dist3d(a: box, b: box) {\n"
            '  "3D distance between two boxes: pixel center distance combined with depth gap."\n'
            "  let dx = (a[0] + a[2]) / 2 - (b[0] + b[2]) / 2\n"
            "  let dy = (a[1] + a[3]) / 2 - (b[1] + b[3]) / 2\n"
            "  let d2 = sqrt(dx * dx + dy * dy)\n"
            "  let dz = depth(a) - depth(b)\n"
            "  return sqrt(d2 * d2 + dz * dz)\n"
            "}\n"
            f"let anchor = loc({_q(p['anchor'])})[0]\n"
            f"let first = loc({_q(p['first'])})[0]\n"
            f"let second = loc({_q(p['second'])})[0]\n"
            "if dist3d(anchor, first) < dist3d(anchor, second) {\n"
            '  return "yes"\n'
            "}\n"
            'return "no"\n'
        )
    if template == O.COUNTING:
        return f"return len(loc({_q(p['label'])}))\n"
    raise ValueError(f"unknown template {template!r}")
