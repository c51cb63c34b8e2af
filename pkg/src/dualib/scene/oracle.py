"""Question templates for the synthetic domain and the brute-force answer oracle.

Geometry follows the pixel x depth convention: a 3D size is the 2D pixel size
times depth, and a 3D distance combines the 2D center distance in pixels with
the depth gap in meters without any calibration. The unit mismatch is kept on
purpose; see docs/formats.md.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import UnanswerableInstance
from ..vpl.values import Value
from .fixtures import SceneFixture, SceneObject

SIZE_RATIO = "size_ratio"
EXTREME_DEPTH = "extreme_depth"
DIMENSION_MATCH = "dimension_match"
DISTANCE_COMPARE = "distance_compare"
COUNTING = "counting"
LARGEST_3D = "largest_3d"

TEMPLATES = (SIZE_RATIO, EXTREME_DEPTH, DIMENSION_MATCH, DISTANCE_COMPARE, COUNTING, LARGEST_3D)

ANSWER_TYPES = {
    SIZE_RATIO: "float",
    EXTREME_DEPTH: "multiple_choice",
    DIMENSION_MATCH: "float",
    DISTANCE_COMPARE: "yes_no",
    COUNTING: "counting",
    LARGEST_3D: "multiple_choice",
}


@dataclass(frozen=True)
class GroundTruth:
    question_id: str
    answer: Value
    answer_type: str

    def to_json(self) -> dict:
        return {"question_id": self.question_id, "answer": self.answer, "answer_type": self.answer_type}


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    scene: str
    answer_type: str
    template: str
    params: dict = field(default_factory=dict, hash=False)

    def to_json(self) -> dict:
        return {"id": self.id, "question": self.text, "scene": self.scene,
                "answer_type": self.answer_type, "template": self.template, "params": self.params}

    @classmethod
    def from_json(cls, d: dict) -> "Question":
        return cls(d["id"], d["question"], d["scene"], d["answer_type"], d["template"], dict(d["params"]))


def _first(scene: SceneFixture, label: str) -> SceneObject:
    objs = scene.objects_with(label)
    if not objs:
        raise UnanswerableInstance(f"label {label!r} absent from scene {scene.id}")
    return objs[0]


def _all(scene: SceneFixture, label: str) -> list[SceneObject]:
    objs = scene.objects_with(label)
    if not objs:
        raise UnanswerableInstance(f"label {label!r} absent from scene {scene.id}")
    return objs


def size_2d(obj: SceneObject, dim: str) -> float:
    if dim == "height":
        return obj.box.y_max - obj.box.y_min
    if dim == "width":
        return obj.box.x_max - obj.box.x_min
    raise UnanswerableInstance(f"unknown dimension {dim!r}")


def size_3d(obj: SceneObject, dim: str) -> float:
    return size_2d(obj, dim) * obj.depth


def distance_3d(a: SceneObject, b: SceneObject) -> float:
    (ax, ay), (bx, by) = a.box.center, b.box.center
    d2 = ((ax - bx) ** 2 + (ay - by) ** 2) ** 0.5
    return (d2 ** 2 + (a.depth - b.depth) ** 2) ** 0.5


def center_x(obj: SceneObject) -> float:
    return obj.box.center[0]


def oracle_value(scene: SceneFixture, template: str, params: dict) -> Value:
    p = params
    if template == SIZE_RATIO:
        return size_3d(_first(scene, p["a"]), p["dim"]) / size_3d(_first(scene, p["b"]), p["dim"])
    if template == DIMENSION_MATCH:
        return size_3d(_first(scene, p["target"]), p["dim"]) / size_3d(_first(scene, p["unit"]), p["dim"])
    if template == EXTREME_DEPTH:
        closest = p["mode"] == "closest"
        best_label, best = None, None
        for label in p["labels"]:
            for obj in _all(scene, label):
                if best is None or (obj.depth < best if closest else obj.depth > best):
                    best_label, best = label, obj.depth
        return best_label
    if template == LARGEST_3D:
        best_label, best = None, None
        for label in p["labels"]:
            for obj in _all(scene, label):
                v = size_3d(obj, p["dim"])
                if best is None or v > best:
                    best_label, best = label, v
        return best_label
    if template == DISTANCE_COMPARE:
        anchor = _first(scene, p["anchor"])
        d_first = distance_3d(anchor, _first(scene, p["first"]))
        d_second = distance_3d(anchor, _first(scene, p["second"]))
        return "yes" if d_first < d_second else "no"
    if template == COUNTING:
        n = len(scene.objects_with(p["label"]))
        if n == 0:
            raise UnanswerableInstance(f"label {p['label']!r} absent from scene {scene.id}")
        return n
    raise UnanswerableInstance(f"unknown template {template!r}")


def oracle_answer(scene: SceneFixture, question: Question) -> GroundTruth:
    """Exhaustive, formula-level ground truth for one template instance."""
    value = oracle_value(scene, question.template, question.params)
    if isinstance(value, float) and not math.isfinite(value):
        raise UnanswerableInstance(f"{question.id}: non-finite answer")
    return GroundTruth(question.id, value, ANSWER_TYPES[question.template])


# phrasings; variant 0 is the training phrasing, variant 1 the held-out one
def phrase(template: str, params: dict, variant: int = 0) -> str:
    p = params
    if template == SIZE_RATIO:
        if variant == 0:
            return f"What is the ratio of the 3D {p['dim']} of the {p['a']} to the 3D {p['dim']} of the {p['b']}?"
        adj = {"height": "taller", "width": "wider"}[p["dim"]]
        return f"How many times {adj} is the {p['a']} than the {p['b']} in real-world 3D terms?"
    if template == EXTREME_DEPTH:
        a, b, c = p["labels"]
        if variant == 0:
            rel = {"closest": "closest to", "farthest": "farthest from"}[p["mode"]]
            return f"Which is {rel} the camera: the {a}, the {b}, or the {c}?"
        rel = {"closest": "nearest to", "farthest": "furthest away from"}[p["mode"]]
        return f"Of the {a}, the {b} and the {c}, which one sits {rel} the camera?"
    if template == DIMENSION_MATCH:
        if variant == 0:
            return f"How many {p['unit']}s would it take to match the 3D {p['dim']} of the {p['target']}?"
        return f"If you lined up {p['unit']}s, how many would equal the real-world {p['dim']} of the {p['target']}?"
    if template == DISTANCE_COMPARE:
        if variant == 0:
            return f"Is the {p['anchor']} closer to the {p['first']} than to the {p['second']} in 3D space?"
        return (f"In three-dimensional space, is the {p['first']} nearer to the {p['anchor']} "
                f"than the {p['second']} is?")
    if template == COUNTING:
        if variant == 0:
            return f"How many {p['label']}s are there in the image?"
        return f"What is the number of {p['label']}s visible in the scene?"
    if template == LARGEST_3D:
        a, b, c = p["labels"]
        if variant == 0:
            return f"Which is the largest in 3D {p['dim']}: the {a}, the {b}, or the {c}?"
        return f"Among the {a}, the {b} and the {c}, which object has the greatest real-world {p['dim']}?"
    raise ValueError(f"unknown template {template!r}")
