"""Declarative scene fixtures that stand in for images."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

import jsonschema

from ..errors import SceneError
from ..vpl.values import Box


def normalize_question(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    text = re.sub(r"[^\w\s]", " ", text.lower())
    return " ".join(text.split())


@dataclass(frozen=True)
class SceneObject:
    label: str
    box: Box
    depth: float
    attributes: dict = field(default_factory=dict, hash=False, compare=True)

    def to_json(self) -> dict:
        return {"label": self.label, "box": self.box.as_list(), "depth": self.depth,
                "attributes": dict(sorted(self.attributes.items()))}


@dataclass(frozen=True)
class SceneFixture:
    id: str
    width: int
    height: int
    objects: tuple
    vqa_script: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if not self.id:
            raise SceneError("scene id must be non-empty")
        for i, obj in enumerate(self.objects):
            b = obj.box
            if not obj.label:
                raise SceneError(f"{self.id}: object {i} has an empty label")
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise SceneError(f"{self.id}: object {i} box {b.as_list()} outside the image")
            if not obj.depth > 0:
                raise SceneError(f"{self.id}: object {i} depth must be positive")
        object.__setattr__(
            self, "vqa_script", {normalize_question(q): a for q, a in self.vqa_script.items()}
        )

    def objects_with(self, label: str) -> list[SceneObject]:
        return [o for o in self.objects if o.label == label]

    @property
    def labels(self) -> list[str]:
        return sorted({o.label for o in self.objects})

    def scaled_depths(self, c: float) -> "SceneFixture":
        objs = tuple(SceneObject(o.label, o.box, o.depth * c, dict(o.attributes)) for o in self.objects)
        return SceneFixture(self.id, self.width, self.height, objs, dict(self.vqa_script))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "width": self.width,
            "height": self.height,
            "objects": [o.to_json() for o in self.objects],
            "vqa_script": dict(sorted(self.vqa_script.items())),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SceneFixture":
        try:
            jsonschema.validate(data, scene_schema())
        except jsonschema.ValidationError as exc:
            loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise SceneError(f"scene fixture invalid at {loc}: {exc.message}") from None
        try:
            objs = tuple(
                SceneObject(o["label"], Box(*o["box"]), float(o["depth"]), dict(o.get("attributes", {})))
                for o in data["objects"]
            )
        except ValueError as exc:
            raise SceneError(f"{data.get('id')}: {exc}") from None
        return cls(data["id"], int(data["width"]), int(data["height"]), objs, dict(data.get("vqa_script", {})))

    def render(self) -> str:
        """Structured text table given to model roles in place of the image."""
        lines = [f"Scene {self.id} ({self.width}x{self.height} px)",
                 "| # | label | box (x_min, y_min, x_max, y_max) px | depth m | attributes |",
                 "|---|---|---|---|---|"]
        for i, o in enumerate(self.objects):
            attrs = ", ".join(f"{k}={v}" for k, v in sorted(o.attributes.items())) or "-"
            box = ", ".join(f"{c:g}" for c in o.box.as_list())
            lines.append(f"| {i} | {o.label} | ({box}) | {o.depth:g} | {attrs} |")
        return "\n".join(lines)


def iou(a: Box, b: Box) -> float:
    if a == b:
        return 1.0
    ix = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@lru_cache(maxsize=None)
def _schema(name: str) -> dict:
    text = resources.files("dualib").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


def scene_schema() -> dict:
    return _schema("scene.schema.json")


def manifest_schema() -> dict:
    return _schema("manifest.schema.json")


def load_scene(path: Path) -> SceneFixture:
    with open(path, encoding="utf-8") as f:
        return SceneFixture.from_json(json.load(f))


def load_scenes(paths: Iterable[Path]) -> dict[str, SceneFixture]:
    scenes: dict[str, SceneFixture] = {}
    for p in paths:
        s = load_scene(p)
        if s.id in scenes:
            raise SceneError(f"duplicate scene id {s.id}")
        scenes[s.id] = s
    return scenes
