"""Dataset manifests: question lists bound to scene fixture files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from ..errors import SceneError
from .fixtures import SceneFixture, load_scene, manifest_schema
from .oracle import ANSWER_TYPES, Question


@dataclass
class Dataset:
    questions: list
    scenes: dict
    name: str = ""
    path: Path | None = None
    sha256: str = ""
    by_id: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.by_id = {q.id: q for q in self.questions}

    def scene_for(self, q: Question) -> SceneFixture:
        return self.scenes[q.scene]

    def __len__(self) -> int:
        return len(self.questions)


def data_dir() -> Path:
    return Path(str(resources.files("dualib").joinpath("data")))


def shipped_manifest(name: str = "manifest.json") -> Path:
    return data_dir() / name


def parse_manifest(data: dict, base: Path) -> Dataset:
    try:
        jsonschema.validate(data, manifest_schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SceneError(f"manifest invalid at {loc}: {exc.message}") from None
    scenes: dict[str, SceneFixture] = {}
    for rel in data["scenes"]:
        s = load_scene(base / rel)
        if s.id in scenes:
            raise SceneError(f"duplicate scene id {s.id}")
        scenes[s.id] = s
    questions, seen = [], set()
    for row in data["questions"]:
        q = Question.from_json(row)
        if q.id in seen:
            raise SceneError(f"duplicate question id {q.id}")
        if q.scene not in scenes:
            raise SceneError(f"{q.id}: unknown scene {q.scene}")
        if ANSWER_TYPES[q.template] != q.answer_type:
            raise SceneError(f"{q.id}: answer_type {q.answer_type} does not match template {q.template}")
        seen.add(q.id)
        questions.append(q)
    return Dataset(questions, scenes, name=data.get("name", ""))


def load_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: not JSON ({exc})") from None
    ds = parse_manifest(data, path.parent)
    ds.path = path
    ds.sha256 = hashlib.sha256(raw).hexdigest()
    return ds


def load_shipped(name: str = "manifest.json") -> Dataset:
    return load_dataset(shipped_manifest(name))
