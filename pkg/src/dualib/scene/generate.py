"""Seeded generator for the shipped synthetic dataset.

Run ``python3 -m dualib.scene.generate --out <dir>`` to regenerate; the
shipped copy under ``dualib/data`` is produced with the default seed and a
test checks it is reproducible.
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

from . import oracle as O
from .fixtures import SceneFixture, SceneObject, iou
from ..vpl.values import Box

DEFAULT_SEED = 2024
N_SCENES = 12
WIDTH, HEIGHT = 640, 480

LABELS = (
    "sofa", "chair", "table", "lamp", "cabinet", "stool", "bed", "desk", "plant", "monitor",
    "bottle", "cup", "door", "window", "pillow", "painting", "mirror", "vase", "speaker",
    "tv", "clock", "basket", "towel", "rug",
)
COLORS = ("red", "blue", "green", "white", "black", "brown", "gray", "yellow")
ROOMS = ("living room", "bedroom", "office", "kitchen", "study")


def _place(rng: random.Random, placed: list[Box]) -> Box:
    for _ in range(1000):
        w, h = rng.randint(30, 160), rng.randint(30, 200)
        x, y = rng.randint(0, WIDTH - w), rng.randint(0, HEIGHT - h)
        b = Box(float(x), float(y), float(x + w), float(y + h))
        if all(iou(b, o) < 0.3 for o in placed):
            return b
    raise RuntimeError("could not place a box")


def make_scene(rng: random.Random, idx: int) -> SceneFixture:
    labels = rng.sample(LABELS, 7)
    uniques, counted = labels[:6], labels[6]
    names = uniques + [counted] * rng.randint(2, 4)
    rng.shuffle(names)
    objs, boxes = [], []
    for name in names:
        b = _place(rng, boxes)
        boxes.append(b)
        depth = round(rng.uniform(1.0, 9.0), 2)
        objs.append(SceneObject(name, b, depth, {"color": rng.choice(COLORS)}))
    room = rng.choice(ROOMS)
    vqa = {"What room is this?": room, "Is this indoors?": "yes"}
    return SceneFixture(f"scene-{idx:02d}", WIDTH, HEIGHT, tuple(objs), vqa)


def _uniques(scene: SceneFixture) -> list[str]:
    return [lab for lab in scene.labels if len(scene.objects_with(lab)) == 1]


def _counted(scene: SceneFixture) -> str:
    return next(lab for lab in scene.labels if len(scene.objects_with(lab)) > 1)


def _well_posed(scene: SceneFixture, template: str, params: dict) -> bool:
    """Reject instances whose answer sits too close to a decision boundary."""
    p = params
    if template in (O.EXTREME_DEPTH, O.LARGEST_3D):
        if template == O.EXTREME_DEPTH:
            vals = sorted(scene.objects_with(lab)[0].depth for lab in p["labels"])
            return vals[1] - vals[0] >= 0.3 and vals[2] - vals[1] >= 0.3
        vals = sorted(O.size_3d(scene.objects_with(lab)[0], p["dim"]) for lab in p["labels"])
        return vals[2] >= 1.05 * vals[1]
    if template == O.DISTANCE_COMPARE:
        a = scene.objects_with(p["anchor"])[0]
        d1 = O.distance_3d(a, scene.objects_with(p["first"])[0])
        d2 = O.distance_3d(a, scene.objects_with(p["second"])[0])
        return not (0.95 <= d1 / d2 <= 1.05)
    if template == O.DIMENSION_MATCH:
        return O.oracle_value(scene, template, p) > 1.0
    return True


def make_params(rng: random.Random, scene: SceneFixture, template: str) -> dict:
    uniq = _uniques(scene)
    for _ in range(200):
        if template == O.SIZE_RATIO:
            a, b = rng.sample(uniq, 2)
            p = {"a": a, "b": b, "dim": rng.choice(("height", "width"))}
        elif template == O.DIMENSION_MATCH:
            unit, target = rng.sample(uniq, 2)
            p = {"unit": unit, "target": target, "dim": rng.choice(("height", "width"))}
        elif template == O.EXTREME_DEPTH:
            p = {"labels": rng.sample(uniq, 3), "mode": rng.choice(("closest", "farthest"))}
        elif template == O.LARGEST_3D:
            p = {"labels": rng.sample(uniq, 3), "dim": rng.choice(("height", "width"))}
        elif template == O.DISTANCE_COMPARE:
            anchor, first, second = rng.sample(uniq, 3)
            p = {"anchor": anchor, "first": first, "second": second}
        elif template == O.COUNTING:
            p = {"label": _counted(scene)}
        else:
            raise ValueError(template)
        if _well_posed(scene, template, p):
            return p
    raise RuntimeError(f"no well-posed {template} instance on {scene.id}")


def _question(qid: str, scene: SceneFixture, template: str, params: dict, variant: int) -> O.Question:
    return O.Question(qid, O.phrase(template, params, variant), scene.id, O.ANSWER_TYPES[template],
                      template, params)


def generate(seed: int = DEFAULT_SEED):
    """Return (scenes, training questions, held-out questions)."""
    rng = random.Random(seed)
    scenes = [make_scene(rng, i) for i in range(N_SCENES)]
    train, heldout = [], []
    n = 0
    for i, scene in enumerate(scenes):
        skipped = O.TEMPLATES[i % len(O.TEMPLATES)]
        for template in O.TEMPLATES:
            if template == skipped:
                continue
            n += 1
            train.append(_question(f"q{n:03d}", scene, template, make_params(rng, scene, template), 0))
    for i, scene in enumerate(scenes):
        # held-out instances use the template the scene never saw in training
        template = O.TEMPLATES[i % len(O.TEMPLATES)]
        heldout.append(_question(f"h{i + 1:02d}", scene, template, make_params(rng, scene, template), 1))
    return scenes, train, heldout


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_dataset(out: Path, seed: int = DEFAULT_SEED):
    scenes, train, heldout = generate(seed)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    rels = []
    for s in scenes:
        rel = f"scenes/{s.id}.json"
        _dump(s.to_json(), out / rel)
        rels.append(rel)
    _dump({"schema_version": 1, "name": "synthetic-train", "scenes": rels,
           "questions": [q.to_json() for q in train]}, out / "manifest.json")
    _dump({"schema_version": 1, "name": "synthetic-heldout", "scenes": rels,
           "questions": [q.to_json() for q in heldout]}, out / "heldout.json")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Regenerate the synthetic scene dataset.")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    args = ap.parse_args(argv)
    write_dataset(args.out, args.seed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
