from __future__ import annotations

import filecmp
import json

import pytest

from dualib.errors import SceneError, UnanswerableInstance
from dualib.model import Libraries
from dualib.scene import (
    TEMPLATES, SceneFixture, iou, load_dataset, load_scene, oracle_answer, phrase, reference_program,
)
from dualib.scene import oracle as O
from dualib.scene.dataset import data_dir
from dualib.scene.generate import write_dataset
from dualib.providers.desk import understand
from dualib.vpl import Box, execute, parse

from conftest import make_scene


def test_iou_hand_values():
    a, b = Box(0, 0, 10, 10), Box(5, 0, 15, 10)
    assert iou(a, b) == pytest.approx(50 / 150)
    assert iou(a, Box(20, 20, 30, 30)) == 0.0
    assert iou(a, a) == 1.0


def test_fixture_validation():
    with pytest.raises(SceneError):
        make_scene([("chair", (0, 0, 700, 10), 1.0)])
    with pytest.raises(SceneError):
        make_scene([("chair", (0, 0, 10, 10), 0.0)])
    with pytest.raises(SceneError):
        SceneFixture.from_json({"id": "x", "width": 10})


def test_load_scene_roundtrip(tmp_path, room):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(room.to_json()))
    assert load_scene(p) == room


def test_ratio_hand_computed(room):
    # chair: height 200 px at 2 m -> 400; table: height 100 px at 4 m -> 400
    assert O.oracle_value(room, O.SIZE_RATIO, {"a": "chair", "b": "table", "dim": "height"}) == 1.0
    # widths: chair 100 * 2 = 200, table 200 * 4 = 800
    assert O.oracle_value(room, O.SIZE_RATIO, {"a": "chair", "b": "table", "dim": "width"}) == 0.25


def test_depth_scaling_leaves_ratios_unchanged(room):
    p = {"a": "chair", "b": "cup", "dim": "width"}
    base = O.oracle_value(room, O.SIZE_RATIO, p)
    for c in (0.5, 3.0, 17.25):
        assert O.oracle_value(room.scaled_depths(c), O.SIZE_RATIO, p) == pytest.approx(base, rel=1e-12)


def test_distance_three_four_five():
    scene = make_scene([
        ("anchor", (8, 8, 12, 12), 1.0),   # center (10, 10)
        ("near", (11, 8, 15, 12), 5.0),    # center (13, 10): 3 px across, 4 m deeper
        ("far", (8, 14, 12, 18), 1.0),     # center (10, 16): 6 px across
    ])
    a, n, f = scene.objects
    assert O.distance_3d(a, n) == 5.0
    assert O.distance_3d(a, f) == 6.0
    assert O.oracle_value(scene, O.DISTANCE_COMPARE, {"anchor": "anchor", "first": "near", "second": "far"}) == "yes"


def test_extreme_largest_counting(room):
    labels = ["chair", "table", "lamp"]
    assert O.oracle_value(room, O.EXTREME_DEPTH, {"labels": labels, "mode": "closest"}) == "lamp"
    assert O.oracle_value(room, O.EXTREME_DEPTH, {"labels": labels, "mode": "farthest"}) == "table"
    # heights in 3D: chair 400, table 400, lamp 50; the first maximum wins
    assert O.oracle_value(room, O.LARGEST_3D, {"labels": labels, "dim": "height"}) == "chair"
    assert O.oracle_value(room, O.COUNTING, {"label": "cup"}) == 2
    with pytest.raises(UnanswerableInstance):
        O.oracle_value(room, O.COUNTING, {"label": "sofa"})
    with pytest.raises(UnanswerableInstance):
        O.oracle_value(room, O.SIZE_RATIO, {"a": "sofa", "b": "cup", "dim": "width"})


def test_dimension_match_hand_computed(room):
    # table width 3D = 800, cup (first) width 3D = 10 * 3 = 30
    v = O.oracle_value(room, O.DIMENSION_MATCH, {"unit": "cup", "target": "table", "dim": "width"})
    assert v == pytest.approx(800 / 30)


def test_shipped_dataset_shape(shipped):
    assert len(shipped) == 60
    per = {t: 0 for t in TEMPLATES}
    for q in shipped.questions:
        per[q.template] += 1
        assert q.answer_type == O.ANSWER_TYPES[q.template]
    assert set(per.values()) == {10}
    held = load_dataset(data_dir() / "heldout.json")
    assert len(held) == 12 and {q.template for q in held.questions} == set(TEMPLATES)


def test_generator_reproduces_shipped_data(tmp_path):
    write_dataset(tmp_path)
    ship = data_dir()
    for rel in ["manifest.json", "heldout.json"] + [f"scenes/scene-{i:02d}.json" for i in range(12)]:
        assert filecmp.cmp(tmp_path / rel, ship / rel, shallow=False), rel


def test_heldout_phrasings_are_unseen(shipped):
    held = load_dataset(data_dir() / "heldout.json")
    train = {q.text for q in shipped.questions}
    for q in held.questions:
        assert q.text not in train
        assert q.text != phrase(q.template, q.params, 0)


def test_both_phrasings_are_understood(shipped):
    held = load_dataset(data_dir() / "heldout.json")
    for q in list(shipped.questions) + list(held.questions):
        assert understand(q.text) == (q.template, q.params), q.text


def test_reference_programs_match_oracle_on_constructed_scene(room):
    libs = Libraries()
    cases = [
        (O.SIZE_RATIO, {"a": "chair", "b": "cup", "dim": "height"}),
        (O.DIMENSION_MATCH, {"unit": "cup", "target": "table", "dim": "width"}),
        (O.EXTREME_DEPTH, {"labels": ["cup", "chair"], "mode": "farthest"}),
        (O.DISTANCE_COMPARE, {"anchor": "chair", "first": "table", "second": "lamp"}),
        (O.COUNTING, {"label": "cup"}),
        (O.LARGEST_3D, {"labels": ["cup", "lamp", "table"], "dim": "width"}),
    ]
    for template, params in cases:
        t = execute(parse(reference_program(template, params)), room, libs.tools)
        truth = O.oracle_value(room, template, params)
        assert t.ok, t.error
        if isinstance(truth, float):
            assert t.result == pytest.approx(truth, rel=1e-9)
        else:
            assert t.result == truth


def test_manifest_rejects_mismatched_answer_type(tmp_path):
    ship = data_dir()
    data = json.loads((ship / "manifest.json").read_text())
    data["questions"][0]["answer_type"] = "float" if data["questions"][0]["answer_type"] != "float" else "counting"
    data["scenes"] = [str(ship / s) for s in data["scenes"]]
    p = tmp_path / "m.json"
    p.write_text(json.dumps(data))
    with pytest.raises(Exception) as exc:
        load_dataset(p)
    assert "answer_type" in str(exc.value) or "answer type" in str(exc.value)


def test_oracle_answer_type(shipped):
    q = shipped.questions[0]
    gt = oracle_answer(shipped.scene_for(q), q)
    assert gt.question_id == q.id and gt.answer_type == q.answer_type
