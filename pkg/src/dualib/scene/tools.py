"""The five Level-0 tools, implemented against scene fixtures."""

from __future__ import annotations

from ..errors import ToolError
from ..vpl.interpreter import ExecError
from ..vpl.values import Box, format_value, type_name
from .fixtures import SceneFixture, iou, normalize_question

MATCH_IOU = 0.5


def _need_box(v, tool: str) -> Box:
    if not isinstance(v, Box):
        raise ExecError("type", f"{tool} expects a box, got {type_name(v)} {format_value(v)}", tool=tool)
    return v


def _need_text(v, tool: str) -> str:
    if not isinstance(v, str):
        raise ExecError("type", f"{tool} expects text, got {type_name(v)} {format_value(v)}", tool=tool)
    return v


def _check_bounds(scene: SceneFixture, box: Box, tool: str):
    if box.x_min < 0 or box.y_min < 0 or box.x_max > scene.width or box.y_max > scene.height:
        raise ToolError(f"{tool}: box {box.as_list()} outside the image")


def tool_loc(scene: SceneFixture, label) -> list:
    label = _need_text(label, "loc")
    return [o.box for o in scene.objects if o.label == label]


def tool_depth(scene: SceneFixture, box) -> float:
    box = _need_box(box, "depth")
    _check_bounds(scene, box, "depth")
    best, best_iou = None, -1.0
    for o in scene.objects:
        v = iou(box, o.box)
        if v > best_iou:
            best, best_iou = o, v
    if best is None or best_iou < MATCH_IOU:
        raise ToolError("no object under box")
    return best.depth


def tool_get_2d_object_size(scene: SceneFixture, box) -> list:
    box = _need_box(box, "get_2d_object_size")
    _check_bounds(scene, box, "get_2d_object_size")
    return [box.x_max - box.x_min, box.y_max - box.y_min]


def tool_same_object(scene: SceneFixture, box_a, box_b) -> bool:
    a = _need_box(box_a, "same_object")
    b = _need_box(box_b, "same_object")
    return iou(a, b) > MATCH_IOU


def tool_vqa(scene: SceneFixture, question) -> str:
    q = normalize_question(_need_text(question, "vqa"))
    if q not in scene.vqa_script:
        raise ToolError(f"unscripted VQA query: {q!r}")
    return scene.vqa_script[q]


NATIVE_TOOLS = {
    "loc": tool_loc,
    "get_2d_object_size": tool_get_2d_object_size,
    "depth": tool_depth,
    "vqa": tool_vqa,
    "same_object": tool_same_object,
}

# name -> (params, docstring); params are (name, semantic type)
BASIC_TOOL_SPECS = {
    "loc": (
        (("label", "text"),),
        "Locate every object of a base category (e.g. 'chair'). Returns a list of 2D boxes "
        "in fixture order, empty when nothing matches. Do not pass compound descriptions; "
        "locate base objects and then filter.",
    ),
    "get_2d_object_size": (
        (("box", "box"),),
        "2D size of a box in pixels as [width, height].",
    ),
    "depth": (
        (("box", "box"),),
        "Distance from the camera in meters of the object under the box (smaller is closer).",
    ),
    "vqa": (
        (("question", "text"),),
        "Answer a free-form visual question about the scene. Returns text.",
    ),
    "same_object": (
        (("box_a", "box"), ("box_b", "box")),
        "True if the two boxes overlap with IoU above 0.5, i.e. denote the same object.",
    ),
}
