"""Scene fixtures, the Level-0 tools over them, and the ground-truth oracle."""

from .dataset import Dataset, load_dataset, load_shipped, shipped_manifest
from .fixtures import SceneFixture, SceneObject, iou, load_scene, normalize_question
from .oracle import ANSWER_TYPES, TEMPLATES, GroundTruth, Question, oracle_answer, phrase
from .reference import reference_program
from .tools import BASIC_TOOL_SPECS, NATIVE_TOOLS

__all__ = [
    "ANSWER_TYPES", "BASIC_TOOL_SPECS", "Dataset", "GroundTruth", "NATIVE_TOOLS", "Question",
    "SceneFixture", "SceneObject", "TEMPLATES", "iou", "load_dataset", "load_scene", "load_shipped",
    "normalize_question", "oracle_answer", "phrase", "reference_program", "shipped_manifest",
]
