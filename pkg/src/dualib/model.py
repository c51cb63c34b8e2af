"""Data model for the two libraries, run configuration, and their JSON form."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ConfigError, CorruptionError, IntegrityError, Level0GuardError, PersistenceError
from .scene.tools import BASIC_TOOL_SPECS
from .vpl import from_json, parse, parse_function, to_json
from .vpl.analysis import tool_callees
from .vpl.parser import ParseError

SCHEMA_VERSION = 1

ROLES = (
    "prog_gen", "quality_judge", "correctness_judge", "cluster_analyst", "abstractor",
    "dedup_analyst", "merger", "rewriter", "complexity_rater",
)
DETERMINISTIC_ROLES = ("quality_judge", "correctness_judge")
DEFAULT_TEMPERATURES = {r: (0.0 if r in DETERMINISTIC_ROLES else 1.0) for r in ROLES}
ORDERINGS = ("random", "curriculum", "dataset")
BASIC_TOOL_NAMES = tuple(BASIC_TOOL_SPECS)


class Status(str, Enum):
    FRESH = "fresh"
    ABSTRACTED = "abstracted"


class AdmissionOutcome(str, Enum):
    INSERTED = "inserted"
    REPLACED = "replaced"
    REJECTED_QUALITY = "rejected_quality"
    KEPT_EXISTING = "kept_existing"


@dataclass(frozen=True)
class Config:
    iterations: int = 3
    candidates_per_question: int = 4
    retrieval_k_max: int = 3
    sim_threshold: float = 0.8
    quality_threshold: float = 8.5
    cluster_min_size: int = 4
    potential_threshold: float = 9.0
    abstraction_interval: int = 1
    dedup_interval: int = 1
    exec_success_min: float = 1.0
    correctness_min: float = 0.85
    dedup_sim_threshold: float = 0.95
    max_retries: int = 2
    rewrite_retries: int = 2
    merge_retries: int = 2
    seed: int = 42
    ordering: str = "random"
    temperatures: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TEMPERATURES))

    def __post_init__(self):
        positive = ("iterations", "candidates_per_question", "retrieval_k_max", "cluster_min_size",
                    "abstraction_interval", "dedup_interval")
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("max_retries", "rewrite_retries", "merge_retries"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        ranges = {
            "sim_threshold": (0, 1), "quality_threshold": (1, 10), "potential_threshold": (0, 10),
            "exec_success_min": (0, 1), "correctness_min": (0, 1), "dedup_sim_threshold": (0, 1),
        }
        for name, (lo, hi) in ranges.items():
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not lo <= v <= hi:
                raise ConfigError(f"{name} must be a number in [{lo}, {hi}], got {v!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.ordering not in ORDERINGS:
            raise ConfigError(f"ordering must be one of {', '.join(ORDERINGS)}, got {self.ordering!r}")
        temps = dict(self.temperatures)
        unknown = set(temps) - set(ROLES)
        if unknown:
            raise ConfigError(f"temperatures for unknown roles: {', '.join(sorted(unknown))}")
        missing = [r for r in ROLES if r not in temps]
        if missing:
            raise ConfigError(f"temperatures missing for roles: {', '.join(missing)}")
        for r, t in temps.items():
            if isinstance(t, bool) or not isinstance(t, (int, float)) or not 0 <= t <= 2:
                raise ConfigError(f"temperature for {r} must be in [0, 2], got {t!r}")
        object.__setattr__(self, "temperatures", {r: float(temps[r]) for r in ROLES})

    def temperature(self, role: str) -> float:
        try:
            return self.temperatures[role]
        except KeyError:
            raise ConfigError(f"no temperature configured for role {role!r}") from None

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["temperatures"] = dict(sorted(self.temperatures.items()))
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if "temperatures" in data:
            # partial maps override the defaults role by role
            data["temperatures"] = {**DEFAULT_TEMPERATURES, **data["temperatures"]}
        return cls(**data)

    def replace(self, **changes) -> "Config":
        d = self.to_dict()
        d.update(changes)
        return Config.from_dict(d)

    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()


def load_config(path) -> Config:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise PersistenceError(path, f"cannot read config: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return Config.from_dict(data)


@dataclass
class Example:
    id: str
    question: str
    scene: str
    program: str
    quality: float
    result: Any
    namespace: dict = field(default_factory=dict)
    tools_used: tuple = ()
    status: Status = Status.FRESH
    created_at_step: int = 0

    def __post_init__(self):
        self.tools_used = tuple(sorted(set(self.tools_used)))
        self.status = Status(self.status)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "scene": self.scene,
            "program": self.program,
            "quality": self.quality,
            "result": to_json(self.result),
            "namespace": [[k, to_json(v)] for k, v in self.namespace.items()],
            "tools_used": list(self.tools_used),
            "status": self.status.value,
            "created_at_step": self.created_at_step,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Example":
        return cls(
            id=d["id"], question=d["question"], scene=d["scene"], program=d["program"],
            quality=d["quality"], result=from_json(d["result"]),
            namespace={k: from_json(v) for k, v in d["namespace"]},
            tools_used=tuple(d["tools_used"]), status=Status(d["status"]),
            created_at_step=d["created_at_step"],
        )


@dataclass
class Tool:
    name: str
    params: tuple
    docstring: str
    body: str
    level: int
    deprecated: bool = False
    deprecation_reason: str | None = None
    source_example_ids: tuple = ()
    created_at_step: int = 0
    attempt: int = 0

    def __post_init__(self):
        self.params = tuple((str(n), str(t)) for n, t in self.params)
        self.source_example_ids = tuple(sorted(set(self.source_example_ids)))

    @property
    def signature(self) -> str:
        return f"{self.name}(" + ", ".join(f"{n}: {t}" for n, t in self.params) + ")"

    @property
    def active(self) -> bool:
        return not self.deprecated

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "params": [list(p) for p in self.params],
            "docstring": self.docstring,
            "body": self.body,
            "level": self.level,
            "deprecated": self.deprecated,
            "deprecation_reason": self.deprecation_reason,
            "source_example_ids": list(self.source_example_ids),
            "created_at_step": self.created_at_step,
            "attempt": self.attempt,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Tool":
        return cls(
            name=d["name"], params=tuple(tuple(p) for p in d["params"]), docstring=d["docstring"],
            body=d["body"], level=d["level"], deprecated=d["deprecated"],
            deprecation_reason=d["deprecation_reason"],
            source_example_ids=tuple(d["source_example_ids"]),
            created_at_step=d["created_at_step"], attempt=d.get("attempt", 0),
        )


def basic_tools() -> dict[str, Tool]:
    return {
        name: Tool(name=name, params=params, docstring=doc, body="", level=0)
        for name, (params, doc) in BASIC_TOOL_SPECS.items()
    }


@dataclass
class Libraries:
    examples: dict = field(default_factory=dict)
    tools: dict = field(default_factory=basic_tools)
    step_counter: int = 0
    rng_state: Any = None

    def active_tools(self) -> list[Tool]:
        return [t for t in self.tools.values() if not t.deprecated]

    def learned_tools(self, active_only: bool = False) -> list[Tool]:
        return [t for t in self.tools.values() if t.level >= 1 and not (active_only and t.deprecated)]

    def counts(self) -> dict:
        learned = self.learned_tools()
        return {"examples": len(self.examples), "created": len(learned),
                "active": sum(1 for t in learned if not t.deprecated)}

    def snapshot(self) -> "Libraries":
        return copy.deepcopy(self)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "examples": {k: e.to_json() for k, e in self.examples.items()},
            "tools": {k: t.to_json() for k, t in self.tools.items()},
            "step_counter": self.step_counter,
            "rng_state": self.rng_state,
        }


def canonical_json(obj) -> str:
    # repr-based float formatting is the shortest round-trip decimal
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def atomic_write(path, text: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise PersistenceError(path, f"write failed: {exc.strerror or exc}") from None


def dump_libraries(libs: Libraries) -> str:
    return canonical_json(libs.to_json())


def save_libraries(libs: Libraries, path) -> None:
    atomic_write(path, dump_libraries(libs))


# loading


def _need(d, key, kind, where: str, path):
    if not isinstance(d, dict) or key not in d:
        raise CorruptionError(path, f"{where}.{key}" if where else key, "missing field")
    v = d[key]
    ok = {
        "str": isinstance(v, str),
        "int": isinstance(v, int) and not isinstance(v, bool),
        "num": isinstance(v, (int, float)) and not isinstance(v, bool),
        "bool": isinstance(v, bool),
        "list": isinstance(v, list),
        "dict": isinstance(v, dict),
        "str?": v is None or isinstance(v, str),
        "any": True,
    }[kind]
    if not ok:
        raise CorruptionError(path, f"{where}.{key}" if where else key, f"expected {kind}, got {type(v).__name__}")
    return v


_EXAMPLE_FIELDS = (("id", "str"), ("question", "str"), ("scene", "str"), ("program", "str"),
                   ("quality", "num"), ("result", "any"), ("namespace", "list"),
                   ("tools_used", "list"), ("status", "str"), ("created_at_step", "int"))
_TOOL_FIELDS = (("name", "str"), ("params", "list"), ("docstring", "str"), ("body", "str"),
                ("level", "int"), ("deprecated", "bool"), ("deprecation_reason", "str?"),
                ("source_example_ids", "list"), ("created_at_step", "int"))


def libraries_from_json(data, path="<memory>", config: Config | None = None) -> Libraries:
    if not isinstance(data, dict):
        raise CorruptionError(path, "", "top level must be an object")
    version = _need(data, "schema_version", "int", "", path)
    if version != SCHEMA_VERSION:
        raise CorruptionError(path, "schema_version", f"unsupported version {version}")
    raw_examples = _need(data, "examples", "dict", "", path)
    raw_tools = _need(data, "tools", "dict", "", path)
    step = _need(data, "step_counter", "int", "", path)
    rng_state = data.get("rng_state")
    tools, examples = {}, {}
    for key, d in raw_tools.items():
        where = f"tools.{key}"
        for name, kind in _TOOL_FIELDS:
            _need(d, name, kind, where, path)
        try:
            tools[key] = Tool.from_json(d)
        except (TypeError, ValueError) as exc:
            raise CorruptionError(path, where, str(exc)) from None
    for key, d in raw_examples.items():
        where = f"examples.{key}"
        for name, kind in _EXAMPLE_FIELDS:
            _need(d, name, kind, where, path)
        try:
            examples[key] = Example.from_json(d)
        except (TypeError, ValueError, KeyError) as exc:
            raise CorruptionError(path, where, str(exc)) from None
    libs = Libraries(examples=examples, tools=tools, step_counter=step, rng_state=rng_state)
    validate_libraries(libs, config or Config())
    return libs


def load_libraries(path, config: Config | None = None) -> Libraries:
    """Load a library file and re-check every data-model invariant."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(path, f"cannot read libraries: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptionError(path, "", f"not JSON ({exc.msg} at line {exc.lineno})") from None
    return libraries_from_json(data, path, config)


def compute_level(body: str, tools: Mapping[str, Tool]) -> int:
    fn = parse_function(body)
    callee_levels = [tools[n].level for n in tool_callees(fn) if n in tools]
    return 1 + max(callee_levels, default=0)


def validate_libraries(libs: Libraries, config: Config) -> None:
    """Raise :class:`IntegrityError` naming the first violated invariant."""
    if libs.step_counter < 0:
        raise IntegrityError("step_counter", "step counter is negative")
    for name in BASIC_TOOL_NAMES:
        t = libs.tools.get(name)
        if t is None:
            raise IntegrityError("basic_tools", f"basic tool {name} missing")
        if t.level != 0 or t.deprecated:
            raise IntegrityError("basic_tools", f"basic tool {name} must be level 0 and active")
    for key, t in libs.tools.items():
        if key != t.name:
            raise IntegrityError("tool_key", f"tool stored under {key!r} is named {t.name!r}")
        if t.level == 0:
            if t.name not in BASIC_TOOL_SPECS:
                raise IntegrityError("tool_level", f"{t.name}: only the basic tools have level 0")
            continue
        if not t.source_example_ids:
            raise IntegrityError("tool_provenance", f"{t.name}: learned tool without source examples")
        try:
            fn = parse_function(t.body)
        except ParseError as exc:
            raise IntegrityError("tool_body", f"{t.name}: body does not parse ({exc})") from None
        if fn.name != t.name:
            raise IntegrityError("tool_body", f"{t.name}: body defines {fn.name}")
        try:
            level = compute_level(t.body, libs.tools)
        except ParseError as exc:
            raise IntegrityError("tool_body", f"{t.name}: {exc}") from None
        if level != t.level:
            raise IntegrityError("tool_level", f"{t.name}: stored level {t.level}, body implies {level}")
        if t.deprecated and not t.deprecation_reason:
            raise IntegrityError("deprecation_reason", f"{t.name}: deprecated without a reason")
    for key, e in libs.examples.items():
        if key != e.id:
            raise IntegrityError("example_key", f"example stored under {key!r} has id {e.id!r}")
        if not (isinstance(e.quality, (int, float)) and math.isfinite(e.quality) and 1 <= e.quality <= 10):
            raise IntegrityError("quality_range", f"{e.id}: quality {e.quality} outside [1, 10]")
        if e.quality < config.quality_threshold:
            raise IntegrityError("quality_threshold",
                                 f"{e.id}: quality {e.quality} below threshold {config.quality_threshold}")
        try:
            parse(e.program)
        except ParseError as exc:
            raise IntegrityError("program_parses", f"{e.id}: {exc}") from None
        for name in e.tools_used:
            if name not in libs.tools:
                raise IntegrityError("tools_resolve", f"{e.id}: uses unknown tool {name}")
        if e.status is Status.ABSTRACTED and not any(libs.tools[n].level >= 1 for n in e.tools_used):
            raise IntegrityError("abstracted_uses_learned", f"{e.id}: abstracted but uses no learned tool")


def admit_example(libs: Libraries, candidate: Example,
                  quality_threshold: float = Config.quality_threshold) -> AdmissionOutcome:
    """Apply the single-entry-per-question admission rule in place."""
    if candidate.quality < quality_threshold:
        return AdmissionOutcome.REJECTED_QUALITY
    old = libs.examples.get(candidate.id)
    if old is None:
        libs.examples[candidate.id] = candidate
        return AdmissionOutcome.INSERTED
    old_tools = set(old.tools_used)
    new_learned = any(
        n not in old_tools and n in libs.tools and libs.tools[n].level >= 1 for n in candidate.tools_used
    )
    if candidate.quality > old.quality or (candidate.quality >= old.quality and new_learned):
        candidate.status = Status.FRESH
        libs.examples[candidate.id] = candidate
        return AdmissionOutcome.REPLACED
    return AdmissionOutcome.KEPT_EXISTING


def deprecate_tool(libs: Libraries, name: str, reason: str) -> None:
    tool = libs.tools[name]
    if tool.level == 0:
        raise Level0GuardError(f"basic tool {name} cannot be deprecated")
    if not reason:
        raise ValueError("a deprecation reason is required")
    tool.deprecated = True
    tool.deprecation_reason = reason


def unique_tool_name(base: str, existing: Iterable[str]) -> str:
    taken = set(existing)
    if base not in taken:
        return base
    n = 2
    while f"{base}_{n}" in taken:
        n += 1
    return f"{base}_{n}"
