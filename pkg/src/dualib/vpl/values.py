"""Runtime values of the program language and their JSON encoding.

Lists are plain Python lists that the language never mutates in place.
Boxes and points are tagged in JSON so they survive a round trip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Union


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self.as_list()}")

    def as_list(self) -> list:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def __getitem__(self, i: int):
        return self.as_list()[i]

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def as_list(self) -> list:
        return [self.x, self.y]

    def __getitem__(self, i: int):
        return self.as_list()[i]


Value = Union[None, bool, int, float, str, Box, Point, list]


def is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def type_name(v: Any) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, int):
        return "integer"
    if isinstance(v, float):
        return "number"
    if isinstance(v, str):
        return "text"
    if isinstance(v, Box):
        return "box"
    if isinstance(v, Point):
        return "point"
    if isinstance(v, list):
        return "list"
    return type(v).__name__


def to_json(v: Value) -> Any:
    if isinstance(v, Box):
        return {"box": v.as_list()}
    if isinstance(v, Point):
        return {"point": v.as_list()}
    if isinstance(v, list):
        return [to_json(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        raise ValueError(f"non-finite number {v!r}")
    return v


def from_json(obj: Any) -> Value:
    if isinstance(obj, dict):
        if set(obj) == {"box"}:
            return Box(*obj["box"])
        if set(obj) == {"point"}:
            return Point(*obj["point"])
        raise ValueError(f"unknown tagged value {sorted(obj)}")
    if isinstance(obj, list):
        return [from_json(x) for x in obj]
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise ValueError(f"unsupported JSON value {obj!r}")


def values_close(a: Value, b: Value, tol: float = 1e-9) -> bool:
    """Deep structural equality with a relative/absolute tolerance on reals."""
    if is_number(a) and is_number(b):
        return math.isclose(a, b, rel_tol=tol, abs_tol=tol)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(values_close(x, y, tol) for x, y in zip(a, b))
    if isinstance(a, (Box, Point)) and type(a) is type(b):
        return values_close(a.as_list(), b.as_list(), tol)
    if isinstance(a, str) and isinstance(b, str):
        return a == b
    return type(a) is type(b) and a == b


def format_value(v: Value, precision: int = 6) -> str:
    """Human-readable rendering used in prompts and CLI tables."""
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.{precision}g}"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, Box):
        return "box(" + ", ".join(format_value(x, precision) for x in v.as_list()) + ")"
    if isinstance(v, Point):
        return "point(" + ", ".join(format_value(x, precision) for x in v.as_list()) + ")"
    if isinstance(v, list):
        return "[" + ", ".join(format_value(x, precision) for x in v) + "]"
    return str(v)
