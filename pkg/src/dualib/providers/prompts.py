"""Prompt templates per role, stored as text assets and filled with ``string.Template``."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template

from ..model import ROLES

TEMPLATE_VERSION = 1

GRAMMAR_REMINDER = """\
- Statements: `let name = expr`, `return expr`, `if cond { ... } else { ... }`,
  `for x in list { ... }`, one per line (or separated by `;`).
- Expressions: numbers, "text", true, false, null, [lists], xs[i], calls f(a, b),
  + - * / %, comparisons, and/or/not on booleans.
- Boxes index as [x_min, y_min, x_max, y_max]; box(x0, y0, x1, y1) builds one.
- Builtins: len, min, max, sum, sqrt, abs, floor, round, range, append, text, lower, box, point.
- Optional helpers: `def name(p: type) { "docstring" ... }` before the main code.
- No recursion, no assignment without let, every path must return."""


@lru_cache(maxsize=None)
def template(role: str) -> Template:
    if role not in ROLES:
        raise KeyError(f"no template for role {role!r}")
    text = resources.files("dualib").joinpath("providers", "templates", f"{role}.txt").read_text(encoding="utf-8")
    return Template(text)


def render(role: str, **fields) -> str:
    """Fill a role template; a missing field is a programming error and raises KeyError."""
    return template(role).substitute({k: str(v) for k, v in fields.items()})


def tool_line(tool) -> str:
    return f"- {tool.signature}: {tool.docstring}"


def tool_lines(tools) -> str:
    lines = [tool_line(t) for t in tools]
    return "\n".join(lines) if lines else "(none)"


def fence(code: str) -> str:
    return "```\n" + code.rstrip("\n") + "\n```"
