"""Static analyses over parsed programs: McCabe complexity and tool reachability."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .nodes import Call, For, FuncDef, If, Program, iter_exprs, iter_stmts


@dataclass(frozen=True)
class ComplexityReport:
    per_function: dict = field(default_factory=dict)
    top_level: int = 1
    max: int = 1

    def to_json(self) -> dict:
        return {"per_function": dict(sorted(self.per_function.items())),
                "top_level": self.top_level, "max": self.max}


def _ccn(stmts) -> int:
    # 1 + one decision point per if and per for; boolean operators are not counted
    return 1 + sum(isinstance(s, (If, For)) for s in iter_stmts(stmts))


def cyclomatic_complexity(prog: Program) -> ComplexityReport:
    per_function = {h.name: _ccn(h.body) for h in prog.helpers}
    top = _ccn(prog.statements)
    return ComplexityReport(per_function, top, max([top, *per_function.values()]))


def function_complexity(fn: FuncDef) -> int:
    return _ccn(fn.body)


def call_names(stmts: Iterable) -> list[str]:
    """Callee names in source order, duplicates removed."""
    seen: dict[str, None] = {}
    for s in stmts:
        for e in iter_exprs(s):
            if isinstance(e, Call):
                seen.setdefault(e.func, None)
    return list(seen)


def called_tools(prog: Program, tools: Mapping) -> set[str]:
    """Tool names syntactically reachable from the top level.

    Closed over the program's own helper definitions, but not over tool
    bodies: a learned tool that itself calls ``loc`` contributes only its own
    name. Helper names shadow tools of the same name.
    """
    helpers = {h.name: h for h in prog.helpers}
    found: set[str] = set()
    visited: set[str] = set()
    pending = list(call_names(prog.statements))
    while pending:
        name = pending.pop()
        if name in helpers:
            if name not in visited:
                visited.add(name)
                pending.extend(call_names(helpers[name].body))
        elif name in tools:
            found.add(name)
    return found


def reachable_helpers(prog: Program) -> set[str]:
    helpers = {h.name: h for h in prog.helpers}
    visited: set[str] = set()
    pending = [n for n in call_names(prog.statements) if n in helpers]
    while pending:
        name = pending.pop()
        if name not in visited:
            visited.add(name)
            pending.extend(n for n in call_names(helpers[name].body) if n in helpers)
    return visited


def tool_callees(fn: FuncDef) -> list[str]:
    """Names called by a tool body (builtins included; callers filter)."""
    return call_names(fn.body)
