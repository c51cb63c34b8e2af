"""Tree-walking evaluator with trace capture.

Evaluation is a pure function of (program, scene, tool view). Failures never
raise out of :func:`execute`; they are reported in ``ExecutionTrace.error``.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

from ..errors import ToolError
from .nodes import (
    BoolOp, Binary, Call, Const, ExprStmt, For, FuncDef, If, Index, Let, ListLit,
    Name, Num, Program, Return, Str, Unary,
)
from .parser import ParseError, parse_function
from .values import Box, Point, Value, format_value, is_number, to_json, type_name

DEFAULT_STEP_BUDGET = 100_000
MAX_CALL_DEPTH = 64


class ExecError(Exception):
    """Internal signal carrying a runtime failure up to :func:`execute`."""

    def __init__(self, kind: str, message: str, tool: str | None = None):
        self.kind = kind
        self.message = message
        self.tool = tool
        super().__init__(message)


@dataclass(frozen=True)
class CallRecord:
    tool: str
    args: tuple
    result: Value

    def to_json(self) -> dict:
        return {"tool": self.tool, "args": [to_json(a) for a in self.args], "result": to_json(self.result)}


@dataclass(frozen=True)
class ExecFailure:
    kind: str
    message: str
    statement_index: int
    tool: Optional[str] = None

    def to_json(self) -> dict:
        return {"kind": self.kind, "message": self.message,
                "statement_index": self.statement_index, "tool": self.tool}

    def __str__(self) -> str:
        where = f" in tool {self.tool}" if self.tool else ""
        return f"{self.kind}{where} at statement {self.statement_index}: {self.message}"


@dataclass
class ExecutionTrace:
    bindings: dict = field(default_factory=dict)
    calls: list = field(default_factory=list)
    result: Value = None
    returned: bool = False
    error: Optional[ExecFailure] = None
    steps: int = 0

    @property
    def ok(self) -> bool:
        """A return executed and no error occurred."""
        return self.returned and self.error is None

    @property
    def succeeded(self) -> bool:
        """Usable as a solution: executed cleanly and produced a non-null result."""
        return self.ok and self.result is not None

    def to_json(self) -> dict:
        return {
            "bindings": [[k, to_json(v)] for k, v in self.bindings.items()],
            "calls": [c.to_json() for c in self.calls],
            "result": to_json(self.result),
            "returned": self.returned,
            "error": self.error.to_json() if self.error else None,
            "steps": self.steps,
        }


def _need_number(v, what: str):
    if not is_number(v):
        raise ExecError("type", f"{what} expects a number, got {type_name(v)} {format_value(v)}")
    return v


def _need_list(v, what: str) -> list:
    if not isinstance(v, list):
        raise ExecError("type", f"{what} expects a list, got {type_name(v)} {format_value(v)}")
    return v


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        raise ExecError("arithmetic", "non-finite result")
    return x


def _minmax(fn, name):
    def impl(*args):
        if len(args) == 1:
            items = _need_list(args[0], name)
        else:
            items = list(args)
        if not items:
            raise ExecError("value", f"{name} of an empty list")
        for x in items:
            _need_number(x, name)
        return fn(items)
    return impl


def _b_len(v):
    if isinstance(v, (list, str)):
        return len(v)
    raise ExecError("type", f"len expects a list or text, got {type_name(v)}")


def _b_sum(v):
    items = _need_list(v, "sum")
    total = 0
    for x in items:
        total += _need_number(x, "sum")
    return _finite(total)


def _b_sqrt(v):
    x = _need_number(v, "sqrt")
    if x < 0:
        raise ExecError("arithmetic", f"sqrt of negative number {x}")
    return math.sqrt(x)


def _b_range(n):
    if not isinstance(n, int) or isinstance(n, bool):
        raise ExecError("type", f"range expects an integer, got {type_name(n)}")
    if n > 10_000:
        raise ExecError("value", "range larger than 10000")
    return list(range(max(0, n)))


def _b_append(lst, x):
    return _need_list(lst, "append") + [x]


def _b_text(v):
    if isinstance(v, str):
        return v
    return format_value(v).strip('"')


def _b_lower(v):
    if not isinstance(v, str):
        raise ExecError("type", f"lower expects text, got {type_name(v)}")
    return v.lower()


def _b_round(v, digits=0):
    _need_number(v, "round")
    if not isinstance(digits, int) or isinstance(digits, bool):
        raise ExecError("type", "round digits must be an integer")
    return round(v, digits) if digits else round(v)


def _b_box(x0, y0, x1, y1):
    for c in (x0, y0, x1, y1):
        _need_number(c, "box")
    try:
        return Box(x0, y0, x1, y1)
    except ValueError as exc:
        raise ExecError("value", str(exc)) from None


def _b_point(x, y):
    return Point(_need_number(x, "point"), _need_number(y, "point"))


BUILTINS: dict[str, Callable[..., Value]] = {
    "len": _b_len,
    "min": _minmax(min, "min"),
    "max": _minmax(max, "max"),
    "sum": _b_sum,
    "sqrt": _b_sqrt,
    "abs": lambda v: abs(_need_number(v, "abs")),
    "floor": lambda v: math.floor(_need_number(v, "floor")),
    "round": _b_round,
    "range": _b_range,
    "append": _b_append,
    "text": _b_text,
    "lower": _b_lower,
    "box": _b_box,
    "point": _b_point,
}


def _truth(v, what: str) -> bool:
    if not isinstance(v, bool):
        raise ExecError("type", f"{what} must be a boolean, got {type_name(v)} {format_value(v)}")
    return v


def _equal(a, b) -> bool:
    if is_number(a) and is_number(b):
        return a == b
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_equal(x, y) for x, y in zip(a, b))
    return type(a) is type(b) and a == b


_COMPARE = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}
_ARITH = {"+": operator.add, "-": operator.sub, "*": operator.mul,
          "/": operator.truediv, "%": operator.mod}

_NO_RETURN = object()


class _Machine:
    def __init__(self, program: Program, scene, tools: Mapping[str, Any],
                 natives: Mapping[str, Callable], budget: int):
        self.program = program
        self.scene = scene
        self.tools = tools
        self.natives = natives
        self.budget = budget
        self.steps = 0
        self.calls: list[CallRecord] = []
        self.stmt_index = 0
        self.stack: list[str] = []

    def tick(self):
        self.steps += 1
        if self.steps > self.budget:
            raise ExecError("step_budget", f"exceeded step budget of {self.budget}")

    # statements
    def run_block(self, stmts, frame: dict, top: bool, helpers: bool, record: bool):
        for i, s in enumerate(stmts):
            if top:
                self.stmt_index = i
            out = self.run_stmt(s, frame, helpers, record)
            if out is not _NO_RETURN:
                return out
        return _NO_RETURN

    def run_stmt(self, s, frame: dict, helpers: bool, record: bool):
        self.tick()
        if isinstance(s, Let):
            frame[s.name] = self.eval(s.value, frame, helpers, record)
            return _NO_RETURN
        if isinstance(s, Return):
            return self.eval(s.value, frame, helpers, record)
        if isinstance(s, ExprStmt):
            self.eval(s.value, frame, helpers, record)
            return _NO_RETURN
        if isinstance(s, If):
            if _truth(self.eval(s.cond, frame, helpers, record), "if condition"):
                return self.run_block(s.then, frame, False, helpers, record)
            if s.orelse is not None:
                return self.run_block(s.orelse, frame, False, helpers, record)
            return _NO_RETURN
        if isinstance(s, For):
            items = self.eval(s.iterable, frame, helpers, record)
            if not isinstance(items, list):
                raise ExecError("type", f"for loop expects a list, got {type_name(items)}")
            for item in items:
                frame[s.var] = item
                out = self.run_block(s.body, frame, False, helpers, record)
                if out is not _NO_RETURN:
                    return out
            return _NO_RETURN
        raise ExecError("form", f"unknown statement {type(s).__name__}")

    # expressions
    def eval(self, e, frame: dict, helpers: bool, record: bool):
        self.tick()
        if isinstance(e, Num):
            return e.value
        if isinstance(e, Str):
            return e.value
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Name):
            if e.id not in frame:
                raise ExecError("name", f"undefined variable {e.id!r}")
            return frame[e.id]
        if isinstance(e, ListLit):
            return [self.eval(x, frame, helpers, record) for x in e.items]
        if isinstance(e, Index):
            return self.index(self.eval(e.target, frame, helpers, record),
                              self.eval(e.index, frame, helpers, record))
        if isinstance(e, Unary):
            v = self.eval(e.operand, frame, helpers, record)
            if e.op == "not":
                return not _truth(v, "not operand")
            return -_need_number(v, "unary minus")
        if isinstance(e, BoolOp):
            left = _truth(self.eval(e.left, frame, helpers, record), f"{e.op} operand")
            if e.op == "and" and not left:
                return False
            if e.op == "or" and left:
                return True
            return _truth(self.eval(e.right, frame, helpers, record), f"{e.op} operand")
        if isinstance(e, Binary):
            return self.binary(e.op, self.eval(e.left, frame, helpers, record),
                               self.eval(e.right, frame, helpers, record))
        if isinstance(e, Call):
            args = [self.eval(a, frame, helpers, record) for a in e.args]
            return self.call(e.func, args, helpers, record)
        raise ExecError("form", f"unknown expression {type(e).__name__}")

    @staticmethod
    def index(target, idx):
        if not isinstance(idx, int) or isinstance(idx, bool):
            raise ExecError("type", f"index must be an integer, got {type_name(idx)}")
        if isinstance(target, (Box, Point)):
            target = target.as_list()
        elif not isinstance(target, list):
            raise ExecError("type", f"cannot index {type_name(target)} {format_value(target)}")
        if not -len(target) <= idx < len(target):
            raise ExecError("index", f"index {idx} out of range for length {len(target)}")
        return target[idx]

    @staticmethod
    def binary(op: str, a, b):
        if op == "==":
            return _equal(a, b)
        if op == "!=":
            return not _equal(a, b)
        if op == "+" and type(a) is type(b) and isinstance(a, (str, list)):
            return a + b
        if op in _COMPARE and isinstance(a, str) and isinstance(b, str):
            return _COMPARE[op](a, b)
        _need_number(a, f"operator {op}")
        _need_number(b, f"operator {op}")
        if op in _COMPARE:
            return _COMPARE[op](a, b)
        if op in ("/", "%") and b == 0:
            raise ExecError("arithmetic", "division by zero")
        return _finite(_ARITH[op](a, b))

    def call(self, name: str, args: list, helpers: bool, record: bool):
        if helpers:
            fn = self.program.helper(name)
            if fn is not None:
                return self.invoke(fn, args, helpers=True, record=record)
        if name in BUILTINS:
            try:
                return BUILTINS[name](*args)
            except TypeError:
                raise ExecError("arity", f"wrong number of arguments to {name}") from None
        tool = self.tools.get(name)
        if tool is None:
            raise ExecError("unknown_tool", f"unknown function or tool {name!r}")
        result = self.call_tool(tool, args)
        if record:
            self.calls.append(CallRecord(name, tuple(args), result))
        return result

    def call_tool(self, tool, args: list):
        name = tool.name
        if tool.level == 0:
            native = self.natives.get(name)
            if native is None:
                raise ExecError("unknown_tool", f"no implementation bound for basic tool {name!r}")
            if len(args) != len(tool.params):
                raise ExecError("arity", f"{name} takes {len(tool.params)} arguments, got {len(args)}", tool=name)
            self.tick()
            try:
                return native(self.scene, *args)
            except ToolError as exc:
                raise ExecError("tool_error", str(exc), tool=name) from None
            except ExecError as exc:
                exc.tool = exc.tool or name
                raise
        try:
            fn = parse_function(tool.body)
        except ParseError as exc:
            raise ExecError("tool_error", f"tool body does not parse: {exc}", tool=name) from None
        try:
            return self.invoke(fn, args, helpers=False, record=False)
        except ExecError as exc:
            exc.tool = exc.tool or name
            raise

    def invoke(self, fn: FuncDef, args: list, helpers: bool, record: bool):
        if len(args) != len(fn.params):
            raise ExecError("arity", f"{fn.name} takes {len(fn.params)} arguments, got {len(args)}")
        if fn.name in self.stack:
            raise ExecError("recursion", f"recursive call to {fn.name}")
        if len(self.stack) >= MAX_CALL_DEPTH:
            raise ExecError("recursion", "call depth limit exceeded")
        frame = {p.name: a for p, a in zip(fn.params, args)}
        self.stack.append(fn.name)
        try:
            out = self.run_block(fn.body, frame, False, helpers, record)
        finally:
            self.stack.pop()
        if out is _NO_RETURN:
            raise ExecError("no_result", f"function {fn.name} finished without returning a value")
        return out


def _default_natives():
    from ..scene.tools import NATIVE_TOOLS

    return NATIVE_TOOLS


def execute(program: Program, scene, tools: Mapping[str, Any],
            natives: Optional[Mapping[str, Callable]] = None,
            step_budget: int = DEFAULT_STEP_BUDGET) -> ExecutionTrace:
    """Run a parsed program against a scene and a tool view.

    ``tools`` maps names to objects exposing ``name``, ``level``, ``params``
    and ``body``; level-0 tools dispatch to ``natives`` (the scene tool
    implementations by default). Calls made from inside learned-tool bodies
    are not recorded, matching :func:`~dualib.vpl.analysis.called_tools`.
    """
    m = _Machine(program, scene, tools, natives if natives is not None else _default_natives(), step_budget)
    frame: dict = {}
    trace = ExecutionTrace(bindings=frame)
    try:
        out = m.run_block(program.statements, frame, True, True, True)
        if out is _NO_RETURN:
            trace.error = ExecFailure("no_result", "program finished without a return", m.stmt_index)
        else:
            trace.result = out
            trace.returned = True
    except ExecError as exc:
        trace.error = ExecFailure(exc.kind, exc.message, m.stmt_index, exc.tool)
    except RecursionError:
        trace.error = ExecFailure("recursion", "expression nesting too deep", m.stmt_index)
    trace.calls = m.calls
    trace.steps = m.steps
    trace.bindings = dict(frame)
    return trace
