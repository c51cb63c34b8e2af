"""The small deterministic program language that solutions and learned tools are written in."""

from .analysis import ComplexityReport, called_tools, cyclomatic_complexity, function_complexity
from .interpreter import (
    BUILTINS, DEFAULT_STEP_BUDGET, CallRecord, ExecFailure, ExecutionTrace, execute,
)
from .nodes import FuncDef, Program
from .parser import MAX_STATEMENTS, ParseError, parse, parse_function
from .values import Box, Point, Value, format_value, from_json, to_json, values_close

__all__ = [
    "BUILTINS", "Box", "CallRecord", "ComplexityReport", "DEFAULT_STEP_BUDGET", "ExecFailure",
    "ExecutionTrace", "FuncDef", "MAX_STATEMENTS", "ParseError", "Point", "Program", "Value",
    "called_tools", "cyclomatic_complexity", "execute", "format_value", "from_json",
    "function_complexity", "parse", "parse_function", "to_json", "values_close",
]
