"""Syntax tree for the program language."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union


@dataclass(frozen=True)
class Num:
    value: Union[int, float]
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class Str:
    value: str
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class Const:
    """``true``, ``false`` or ``null``."""

    value: Optional[bool]
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class Name:
    id: str
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class ListLit:
    items: tuple
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class Index:
    target: "Expr"
    index: "Expr"
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "not"
    operand: "Expr"
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" / "or", short-circuit
    left: "Expr"
    right: "Expr"
    line: int = 0
    col: int = 0


Expr = Union[Num, Str, Const, Name, ListLit, Index, Call, Unary, Binary, BoolOp]


@dataclass(frozen=True)
class Let:
    name: str
    value: Expr
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class Return:
    value: Expr
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class If:
    cond: Expr
    then: tuple
    orelse: Optional[tuple] = None
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class For:
    var: str
    iterable: Expr
    body: tuple
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class ExprStmt:
    value: Expr
    line: int = 0
    col: int = 0


Stmt = Union[Let, Return, If, For, ExprStmt]


@dataclass(frozen=True)
class Param:
    name: str
    type: str = "any"


@dataclass(frozen=True)
class FuncDef:
    name: str
    params: tuple
    docstring: str
    body: tuple
    line: int = 0
    col: int = 0

    @property
    def signature(self) -> str:
        ps = ", ".join(f"{p.name}: {p.type}" for p in self.params)
        return f"{self.name}({ps})"


@dataclass(frozen=True)
class Program:
    statements: tuple
    helpers: tuple = ()
    source_text: str = field(default="", compare=False)

    def helper(self, name: str) -> Optional[FuncDef]:
        for h in self.helpers:
            if h.name == name:
                return h
        return None

    @property
    def helper_names(self) -> frozenset:
        return frozenset(h.name for h in self.helpers)


def iter_exprs(node):
    """Yield every expression node reachable from a statement or expression."""
    if isinstance(node, (Let, Return, ExprStmt)):
        yield from iter_exprs(node.value)
    elif isinstance(node, If):
        yield from iter_exprs(node.cond)
        for s in node.then:
            yield from iter_exprs(s)
        for s in node.orelse or ():
            yield from iter_exprs(s)
    elif isinstance(node, For):
        yield from iter_exprs(node.iterable)
        for s in node.body:
            yield from iter_exprs(s)
    elif isinstance(node, FuncDef):
        for s in node.body:
            yield from iter_exprs(s)
    else:
        yield node
        if isinstance(node, ListLit):
            for x in node.items:
                yield from iter_exprs(x)
        elif isinstance(node, Index):
            yield from iter_exprs(node.target)
            yield from iter_exprs(node.index)
        elif isinstance(node, Call):
            for x in node.args:
                yield from iter_exprs(x)
        elif isinstance(node, Unary):
            yield from iter_exprs(node.operand)
        elif isinstance(node, (Binary, BoolOp)):
            yield from iter_exprs(node.left)
            yield from iter_exprs(node.right)


def iter_stmts(stmts):
    for s in stmts:
        yield s
        if isinstance(s, If):
            yield from iter_stmts(s.then)
            yield from iter_stmts(s.orelse or ())
        elif isinstance(s, For):
            yield from iter_stmts(s.body)
