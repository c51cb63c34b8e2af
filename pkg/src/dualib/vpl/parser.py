"""Tokenizer and recursive-descent parser. The grammar is documented in docs/vpl.md."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

from ..errors import DualibError
from .nodes import (
    BoolOp, Binary, Call, Const, ExprStmt, For, FuncDef, If, Index, Let, ListLit,
    Name, Num, Param, Program, Return, Str, Unary, iter_exprs,
)

MAX_STATEMENTS = 500
KEYWORDS = {"let", "return", "if", "else", "for", "in", "def", "and", "or", "not", "true", "false", "null"}


class ParseError(DualibError):
    def __init__(self, message: str, line: int = 0, col: int = 0, kind: str = "syntax"):
        self.line = line
        self.col = col
        self.kind = kind
        super().__init__(f"{kind} error at line {line}, column {col}: {message}")


@dataclass(frozen=True)
class Token:
    kind: str  # NUM STR NAME KW OP NL EOF
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\d*\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)
  | (?P<str>"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|[-+*/%<>=()\[\]{},:;])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": "\n", "t": "\t", "\\": "\\", '"': '"', "'": "'"}


def _unescape(body: str, line: int, col: int) -> str:
    out, i = [], 0
    while i < len(body):
        c = body[i]
        if c == "\\":
            nxt = body[i + 1]
            if nxt not in _ESCAPES:
                raise ParseError(f"unknown escape \\{nxt}", line, col)
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, pos, depth = 1, 0, 0, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            if depth == 0:
                tokens.append(Token("NL", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind == "num":
            tokens.append(Token("NUM", text, line, col))
        elif kind == "str":
            tokens.append(Token("STR", _unescape(text[1:-1], line, col), line, col))
        elif kind == "name":
            tokens.append(Token("KW" if text in KEYWORDS else "NAME", text, line, col))
        elif kind == "op":
            if text in "([":
                depth += 1
            elif text in ")]":
                depth = max(0, depth - 1)
            tokens.append(Token("OP", text, line, col))
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.toks = tokenize(source)
        self.i = 0
        self.n_statements = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def _is(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def _accept(self, kind: str, text: str | None = None):
        if self._is(kind, text):
            t = self.tok
            self.i += 1
            return t
        return None

    def _expect(self, kind: str, text: str | None = None) -> Token:
        t = self._accept(kind, text)
        if t is None:
            want = text or kind
            got = self.tok.text or self.tok.kind
            if self.tok.kind == "NL":
                got = "end of line"
            elif self.tok.kind == "EOF":
                got = "end of input"
            raise ParseError(f"expected {want!r}, got {got!r}", self.tok.line, self.tok.col)
        return t

    def _skip_separators(self):
        while self._accept("NL") or self._accept("OP", ";"):
            pass

    def _end_statement(self):
        if self._is("OP", "}") or self._is("EOF"):
            return
        if not (self._accept("NL") or self._accept("OP", ";")):
            raise ParseError(
                f"expected end of statement, got {self.tok.text!r}", self.tok.line, self.tok.col
            )

    # grammar
    def program(self) -> tuple[list, list]:
        stmts, helpers = [], []
        self._skip_separators()
        while not self._is("EOF"):
            if self._is("KW", "def"):
                helpers.append(self.funcdef())
                self._end_statement()
            else:
                stmts.append(self.statement())
            self._skip_separators()
        return stmts, helpers

    def funcdef(self) -> FuncDef:
        kw = self._expect("KW", "def")
        name = self._expect("NAME").text
        self._expect("OP", "(")
        params = []
        if not self._is("OP", ")"):
            while True:
                pname = self._expect("NAME").text
                ptype = "any"
                if self._accept("OP", ":"):
                    ptype = self._expect("NAME").text
                if any(p.name == pname for p in params):
                    raise ParseError(f"duplicate parameter {pname!r}", kw.line, kw.col)
                params.append(Param(pname, ptype))
                if not self._accept("OP", ","):
                    break
        self._expect("OP", ")")
        body = self.block()
        doc = ""
        if body and isinstance(body[0], ExprStmt) and isinstance(body[0].value, Str):
            doc = body[0].value.value
            body = body[1:]
        return FuncDef(name, tuple(params), doc, tuple(body), kw.line, kw.col)

    def block(self) -> list:
        self._expect("OP", "{")
        self._skip_separators()
        stmts = []
        while not self._is("OP", "}"):
            if self._is("EOF"):
                raise ParseError("unterminated block, expected '}'", self.tok.line, self.tok.col)
            if self._is("KW", "def"):
                raise ParseError(
                    "function definitions are only allowed at top level",
                    self.tok.line, self.tok.col, kind="form",
                )
            stmts.append(self.statement())
            self._skip_separators()
        self._expect("OP", "}")
        return stmts

    def statement(self):
        t = self.tok
        self.n_statements += 1
        if self.n_statements > MAX_STATEMENTS:
            raise ParseError(f"more than {MAX_STATEMENTS} statements", t.line, t.col, kind="limit")
        if self._accept("KW", "let"):
            name = self._expect("NAME").text
            self._expect("OP", "=")
            node = Let(name, self.expr(), t.line, t.col)
        elif self._accept("KW", "return"):
            if self._is("NL") or self._is("EOF") or self._is("OP", "}") or self._is("OP", ";"):
                raise ParseError("return requires a value (use 'return null')", t.line, t.col)
            node = Return(self.expr(), t.line, t.col)
        elif self._is("KW", "if"):
            return self.if_stmt()
        elif self._accept("KW", "for"):
            var = self._expect("NAME").text
            self._expect("KW", "in")
            it = self.expr()
            body = self.block()
            node = For(var, it, tuple(body), t.line, t.col)
            self._end_statement()
            return node
        elif t.kind in ("KW",) and t.text in ("else", "in"):
            raise ParseError(f"unexpected {t.text!r}", t.line, t.col)
        elif t.kind == "NAME" and self.toks[self.i + 1].kind == "OP" and self.toks[self.i + 1].text == "=":
            raise ParseError(
                f"unknown statement form: assignment needs 'let {t.text} = ...'",
                t.line, t.col, kind="form",
            )
        else:
            node = ExprStmt(self.expr(), t.line, t.col)
        self._end_statement()
        return node

    def if_stmt(self) -> If:
        t = self._expect("KW", "if")
        cond = self.expr()
        then = self.block()
        orelse = None
        # allow "}\nelse {" as well as "} else {"
        save = self.i
        while self._accept("NL"):
            pass
        if self._accept("KW", "else"):
            if self._is("KW", "if"):
                self.n_statements += 1
                orelse = (self.if_stmt(),)
                return If(cond, tuple(then), orelse, t.line, t.col)
            orelse = tuple(self.block())
        else:
            self.i = save
        node = If(cond, tuple(then), orelse, t.line, t.col)
        self._end_statement()
        return node

    def expr(self):
        return self.or_expr()

    def or_expr(self):
        left = self.and_expr()
        while (t := self._accept("KW", "or")) is not None:
            left = BoolOp("or", left, self.and_expr(), t.line, t.col)
        return left

    def and_expr(self):
        left = self.not_expr()
        while (t := self._accept("KW", "and")) is not None:
            left = BoolOp("and", left, self.not_expr(), t.line, t.col)
        return left

    def not_expr(self):
        t = self._accept("KW", "not")
        if t is not None:
            return Unary("not", self.not_expr(), t.line, t.col)
        return self.comparison()

    def comparison(self):
        left = self.sum()
        t = self.tok
        if t.kind == "OP" and t.text in ("==", "!=", "<", "<=", ">", ">="):
            self.i += 1
            right = self.sum()
            if self.tok.kind == "OP" and self.tok.text in ("==", "!=", "<", "<=", ">", ">="):
                raise ParseError("chained comparisons are not supported", self.tok.line, self.tok.col)
            return Binary(t.text, left, right, t.line, t.col)
        return left

    def sum(self):
        left = self.term()
        while self.tok.kind == "OP" and self.tok.text in ("+", "-"):
            t = self.tok
            self.i += 1
            left = Binary(t.text, left, self.term(), t.line, t.col)
        return left

    def term(self):
        left = self.unary()
        while self.tok.kind == "OP" and self.tok.text in ("*", "/", "%"):
            t = self.tok
            self.i += 1
            left = Binary(t.text, left, self.unary(), t.line, t.col)
        return left

    def unary(self):
        t = self._accept("OP", "-")
        if t is not None:
            return Unary("-", self.unary(), t.line, t.col)
        return self.postfix()

    def postfix(self):
        node = self.primary()
        while True:
            t = self.tok
            if self._accept("OP", "["):
                idx = self.expr()
                self._expect("OP", "]")
                node = Index(node, idx, t.line, t.col)
            elif self._is("OP", "("):
                if not isinstance(node, Name):
                    raise ParseError("only named functions can be called", t.line, t.col)
                self.i += 1
                args = []
                if not self._is("OP", ")"):
                    while True:
                        args.append(self.expr())
                        if not self._accept("OP", ","):
                            break
                self._expect("OP", ")")
                node = Call(node.id, tuple(args), node.line, node.col)
            else:
                return node

    def primary(self):
        t = self.tok
        if t.kind == "NUM":
            self.i += 1
            is_real = any(c in t.text for c in ".eE")
            return Num(float(t.text) if is_real else int(t.text), t.line, t.col)
        if t.kind == "STR":
            self.i += 1
            return Str(t.text, t.line, t.col)
        if t.kind == "KW" and t.text in ("true", "false", "null"):
            self.i += 1
            return Const({"true": True, "false": False, "null": None}[t.text], t.line, t.col)
        if t.kind == "NAME":
            self.i += 1
            return Name(t.text, t.line, t.col)
        if self._accept("OP", "("):
            e = self.expr()
            self._expect("OP", ")")
            return e
        if self._accept("OP", "["):
            items = []
            if not self._is("OP", "]"):
                while True:
                    items.append(self.expr())
                    if not self._accept("OP", ","):
                        break
            self._expect("OP", "]")
            return ListLit(tuple(items), t.line, t.col)
        got = {"NL": "end of line", "EOF": "end of input"}.get(t.kind, t.text)
        raise ParseError(f"expected an expression, got {got!r}", t.line, t.col)


def _calls_in(stmts) -> set[str]:
    names = set()
    for s in stmts:
        for e in iter_exprs(s):
            if isinstance(e, Call):
                names.add(e.func)
    return names


def _check_acyclic(helpers: list[FuncDef]):
    graph = {h.name: _calls_in(h.body) & {g.name for g in helpers} for h in helpers}
    state: dict[str, int] = {}

    def visit(name, path):
        if state.get(name) == 1:
            cycle = path[path.index(name):] + [name]
            h = next(x for x in helpers if x.name == cycle[0])
            raise ParseError(f"recursion detected: {' -> '.join(cycle)}", h.line, h.col, kind="recursion")
        if state.get(name) == 2:
            return
        state[name] = 1
        for callee in sorted(graph[name]):
            visit(callee, path + [name])
        state[name] = 2

    for h in helpers:
        visit(h.name, [])


def _check_defs(helpers: list[FuncDef]):
    seen = set()
    for h in helpers:
        if h.name in seen:
            raise ParseError(f"function {h.name!r} defined twice", h.line, h.col, kind="form")
        seen.add(h.name)
    _check_acyclic(helpers)


@lru_cache(maxsize=4096)
def parse(source: str) -> Program:
    """Parse program text. Raises ParseError with line/column on failure."""
    p = _Parser(source)
    stmts, helpers = p.program()
    _check_defs(helpers)
    return Program(tuple(stmts), tuple(helpers), source)


@lru_cache(maxsize=1024)
def parse_function(source: str) -> FuncDef:
    """Parse a source text holding exactly one function definition (a tool body)."""
    prog = parse(source)
    if prog.statements or len(prog.helpers) != 1:
        raise ParseError("a tool definition must contain exactly one 'def' and nothing else", 1, 1, kind="form")
    fn = prog.helpers[0]
    if fn.name in _calls_in(fn.body):
        raise ParseError(f"recursion detected: {fn.name} -> {fn.name}", fn.line, fn.col, kind="recursion")
    return fn
