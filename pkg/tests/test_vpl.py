from __future__ import annotations

import math

import pytest
from hypothesis import given, settings, strategies as st

from dualib.model import Libraries
from dualib.vpl import (
    MAX_STATEMENTS, Box, ParseError, Point, called_tools, cyclomatic_complexity, execute, format_value,
    from_json, parse, parse_function, to_json, values_close,
)

from conftest import make_scene


def run(src, scene, libs=None, **kw):
    libs = libs or Libraries()
    return execute(parse(src), scene, libs.tools, **kw)


def test_arithmetic_and_let_rebinding(room):
    t = run("let x = 2\nlet x = x * 3 + 1\nreturn x / 2\n", room)
    assert t.ok and t.result == 3.5
    assert t.bindings["x"] == 7


def test_if_else_and_for(room):
    src = """
let total = 0
for v in [1, 2, 3, 4] {
  if v % 2 == 0 {
    let total = total + v
  } else {
    let total = total - 1
  }
}
return total
"""
    t = run(src, room)
    assert t.result == 4 and t.ok


def test_basic_tools_against_scene(room):
    src = """
let cups = loc("cup")
let d = depth(cups[1])
let size = get_2d_object_size(cups[0])
return [len(cups), d, size[0], size[1]]
"""
    t = run(src, room)
    assert t.ok
    assert t.result == [2, 5.0, 10.0, 10.0]
    assert [c.tool for c in t.calls] == ["loc", "depth", "get_2d_object_size"]


def test_vqa_and_same_object(room):
    t = run('let a = loc("chair")[0]\nreturn [vqa("what room is this"), same_object(a, a)]\n', room)
    assert t.result == ["kitchen", True]


def test_helper_function_and_called_tools(room):
    src = """
def h(label: text) {
  "height of the first box"
  return get_2d_object_size(loc(label)[0])[1]
}
return h("chair") / h("table")
"""
    prog = parse(src)
    libs = Libraries()
    assert called_tools(prog, libs.tools) == {"loc", "get_2d_object_size"}
    assert run(src, room).result == 2.0


def test_recursion_rejected_at_parse():
    with pytest.raises(ParseError) as exc:
        parse('def f(x: number) {\n  "loop"\n  return f(x)\n}\nreturn f(1)\n')
    assert exc.value.kind == "recursion"


def test_mutual_recursion_rejected():
    src = ('def f(x: number) {\n  "a"\n  return g(x)\n}\n'
           'def g(x: number) {\n  "b"\n  return f(x)\n}\nreturn f(1)\n')
    with pytest.raises(ParseError):
        parse(src)


def test_statement_limit():
    ok = "".join("let x = 1\n" for _ in range(MAX_STATEMENTS - 1)) + "return x\n"
    parse(ok)
    with pytest.raises(ParseError) as exc:
        parse(ok + "return x\n")
    assert exc.value.kind == "limit"


def test_step_budget(room):
    src = "let n = 0\nfor i in range(1000) {\n  for j in range(1000) {\n    let n = n + 1\n  }\n}\nreturn n\n"
    t = run(src, room)
    assert not t.ok and t.error.kind == "step_budget"


def test_syntax_errors_carry_position():
    with pytest.raises(ParseError) as exc:
        parse("let x = (1 + \nreturn x\n")
    assert exc.value.line >= 1
    with pytest.raises(ParseError):
        parse("return\n")


@pytest.mark.parametrize("src,kind", [
    ('return loc(3)\n', "type"),
    ('return unknown_fn(1)\n', "unknown_tool"),
    ('return depth(box(0, 0, 10000, 10))\n', "tool_error"),
    ('let x = [1]\nreturn x[5]\n', "index"),
    ('let x = 1\n', "no_result"),
    ('return 1 / 0\n', None),
])
def test_runtime_failures(room, src, kind):
    t = run(src, room)
    assert not t.ok
    if kind is not None:
        assert t.error.kind == kind


def test_ccn_counts_if_and_for():
    assert cyclomatic_complexity(parse("return 1\n")).top_level == 1
    src = "for x in [1] {\n  if x > 0 {\n    return x\n  }\n}\nreturn 0\n"
    assert cyclomatic_complexity(parse(src)).top_level == 3
    src = ('def h(a: number) {\n  "d"\n  if a > 1 {\n    return 1\n  }\n  return 0\n}\nreturn h(2)\n')
    rep = cyclomatic_complexity(parse(src))
    assert rep.per_function["h"] == 2 and rep.top_level == 1 and rep.max == 2


def test_parse_function_form():
    fn = parse_function('def f(a: text, b: number) {\n  "doc"\n  return b\n}\n')
    assert fn.name == "f" and fn.docstring == "doc" and [p.name for p in fn.params] == ["a", "b"]
    with pytest.raises(ParseError):
        parse_function("return 1\n")


def test_learned_tool_calls_not_recorded(room):
    from conftest import make_tool

    libs = Libraries()
    t = make_tool('def count_of(label: text) {\n  "n"\n  return len(loc(label))\n}\n', libs)
    libs.tools[t.name] = t
    trace = run('return count_of("cup")\n', room, libs)
    assert trace.result == 2
    assert [c.tool for c in trace.calls] == ["count_of"]
    assert called_tools(parse('return count_of("cup")\n'), libs.tools) == {"count_of"}


def test_value_json_roundtrip():
    vals = [1, 2.5, "a", True, None, [1, [2, "x"]], Box(0, 0, 1, 2), Point(3, 4)]
    for v in vals:
        assert values_close(from_json(to_json(v)), v)
    assert format_value(Box(0, 0, 1, 2))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(-1e6, 1e6, allow_nan=False))
def test_arithmetic_matches_python(a, b):
    scene = make_scene([("x", (0, 0, 1, 1), 1.0)])
    t = run(f"return {a!r} + {b!r} * 2\n", scene)
    assert t.ok
    assert math.isclose(t.result, a + b * 2, rel_tol=1e-12, abs_tol=1e-9)
