from __future__ import annotations

import pytest

from dualib.model import Config, Example, Libraries, Tool, compute_level
from dualib.pipeline import run, scripted_providers
from dualib.providers.scripted import ScriptedProvider
from dualib.scene import SceneFixture, SceneObject, load_shipped
from dualib.vpl import Box, called_tools, execute, parse


def make_scene(objects, sid="s1", width=640, height=480, vqa=None) -> SceneFixture:
    """objects: (label, (x0, y0, x1, y1), depth) triples."""
    objs = tuple(SceneObject(label, Box(*map(float, box)), float(d)) for label, box, d in objects)
    return SceneFixture(sid, width, height, objs, dict(vqa or {}))


@pytest.fixture
def room():
    return make_scene([
        ("chair", (0, 0, 100, 200), 2.0),
        ("table", (200, 0, 400, 100), 4.0),
        ("lamp", (450, 0, 500, 50), 1.0),
        ("cup", (10, 300, 20, 310), 3.0),
        ("cup", (100, 300, 120, 320), 5.0),
    ], vqa={"What room is this?": "kitchen"})


def make_example(eid, program, scene, libs, quality=9.0, question=None, step=0) -> Example:
    prog = parse(program)
    trace = execute(prog, scene, libs.tools)
    assert trace.ok, trace.error
    return Example(id=eid, question=question or f"question {eid}", scene=scene.id, program=program,
                   quality=quality, result=trace.result, namespace=dict(trace.bindings),
                   tools_used=tuple(called_tools(prog, libs.tools)), created_at_step=step)


def make_tool(source: str, libs: Libraries, sources=("x",), **kw) -> Tool:
    from dualib.vpl import parse_function

    fn = parse_function(source)
    return Tool(name=fn.name, params=tuple((p.name, p.type) for p in fn.params), docstring=fn.docstring,
                body=source, level=compute_level(source, libs.tools), source_example_ids=tuple(sources), **kw)


def scripted(replies=None, policy=None) -> ScriptedProvider:
    return ScriptedProvider(replies or {}, policy)


@pytest.fixture(scope="session")
def shipped():
    return load_shipped()


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory, shipped):
    """One uninterrupted desk run with the default configuration, shared across tests."""
    import time

    out = tmp_path_factory.mktemp("desk-run")
    providers = scripted_providers(shipped.scenes)
    t0 = time.perf_counter()
    res = run(shipped, Config(), providers, out)
    res.elapsed = time.perf_counter() - t0
    res.providers = providers
    return res


COUNT_TOOL = 'def count_of(label: text) {\n  "Number of objects with this label."\n  return len(loc(label))\n}\n'


def gate_fixture(n=7, divergent=None, failing=(), prefix="t"):
    """A cluster of ``n`` counting examples and a scripted rewriter/judge.

    ``divergent`` maps example ids to the judge's verdict for a rewrite whose
    result differs from the original; ``failing`` lists examples whose every
    rewrite crashes.
    """
    divergent = divergent or {}
    scene = make_scene([("cup", (0, 0, 10, 10), 1.0), ("cup", (20, 0, 30, 10), 2.0),
                        ("lamp", (40, 0, 50, 10), 3.0)])
    libs = Libraries()
    for i in range(1, n + 1):
        eid = f"e{i}"
        libs.examples[eid] = make_example(eid, 'return len(loc("cup"))\n', scene, libs,
                                          question=f"How many cups are there, case {i}?")
    tool = make_tool(COUNT_TOOL, libs, sources=tuple(libs.examples))
    rewriter, judge = {}, {}
    for eid in libs.examples:
        for a in range(2):
            if eid in failing:
                src = 'return count_of(3)\n'
            elif eid in divergent:
                src = 'return count_of("lamp")\n'
            else:
                src = 'return count_of("cup")\n'
            rewriter[f"key:rewriter/{prefix}/count_of/{eid}/a{a}"] = f"<program>\n{src}</program>"
        if eid in divergent:
            judge[f"key:correctness_judge/{prefix}/count_of/{eid}"] = f"<verdict>{divergent[eid]}</verdict>"
    provider = ScriptedProvider({"rewriter": rewriter, "correctness_judge": judge})
    return libs, tool, provider, {scene.id: scene}
