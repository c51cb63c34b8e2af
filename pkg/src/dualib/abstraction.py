"""Turning recurring solution patterns into validated library tools.

Clusters of fresh examples are found by question similarity, an analyst rates
how well each would abstract, an abstractor drafts a parameterized tool, and
the draft only enters the library after every member program has been
rewritten onto it and the rewrites pass the execution and correctness gates.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import MalformedReplyError
from .model import Config, Example, Libraries, Status, Tool, compute_level, unique_tool_name
from .providers import prompts
from .providers.base import chat, make_request
from .providers.embedding import EmbeddingBank
from .vpl import BUILTINS, ParseError, called_tools, execute, format_value, parse, parse_function, to_json, values_close
from .vpl.analysis import tool_callees
from .vpl.interpreter import ExecutionTrace


@dataclass
class Cluster:
    example_ids: tuple
    pattern: str = ""
    parameters: tuple = ()
    potential: float | None = None
    reasoning: str = ""

    def __post_init__(self):
        self.example_ids = tuple(sorted(self.example_ids))

    def __len__(self) -> int:
        return len(self.example_ids)

    def to_json(self) -> dict:
        return {"example_ids": list(self.example_ids), "pattern": self.pattern,
                "parameters": list(self.parameters), "potential": self.potential}


def membership_key(ids, libs: Libraries) -> str:
    """Identity of a cluster: its members and their current programs."""
    h = hashlib.sha256()
    for i in sorted(ids):
        h.update(i.encode("utf-8") + b"\0" + libs.examples[i].program.encode("utf-8") + b"\0")
    return h.hexdigest()


# clustering


def average_link(vectors: np.ndarray, threshold: float) -> list[list[int]]:
    """Agglomerative clustering on cosine similarity of unit vectors.

    Repeatedly merges the pair of clusters with the highest mean pairwise
    similarity while that mean is at least ``threshold``. Rows are assumed to
    be in ascending id order, so ties go to the pair whose smallest members
    come first.
    """
    n = len(vectors)
    if n == 0:
        return []
    sims = vectors @ vectors.T
    members = [[i] for i in range(n)]
    sums = sims.copy()
    sizes = np.ones(n)
    alive = np.ones(n, dtype=bool)
    while alive.sum() > 1:
        avg = sums / np.outer(sizes, sizes)
        mask = np.triu(np.outer(alive, alive), k=1)
        avg = np.where(mask, avg, -np.inf)
        best = avg.max()
        if best < threshold:
            break
        # first in row-major order = lowest (min_a, min_b) since slots keep their min member
        a, b = divmod(int(np.flatnonzero(avg == best)[0]), n)
        members[a].extend(members[b])
        members[b] = []
        sums[a, :] += sums[b, :]
        sums[:, a] += sums[:, b]
        sizes[a] += sizes[b]
        alive[b] = False
        sums[b, :] = 0
        sums[:, b] = 0
    return [sorted(m) for m in members if m]


def cluster_by_similarity(libs: Libraries, bank: EmbeddingBank, config: Config) -> list[Cluster]:
    fresh = [e for _, e in sorted(libs.examples.items()) if e.status is Status.FRESH]
    if len(fresh) < config.cluster_min_size:
        return []
    vecs = np.array(bank.get_many([e.question for e in fresh]))
    out = []
    for group in average_link(vecs, config.sim_threshold):
        if len(group) >= config.cluster_min_size:
            out.append(Cluster(tuple(fresh[i].id for i in group)))
    out.sort(key=lambda c: c.example_ids[0])
    return out


# assessment


def _example_block(n, e: Example) -> str:
    return f"### Example {n}\nQuestion: {e.question}\n{prompts.fence(e.program)}"


def assess_cluster(cluster: Cluster, libs: Libraries, chat_provider, config: Config,
                   key: str | None = None) -> list[Cluster]:
    """Ask the analyst to split and rate a similarity cluster.

    Returns the analyst's blocks mapped back to example ids, each carrying its
    pattern and potential; filtering by size and potential is the caller's.
    """
    if len(cluster) < config.cluster_min_size:
        raise ValueError(f"cluster of {len(cluster)} is below the minimum size {config.cluster_min_size}")
    members = [libs.examples[i] for i in cluster.example_ids]
    text = prompts.render("cluster_analyst", count=len(members),
                          examples="\n\n".join(_example_block(n, e) for n, e in enumerate(members, 1)))
    context = {"examples": [
        {"local_id": n, "id": e.id, "question": e.question, "program": e.program,
         "uses_learned": any(libs.tools[t].level >= 1 for t in e.tools_used if t in libs.tools)}
        for n, e in enumerate(members, 1)
    ]}
    reply = chat(chat_provider, make_request(config, "cluster_analyst", text, key=key, context=context))
    out = []
    for block in reply.parsed.clusters:
        bad = [i for i in block.example_ids if not 1 <= i <= len(members)]
        if bad:
            raise MalformedReplyError("cluster_analyst", f"example number {bad[0]} out of range", reply.raw)
        out.append(Cluster(tuple(members[i - 1].id for i in block.example_ids), block.pattern,
                           block.parameters, block.potential, block.reasoning))
    return out


# validation


@dataclass
class Rewrite:
    example_id: str
    program: str
    trace: ExecutionTrace
    tools_used: tuple
    attempts: int

    def to_json(self) -> dict:
        return {"example_id": self.example_id, "program": self.program, "attempts": self.attempts,
                "result": to_json(self.trace.result), "tools_used": list(self.tools_used)}


@dataclass
class ValidationResult:
    passed: bool
    stage: str  # execution | correctness | passed
    rewrites: dict = field(default_factory=dict)
    divergent_count: int = 0
    correct_divergent_count: int = 0
    incorrect_count: int = 0
    verdicts: dict = field(default_factory=dict)
    failure_detail: str | None = None
    overall_correct: float | None = None
    judged: int = 0
    rewrite_failures: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "passed": self.passed, "stage": self.stage,
            "rewrites": {k: r.to_json() for k, r in sorted(self.rewrites.items())},
            "divergent_count": self.divergent_count,
            "correct_divergent_count": self.correct_divergent_count,
            "incorrect_count": self.incorrect_count,
            "verdicts": dict(sorted(self.verdicts.items())),
            "failure_detail": self.failure_detail,
            "overall_correct": self.overall_correct,
            "judged": self.judged,
            "rewrite_failures": self.rewrite_failures,
        }


def _rewrite_request(tool: Tool, ex: Example, tools_view, config: Config, attempt: int, key: str | None,
                     purpose: str):
    others = sorted((t for t in tools_view.values() if not t.deprecated and t.name != tool.name),
                    key=lambda t: (t.level, t.name))
    text = prompts.render(
        "rewriter", question=ex.question, program=prompts.fence(ex.program),
        tool_signature=tool.signature, tool_docstring=tool.docstring,
        tools=prompts.tool_lines(others), tool_name=tool.name,
    )
    context = {"question": ex.question, "question_id": ex.id, "scene": ex.scene, "program": ex.program,
               "tool": {"name": tool.name, "params": [list(p) for p in tool.params],
                        "docstring": tool.docstring},
               "attempt": attempt, "purpose": purpose}
    return make_request(config, "rewriter", text, sample_index=attempt, attachments=ex.scene, key=key,
                        context=context)


def _judge_request(ex: Example, rw: Rewrite, scenes, config: Config, key: str | None):
    scene = scenes[ex.scene]
    text = prompts.render(
        "correctness_judge", question=ex.question, original_answer=format_value(ex.result),
        original_program=prompts.fence(ex.program), new_answer=format_value(rw.trace.result),
        new_program=prompts.fence(rw.program), scene=scene.render(),
    )
    context = {"question": ex.question, "question_id": ex.id, "scene": ex.scene,
               "original_result": to_json(ex.result), "new_result": to_json(rw.trace.result),
               "new_program": rw.program}
    return make_request(config, "correctness_judge", text, attachments=ex.scene, key=key, context=context)


def validate_tool(tool: Tool, examples: list[Example], libs: Libraries, chat_provider,
                  config: Config, scenes: Mapping, *, forbidden: frozenset = frozenset(),
                  exhaustive: bool = False, key_prefix: str = "", purpose: str = "abstraction") -> ValidationResult:
    """Two gates: every member must execute on a rewrite, then enough rewrites must be right.

    Stage 1 gives each example up to ``rewrite_retries`` rewriter attempts; a
    rewrite counts only if it parses, calls ``tool``, avoids ``forbidden``
    and deprecated tools, and returns a value. Stage 2 sends each divergent
    result to the correctness judge in example order and stops as soon as the
    correctness bound can no longer be met. ``exhaustive`` disables both
    early exits without changing the verdict.
    """
    if not examples:
        raise ValueError("validation needs at least one example")
    view = dict(libs.tools)
    view[tool.name] = tool
    total = len(examples)
    res = ValidationResult(passed=False, stage="execution")
    failures = 0
    for ex in examples:
        scene = scenes[ex.scene]
        done = None
        notes = []
        for attempt in range(config.rewrite_retries):
            key = f"rewriter/{key_prefix}/{tool.name}/{ex.id}/a{attempt}"
            source = chat(chat_provider, _rewrite_request(tool, ex, view, config, attempt, key, purpose)).parsed
            try:
                prog = parse(source)
            except ParseError as exc:
                notes.append(f"a{attempt}: {exc}")
                continue
            used = called_tools(prog, view)
            if tool.name not in used:
                notes.append(f"a{attempt}: rewrite does not call {tool.name}")
                continue
            banned = sorted(n for n in used if n in forbidden or view[n].deprecated)
            if banned:
                notes.append(f"a{attempt}: rewrite calls retired {', '.join(banned)}")
                continue
            trace = execute(prog, scene, view)
            if not trace.ok or trace.result is None:
                notes.append(f"a{attempt}: {trace.error or 'returned null'}")
                continue
            done = Rewrite(ex.id, source, trace, tuple(sorted(used)), attempt + 1)
            break
        if done is None:
            failures += 1
            res.rewrite_failures.append({"example_id": ex.id, "notes": notes})
            if not exhaustive and (total - failures) / total < config.exec_success_min:
                res.failure_detail = f"{ex.id}: no rewrite executed ({'; '.join(notes)})"
                return res
        else:
            res.rewrites[ex.id] = done
    if (total - failures) / total < config.exec_success_min:
        res.failure_detail = f"{failures} of {total} examples have no executable rewrite"
        return res

    res.stage = "correctness"
    by_id = {e.id: e for e in examples}
    divergent = [i for i in (e.id for e in examples)
                 if i in res.rewrites and not values_close(res.rewrites[i].trace.result, by_id[i].result)]
    res.divergent_count = len(divergent)
    for i in divergent:
        key = f"correctness_judge/{key_prefix}/{tool.name}/{i}"
        verdict = chat(chat_provider, _judge_request(by_id[i], res.rewrites[i], scenes, config, key)).parsed
        res.judged += 1
        res.verdicts[i] = "CORRECT" if verdict.correct else "INCORRECT"
        if verdict.correct:
            res.correct_divergent_count += 1
        else:
            res.incorrect_count += 1
            if not exhaustive and (total - res.incorrect_count) / total < config.correctness_min:
                res.overall_correct = (total - res.incorrect_count) / total
                res.failure_detail = (f"correctness bound {total - res.incorrect_count}/{total} "
                                      f"below {config.correctness_min}")
                return res
    res.overall_correct = (total - res.divergent_count + res.correct_divergent_count) / total
    if res.overall_correct < config.correctness_min:
        res.failure_detail = f"overall correctness {res.overall_correct:.3f} below {config.correctness_min}"
        return res
    res.passed = True
    res.stage = "passed"
    return res


def apply_rewrites(libs: Libraries, result: ValidationResult) -> list[str]:
    """Install validated rewrites; the examples become abstracted."""
    changed = []
    for eid, rw in sorted(result.rewrites.items()):
        ex = libs.examples[eid]
        ex.program = rw.program
        ex.result = rw.trace.result
        ex.namespace = dict(rw.trace.bindings)
        ex.tools_used = tuple(sorted(called_tools(parse(rw.program), libs.tools)))
        ex.status = Status.ABSTRACTED
        changed.append(eid)
    return changed


# tool drafting


_DEF_NAME = re.compile(r"\bdef\s+([A-Za-z_][A-Za-z0-9_]*)")


def draft_tool(source: str, libs: Libraries, *, forbidden: frozenset = frozenset(), step: int = 0,
               source_ids=(), attempt: int = 1) -> Tool:
    """Turn a drafted function definition into a Tool, or raise ValueError saying why not.

    Collisions with any existing tool name, active or deprecated, get a
    numeric suffix.
    """
    try:
        fn = parse_function(source)
    except ParseError as exc:
        raise ValueError(f"tool does not parse: {exc}") from None
    if not fn.docstring:
        raise ValueError("tool has no docstring")
    name = unique_tool_name(fn.name, libs.tools)
    if name != fn.name:
        source = _DEF_NAME.sub(f"def {name}", source, count=1)
        fn = parse_function(source)
    for callee in tool_callees(fn):
        if callee in BUILTINS:
            continue
        t = libs.tools.get(callee)
        if t is None:
            raise ValueError(f"tool calls unknown function {callee}")
        if t.deprecated or callee in forbidden:
            raise ValueError(f"tool calls retired tool {callee}")
    level = compute_level(source, libs.tools)
    return Tool(name=name, params=tuple((p.name, p.type) for p in fn.params), docstring=fn.docstring,
                body=source, level=level, source_example_ids=tuple(source_ids), created_at_step=step,
                attempt=attempt)


@dataclass
class CreationResult:
    tool: Tool | None
    attempts: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.tool is not None


def create_tool(cluster: Cluster, libs: Libraries, chat_provider, config: Config, scenes: Mapping, *,
                step: int = 0, key_prefix: str = "", archive=None) -> CreationResult:
    """Draft, validate and admit a tool for a cluster, with up to ``max_retries`` drafts."""
    members = [libs.examples[i] for i in cluster.example_ids]
    result = CreationResult(None)
    existing = sorted(libs.active_tools(), key=lambda t: (t.level, t.name))
    failure_note = ""
    for attempt in range(config.max_retries):
        text = prompts.render(
            "abstractor", pattern=cluster.pattern or "(not stated)",
            parameters=", ".join(cluster.parameters) or "(not stated)",
            examples="\n\n".join(_example_block(n, e) for n, e in enumerate(members, 1)),
            tools=prompts.tool_lines(existing), failure_note=failure_note,
        )
        context = {"examples": [{"id": e.id, "question": e.question, "program": e.program} for e in members],
                   "pattern": cluster.pattern, "parameters": list(cluster.parameters),
                   "existing_tools": [t.name for t in existing], "attempt": attempt}
        key = f"abstractor/{key_prefix}/a{attempt}"
        source = chat(chat_provider, make_request(config, "abstractor", text, sample_index=attempt, key=key,
                                                  context=context)).parsed
        record = {"kind": "abstraction", "step": step, "attempt": attempt + 1,
                  "cluster": cluster.to_json(), "source": source}
        try:
            tool = draft_tool(source, libs, step=step, source_ids=cluster.example_ids, attempt=attempt + 1)
        except ValueError as exc:
            record.update(tool=None, validation=None, error=str(exc))
            result.attempts.append(record)
            failure_note = f"\nThe previous draft was rejected: {exc}\n"
            if archive:
                archive(record)
            continue
        val = validate_tool(tool, members, libs, chat_provider, config, scenes,
                            key_prefix=f"{key_prefix}/a{attempt}")
        record.update(tool=tool.name, level=tool.level, validation=val.to_json())
        result.attempts.append(record)
        if archive:
            archive(record)
        if val.passed:
            libs.tools[tool.name] = tool
            apply_rewrites(libs, val)
            result.tool = tool
            return result
        failure_note = f"\nThe previous draft failed validation at the {val.stage} stage: {val.failure_detail}\n"
    return result


# one full pass, as triggered by the pipeline


@dataclass
class PassSummary:
    clusters: int = 0
    assessed: int = 0
    created: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    failed: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"clusters": self.clusters, "assessed": self.assessed, "created": self.created,
                "skipped": self.skipped, "failed": self.failed}


def abstraction_pass(libs: Libraries, bank: EmbeddingBank, chat_provider, config: Config, scenes: Mapping,
                     memo: dict, *, step: int = 0, archive=None, on_assess=None) -> PassSummary:
    """Cluster fresh examples and try to abstract each promising group once.

    ``memo`` maps membership keys to their last outcome so unchanged clusters
    are neither re-assessed nor re-attempted.
    """
    summary = PassSummary()
    for cluster in cluster_by_similarity(libs, bank, config):
        summary.clusters += 1
        if any(libs.examples[i].status is not Status.FRESH for i in cluster.example_ids):
            continue  # an earlier tool in this pass already took some members
        ckey = membership_key(cluster.example_ids, libs)
        if ckey in memo:
            continue
        if on_assess:
            on_assess(cluster)
        subs = assess_cluster(cluster, libs, chat_provider, config, key=f"cluster_analyst/s{step}/{ckey[:16]}")
        summary.assessed += 1
        memo[ckey] = "assessed"
        for sub in subs:
            ids = sub.example_ids
            if len(sub) < config.cluster_min_size or sub.potential < config.potential_threshold:
                summary.skipped.append({"example_ids": list(ids), "potential": sub.potential})
                if archive:
                    archive({"kind": "skip", "step": step, "cluster": sub.to_json(),
                             "reason": "too small" if len(sub) < config.cluster_min_size else "low potential"})
                continue
            skey = membership_key(ids, libs)
            if memo.get(skey) == "failed":
                continue
            made = create_tool(sub, libs, chat_provider, config, scenes, step=step,
                               key_prefix=f"s{step}/{skey[:16]}", archive=archive)
            if made.ok:
                memo[skey] = "created"
                summary.created.append(made.tool.name)
            else:
                memo[skey] = "failed"
                summary.failed.append(list(ids))
    return summary


__all__ = [
    "Cluster", "CreationResult", "PassSummary", "Rewrite", "ValidationResult",
    "abstraction_pass", "apply_rewrites", "assess_cluster", "average_link", "cluster_by_similarity",
    "create_tool", "draft_tool", "membership_key", "validate_tool",
]
