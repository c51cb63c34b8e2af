"""Solving one question: retrieve demonstrations, sample programs, execute, judge, admit."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .errors import MalformedReplyError
from .model import AdmissionOutcome, Config, Example, Libraries, admit_example
from .providers import prompts
from .providers.base import chat, make_request
from .providers.embedding import EmbeddingBank, cosine
from .vpl import ParseError, called_tools, execute, format_value, parse, to_json
from .vpl.interpreter import ExecutionTrace


@dataclass
class Candidate:
    index: int
    source: str
    status: str = "pending"  # ok | reply_error | parse_error | deprecated_tool | exec_error | no_result
    detail: str | None = None
    trace: ExecutionTrace | None = None
    tools_used: tuple = ()
    quality: float | None = None
    reasoning: str = ""

    @property
    def survived(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "source": self.source,
            "status": self.status,
            "detail": self.detail,
            "result": to_json(self.trace.result) if self.trace and self.trace.ok else None,
            "error": self.trace.error.to_json() if self.trace and self.trace.error else None,
            "tools_used": list(self.tools_used),
            "quality": self.quality,
        }


@dataclass
class CandidateSet:
    question_id: str
    candidates: list = field(default_factory=list)
    best_index: int | None = None

    @property
    def best(self) -> Candidate | None:
        return None if self.best_index is None else self.candidates[self.best_index]

    def to_json(self) -> dict:
        return {"question_id": self.question_id, "best_index": self.best_index,
                "candidates": [c.to_json() for c in self.candidates]}


@dataclass
class SolveResult:
    candidates: CandidateSet
    outcome: AdmissionOutcome | None  # None: unsolved this pass
    example: Example | None
    retrieved: list

    @property
    def answer(self) -> Any:
        return self.example.result if self.example is not None else None

    def audit(self, **extra) -> dict:
        row = {
            "question_id": self.candidates.question_id,
            "retrieved": [e.id for e in self.retrieved],
            "outcome": self.outcome.value if self.outcome else "unsolved",
            "best_index": self.candidates.best_index,
            "qualities": [c.quality for c in self.candidates.candidates],
            "candidates": self.candidates.to_json()["candidates"],
        }
        row.update(extra)
        return row


def select_best(qualities: list) -> int | None:
    """Argmax over present qualities; the lowest index wins ties."""
    best = None
    for i, q in enumerate(qualities):
        if q is not None and (best is None or q > qualities[best]):
            best = i
    return best


def retrieve_similar(libs: Libraries, question_id: str, question_text: str, bank: EmbeddingBank,
                     config: Config) -> list[Example]:
    if not libs.examples:
        return []
    others = [e for _, e in sorted(libs.examples.items()) if e.id != question_id]
    if not others:
        return []
    vecs = bank.get_many([question_text] + [e.question for e in others])
    q = vecs[0]
    scored = []
    for e, v in zip(others, vecs[1:]):
        s = cosine(q, v)
        if s >= config.sim_threshold:
            scored.append((-s, e.id, e))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [e for _, _, e in scored[: config.retrieval_k_max]]


def _tool_ctx(tools) -> list[dict]:
    return [{"name": t.name, "level": t.level, "params": [list(p) for p in t.params]} for t in tools]


def build_generation_prompt(question_id: str, question_text: str, scene, retrieved: list, libs: Libraries,
                            config: Config, sample_index: int = 0, key: str | None = None):
    active = sorted(libs.active_tools(), key=lambda t: (t.level, t.name))
    basic = [t for t in active if t.level == 0]
    learned = [t for t in active if t.level >= 1]
    demos = ""
    if retrieved:
        parts = ["\n## Solved examples"]
        for i, e in enumerate(retrieved, 1):
            parts.append(f"### Example {i}\nQuestion: {e.question}\n<program>\n{e.program.rstrip()}\n</program>")
        demos = "\n\n".join(parts) + "\n"
    text = prompts.render(
        "prog_gen", question=question_text, scene=scene.render(), grammar=prompts.GRAMMAR_REMINDER,
        basic_tools=prompts.tool_lines(basic), learned_tools=prompts.tool_lines(learned),
        demonstrations=demos,
    )
    context = {
        "question": question_text, "question_id": question_id, "scene": scene.id,
        "tools": _tool_ctx(active),
        "examples": [{"id": e.id, "question": e.question, "program": e.program} for e in retrieved],
    }
    return make_request(config, "prog_gen", text, sample_index=sample_index, attachments=scene.id,
                        key=key, context=context)


def build_judge_prompt(question_id: str, question_text: str, scene, cand: Candidate, libs: Libraries,
                       config: Config, key: str | None = None):
    trace = cand.trace
    ns = "\n".join(f"- {k} = {format_value(v)}" for k, v in trace.bindings.items()) or "(none)"
    active = sorted(libs.active_tools(), key=lambda t: (t.level, t.name))
    basic = [t for t in active if t.level == 0]
    learned = [t for t in active if t.level >= 1]
    reference = "Basic tools (level 0):\n" + prompts.tool_lines(basic) + \
        "\n\nLearned tools (level 1 and above):\n" + prompts.tool_lines(learned)
    text = prompts.render(
        "quality_judge", question=question_text, program=prompts.fence(cand.source),
        status="success" if trace.ok else "failure", answer=format_value(trace.result),
        tools_used=", ".join(cand.tools_used) or "(none)",
        error=str(trace.error) if trace.error else "none", namespace=ns, scene=scene.render(),
        tool_count=len(active), basic_count=len(basic), learned_count=len(learned),
        tool_reference=reference,
    )
    context = {"question": question_text, "question_id": question_id, "scene": scene.id,
               "program": cand.source, "result": to_json(trace.result), "tools_used": list(cand.tools_used)}
    return make_request(config, "quality_judge", text, sample_index=cand.index, attachments=scene.id,
                        key=key, context=context)


def run_candidate(index: int, source: str, scene, libs: Libraries) -> Candidate:
    """Parse, screen, and execute one generated program."""
    cand = Candidate(index, source)
    try:
        prog = parse(source)
    except ParseError as exc:
        cand.status, cand.detail = "parse_error", str(exc)
        return cand
    used = called_tools(prog, libs.tools)
    cand.tools_used = tuple(sorted(used))
    stale = sorted(n for n in used if libs.tools[n].deprecated)
    if stale:
        cand.status, cand.detail = "deprecated_tool", f"calls deprecated {', '.join(stale)}"
        return cand
    cand.trace = execute(prog, scene, libs.tools)
    if cand.trace.error is not None:
        cand.status = "no_result" if cand.trace.error.kind == "no_result" else "exec_error"
        cand.detail = str(cand.trace.error)
    elif cand.trace.result is None:
        cand.status, cand.detail = "no_result", "program returned null"
    else:
        cand.status = "ok"
    return cand


def solve_question(libs: Libraries, question_id: str, question_text: str, scene, chat_provider,
                   bank: EmbeddingBank, config: Config, *, step: int = 0, tag: str = "",
                   admit: bool = True, workers: int = 1) -> SolveResult:
    retrieved = retrieve_similar(libs, question_id, question_text, bank, config)
    prefix = f"{question_id}/{tag}" if tag else question_id
    reqs = [
        build_generation_prompt(question_id, question_text, scene, retrieved, libs, config, j,
                                key=f"prog_gen/{prefix}/s{j}")
        for j in range(config.candidates_per_question)
    ]

    def generate(req):
        try:
            return chat(chat_provider, req).parsed, None
        except MalformedReplyError as exc:
            return None, str(exc)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            replies = list(pool.map(generate, reqs))
    else:
        replies = [generate(r) for r in reqs]

    cset = CandidateSet(question_id)
    for j, (source, err) in enumerate(replies):
        if source is None:
            cset.candidates.append(Candidate(j, "", "reply_error", err))
        else:
            cset.candidates.append(run_candidate(j, source, scene, libs))

    survivors = [c for c in cset.candidates if c.survived]
    for c in survivors:
        req = build_judge_prompt(question_id, question_text, scene, c, libs, config,
                                 key=f"quality_judge/{prefix}/s{c.index}")
        rating = chat(chat_provider, req).parsed
        c.quality, c.reasoning = rating.rating, rating.reasoning
    cset.best_index = select_best([c.quality for c in cset.candidates])
    best = cset.best
    if best is None:
        return SolveResult(cset, None, None, retrieved)
    example = Example(
        id=question_id, question=question_text, scene=scene.id, program=best.source,
        quality=best.quality, result=best.trace.result, namespace=dict(best.trace.bindings),
        tools_used=best.tools_used, created_at_step=step,
    )
    outcome = admit_example(libs, example, config.quality_threshold) if admit else None
    return SolveResult(cset, outcome, example, retrieved)
