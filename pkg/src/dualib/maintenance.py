"""Keeping the tool library small: merge learned tools that do the same job."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .abstraction import apply_rewrites, draft_tool, validate_tool
from .errors import MalformedReplyError
from .model import Config, Libraries, deprecate_tool
from .providers import prompts
from .providers.base import chat, make_request


@dataclass(frozen=True)
class MergeGroup:
    tools: tuple
    similarity: float
    reasoning: str = ""

    def to_json(self) -> dict:
        return {"tools": list(self.tools), "similarity": self.similarity, "reasoning": self.reasoning}


def _tool_block(t) -> str:
    return f"### {t.signature} (level {t.level})\n{t.docstring}\n{prompts.fence(t.body)}"


def eligible_tools(libs: Libraries) -> list:
    return sorted(libs.learned_tools(active_only=True), key=lambda t: t.name)


def find_duplicates(libs: Libraries, chat_provider, config: Config, key: str | None = None) -> list[MergeGroup]:
    eligible = eligible_tools(libs)
    if len(eligible) < 2:
        return []
    names = {t.name for t in eligible}
    text = prompts.render("dedup_analyst", tools="\n\n".join(_tool_block(t) for t in eligible))
    context = {"tools": [{"name": t.name, "params": [list(p) for p in t.params], "docstring": t.docstring,
                          "body": t.body} for t in eligible]}
    reply = chat(chat_provider, make_request(config, "dedup_analyst", text, key=key, context=context))
    groups = []
    for g in reply.parsed:
        unknown = [n for n in g.tools if n not in names]
        if unknown:
            raise MalformedReplyError("dedup_analyst", f"group names ineligible tool {unknown[0]}", reply.raw)
        if g.similarity >= config.dedup_sim_threshold:
            groups.append(MergeGroup(tuple(sorted(g.tools)), g.similarity, g.reasoning))
    return groups


@dataclass
class MergeResult:
    group: MergeGroup
    tool: object | None = None
    skipped: str | None = None
    attempts: list = field(default_factory=list)
    rewritten: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.tool is not None


def merge_group(group: MergeGroup, libs: Libraries, chat_provider, config: Config, scenes: Mapping, *,
                step: int = 0, key_prefix: str = "", archive=None) -> MergeResult:
    """Draft a unified tool, validate it on every example using the group, retire the originals."""
    res = MergeResult(group)
    members = set(group.tools)
    e_m = [e for _, e in sorted(libs.examples.items()) if members.intersection(e.tools_used)]
    if not e_m:
        # validating against nothing would pass vacuously
        res.skipped = "no examples use these tools"
        if archive:
            archive({"kind": "merge", "step": step, "group": group.to_json(), "skipped": res.skipped})
        return res
    originals = [libs.tools[n] for n in group.tools]
    others = sorted((t for t in libs.active_tools() if t.name not in members), key=lambda t: (t.level, t.name))
    forbidden = frozenset(members)
    failure_note = ""
    for attempt in range(config.merge_retries):
        text = prompts.render(
            "merger", tools="\n\n".join(_tool_block(t) for t in originals),
            strategy=group.reasoning or "(none given)", other_tools=prompts.tool_lines(others),
            failure_note=failure_note,
        )
        context = {"tools": [{"name": t.name, "params": [list(p) for p in t.params], "docstring": t.docstring,
                              "body": t.body} for t in originals],
                   "strategy": group.reasoning, "existing_tools": [t.name for t in others], "attempt": attempt}
        key = f"merger/{key_prefix}/a{attempt}"
        source = chat(chat_provider, make_request(config, "merger", text, sample_index=attempt, key=key,
                                                  context=context)).parsed
        record = {"kind": "merge", "step": step, "attempt": attempt + 1, "group": group.to_json(),
                  "examples": [e.id for e in e_m], "source": source}
        try:
            tool = draft_tool(source, libs, forbidden=forbidden, step=step,
                              source_ids=[e.id for e in e_m], attempt=attempt + 1)
        except ValueError as exc:
            record.update(tool=None, validation=None, error=str(exc))
            res.attempts.append(record)
            failure_note = f"\nThe previous draft was rejected: {exc}\n"
            if archive:
                archive(record)
            continue
        val = validate_tool(tool, e_m, libs, chat_provider, config, scenes, forbidden=forbidden,
                            key_prefix=f"{key_prefix}/a{attempt}", purpose="merge")
        record.update(tool=tool.name, level=tool.level, validation=val.to_json())
        res.attempts.append(record)
        if archive:
            archive(record)
        if val.passed:
            libs.tools[tool.name] = tool
            for name in group.tools:
                deprecate_tool(libs, name, f"Merged into {tool.name}")
            res.rewritten = apply_rewrites(libs, val)
            res.tool = tool
            return res
        failure_note = f"\nThe previous draft failed validation at the {val.stage} stage: {val.failure_detail}\n"
    return res


@dataclass
class DedupSummary:
    groups: list = field(default_factory=list)
    merged: list = field(default_factory=list)
    deprecated: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"groups": self.groups, "merged": self.merged, "deprecated": self.deprecated}


def dedup_pass(libs: Libraries, chat_provider, config: Config, scenes: Mapping, *, step: int = 0,
               archive=None, memo: dict | None = None) -> DedupSummary:
    """Find duplicate groups once and merge each; a failed group is not retried until the library changes."""
    summary = DedupSummary()
    eligible = eligible_tools(libs)
    if len(eligible) < 2:
        return summary
    lib_key = "dedup:" + ",".join(f"{t.name}" for t in eligible)
    if memo is not None and lib_key in memo:
        return summary
    groups = find_duplicates(libs, chat_provider, config, key=f"dedup_analyst/s{step}")
    summary.groups = [g.to_json() for g in groups]
    all_ok = True
    for i, g in enumerate(groups):
        if any(libs.tools[n].deprecated for n in g.tools):
            continue
        res = merge_group(g, libs, chat_provider, config, scenes, step=step, key_prefix=f"s{step}/g{i}",
                          archive=archive)
        if res.ok:
            summary.merged.append(res.tool.name)
            summary.deprecated.extend(g.tools)
        else:
            all_ok = False
    if memo is not None and not summary.merged:
        memo[lib_key] = "no-merge" if all_ok or not groups else "failed"
    return summary
