"""Chat request/reply contracts and the retrying ``chat`` entry point."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Protocol, Sequence

from ..errors import ConfigError, MalformedReplyError
from ..model import ROLES, Config
from .replies import ReplyFormatError, parse_reply

SPEAKERS = ("system", "user", "assistant")

REFORMAT_NOTE = (
    "Your previous reply could not be parsed: {problem}. "
    "Answer again and follow the required output tags exactly."
)


@dataclass(frozen=True)
class Message:
    speaker: str
    text: str

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ValueError(f"unknown speaker {self.speaker!r}")


@dataclass(frozen=True)
class ChatRequest:
    """One model call.

    ``key`` is a caller-assigned semantic label (``prog_gen/q001/i1/s0`` and
    so on) that scripts may match on instead of the exact fingerprint;
    ``context`` mirrors the rendered prompt fields in structured form for
    programmatic script policies. Neither enters the fingerprint.
    """

    role: str
    messages: tuple
    temperature: float
    seed: int
    sample_index: int = 0
    attempt: int = 0
    attachments: str | None = None
    key: str | None = field(default=None, compare=False)
    context: Mapping[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"unknown role {self.role!r}")
        if isinstance(self.temperature, bool) or not isinstance(self.temperature, (int, float)):
            raise ConfigError(f"{self.role}: temperature must be a number")
        object.__setattr__(self, "messages", tuple(
            m if isinstance(m, Message) else Message(*m) for m in self.messages
        ))

    @property
    def prompt(self) -> str:
        return "\n\n".join(m.text for m in self.messages if m.speaker == "user")

    @property
    def fingerprint(self) -> str:
        payload = {
            "role": self.role,
            "messages": [[m.speaker, m.text] for m in self.messages],
            "temperature": self.temperature,
            "seed": self.seed,
            "sample_index": self.sample_index,
            "attempt": self.attempt,
            "attachments": self.attachments,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def reformat(self, raw: str, problem: str) -> "ChatRequest":
        extra = (Message("assistant", raw), Message("user", REFORMAT_NOTE.format(problem=problem)))
        return replace(self, messages=self.messages + extra, attempt=self.attempt + 1)


def make_request(config: Config, role: str, prompt: str, *, system: str | None = None,
                 sample_index: int = 0, attachments: str | None = None, key: str | None = None,
                 context: Mapping[str, Any] | None = None, seed: int | None = None) -> ChatRequest:
    """Build a request whose temperature comes from the configured role policy."""
    messages = []
    if system:
        messages.append(Message("system", system))
    messages.append(Message("user", prompt))
    return ChatRequest(
        role=role, messages=tuple(messages), temperature=config.temperature(role),
        seed=config.seed if seed is None else seed, sample_index=sample_index,
        attachments=attachments, key=key, context=dict(context or {}),
    )


@dataclass(frozen=True)
class StructuredReply:
    role: str
    raw: str
    parsed: Any
    attempts: int = 1


class ChatProvider(Protocol):
    def complete(self, req: ChatRequest) -> str: ...

    def spec(self) -> dict: ...


def chat(provider: ChatProvider, req: ChatRequest) -> StructuredReply:
    """Call the provider and parse the reply, with one reformat retry."""
    raw = provider.complete(req)
    try:
        return StructuredReply(req.role, raw, parse_reply(req.role, raw), 1)
    except ReplyFormatError as first:
        retry = req.reformat(raw, str(first))
    raw2 = provider.complete(retry)
    try:
        return StructuredReply(req.role, raw2, parse_reply(req.role, raw2), 2)
    except ReplyFormatError as second:
        raise MalformedReplyError(req.role, f"reply malformed after retry: {second}", raw2) from None


def chat_many(provider: ChatProvider, reqs: Sequence[ChatRequest], workers: int = 1) -> list[StructuredReply]:
    """Issue independent requests, optionally on a thread pool; results keep input order."""
    if workers <= 1 or len(reqs) <= 1:
        return [chat(provider, r) for r in reqs]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: chat(provider, r), reqs))
