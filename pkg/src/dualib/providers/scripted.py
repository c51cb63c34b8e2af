"""Offline provider that answers from a script file and an optional policy."""

from __future__ import annotations

import hashlib
import json
import threading
from collections import Counter
from pathlib import Path
from typing import Callable, Mapping

from ..errors import PersistenceError, ScriptMissError
from .base import ChatRequest

SCRIPT_SCHEMA_VERSION = 1

Policy = Callable[[ChatRequest], "str | None"]


class ScriptedProvider:
    """Replies are looked up by exact request fingerprint, then by semantic key.

    On a reformat retry the key ``<key>!retry`` is tried before ``<key>``.
    A request matching neither falls through to ``policy`` when one is set;
    otherwise it is a :class:`ScriptMissError`.
    """

    def __init__(self, replies: Mapping[str, Mapping[str, str]] | None = None,
                 policy: Policy | None = None, source: dict | None = None):
        self.replies = {role: dict(entries) for role, entries in (replies or {}).items()}
        self.policy = policy
        self.source = source or {"kind": "scripted"}
        self.calls: Counter = Counter()
        self._lock = threading.Lock()

    def _lookup(self, req: ChatRequest) -> str | None:
        table = self.replies.get(req.role, {})
        hit = table.get(f"fp:{req.fingerprint}")
        if hit is not None:
            return hit
        if req.key is not None:
            if req.attempt > 0:
                hit = table.get(f"key:{req.key}!retry")
                if hit is not None:
                    return hit
            hit = table.get(f"key:{req.key}")
            if hit is not None:
                return hit
        return None

    def complete(self, req: ChatRequest) -> str:
        with self._lock:
            self.calls[req.role] += 1
        reply = self._lookup(req)
        if reply is None and self.policy is not None:
            reply = self.policy(req)
        if reply is None:
            raise ScriptMissError(
                f"no scripted reply for role {req.role} (key {req.key!r}, fingerprint {req.fingerprint[:12]})"
            )
        return reply

    def spec(self) -> dict:
        return dict(self.source)


def load_script(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise PersistenceError(path, f"cannot read script: {exc.strerror or exc}") from None
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise PersistenceError(path, f"script is not JSON ({exc.msg})") from None
    if not isinstance(data, dict) or data.get("schema_version") != SCRIPT_SCHEMA_VERSION:
        raise PersistenceError(path, f"script needs schema_version {SCRIPT_SCHEMA_VERSION}")
    replies = data.get("replies", {})
    if not isinstance(replies, dict) or not all(isinstance(v, dict) for v in replies.values()):
        raise PersistenceError(path, "script replies must map role -> {key: reply}")
    data["sha256"] = hashlib.sha256(raw).hexdigest()
    return data
