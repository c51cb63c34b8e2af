"""Embedding providers and cosine similarity."""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from ..errors import EmbeddingError

_TOKEN = re.compile(r"[a-z0-9]+")


class Embedder(Protocol):
    fingerprint: str

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class HashingEmbedder:
    """Hashed bag-of-words: md5 of each token mod ``dim``, counts, L2-normalized."""

    dim: int = 256

    @property
    def fingerprint(self) -> str:
        return f"hashing-bow-{self.dim}-md5"

    def _one(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise EmbeddingError(f"text carries no tokens to embed: {text!r}")
        v = np.zeros(self.dim)
        for tok in tokens:
            h = int.from_bytes(hashlib.md5(tok.encode("utf-8")).digest()[:8], "big")
            v[h % self.dim] += 1.0
        return v / np.linalg.norm(v)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise EmbeddingError("embed needs at least one text")
        return [self._one(t) for t in texts]


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise EmbeddingError("cosine of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


class HttpEmbedder:
    """Embeddings over an OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, base_url: str, model: str, key_env: str = "DUALIB_API_KEY",
                 timeout: float = 30.0, max_retries: int = 3, transport=None):
        from .http import HttpTransport

        self.model = model
        self._http = HttpTransport(base_url, key_env=key_env, timeout=timeout,
                                   max_retries=max_retries, transport=transport)

    @property
    def fingerprint(self) -> str:
        return f"http:{self._http.base_url}:{self.model}"

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise EmbeddingError("embed needs at least one text")
        for t in texts:
            if not tokenize(t):
                raise EmbeddingError(f"text carries no tokens to embed: {t!r}")
        body = self._http.post_json("/embeddings", {"model": self.model, "input": list(texts)})
        try:
            rows = sorted(body["data"], key=lambda r: r["index"])
            out = [np.asarray(r["embedding"], dtype=float) for r in rows]
        except (KeyError, TypeError) as exc:
            raise EmbeddingError(f"unexpected embeddings response: {exc}") from None
        if len(out) != len(texts):
            raise EmbeddingError(f"asked for {len(texts)} embeddings, got {len(out)}")
        normed = []
        for v in out:
            n = np.linalg.norm(v)
            if n == 0:
                raise EmbeddingError("provider returned a zero vector")
            normed.append(v / n)
        return normed


def embedder_from_env() -> HttpEmbedder:
    return HttpEmbedder(os.environ["DUALIB_BASE_URL"], os.environ.get("DUALIB_EMBED_MODEL", "bge-large-en-v1.5"))


class EmbeddingBank:
    """Cache of question vectors; each distinct text is embedded at most once.

    Vectors are reused only under a matching provider fingerprint.
    """

    def __init__(self, embedder: Embedder, vectors: dict | None = None):
        self.embedder = embedder
        self.fingerprint = embedder.fingerprint
        self.vectors: dict[str, np.ndarray] = dict(vectors or {})
        self.provider_calls = 0
        self.texts_embedded = 0

    def get_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        missing = list(dict.fromkeys(t for t in texts if t not in self.vectors))
        if missing:
            self.provider_calls += 1
            self.texts_embedded += len(missing)
            for t, v in zip(missing, self.embedder.embed(missing)):
                self.vectors[t] = v
        return [self.vectors[t] for t in texts]

    def get(self, text: str) -> np.ndarray:
        return self.get_many([text])[0]

    def to_json(self) -> dict:
        return {"fingerprint": self.fingerprint,
                "vectors": {t: [float(x) for x in v] for t, v in sorted(self.vectors.items())}}

    @classmethod
    def from_json(cls, embedder: Embedder, data: dict) -> "EmbeddingBank":
        if data.get("fingerprint") != embedder.fingerprint:
            # stale vectors from another embedder are dropped, not reused
            return cls(embedder)
        return cls(embedder, {t: np.asarray(v, dtype=float) for t, v in data.get("vectors", {}).items()})
