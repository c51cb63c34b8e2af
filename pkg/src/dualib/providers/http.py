"""HTTP chat-completion backend speaking the common JSON chat API shape."""

from __future__ import annotations

import os
import time
from typing import Callable, Mapping

import httpx

from ..errors import ConfigError, TransportError
from .base import ChatRequest

RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


class HttpTransport:
    """JSON POST with bounded exponential backoff; the API key comes from the environment."""

    def __init__(self, base_url: str, key_env: str = "DUALIB_API_KEY", timeout: float = 60.0,
                 max_retries: int = 3, backoff: float = 0.5,
                 transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        if not base_url:
            raise ConfigError("provider base_url is required")
        self.base_url = base_url.rstrip("/")
        self.key_env = key_env
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(key_env) if key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(base_url=self.base_url, headers=headers, timeout=timeout,
                                    transport=transport)

    def post_json(self, path: str, payload: dict) -> dict:
        last = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(path, json=payload)
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in RETRY_STATUS:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise TransportError(f"{self.base_url}{path}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError:
                raise TransportError(f"{self.base_url}{path}: response is not JSON") from None
        raise TransportError(f"{self.base_url}{path}: retries exhausted ({last})")

    def close(self):
        self._client.close()


class HttpChatProvider:
    """Chat completions; ``role_models`` routes individual roles to other models."""

    def __init__(self, base_url: str, model: str, role_models: Mapping[str, str] | None = None,
                 key_env: str = "DUALIB_API_KEY", timeout: float = 60.0, max_retries: int = 3,
                 transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.model = model
        self.role_models = dict(role_models or {})
        self._http = HttpTransport(base_url, key_env=key_env, timeout=timeout, max_retries=max_retries,
                                   transport=transport, sleep=sleep)

    def complete(self, req: ChatRequest) -> str:
        payload = {
            "model": self.role_models.get(req.role, self.model),
            "messages": [{"role": m.speaker, "content": m.text} for m in req.messages],
            "temperature": req.temperature,
            "seed": req.seed,
        }
        body = self._http.post_json("/chat/completions", payload)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError("chat response lacks choices[0].message.content") from None
        if not isinstance(content, str):
            raise TransportError("chat response content is not text")
        return content

    def spec(self) -> dict:
        # never includes the key itself
        return {"kind": "http", "base_url": self._http.base_url, "model": self.model,
                "role_models": dict(sorted(self.role_models.items())), "key_env": self._http.key_env}
