"""Chat-completions HTTP client and offline model stand-ins.

Anything with a ``complete(messages) -> str`` method can act as a model in
the dataset and experiment pipelines.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Protocol, Sequence

import httpx

from .btree import extract_bt_xml

log = logging.getLogger(__name__)

Messages = Sequence[Mapping[str, str]]

__all__ = [
    "ChatClient",
    "ChatExchange",
    "FunctionModel",
    "LlmConfig",
    "LlmError",
    "ScriptedMock",
    "complete",
    "extract_bt_xml",
    "fingerprint",
    "scripted_mock",
]


class LlmError(RuntimeError):
    pass


class ChatModel(Protocol):
    def complete(self, messages: Messages) -> str: ...


@dataclass
class LlmConfig:
    endpoint: str = "http://localhost:11434/v1"
    model: str = "gemma3:1b"
    temperature: float = 0.2
    max_tokens: int = 1024
    timeout: float = 120.0
    retries: int = 2
    backoff: float = 0.5
    api_key_env: str = "OPENAI_API_KEY"
    concurrency: int = 4

    def __post_init__(self):
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LlmConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


GENERATION_TEMPERATURE = 0.7
EVALUATION_TEMPERATURE = 0.2


@dataclass
class ChatExchange:
    messages: List[Dict[str, str]]
    response: str
    latency: float
    usage: Dict[str, int] = field(default_factory=dict)


class ChatClient:
    """Blocking client for ``POST {endpoint}/chat/completions``.

    Transport errors, 429 and 5xx responses are retried with exponential
    backoff; other non-2xx statuses fail immediately.  Shareable across
    threads; at most ``config.concurrency`` requests are in flight.
    """

    def __init__(self, config: LlmConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)
        self._slots = threading.Semaphore(max(1, config.concurrency))
        self.history: List[ChatExchange] = []
        self._lock = threading.Lock()

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def complete(self, messages: Messages) -> str:
        cfg = self.config
        payload = {
            "model": cfg.model,
            "messages": [dict(m) for m in messages],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        url = cfg.endpoint.rstrip("/") + "/chat/completions"
        last: Optional[Exception] = None
        for attempt in range(cfg.retries + 1):
            if attempt:
                time.sleep(cfg.backoff * 2 ** (attempt - 1))
            start = time.monotonic()
            try:
                with self._slots:
                    resp = self._http.post(url, json=payload)
            except httpx.TransportError as exc:
                last = exc
                log.warning("chat request to %s failed (attempt %d): %s", url, attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = LlmError(f"server returned {resp.status_code}")
                log.warning("chat request to %s got %d (attempt %d)", url, resp.status_code, attempt + 1)
                continue
            if not 200 <= resp.status_code < 300:
                raise LlmError(f"server returned {resp.status_code}: {resp.text[:200]}")
            text, usage = _parse_completion(resp)
            with self._lock:
                self.history.append(
                    ChatExchange(payload["messages"], text, time.monotonic() - start, usage)
                )
            return text
        raise LlmError(f"chat request failed after {cfg.retries + 1} attempts: {last}")


def _parse_completion(resp: httpx.Response):
    try:
        body = resp.json()
        text = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise LlmError(f"malformed completion body: {resp.text[:200]}") from None
    if not isinstance(text, str):
        raise LlmError("completion content is not text")
    usage = {k: v for k, v in (body.get("usage") or {}).items() if isinstance(v, int)}
    return text, usage


def complete(config: LlmConfig, messages: Messages) -> str:
    """One-off completion with a throwaway client."""
    with ChatClient(config) as client:
        return client.complete(messages)


# ---------------------------------------------------------------- offline models


def fingerprint(messages: Messages) -> str:
    """Stable hash of a rendered prompt."""
    blob = json.dumps([[m["role"], m["content"]] for m in messages], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ScriptedMock:
    """Canned responses looked up by prompt fingerprint.

    Unknown prompts get ``default``.  Every request is recorded in
    ``requests`` for inspection.
    """

    def __init__(self, script: Optional[Mapping[str, str]] = None, default: str = ""):
        self.script = dict(script or {})
        self.default = default
        self.requests: List[List[Dict[str, str]]] = []
        self._lock = threading.Lock()

    def complete(self, messages: Messages) -> str:
        with self._lock:
            self.requests.append([dict(m) for m in messages])
        return self.script.get(fingerprint(messages), self.default)

    @classmethod
    def load(cls, path) -> "ScriptedMock":
        """Script file: ``{"default": str, "responses": {fingerprint: str}}``."""
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(data.get("responses", {}), data.get("default", ""))

    def dump(self) -> Dict[str, Any]:
        return {"default": self.default, "responses": dict(self.script)}


def scripted_mock(script: Mapping[str, str], default: str = "") -> ScriptedMock:
    return ScriptedMock(script, default)


class FunctionModel:
    """Model backed by a Python function of the messages; records requests."""

    def __init__(self, fn: Callable[[List[Dict[str, str]]], str]):
        self.fn = fn
        self.requests: List[List[Dict[str, str]]] = []
        self._lock = threading.Lock()

    def complete(self, messages: Messages) -> str:
        msgs = [dict(m) for m in messages]
        with self._lock:
            self.requests.append(msgs)
        return self.fn(msgs)
