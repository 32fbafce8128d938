"""Pluggable model backends, retry policy, and the response cache.

The wire-facing backend speaks a chat-completions style HTTP JSON protocol.
The mock backend is a pure function of (messages, sampling) and exists so the
whole pipeline can run bit-reproducibly without network access.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol

import requests

from .models import SamplingParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    image_ref: Optional[str] = None

    def to_dict(self) -> dict:
        d: dict = {"role": self.role, "text": self.text}
        if self.image_ref is not None:
            d["image_ref"] = self.image_ref
        return d


class BackendError(Exception):
    def __init__(self, msg: str, retriable: bool = False):
        super().__init__(msg)
        self.retriable = retriable


class ModelBackend(Protocol):
    name: str
    deterministic: bool

    def complete(self, messages: list[Message], sampling: SamplingParams) -> str: ...


def request_digest(backend_name: str, messages: list[Message], sampling: SamplingParams) -> str:
    payload = json.dumps(
        {
            "backend": backend_name,
            "messages": [m.to_dict() for m in messages],
            "sampling": sampling.to_dict(),
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class RetryPolicy:
    """Retries retriable backend errors with exponential backoff.

    ``sleep`` is injectable so fault-injection tests run instantly.
    """

    def __init__(self, attempts: int = 3, base_delay: float = 0.5,
                 sleep: Callable[[float], None] = time.sleep):
        if attempts < 1:
            raise ValueError("attempts must be >= 1")
        self.attempts = attempts
        self.base_delay = base_delay
        self.sleep = sleep

    def call(self, backend: ModelBackend, messages: list[Message],
             sampling: SamplingParams) -> tuple[str, int]:
        """Returns (text, retries_used). Raises BackendError after exhaustion."""
        last: Optional[BackendError] = None
        for attempt in range(self.attempts):
            try:
                return backend.complete(messages, sampling), attempt
            except BackendError as e:
                last = e
                if not e.retriable or attempt == self.attempts - 1:
                    raise
                delay = self.base_delay * (2 ** attempt)
                logger.warning("backend %s failed (attempt %d): %s", backend.name, attempt + 1, e)
                self.sleep(delay)
        raise last  # pragma: no cover - loop always raises or returns


class HttpBackend:
    """Chat-completions style HTTP client.

    Auth token is read from the environment variable named in the config, never
    stored. Request/response bodies are logged verbatim at DEBUG when tracing
    is wanted.
    """

    deterministic = False

    def __init__(self, base_url: str, model: str, auth_env: Optional[str] = None,
                 timeout: float = 120.0, session: Optional[requests.Session] = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.auth_env = auth_env
        self.timeout = timeout
        self.session = session or requests.Session()
        self.name = f"http:{model}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if not token:
                raise BackendError(f"auth env var {self.auth_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _content(self, m: Message):
        if m.image_ref is None:
            return m.text
        return [
            {"type": "text", "text": m.text},
            {"type": "image_url", "image_url": {"url": m.image_ref}},
        ]

    def complete(self, messages: list[Message], sampling: SamplingParams) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": self._content(m)} for m in messages],
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "seed": sampling.seed,
        }
        logger.debug("request %s: %s", self.base_url, json.dumps(body, ensure_ascii=False))
        try:
            resp = self.session.post(
                f"{self.base_url}/chat/completions", json=body,
                headers=self._headers(), timeout=self.timeout,
            )
        except requests.RequestException as e:
            raise BackendError(f"transport error: {e}", retriable=True) from e
        logger.debug("response %d: %s", resp.status_code, resp.text)
        if resp.status_code == 429 or resp.status_code >= 500:
            raise BackendError(f"HTTP {resp.status_code}", retriable=True)
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as e:
            raise BackendError(f"malformed response body: {e}") from e


class MockBackend:
    """Deterministic stand-in for a real model.

    Replies are a pure function of (messages, sampling): decomposition prompts
    get a small synthetic sub-question JSON, leakage-judge prompts get "No",
    everything else gets a short token drawn from a tiny alphabet by digest.
    Temperature 0 ignores the seed so repeated samples agree; higher
    temperatures mix the seed in, producing disagreement across paths.
    """

    deterministic = True
    name = "mock"

    ANSWER_ALPHABET = ("alpha", "beta", "gamma", "delta")

    def complete(self, messages: list[Message], sampling: SamplingParams) -> str:
        prompt = "\n".join(m.text for m in messages)
        if "Final Output Format (JSON only):" in prompt:
            return self._synthetic_ars(prompt)
        if "Answer with exactly one word: Yes or No." in prompt:
            return "No"
        if "step-by-step reasoning" in prompt:
            h = hashlib.sha256(prompt.encode()).hexdigest()[:8]
            return (f"Step 1: restate the problem ({h}).\n"
                    f"Step 2: compute the intermediate quantity.\n"
                    f"Final answer: {self._token(prompt, sampling)}")
        return self._token(prompt, sampling)

    def _token(self, prompt: str, sampling: SamplingParams) -> str:
        key = prompt if sampling.temperature == 0.0 else f"{prompt}|{sampling.seed}"
        h = int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "big")
        return self.ANSWER_ALPHABET[h % len(self.ANSWER_ALPHABET)]

    def _synthetic_ars(self, prompt: str) -> str:
        h = hashlib.sha256(prompt.encode()).hexdigest()[:6]
        ars = {
            "Q1": {
                "question": f"What is the first given quantity ({h})?",
                "depends_on_sub_question": [],
                "depends_on_text": "Yes",
                "depends_on_image": "Yes",
            },
            "Q2": {
                "question": f"What is the second given quantity ({h})?",
                "depends_on_sub_question": [],
                "depends_on_text": "Yes",
                "depends_on_image": "No",
            },
            "Q3": {
                "question": f"What value follows from combining them ({h})?",
                "depends_on_sub_question": ["Q1", "Q2"],
                "depends_on_text": "Yes",
                "depends_on_image": "No",
            },
        }
        return json.dumps(ars, indent=2)


class ResponseCache:
    """Digest-keyed response store, optionally persisted to a directory.

    A hit returns byte-identical text. Files are written atomically (rename)
    so concurrent readers never observe partial values.
    """

    def __init__(self, directory: Optional[Path | str] = None):
        self.directory = Path(directory) if directory is not None else None
        self._mem: dict[str, str] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def get(self, key: str) -> Optional[str]:
        if key in self._mem:
            return self._mem[key]
        if self.directory is not None:
            path = self.directory / f"{key}.json"
            if path.exists():
                text = json.loads(path.read_text(encoding="utf-8"))["text"]
                self._mem[key] = text
                return text
        return None

    def put(self, key: str, text: str) -> None:
        self._mem[key] = text
        if self.directory is not None:
            path = self.directory / f"{key}.json"
            tmp = path.with_suffix(".tmp")
            tmp.write_text(
                json.dumps({"text": text, "created": time.time()}, ensure_ascii=False),
                encoding="utf-8",
            )
            tmp.replace(path)


class CachingBackend:
    """Wraps a backend with a ResponseCache; tracks upstream call count."""

    def __init__(self, backend: ModelBackend, cache: ResponseCache):
        self.backend = backend
        self.cache = cache
        self.name = backend.name
        self.deterministic = backend.deterministic
        self.upstream_calls = 0

    def complete(self, messages: list[Message], sampling: SamplingParams) -> str:
        key = request_digest(self.name, messages, sampling)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        self.upstream_calls += 1
        text = self.backend.complete(messages, sampling)
        self.cache.put(key, text)
        return text


def make_backend(kind: str, *, base_url: str = "", model: str = "",
                 auth_env: Optional[str] = None) -> ModelBackend:
    if kind == "mock":
        return MockBackend()
    if kind == "http":
        if not base_url or not model:
            raise ValueError("http backend needs base_url and model")
        return HttpBackend(base_url, model, auth_env)
    raise ValueError(f"unknown backend kind: {kind}")
