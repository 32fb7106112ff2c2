"""Chat-completion client with a content-addressed record/replay cache.

Each exchange is stored as ``<cache_dir>/<key>.json`` where ``key`` is the
SHA-256 of the canonical JSON request.  Replay mode never touches the
network; record mode serves hits from the cache and records misses.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx

logger = logging.getLogger(__name__)

API_KEY_ENV = "WARAGENT_API_KEY"
RETRYABLE_STATUS = frozenset({408, 409, 429, 500, 502, 503, 504})


class ChatError(RuntimeError):
    pass


class TransportError(ChatError):
    """The endpoint could not be reached or kept failing after retries."""


class ReplayMiss(ChatError):
    """Replay mode was asked for an exchange that is not in the cache."""


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 1.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be within [0, 2]")
        object.__setattr__(self, "messages", tuple((r, c) for r, c in self.messages))

    def to_json(self) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body

    def canonical(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    @property
    def key(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    key: str
    cached: bool


class ChatCache:
    """Directory of exchanges; concurrent writers of one key write equal bytes."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> str | None:
        p = self.path(key)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            logger.warning("ignoring corrupt cache entry %s", p)
            return None
        return data["response"]

    def put(self, request: ChatRequest, response: str) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        blob = json.dumps(
            {"key": request.key, "request": request.to_json(), "response": response},
            sort_keys=True,
            indent=1,
            ensure_ascii=False,
        )
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(blob)
        os.replace(tmp, self.path(request.key))


class ChatClient:
    def __init__(
        self,
        *,
        mode: str = "record",
        endpoint: str | None = None,
        api_key: str | None = None,
        cache_dir: str | Path | None = None,
        max_retries: int = 4,
        backoff: float = 1.0,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if mode not in ("record", "replay"):
            raise ValueError(f"mode must be 'record' or 'replay', got {mode!r}")
        if mode == "replay" and cache_dir is None:
            raise ValueError("replay mode needs a cache directory")
        self.mode = mode
        self.endpoint = endpoint.rstrip("/") if endpoint else None
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.cache = ChatCache(cache_dir) if cache_dir is not None else None
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self._transport = transport
        self._sleep = sleep
        self.network_calls = 0

    def chat(self, request: ChatRequest) -> ChatResponse:
        key = request.key
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return ChatResponse(hit, key, True)
        if self.mode == "replay":
            raise ReplayMiss(f"no cached exchange for key {key}")
        text = self._post(request)
        if self.cache is not None:
            self.cache.put(request, text)
        return ChatResponse(text, key, False)

    def _post(self, request: ChatRequest) -> str:
        if not self.endpoint:
            raise TransportError("no chat endpoint configured")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.endpoint}/chat/completions"
        last: str = "unknown error"
        with httpx.Client(transport=self._transport, timeout=self.timeout) as client:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    delay = self.backoff * 2 ** (attempt - 1)
                    logger.info("retrying chat request in %.1fs (%s)", delay, last)
                    self._sleep(delay)
                try:
                    self.network_calls += 1
                    resp = client.post(url, json=request.to_json(), headers=headers)
                except httpx.HTTPError as exc:
                    last = f"{type(exc).__name__}: {exc}"
                    continue
                if resp.status_code in RETRYABLE_STATUS:
                    last = f"HTTP {resp.status_code}"
                    continue
                if resp.status_code >= 300:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    return _extract_text(resp.json())
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise TransportError(f"unexpected response body: {exc}") from exc
        raise TransportError(f"chat endpoint failed after {self.max_retries + 1} attempts: {last}")


def _extract_text(body: dict[str, Any]) -> str:
    content = body["choices"][0]["message"]["content"]
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content)
    if not isinstance(content, str):
        raise TypeError("message content is not text")
    return content


def messages_of(pairs: Sequence[tuple[str, str]]) -> tuple[tuple[str, str], ...]:
    return tuple((r, c) for r, c in pairs)
