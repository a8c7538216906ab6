"""Chat-completion requests, cache keys, the HTTP client, the persistent
response cache, and the cache-through completion call.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol

import requests

__all__ = [
    "ChatRequest",
    "canonical_request",
    "cache_key",
    "canonical_input_digest",
    "BackendError",
    "OfflineMissError",
    "ChatClient",
    "HttpChatClient",
    "ResponseCache",
    "cached_complete",
    "API_KEY_ENV_VAR",
]

API_KEY_ENV_VAR = "TREEWISE_API_KEY"


@dataclass(frozen=True)
class ChatRequest:
    """One rendered prompt plus the sampling parameters that identify it.

    ``params`` holds the pre-render template variables for the benefit of
    scripted backends; it does not participate in the cache key.
    """

    template_id: str
    rendered_prompt: str
    temperature: float
    max_tokens: int = 1024
    model_id: str = "default"
    sample_index: int = 0
    params: Mapping[str, object] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if not self.rendered_prompt:
            raise ValueError("rendered_prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


def canonical_request(request: ChatRequest) -> str:
    return json.dumps(
        {
            "template_id": request.template_id,
            "rendered_prompt": request.rendered_prompt,
            "temperature": request.temperature,
            "model_id": request.model_id,
            "sample_index": request.sample_index,
        },
        sort_keys=True,
        ensure_ascii=False,
    )


def cache_key(request: ChatRequest) -> str:
    """Digest identifying a request; equal requests (including sample index)
    yield equal keys."""
    return hashlib.sha256(canonical_request(request).encode("utf-8")).hexdigest()


def canonical_input_digest(template_id: str, rendered_prompt: str) -> str:
    """Digest of the canonical input alone, used by scripted-mock fixtures."""
    payload = json.dumps([template_id, rendered_prompt], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class BackendError(Exception):
    """A backend failed definitively; carries the template id for context."""


class OfflineMissError(BackendError):
    """A read-only cache had no entry for the request and no client may run."""


class ChatClient(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class HttpChatClient:
    """Minimal chat-completion client: POST {base_url}/chat/completions with a
    bearer token and a single user message."""

    def __init__(self, base_url: str, api_key: str, timeout: float = 60.0) -> None:
        if not api_key:
            raise BackendError(f"no API key; set the {API_KEY_ENV_VAR} environment variable")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout

    @classmethod
    def from_env(cls, base_url: str, timeout: float = 60.0) -> "HttpChatClient":
        key = os.environ.get(API_KEY_ENV_VAR, "")
        if not key:
            raise BackendError(
                f"live backend configured but environment variable {API_KEY_ENV_VAR} is not set"
            )
        return cls(base_url, key, timeout)

    def complete(self, request: ChatRequest) -> str:
        body = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        response = requests.post(
            f"{self.base_url}/chat/completions",
            json=body,
            headers={"Authorization": f"Bearer {self.api_key}"},
            timeout=self.timeout,
        )
        response.raise_for_status()
        payload = response.json()
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion response for {request.template_id}") from exc


class ResponseCache:
    """Persistent response cache: a directory of ``{digest}.json`` files, each
    holding the request, the response text, and a timestamp.

    Writes are atomic (temp file + rename); reads take no locks.
    """

    def __init__(self, directory: str | Path, read_only: bool = False) -> None:
        self.directory = Path(directory)
        self.read_only = read_only
        if not read_only:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> Optional[str]:
        path = self._path(digest)
        if not path.exists():
            return None
        payload = json.loads(path.read_text(encoding="utf-8"))
        return payload["response"]

    def put(self, digest: str, request: ChatRequest, response: str) -> None:
        if self.read_only:
            raise OfflineMissError("cache is read-only")
        payload = {
            "request": json.loads(canonical_request(request)),
            "response": response,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        target = self._path(digest)
        fd, tmp_name = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(payload, handle, ensure_ascii=False)
            os.replace(tmp_name, target)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    def __len__(self) -> int:
        if not self.directory.exists():
            return 0
        return sum(1 for _ in self.directory.glob("*.json"))


def cached_complete(
    request: ChatRequest,
    cache: Optional[ResponseCache],
    client: Optional[ChatClient],
    sleep: Callable[[float], None] = time.sleep,
    retries: int = 2,
) -> str:
    """Serve from the cache when possible; otherwise call the client with
    exponential backoff, store, and return.

    A read-only cache with a miss raises :class:`OfflineMissError` before any
    network activity.
    """
    digest = cache_key(request)
    if cache is not None:
        hit = cache.get(digest)
        if hit is not None:
            return hit
        if cache.read_only:
            raise OfflineMissError(
                f"offline miss for template {request.template_id} (digest {digest[:12]})"
            )
    if client is None:
        raise BackendError(f"no client configured for template {request.template_id}")
    last_error: Optional[Exception] = None
    for attempt in range(retries + 1):
        try:
            response = client.complete(request)
            break
        except Exception as exc:  # noqa: BLE001 - retry any transport failure
            last_error = exc
            if attempt < retries:
                sleep(0.5 * (2.0**attempt))
    else:
        raise BackendError(
            f"backend exhausted after {retries + 1} attempts for template {request.template_id}"
        ) from last_error
    if cache is not None:
        cache.put(digest, request, response)
    return response
