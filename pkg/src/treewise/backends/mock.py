"""Deterministic scripted backend for offline runs and tests.

Fixture entries are JSONL objects ``{"template_id": ..., "match": <canonical
input digest or "*">, "response": ...}``.  Exact-digest entries win over
registered handlers, which win over wildcard entries.  The backend is a pure
function of (template id, canonical input) apart from an atomic call counter.
"""

from __future__ import annotations

import json
import threading
from collections import Counter
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

from .client import BackendError, ChatRequest, canonical_input_digest

__all__ = ["MockMissError", "ScriptedBackend", "RecordingBackend"]

WILDCARD = "*"


class MockMissError(BackendError):
    pass


Handler = Callable[[ChatRequest], str]


class ScriptedBackend:
    def __init__(self, fixtures: Iterable[Mapping] = ()) -> None:
        self._exact: dict[tuple[str, str], str] = {}
        self._wildcard: dict[str, str] = {}
        self._handlers: dict[str, Handler] = {}
        self._lock = threading.Lock()
        self.calls = 0
        self.calls_by_template: Counter = Counter()
        for entry in fixtures:
            self.add_fixture(entry["template_id"], entry.get("match", WILDCARD), entry["response"])

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedBackend":
        entries = []
        with open(path, encoding="utf-8") as handle:
            for line_no, raw in enumerate(handle, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    entries.append(json.loads(raw))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"fixture line {line_no}: {exc.msg}") from exc
        return cls(entries)

    def add_fixture(self, template_id: str, match: str, response: str) -> None:
        if match == WILDCARD:
            self._wildcard[template_id] = response
        else:
            self._exact[(template_id, match)] = response

    def add_handler(self, template_id: str, handler: Handler) -> None:
        """Register an in-process responder; deterministic iff the handler is
        a pure function of the request."""
        self._handlers[template_id] = handler

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
            self.calls_by_template[request.template_id] += 1
        digest = canonical_input_digest(request.template_id, request.rendered_prompt)
        exact = self._exact.get((request.template_id, digest))
        if exact is not None:
            return exact
        handler = self._handlers.get(request.template_id)
        if handler is not None:
            return handler(request)
        wildcard = self._wildcard.get(request.template_id)
        if wildcard is not None:
            return wildcard
        raise MockMissError(
            f"no fixture for template {request.template_id} (digest {digest[:12]})"
        )


class RecordingBackend:
    """Wraps a backend and records every exchange so a run can be replayed as
    a fixture file later."""

    def __init__(self, inner) -> None:
        self.inner = inner
        self.exchanges: list[dict] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        response = self.inner.complete(request)
        entry = {
            "template_id": request.template_id,
            "match": canonical_input_digest(request.template_id, request.rendered_prompt),
            "response": response,
        }
        with self._lock:
            self.exchanges.append(entry)
        return response

    def write_fixtures(self, path: str | Path) -> int:
        seen: set[tuple[str, str]] = set()
        lines = []
        for entry in self.exchanges:
            key = (entry["template_id"], entry["match"])
            if key in seen:
                continue
            seen.add(key)
            lines.append(json.dumps(entry, ensure_ascii=False))
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        return len(lines)
