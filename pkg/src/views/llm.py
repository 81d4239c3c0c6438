"""LLM client interface with mock, replay, and live backends.

Tests and desk-scale runs use :class:`MockLLM` (pure function of the
prompt) or :class:`ReplayLLM` (recorded cassettes); :class:`LiveLLM`
talks HTTP and is never exercised in tests beyond a stubbed transport.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

from .entities import EntitySet, find_surfaces, serialize_entity_set
from .errors import CassetteMissError, TransportError
from .prompts import load_template, prompt_hash

API_KEY_ENV = "VIEWS_LLM_API_KEY"


class LLMClient(Protocol):
    def complete(self, prompt: str) -> str: ...


def _template_prefix(name: str) -> str:
    text = load_template(name)
    return text.split("<", 1)[0]


def _block(prompt: str, label: str, *, upto: str | None = "\n\nInstruction:") -> str | None:
    """Extract the payload that followed ``label`` in a rendered prompt."""
    start = prompt.find(label)
    if start < 0:
        return None
    start += len(label)
    if upto is None:
        return prompt[start:]
    end = prompt.find(upto, start)
    return prompt[start:end if end >= 0 else len(prompt)]


@dataclass
class MockLLM:
    """Deterministic stand-in: fixture map first, then per-prompt-kind rules.

    The extraction and rating rules are driven by an optional entity
    inventory (surface, type) so synthetic corpora get faithful
    ground-truth behavior without any model. Pure function of the
    prompt; safe for concurrent calls.
    """

    fixtures: dict[str, str] = field(default_factory=dict)
    inventory: list[tuple[str, str]] = field(default_factory=list)

    def complete(self, prompt: str) -> str:
        if prompt in self.fixtures:
            return self.fixtures[prompt]
        if prompt.startswith(_template_prefix("caption_generation")):
            return self._summarize(_block(prompt, "Context: ") or "")
        if prompt.startswith(_template_prefix("caption_rating")):
            return self._rate(_block(prompt, "Context: ", upto="\n\nSummary:") or "",
                              _block(prompt, "Summary: ") or "")
        if prompt.startswith(_template_prefix("entity_extraction")):
            return self._extract(_block(prompt, "Text: ") or "")
        # echo fallback: return the recognizable payload, else the prompt
        for label in ("Entities: ", "Context: ", "Text: "):
            payload = _block(prompt, label)
            if payload is not None:
                return payload
        return prompt

    def _summarize(self, context: str) -> str:
        lines = [line.strip().rstrip(".") for line in context.split("\n") if line.strip()]
        if len(lines) > 1:
            lines = lines[1:]  # drop the leading title line when present
        return ". ".join(lines) + ("." if lines else "")

    def _extract(self, text: str) -> str:
        found: dict[str, list[str]] = {}
        for surface, etype in find_surfaces(text, self.inventory):
            found.setdefault(etype, []).append(surface)
        return serialize_entity_set(EntitySet(found))

    def _rate(self, context: str, summary: str) -> str:
        ctx_hits = {s for s, _ in find_surfaces(context, self.inventory)}
        sum_hits = {s for s, _ in find_surfaces(summary, self.inventory)}
        missing = sorted(ctx_hits - sum_hits)
        extra = sorted(sum_hits - ctx_hits)
        if missing:
            return "No. It is missing entities: " + ", ".join(missing) + "."
        if extra:
            return "No. It contains hallucinations: " + ", ".join(extra) + "."
        if len(summary.split()) < 0.15 * len(context.split()):
            return "No. It leaves out critical information from the context."
        return "Yes"


class ReplayLLM:
    """Replays recorded replies; unknown prompts fail loudly.

    Cassette format: JSONL rows of {prompt_hash, prompt, reply}.
    """

    def __init__(self, cassette_path: str | Path):
        self._replies: dict[str, str] = {}
        with Path(cassette_path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                self._replies[row["prompt_hash"]] = row["reply"]

    def complete(self, prompt: str) -> str:
        key = prompt_hash(prompt)
        if key not in self._replies:
            raise CassetteMissError(key)
        return self._replies[key]


class CassetteRecorder:
    """Wraps any client, recording every exchange for later replay."""

    def __init__(self, inner: LLMClient):
        self.inner = inner
        self._rows: dict[str, dict] = {}

    def complete(self, prompt: str) -> str:
        reply = self.inner.complete(prompt)
        key = prompt_hash(prompt)
        self._rows[key] = {"prompt_hash": key, "prompt": prompt, "reply": reply}
        return reply

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for key in sorted(self._rows):
                fh.write(json.dumps(self._rows[key], ensure_ascii=False) + "\n")


class LiveLLM:
    """Minimal HTTP completion client with bounded retries.

    POSTs {"model", "prompt"} and expects {"completion": ...}. The API
    key comes from the VIEWS_LLM_API_KEY environment variable unless
    passed explicitly.
    """

    def __init__(self, endpoint: str, model: str, api_key: str | None = None,
                 max_attempts: int = 3, backoff_s: float = 1.0,
                 transport: httpx.BaseTransport | None = None):
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not key:
            raise ValueError(f"no API key: set {API_KEY_ENV} or pass api_key")
        self.endpoint = endpoint
        self.model = model
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._client = httpx.Client(
            headers={"Authorization": f"Bearer {key}"}, transport=transport, timeout=60.0)

    def complete(self, prompt: str) -> str:
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                response = self._client.post(
                    self.endpoint, json={"model": self.model, "prompt": prompt})
                response.raise_for_status()
                return response.json()["completion"]
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
        raise TransportError(
            f"LLM call failed after {self.max_attempts} attempts: {last_error}",
            retries=self.max_attempts - 1,
        )


class SerializingLLM:
    """Lock-guarded adapter for clients that are not concurrency-safe."""

    def __init__(self, inner: LLMClient):
        self.inner = inner
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            return self.inner.complete(prompt)
