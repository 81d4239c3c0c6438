"""Stage 2 - Knowledge Extractor: detected entities to a context passage.

Prompt construction is byte-stable; backends are pluggable (mock KB,
replay cassette, live LLM). The single-stage comparison path and the
BERTScore-style context scorer live here too.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .corpus import Corpus
from .entities import (
    EntitySet,
    entity_signature,
    find_surfaces,
    flatten_entity_set,
    normalize_surface,
    parse_entity_set,
    serialize_entity_set,
)
from .errors import EmptyContextError, EntityParseError, TransportError
from .llm import LLMClient
from .prompts import prompt_hash, render_knowledge_prompt
from .tokenizer import word_tokenize


@dataclass(frozen=True)
class KEPrompt:
    template_id: str
    rendered_text: str
    payload: str

    def __post_init__(self):
        if self.payload and self.rendered_text.count(self.payload) != 1:
            raise ValueError("rendered prompt must contain the entity payload exactly once")


@dataclass(frozen=True)
class ContextPassage:
    text: str
    backend_id: str
    prompt_hash: str
    source_entities: EntitySet
    created_at: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("a successful passage must have nonempty text")
        if not self.backend_id or not self.prompt_hash:
            raise ValueError("passage provenance must be complete")


def build_ke_prompt(entities: EntitySet, structured: bool = True) -> KEPrompt:
    """Render the knowledge prompt from an entity set.

    Structured mode inserts the canonical serialization; flat mode a
    comma-joined, type-stripped surface list (the entity-structure
    ablation).
    """
    if structured:
        payload = serialize_entity_set(entities)
    else:
        payload = ", ".join(flatten_entity_set(entities))
    rendered = render_knowledge_prompt(payload)
    return KEPrompt("knowledge_query", rendered.text, payload)


class KnowledgeBackend(Protocol):
    backend_id: str

    def fetch(self, prompt_text: str) -> str: ...


def _payload_from_prompt(prompt_text: str) -> str:
    start = prompt_text.find("Entities: ")
    if start < 0:
        return prompt_text
    start += len("Entities: ")
    end = prompt_text.find("\n\nInstruction:", start)
    return prompt_text[start:end if end >= 0 else len(prompt_text)]


class MockKB:
    """Deterministic knowledge base keyed on entity sets.

    Matching is overlap scoring against each entry's key set: typed
    (type, surface) pairs when the payload parses as a structured entity
    string, surface-only occurrence otherwise. Ties keep the first entry
    in file order; zero overlap falls back to ``default_passage`` (or
    empty, which callers surface as an empty-context error).
    """

    backend_id = "mock_kb"

    def __init__(self, entries: list[tuple[EntitySet, str]],
                 default_passage: str = ""):
        self.entries = list(entries)
        self.default_passage = default_passage
        self._typed_keys = []
        self._flat_keys = []
        for key_set, _ in self.entries:
            typed = {(etype, normalize_surface(s))
                     for etype, surfaces in key_set.items() for s in surfaces}
            flat = [(s, etype) for etype, surfaces in key_set.items() for s in surfaces]
            self._typed_keys.append(typed)
            self._flat_keys.append(flat)

    @classmethod
    def from_file(cls, path: str | Path, default_passage: str = "") -> "MockKB":
        entries = []
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                entries.append((parse_entity_set(row["entity_signature"]), row["passage"]))
        return cls(entries, default_passage=default_passage)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for key_set, passage in self.entries:
                fh.write(json.dumps({
                    "entity_signature": entity_signature(key_set),
                    "passage": passage,
                }, ensure_ascii=False) + "\n")

    def fetch(self, prompt_text: str) -> str:
        payload = _payload_from_prompt(prompt_text)
        structured_query: EntitySet | None = None
        if payload.lstrip().startswith("{"):
            try:
                structured_query = parse_entity_set(payload.strip())
            except EntityParseError:
                structured_query = None
        best_score = 0
        best_passage = self.default_passage
        for i, (_, passage) in enumerate(self.entries):
            if structured_query is not None:
                query_pairs = {(etype, normalize_surface(s))
                               for etype, surfaces in structured_query.items()
                               for s in surfaces}
                score = len(query_pairs & self._typed_keys[i])
            else:
                score = len(find_surfaces(payload, self._flat_keys[i]))
            if score > best_score:
                best_score = score
                best_passage = passage
        return best_passage


class LLMBackend:
    """Adapter putting any LLM client behind the knowledge interface."""

    def __init__(self, client: LLMClient, name: str = "llm"):
        self.client = client
        self.backend_id = f"llm:{name}"

    def fetch(self, prompt_text: str) -> str:
        return self.client.complete(prompt_text)


def _utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def extract_context(entities: EntitySet, backend: KnowledgeBackend,
                    structured: bool = True, max_retries: int = 2,
                    clock: Callable[[], str] = _utc_now) -> ContextPassage:
    """Build the prompt, query the backend, wrap with provenance.

    Transport failures are retried up to ``max_retries`` times; an empty
    reply is an :class:`EmptyContextError`, deliberately distinct from
    transport trouble.
    """
    ke_prompt = build_ke_prompt(entities, structured=structured)
    last_error: TransportError | None = None
    for _ in range(max_retries + 1):
        try:
            text = backend.fetch(ke_prompt.rendered_text)
            break
        except TransportError as exc:
            last_error = exc
    else:
        raise TransportError(
            f"knowledge backend failed after {max_retries} retries: {last_error}",
            retries=max_retries)
    if not text.strip():
        raise EmptyContextError(
            f"backend {backend.backend_id} returned no passage for {entity_signature(entities)}")
    return ContextPassage(
        text=text,
        backend_id=backend.backend_id,
        prompt_hash=prompt_hash(ke_prompt.rendered_text),
        source_entities=entities,
        created_at=clock(),
    )


class NearestCaptionStub:
    """Single-stage stand-in: describe the video as its nearest train caption.

    Mean-pooled frame features, cosine nearest neighbor over the train
    split. Structurally reproduces the failure mode of prompting a
    video model for news context: it can only describe what it sees.
    """

    backend_id = "single_stage"

    def __init__(self, corpus: Corpus, train_ids=None):
        ids = [i for i in (train_ids if train_ids is not None else corpus.ids)
               if i in corpus.captions]
        if not ids:
            raise EmptyContextError("no train captions available for the single-stage stub")
        self.captions = [corpus.captions[i].text for i in ids]
        pooled = np.stack([
            np.asarray(corpus[i].frame_features, dtype=np.float32).mean(axis=0)
            for i in ids
        ])
        norms = np.linalg.norm(pooled, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        self.vectors = pooled / norms

    def describe(self, frame_features) -> str:
        query = np.asarray(frame_features, dtype=np.float32).mean(axis=0)
        norm = np.linalg.norm(query)
        if norm > 0.0:
            query = query / norm
        return self.captions[int(np.argmax(self.vectors @ query))]


def extract_context_single_stage(frame_features, videollm: NearestCaptionStub,
                                 kb: KnowledgeBackend | None = None,
                                 clock: Callable[[], str] = _utc_now) -> ContextPassage:
    """Context straight from video features, no entity grounding.

    With a kb, the raw description is used as an ungrounded flat query;
    without one, the description itself is the passage.
    """
    description = videollm.describe(frame_features)
    digest = hashlib.sha256(
        np.asarray(frame_features, dtype=np.float32).tobytes()).hexdigest()
    pseudo_prompt = f"single-stage description of video features {digest}"
    text = description
    if kb is not None:
        text = kb.fetch(render_knowledge_prompt(description).text)
    if not text.strip():
        raise EmptyContextError("single-stage backend produced no passage")
    return ContextPassage(
        text=text,
        backend_id=videollm.backend_id if kb is None else f"{videollm.backend_id}+{kb.backend_id}",
        prompt_hash=prompt_hash(pseudo_prompt),
        source_entities=EntitySet(),
        created_at=clock(),
    )


class EmbeddingProvider(Protocol):
    def encode(self, tokens: list[str]) -> np.ndarray: ...


class OneHotHashEmbeddings:
    """Deterministic token embeddings: one-hot over sha256 buckets.

    Cosine similarity is exactly 1 for equal tokens and 0 otherwise (up
    to bucket collisions, negligible at this dimension). Makes
    score_context a pure lexical-overlap score with no model weights.
    """

    def __init__(self, dim: int = 4096):
        self.dim = dim

    def encode(self, tokens: list[str]) -> np.ndarray:
        out = np.zeros((len(tokens), self.dim), dtype=np.float32)
        for i, token in enumerate(tokens):
            bucket = int.from_bytes(
                hashlib.sha256(token.encode("utf-8")).digest()[:8], "big") % self.dim
            out[i, bucket] = 1.0
        return out


def score_context(passage: ContextPassage | str, reference_caption: str,
                  scorer: EmbeddingProvider | None = None,
                  idf_weights: dict[str, float] | None = None,
                  rescale_baseline: float | None = None) -> float:
    """Greedy token-matching F1 over embedding cosines (BERTScore recipe).

    idf weighting and baseline rescaling are off by default; both knobs
    exist for parity with common practice. Result is clamped to [0, 1].
    """
    passage_text = passage.text if isinstance(passage, ContextPassage) else passage
    if not passage_text.strip() or not reference_caption.strip():
        raise ValueError("passage and reference must be nonempty")
    scorer = scorer or OneHotHashEmbeddings()
    cand_tokens = word_tokenize(passage_text)
    ref_tokens = word_tokenize(reference_caption)
    cand = scorer.encode(cand_tokens).astype(np.float64)
    ref = scorer.encode(ref_tokens).astype(np.float64)

    def normalize_rows(matrix: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return matrix / norms

    sims = normalize_rows(cand) @ normalize_rows(ref).T

    def weights(tokens: list[str]) -> np.ndarray:
        if idf_weights is None:
            return np.ones(len(tokens))
        return np.array([idf_weights.get(t, 0.0) for t in tokens], dtype=np.float64)

    cand_w = weights(cand_tokens)
    ref_w = weights(ref_tokens)
    precision = float((sims.max(axis=1) * cand_w).sum() / max(cand_w.sum(), 1e-12))
    recall = float((sims.max(axis=0) * ref_w).sum() / max(ref_w.sum(), 1e-12))
    if precision + recall == 0.0:
        return 0.0
    f1 = 2 * precision * recall / (precision + recall)
    if rescale_baseline is not None:
        f1 = (f1 - rescale_baseline) / (1.0 - rescale_baseline)
    return min(1.0, max(0.0, f1))


def load_context_file(path: str | Path) -> dict[str, ContextPassage]:
    out: dict[str, ContextPassage] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out[row["sample_id"]] = ContextPassage(
                text=row["text"],
                backend_id=row["backend_id"],
                prompt_hash=row["prompt_hash"],
                source_entities=parse_entity_set(row["source_entities"]),
                created_at=row["created_at"],
            )
    return out


def save_context_file(passages: dict[str, ContextPassage], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for sample_id in sorted(passages):
            p = passages[sample_id]
            fh.write(json.dumps({
                "sample_id": sample_id,
                "text": p.text,
                "backend_id": p.backend_id,
                "prompt_hash": p.prompt_hash,
                "source_entities": serialize_entity_set(p.source_entities),
                "created_at": p.created_at,
            }, ensure_ascii=False) + "\n")
