"""Prompt templates, rendered byte-for-byte from versioned text assets.

The four templates ship as package data and are never rebuilt in code;
snapshot tests pin them against golden copies. Placeholders are literal
markers (``<bullet_summaries>``, ``<summary>``, ``<entities>``) replaced
by plain substitution so everything around them stays untouched.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources

TEMPLATE_NAMES = (
    "caption_generation",
    "caption_rating",
    "entity_extraction",
    "knowledge_query",
)

_PLACEHOLDERS = {
    "caption_generation": ("<bullet_summaries>",),
    "caption_rating": ("<bullet_summaries>", "<summary>"),
    "entity_extraction": ("<bullet_summaries>",),
    "knowledge_query": ("<entities>",),
}


@dataclass(frozen=True)
class RenderedPrompt:
    template_id: str
    text: str


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_template(name: str) -> str:
    """Template text with the file's single trailing newline stripped."""
    if name not in TEMPLATE_NAMES:
        raise ValueError(f"unknown template {name!r}")
    raw = (resources.files("views") / "templates" / f"{name}.txt").read_text(encoding="utf-8")
    text = raw[:-1] if raw.endswith("\n") else raw
    for placeholder in _PLACEHOLDERS[name]:
        if text.count(placeholder) != 1:
            raise ValueError(f"template {name} must contain {placeholder} exactly once")
    return text


def _join_context(bullet_summaries: list[str], title: str = "") -> str:
    lines = ([title] if title else []) + list(bullet_summaries)
    return "\n".join(lines)


def render_caption_prompt(bullet_summaries: list[str], title: str = "") -> RenderedPrompt:
    """Summarization prompt; the title leads the Context block when given."""
    text = load_template("caption_generation").replace(
        "<bullet_summaries>", _join_context(bullet_summaries, title))
    return RenderedPrompt("caption_generation", text)


def render_rater_prompt(bullet_summaries: list[str], summary: str) -> RenderedPrompt:
    text = load_template("caption_rating")
    text = text.replace("<bullet_summaries>", _join_context(bullet_summaries))
    text = text.replace("<summary>", summary)
    return RenderedPrompt("caption_rating", text)


def render_entity_extraction_prompt(bullet_summaries: list[str]) -> RenderedPrompt:
    text = load_template("entity_extraction").replace(
        "<bullet_summaries>", _join_context(bullet_summaries))
    return RenderedPrompt("entity_extraction", text)


def render_knowledge_prompt(entity_payload: str) -> RenderedPrompt:
    """Knowledge-retrieval prompt over an already-serialized entity payload."""
    text = load_template("knowledge_query").replace("<entities>", entity_payload)
    return RenderedPrompt("knowledge_query", text)
