"""Typed named-entity sets and their canonical serialized form.

The pipeline passes entities between stages as text shaped like::

    {PERSON: [George Bush, Condoleezza Rice], GPE: [Washington]}

Types are upper-cased labels; surfaces keep their original casing. The
reserved characters ``{ } [ ] : ,`` and the backslash are escaped with a
backslash so arbitrary surface forms survive a round trip. DATE never
appears: dates are stripped throughout the pipeline because they are not
predictable from pixels.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Mapping

from .errors import EntityParseError

RESERVED_CHARS = "{}[]:,"
_ESCAPE_RE = re.compile(r"([\\{}\[\]:,])")
_WS_RE = re.compile(r"\s+")


def escape_name(name: str) -> str:
    """Backslash-escape reserved characters (and the backslash itself)."""
    return _ESCAPE_RE.sub(r"\\\1", name)


def normalize_surface(surface: str) -> str:
    """Matching key for a surface form.

    Lower-cases, collapses internal whitespace, trims, and drops one
    leading English article so "the White House" and "White  house"
    compare equal.
    """
    s = _WS_RE.sub(" ", surface).strip().casefold()
    for article in ("the ", "a ", "an "):
        if s.startswith(article):
            s = s[len(article):]
            break
    return s


class EntitySet:
    """Typed entity collection with insertion order and per-type dedup.

    Construction normalizes: type labels are upper-cased and stripped,
    surfaces are stripped, DATE entries are dropped, and surfaces that
    collide under :func:`normalize_surface` within one type keep only the
    first occurrence. Order of first appearance is preserved for both
    types and surfaces, so equal sets serialize identically.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, Iterable[str]] | None = None):
        normalized: dict[str, list[str]] = {}
        for raw_type, surfaces in (entries or {}).items():
            etype = raw_type.strip().upper()
            if not etype:
                raise ValueError("entity type label must be non-empty")
            if etype == "DATE":
                continue
            bucket = normalized.setdefault(etype, [])
            seen = {normalize_surface(s) for s in bucket}
            for surface in surfaces:
                surface = surface.strip()
                if not surface:
                    continue
                key = normalize_surface(surface)
                if key in seen:
                    continue
                seen.add(key)
                bucket.append(surface)
            if not bucket:
                normalized.pop(etype)
        self._entries = normalized

    @property
    def types(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def surfaces(self, etype: str) -> tuple[str, ...]:
        return tuple(self._entries.get(etype.strip().upper(), ()))

    def items(self) -> Iterable[tuple[str, tuple[str, ...]]]:
        for etype, surfaces in self._entries.items():
            yield etype, tuple(surfaces)

    def is_empty(self) -> bool:
        return not self._entries

    def __len__(self) -> int:
        return sum(len(v) for v in self._entries.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EntitySet):
            return NotImplemented
        return self._entries == other._entries

    def __hash__(self) -> int:
        # frozenset: equality is order-insensitive across types, so the
        # hash has to be as well
        return hash(frozenset((t, tuple(s)) for t, s in self._entries.items()))

    def __repr__(self) -> str:
        return f"EntitySet({serialize_entity_set(self)!r})"

    def merge(self, other: "EntitySet") -> "EntitySet":
        """Union preserving self-first order; dedup rules reapply."""
        merged: dict[str, list[str]] = {t: list(s) for t, s in self._entries.items()}
        for etype, surfaces in other._entries.items():
            merged.setdefault(etype, []).extend(surfaces)
        return EntitySet(merged)


def serialize_entity_set(entities: EntitySet) -> str:
    """Render the canonical text form; empty set renders as ``{}``."""
    parts = []
    for etype, surfaces in entities.items():
        inner = ", ".join(escape_name(s) for s in surfaces)
        parts.append(f"{escape_name(etype)}: [{inner}]")
    return "{" + ", ".join(parts) + "}"


def flatten_entity_set(entities: EntitySet) -> list[str]:
    """All surfaces in set order, deduplicated across types.

    Cross-type duplicates (same normalized surface under two labels) keep
    the first occurrence only, which is what the flat knowledge-prompt
    variant wants.
    """
    seen: set[str] = set()
    flat: list[str] = []
    for _, surfaces in entities.items():
        for surface in surfaces:
            key = normalize_surface(surface)
            if key in seen:
                continue
            seen.add(key)
            flat.append(surface)
    return flat


def find_surfaces(text: str, inventory: Iterable[tuple[str, str]]) -> list[tuple[str, str]]:
    """Inventory (surface, type) pairs occurring in text.

    A surface hits when it appears word-bounded under case folding;
    multiword surfaces match across single spaces. Inventory order is
    preserved, which keeps gazetteer-driven extraction deterministic.
    """
    folded = _WS_RE.sub(" ", text).casefold()
    hits = []
    for surface, etype in inventory:
        pattern = rf"(?<!\w){re.escape(_WS_RE.sub(' ', surface).casefold())}(?!\w)"
        if re.search(pattern, folded):
            hits.append((surface, etype))
    return hits


def entity_signature(entities: EntitySet) -> str:
    """Order-insensitive canonical key for lookup tables.

    Types sorted, surfaces normalized and sorted, serialized with the
    same escaping as the wire format.
    """
    parts = []
    for etype in sorted(entities.types):
        normed = sorted(normalize_surface(s) for s in entities.surfaces(etype))
        inner = ", ".join(escape_name(s) for s in normed)
        parts.append(f"{escape_name(etype)}: [{inner}]")
    return "{" + ", ".join(parts) + "}"


class _Scanner:
    """Position-tracking scanner for the canonical format.

    Tolerates arbitrary whitespace between tokens and trailing commas in
    both lists and the top-level map; anything else is an error at the
    current offset.
    """

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str) -> EntityParseError:
        return EntityParseError(message, self.pos, self.text)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, char: str) -> None:
        if self.peek() != char:
            found = repr(self.peek()) if self.peek() else "end of input"
            raise self.error(f"expected {char!r}, found {found}")
        self.pos += 1

    def read_name(self, stop: str) -> str:
        """Read until an unescaped stop character; unescape as we go."""
        out: list[str] = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "\\":
                if self.pos + 1 >= len(self.text):
                    raise self.error("dangling escape")
                out.append(self.text[self.pos + 1])
                self.pos += 2
                continue
            if ch in stop:
                return "".join(out)
            if ch in RESERVED_CHARS:
                raise self.error(f"unescaped reserved character {ch!r}")
            out.append(ch)
            self.pos += 1
        raise self.error(f"unterminated name, expected one of {stop!r}")


def parse_entity_set(text: str) -> EntitySet:
    """Parse the canonical format back into an :class:`EntitySet`.

    Inverse of :func:`serialize_entity_set` up to construction-time
    normalization. Raises :class:`EntityParseError` with the failing
    offset on unbalanced brackets, missing colons, unescaped reserved
    characters, or trailing garbage.
    """
    sc = _Scanner(text)
    sc.skip_ws()
    sc.expect("{")
    entries: dict[str, list[str]] = {}
    while True:
        sc.skip_ws()
        if sc.peek() == "}":
            sc.pos += 1
            break
        if not sc.peek():
            raise sc.error("unbalanced braces")
        etype = sc.read_name(":").strip()
        if not etype:
            raise sc.error("missing entity type before ':'")
        sc.expect(":")
        sc.skip_ws()
        sc.expect("[")
        surfaces = entries.setdefault(etype.upper(), [])
        while True:
            sc.skip_ws()
            if sc.peek() == "]":
                sc.pos += 1
                break
            surface = sc.read_name(",]").strip()
            if surface:
                surfaces.append(surface)
            if sc.peek() == ",":
                sc.pos += 1
                continue
        sc.skip_ws()
        if sc.peek() == ",":
            sc.pos += 1
        elif sc.peek() != "}":
            found = repr(sc.peek()) if sc.peek() else "end of input"
            raise sc.error(f"expected ',' or '}}', found {found}")
    sc.skip_ws()
    if sc.pos != len(sc.text):
        raise sc.error("trailing characters after closing brace")
    return EntitySet(entries)
