"""Rule-based date-expression detector and stripper.

Captions must not contain dates (they are not predictable from pixels),
so the builder scrubs them. The detector is a documented grammar, not a
full temporal tagger:

- month-name expressions: "March 3", "March 3, 2008", "3rd March 1999",
  bare "March" / "March 2008", with common abbreviations;
- ISO dates: 2008-03-03;
- slashed dates: 3/3/08, 12/25/2008;
- 4-digit years 1900-2099 immediately preceded by a date context word
  ("in 2008", "since 1999"); the context word is removed with the year.
"""

from __future__ import annotations

import re

_MONTHS = (
    "january|february|march|april|may|june|july|august|september|october|"
    "november|december|jan|feb|mar|apr|jun|jul|aug|sep|sept|oct|nov|dec"
)
_DAY = r"\d{1,2}(?:st|nd|rd|th)?"
_YEAR = r"(?:19|20)\d{2}"
_CONTEXT_WORDS = "in|on|since|until|by|during|of|year|early|late|mid"

# Ordered longest-first so e.g. "March 3, 2008" wins over bare "March".
_DATE_RE = re.compile(
    rf"""
    \b\d{{4}}-\d{{2}}-\d{{2}}\b                                  # ISO
    | \b\d{{1,2}}/\d{{1,2}}/\d{{2,4}}\b                          # slashed
    | \b(?:{_MONTHS})\.?\s+{_DAY}(?:\s*,\s*{_YEAR})?\b           # March 3, 2008
    | \b{_DAY}\s+(?:of\s+)?(?:{_MONTHS})\.?(?:\s*,?\s*{_YEAR})?\b  # 3rd of March 1999
    | \b(?:{_MONTHS})\.?(?:\s+{_YEAR})?\b                        # March / March 2008
    | \b(?:{_CONTEXT_WORDS})\s+{_YEAR}\b                         # in 2008
    """,
    re.IGNORECASE | re.VERBOSE,
)

_SPACE_BEFORE_PUNCT_RE = re.compile(r"\s+([.,;:!?])")
_WS_RE = re.compile(r"[ \t]+")


def detect_dates(text: str) -> list[tuple[int, int, str]]:
    """All date-expression spans as (start, end, matched_text)."""
    return [(m.start(), m.end(), m.group(0)) for m in _DATE_RE.finditer(text)]


def contains_date(text: str) -> bool:
    return _DATE_RE.search(text) is not None


def strip_dates(text: str) -> str:
    """Remove one pass of detected date expressions and tidy whitespace.

    A single pass can uncover new expressions (removing "in 2022" from
    "in in 2022 2023" leaves "in 2023"), which is exactly the condition
    the builder's retry branch watches for; callers wanting a guarantee
    loop until :func:`contains_date` is false.
    """
    stripped = _DATE_RE.sub(" ", text)
    stripped = _WS_RE.sub(" ", stripped)
    stripped = _SPACE_BEFORE_PUNCT_RE.sub(r"\1", stripped)
    return "\n".join(line.strip() for line in stripped.split("\n")).strip()
