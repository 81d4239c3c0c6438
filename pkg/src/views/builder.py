"""Dataset-construction pipeline: bullet filtering, caption generation,
ground-truth entity extraction, rater QC, and the human correction queue.

Stage outputs are plain JSONL files with deterministic ordering so two
runs against the deterministic mock backend are byte-identical.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .corpus import CaptionOrigin, CaptionRecord, Corpus, CorpusSplit, QCStatus
from .dates import contains_date, strip_dates
from .entities import EntitySet, parse_entity_set
from .errors import RaterParseError, StateError
from .llm import LLMClient
from .prompts import (
    render_caption_prompt,
    render_entity_extraction_prompt,
    render_rater_prompt,
)

_BULLET_LINE_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$")
_WS_RE = re.compile(r"\s+")

_DATE_REMINDER = "\n\nPlease don't include specific dates."

CRITERIA_FLAGS = ("missing_entities", "hallucination", "missing_critical_info")

_FLAG_KEYWORDS = {
    "missing_entities": ("missing entit", "misses entit", "leaves out entit", "no entit"),
    "hallucination": ("hallucinat", "not in the context", "made up", "fabricat"),
    "missing_critical_info": ("critical information", "critical info", "incomplete",
                              "leaves out", "left out", "missing information"),
}


class QueueStatus(str, Enum):
    PENDING = "pending"
    CORRECTED = "corrected"
    ACCEPTED_AS_IS = "accepted_as_is"


@dataclass(frozen=True)
class QCVerdict:
    sample_id: str
    rater_pass: bool
    criteria_flags: frozenset[str]
    rater_raw_output: str

    def __post_init__(self):
        if self.rater_pass and self.criteria_flags:
            raise ValueError("passing verdict must carry no criteria flags")
        unknown = set(self.criteria_flags) - set(CRITERIA_FLAGS)
        if unknown:
            raise ValueError(f"unknown criteria flags {sorted(unknown)}")


@dataclass(frozen=True)
class CorrectionQueueEntry:
    sample_id: str
    original_caption: str
    corrected_caption: str | None = None
    status: QueueStatus = QueueStatus.PENDING

    def __post_init__(self):
        if self.status == QueueStatus.CORRECTED and not self.corrected_caption:
            raise ValueError("corrected entry must carry a nonempty corrected_caption")


def filter_bullet_summaries(article_text: str) -> list[str]:
    """Bullet lines from an article, markers stripped, whitespace collapsed.

    A bullet block is a maximal run of >= 2 consecutive marker lines
    (markers: -, *, bullet dot, or a number with . or ) ). All blocks
    contribute, in document order. No block means the sample is excluded
    from caption generation, so the empty list is the signal, not an
    error.
    """
    if not article_text:
        raise ValueError("article_text must be nonempty")
    lines = article_text.split("\n")
    out: list[str] = []
    run: list[str] = []
    for line in lines + [""]:  # sentinel flushes the last run
        match = _BULLET_LINE_RE.match(line)
        if match:
            run.append(_WS_RE.sub(" ", match.group(1)))
            continue
        if len(run) >= 2:
            out.extend(run)
        run = []
    return out


def generate_caption(bullet_summaries: list[str], title: str, llm: LLMClient,
                     sample_id: str = "") -> CaptionRecord:
    """Generate a ground-truth caption and scrub date expressions.

    One strip pass follows the first reply; if date expressions survive
    it (stripping can uncover new ones), the LLM is retried once with an
    appended no-dates reminder, and the final text is stripped until
    clean so the no-dates invariant always holds.
    """
    if not bullet_summaries:
        raise ValueError("bullet_summaries must be nonempty")
    prompt = render_caption_prompt(bullet_summaries, title)
    text = strip_dates(llm.complete(prompt.text))
    if contains_date(text):
        retry = llm.complete(prompt.text + _DATE_REMINDER)
        text = strip_dates(retry)
        while contains_date(text):
            text = strip_dates(text)
    return CaptionRecord.from_text(sample_id, text, CaptionOrigin.EVENT_DESCRIPTIONS)


def extract_gt_entities(bullet_summaries: list[str], llm: LLMClient) -> EntitySet:
    """Ground-truth entity set for a sample; DATE entries never survive."""
    if not bullet_summaries:
        raise ValueError("bullet_summaries must be nonempty")
    prompt = render_entity_extraction_prompt(bullet_summaries)
    return parse_entity_set(llm.complete(prompt.text))


def _parse_flags(reply: str) -> frozenset[str]:
    lowered = reply.casefold()
    flags = {flag for flag, needles in _FLAG_KEYWORDS.items()
             if any(n in lowered for n in needles)}
    # an unexplained No counts against every criterion
    return frozenset(flags) if flags else frozenset(CRITERIA_FLAGS)


def rate_caption(bullet_summaries: list[str], caption: str, llm: LLMClient,
                 sample_id: str = "") -> QCVerdict:
    """Run the quality rater; the verdict is the leading Yes/No of the reply."""
    if not bullet_summaries or not caption:
        raise ValueError("bullet_summaries and caption must be nonempty")
    prompt = render_rater_prompt(bullet_summaries, caption)
    reply = llm.complete(prompt.text)
    match = re.match(r"\s*(yes|no)\b", reply, re.IGNORECASE)
    if not match:
        raise RaterParseError(reply)
    if match.group(1).lower() == "yes":
        return QCVerdict(sample_id, True, frozenset(), reply)
    return QCVerdict(sample_id, False, _parse_flags(reply), reply)


def run_qc(corpus: Corpus, split: CorpusSplit, llm: LLMClient,
           include_train: bool = False, workers: int = 1) -> list[QCVerdict]:
    """Rate dev/test captions (train too only when asked); updates qc_status."""
    eligible = set(split.dev_ids) | set(split.test_ids)
    if include_train:
        eligible |= set(split.train_ids)
    targets = [s for s in corpus if s.id in eligible and s.id in corpus.captions]

    def rate(sample):
        caption = corpus.captions[sample.id]
        return rate_caption(list(sample.bullet_summaries), caption.text, llm,
                            sample_id=sample.id)

    verdicts = _run_parallel(rate, targets, workers)
    for verdict in verdicts:
        old = corpus.captions[verdict.sample_id]
        status = QCStatus.AUTO_PASS if verdict.rater_pass else QCStatus.FLAGGED
        corpus.captions[verdict.sample_id] = replace(old, qc_status=status)
    return verdicts


def build_correction_queue(verdicts: list[QCVerdict], corpus: Corpus) -> list[CorrectionQueueEntry]:
    """Exactly the flagged samples, in verdict order, each once."""
    entries = []
    seen: set[str] = set()
    for verdict in verdicts:
        if verdict.rater_pass or verdict.sample_id in seen:
            continue
        seen.add(verdict.sample_id)
        entries.append(CorrectionQueueEntry(
            sample_id=verdict.sample_id,
            original_caption=corpus.captions[verdict.sample_id].text,
        ))
    return entries


class CorrectionQueue:
    """Single-writer state machine over queue entries and the caption store."""

    def __init__(self, entries: list[CorrectionQueueEntry], corpus: Corpus):
        self.corpus = corpus
        self._entries: dict[str, CorrectionQueueEntry] = {}
        for entry in entries:
            if entry.sample_id in self._entries:
                raise ValueError(f"duplicate queue entry {entry.sample_id}")
            self._entries[entry.sample_id] = entry

    @property
    def entries(self) -> list[CorrectionQueueEntry]:
        return list(self._entries.values())

    def pending(self) -> list[CorrectionQueueEntry]:
        return [e for e in self._entries.values() if e.status == QueueStatus.PENDING]

    def _take_pending(self, sample_id: str) -> CorrectionQueueEntry:
        if sample_id not in self._entries:
            raise KeyError(f"no queue entry for {sample_id}")
        entry = self._entries[sample_id]
        if entry.status != QueueStatus.PENDING:
            raise StateError(f"entry {sample_id} already {entry.status.value}")
        return entry

    def apply_correction(self, sample_id: str, corrected_text: str) -> CorrectionQueueEntry:
        """Human fix: replaces the caption in the corpus copy."""
        entry = self._take_pending(sample_id)
        if not corrected_text.strip():
            raise ValueError("corrected caption must be nonempty")
        updated = replace(entry, corrected_caption=corrected_text,
                          status=QueueStatus.CORRECTED)
        self._entries[sample_id] = updated
        old = self.corpus.captions[sample_id]
        self.corpus.captions[sample_id] = CaptionRecord.from_text(
            sample_id, corrected_text, old.origin, QCStatus.CORRECTED)
        return updated

    def accept_as_is(self, sample_id: str) -> CorrectionQueueEntry:
        """Human override of a false flag; caption text untouched."""
        entry = self._take_pending(sample_id)
        updated = replace(entry, status=QueueStatus.ACCEPTED_AS_IS)
        self._entries[sample_id] = updated
        old = self.corpus.captions[sample_id]
        self.corpus.captions[sample_id] = replace(old, qc_status=QCStatus.AUTO_PASS)
        return updated


def _run_parallel(fn, items, workers: int):
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))  # map preserves input order


def build_captions(corpus: Corpus, llm: LLMClient, workers: int = 1) -> dict[str, CaptionRecord]:
    """Caption every sample whose article yields a bullet block."""
    targets = [(s, filter_bullet_summaries(s.article_text)) for s in corpus]
    targets = [(s, bullets) for s, bullets in targets if bullets]

    def make(pair):
        sample, bullets = pair
        return generate_caption(bullets, sample.title, llm, sample_id=sample.id)

    captions = {c.sample_id: c for c in _run_parallel(make, targets, workers)}
    corpus.captions.update(captions)
    return captions


def build_entities(corpus: Corpus, llm: LLMClient, workers: int = 1) -> dict[str, EntitySet]:
    """Ground-truth entity sets for every sample with a bullet block."""
    targets = [(s, filter_bullet_summaries(s.article_text)) for s in corpus]
    targets = [(s, bullets) for s, bullets in targets if bullets]

    def extract(pair):
        sample, bullets = pair
        return sample.id, extract_gt_entities(bullets, llm)

    entities = dict(_run_parallel(extract, targets, workers))
    corpus.entities.update(entities)
    return entities


def rater_audit(gold: list[tuple[list[str], str, bool]], llm: LLMClient) -> float:
    """Fraction of human-flagged captions the rater passed (miss rate).

    Reported, never asserted: the number depends entirely on the rater
    backend.
    """
    flagged = [(bullets, caption) for bullets, caption, bad in gold if bad]
    if not flagged:
        return 0.0
    missed = sum(rate_caption(bullets, caption, llm).rater_pass
                 for bullets, caption in flagged)
    return missed / len(flagged)


def save_verdicts(verdicts: list[QCVerdict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for v in sorted(verdicts, key=lambda v: v.sample_id):
            fh.write(json.dumps({
                "sample_id": v.sample_id,
                "rater_pass": v.rater_pass,
                "criteria_flags": sorted(v.criteria_flags),
                "rater_raw_output": v.rater_raw_output,
            }, ensure_ascii=False) + "\n")


def load_verdicts(path: str | Path) -> list[QCVerdict]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out.append(QCVerdict(row["sample_id"], row["rater_pass"],
                                 frozenset(row["criteria_flags"]), row["rater_raw_output"]))
    return out


def save_queue(entries: list[CorrectionQueueEntry], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in sorted(entries, key=lambda e: e.sample_id):
            fh.write(json.dumps({
                "sample_id": e.sample_id,
                "original_caption": e.original_caption,
                "corrected_caption": e.corrected_caption,
                "status": e.status.value,
            }, ensure_ascii=False) + "\n")


def load_queue(path: str | Path) -> list[CorrectionQueueEntry]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out.append(CorrectionQueueEntry(row["sample_id"], row["original_caption"],
                                            row["corrected_caption"], QueueStatus(row["status"])))
    return out
