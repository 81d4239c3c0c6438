"""Corpus schema, validation, and train/dev/test splitting.

A corpus is a JSONL file: one header object ``{"schema": "views-corpus/1"}``
followed by one object per sample. Frame features are either inlined as an
F x D float matrix or stored in an ``.npy`` sidecar referenced by a path
relative to the corpus file. Ground-truth captions and entity sets are
stage outputs and live in sidecar JSONL files, not in the corpus schema;
a loaded :class:`Corpus` carries them as in-memory attachments.
"""

from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .entities import EntitySet, parse_entity_set, serialize_entity_set
from .errors import CorpusParseError
from .tokenizer import token_count

SCHEMA_VERSION = "views-corpus/1"

_SAMPLE_KEYS = {
    "id", "source", "publish_date", "title", "article_text",
    "bullet_summaries", "frame_features", "asr_text", "split",
}
_SPLIT_NAMES = ("train", "dev", "test")


class CaptionOrigin(str, Enum):
    EVENT_DESCRIPTIONS = "event_descriptions"
    PAIRED_ARTICLE = "paired_article"
    MODEL_PREDICTION = "model_prediction"


class QCStatus(str, Enum):
    UNREVIEWED = "unreviewed"
    AUTO_PASS = "auto_pass"
    FLAGGED = "flagged"
    CORRECTED = "corrected"


@dataclass(frozen=True)
class CaptionRecord:
    sample_id: str
    text: str
    token_count: int
    origin: CaptionOrigin
    qc_status: QCStatus = QCStatus.UNREVIEWED

    def __post_init__(self):
        actual = token_count(self.text)
        if self.token_count != actual:
            raise ValueError(
                f"caption {self.sample_id}: token_count {self.token_count} "
                f"does not match tokenizer output {actual}"
            )
        if self.origin != CaptionOrigin.MODEL_PREDICTION and self.token_count > 100:
            raise ValueError(
                f"caption {self.sample_id}: ground-truth captions are capped "
                f"at 100 tokens, got {self.token_count}"
            )

    @classmethod
    def from_text(cls, sample_id: str, text: str, origin: CaptionOrigin,
                  qc_status: QCStatus = QCStatus.UNREVIEWED) -> "CaptionRecord":
        return cls(sample_id, text, token_count(text), origin, qc_status)


@dataclass(frozen=True)
class VideoSample:
    id: str
    source: str
    publish_date: dt.date
    title: str
    article_text: str
    bullet_summaries: tuple[str, ...]
    frame_features: np.ndarray  # (F, D) float32
    asr_text: str | None = None
    split: str | None = None

    @property
    def n_frames(self) -> int:
        return self.frame_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frame_features.shape[1]


@dataclass(frozen=True)
class CorpusSplit:
    train_ids: frozenset[str]
    dev_ids: frozenset[str]
    test_ids: frozenset[str]
    cutoff_date: dt.date | None = None

    def __post_init__(self):
        if (self.train_ids & self.dev_ids or self.train_ids & self.test_ids
                or self.dev_ids & self.test_ids):
            raise ValueError("split id sets must be pairwise disjoint")

    def side_of(self, sample_id: str) -> str | None:
        for name, ids in (("train", self.train_ids), ("dev", self.dev_ids),
                          ("test", self.test_ids)):
            if sample_id in ids:
                return name
        return None


@dataclass
class Corpus:
    """Validated in-memory corpus plus stage-output attachments.

    The sample list is fixed after load; captions/entities maps are the
    mutable attachment points the builder and model stages write into.
    """

    samples: list[VideoSample]
    captions: dict[str, CaptionRecord] = field(default_factory=dict)
    entities: dict[str, EntitySet] = field(default_factory=dict)

    def __post_init__(self):
        self._by_id = {s.id: s for s in self.samples}

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, sample_id: str) -> VideoSample:
        return self._by_id[sample_id]

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._by_id

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def feature_dim(self) -> int:
        return self.samples[0].feature_dim if self.samples else 0

    def subset(self, ids) -> "Corpus":
        keep = set(ids)
        return Corpus(
            samples=[s for s in self.samples if s.id in keep],
            captions={k: v for k, v in self.captions.items() if k in keep},
            entities={k: v for k, v in self.entities.items() if k in keep},
        )


def _parse_date(value: str, line_no: int) -> dt.date:
    try:
        return dt.date.fromisoformat(value)
    except (TypeError, ValueError) as exc:
        raise CorpusParseError(f"bad publish_date {value!r}: {exc}", line_no) from None


def _parse_features(value, base_dir: Path, line_no: int) -> np.ndarray:
    if isinstance(value, str):
        sidecar = base_dir / value
        if not sidecar.exists():
            raise CorpusParseError(f"frame_features sidecar {value!r} not found", line_no)
        features = np.load(sidecar)
    else:
        try:
            features = np.asarray(value, dtype=np.float32)
        except ValueError as exc:
            raise CorpusParseError(f"bad frame_features: {exc}", line_no) from None
    if features.ndim != 2 or features.shape[0] < 1:
        raise CorpusParseError(
            f"frame_features must be an F x D matrix with F >= 1, got shape {features.shape}",
            line_no,
        )
    return features.astype(np.float32)


def load_corpus(path: str | Path, schema_version: str = SCHEMA_VERSION) -> Corpus:
    """Load and validate a corpus file; every invariant failure names its line."""
    path = Path(path)
    samples: list[VideoSample] = []
    seen_ids: set[str] = set()
    feature_dim: int | None = None
    with path.open(encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise CorpusParseError("missing header line", 1)
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(f"malformed header: {exc}", 1) from None
        if not isinstance(header, dict) or header.get("schema") != schema_version:
            raise CorpusParseError(
                f"unknown schema {header.get('schema') if isinstance(header, dict) else header!r}, "
                f"expected {schema_version!r}",
                1,
            )
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"malformed record: {exc}", line_no) from None
            missing = _SAMPLE_KEYS - record.keys()
            if missing:
                raise CorpusParseError(f"missing keys {sorted(missing)}", line_no)
            sample_id = record["id"]
            if not isinstance(sample_id, str) or not sample_id:
                raise CorpusParseError("id must be a nonempty string", line_no)
            if sample_id in seen_ids:
                raise CorpusParseError(f"duplicate id {sample_id!r}", line_no)
            seen_ids.add(sample_id)
            bullets = record["bullet_summaries"]
            if not isinstance(bullets, list) or any(
                    not isinstance(b, str) or not b.strip() for b in bullets):
                raise CorpusParseError("bullet_summaries must be a list of nonempty strings", line_no)
            split = record["split"]
            if split is not None and split not in _SPLIT_NAMES:
                raise CorpusParseError(f"bad split {split!r}", line_no)
            features = _parse_features(record["frame_features"], path.parent, line_no)
            if feature_dim is None:
                feature_dim = features.shape[1]
            elif features.shape[1] != feature_dim:
                raise CorpusParseError(
                    f"feature dim {features.shape[1]} differs from corpus dim {feature_dim}",
                    line_no,
                )
            publish_date = _parse_date(record["publish_date"], line_no)
            if publish_date > dt.date.today():
                raise CorpusParseError(f"publish_date {publish_date} is in the future", line_no)
            samples.append(VideoSample(
                id=sample_id,
                source=record["source"],
                publish_date=publish_date,
                title=record["title"],
                article_text=record["article_text"],
                bullet_summaries=tuple(bullets),
                frame_features=features,
                asr_text=record["asr_text"],
                split=split,
            ))
    return Corpus(samples=samples)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": SCHEMA_VERSION}) + "\n")
        for s in corpus.samples:
            fh.write(json.dumps({
                "id": s.id,
                "source": s.source,
                "publish_date": s.publish_date.isoformat(),
                "title": s.title,
                "article_text": s.article_text,
                "bullet_summaries": list(s.bullet_summaries),
                "frame_features": [[float(x) for x in row] for row in s.frame_features],
                "asr_text": s.asr_text,
                "split": s.split,
            }, ensure_ascii=False) + "\n")


def split_random(corpus: Corpus, dev_n: int, test_n: int, seed: int) -> CorpusSplit:
    """Seeded random split with exact dev/test sizes; remainder trains."""
    if dev_n < 0 or test_n < 0:
        raise ValueError("split sizes must be non-negative")
    if dev_n + test_n >= len(corpus):
        raise ValueError(
            f"dev_n + test_n = {dev_n + test_n} leaves no training data "
            f"(corpus size {len(corpus)})"
        )
    ids = corpus.ids
    rng = random.Random(seed)
    shuffled = ids[:]
    rng.shuffle(shuffled)
    dev = frozenset(shuffled[:dev_n])
    test = frozenset(shuffled[dev_n:dev_n + test_n])
    train = frozenset(shuffled[dev_n + test_n:])
    return CorpusSplit(train_ids=train, dev_ids=dev, test_ids=test)


def split_by_date(corpus: Corpus, cutoff_date: dt.date) -> CorpusSplit:
    """Time split: train strictly before the cutoff, eval on/after it."""
    if not len(corpus):
        raise ValueError("corpus is empty")
    train = frozenset(s.id for s in corpus if s.publish_date < cutoff_date)
    eval_ids = frozenset(s.id for s in corpus if s.publish_date >= cutoff_date)
    if not train:
        raise ValueError(f"no samples before cutoff {cutoff_date}")
    if not eval_ids:
        raise ValueError(f"no samples on or after cutoff {cutoff_date}")
    return CorpusSplit(train_ids=train, dev_ids=frozenset(), test_ids=eval_ids,
                       cutoff_date=cutoff_date)


def audit_time_split(corpus: Corpus, split: CorpusSplit) -> list[str]:
    """Exhaustive leakage scan; returns offending train ids (empty = clean)."""
    if split.cutoff_date is None:
        raise ValueError("split has no cutoff date to audit against")
    return [s.id for s in corpus
            if s.id in split.train_ids and s.publish_date >= split.cutoff_date]


def split_from_annotations(corpus: Corpus) -> CorpusSplit:
    """Split from per-sample ``split`` fields (all samples must carry one)."""
    buckets: dict[str, set[str]] = {name: set() for name in _SPLIT_NAMES}
    for s in corpus:
        if s.split is None:
            raise ValueError(f"sample {s.id} has no split annotation")
        buckets[s.split].add(s.id)
    return CorpusSplit(train_ids=frozenset(buckets["train"]),
                       dev_ids=frozenset(buckets["dev"]),
                       test_ids=frozenset(buckets["test"]))


SPLIT_SCHEMA = "views-split/1"


def save_split(split: CorpusSplit, path: str | Path) -> None:
    Path(path).write_text(json.dumps({
        "schema": SPLIT_SCHEMA,
        "train_ids": sorted(split.train_ids),
        "dev_ids": sorted(split.dev_ids),
        "test_ids": sorted(split.test_ids),
        "cutoff_date": split.cutoff_date.isoformat() if split.cutoff_date else None,
    }, indent=2) + "\n", encoding="utf-8")


def load_split(path: str | Path) -> CorpusSplit:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema") != SPLIT_SCHEMA:
        raise CorpusParseError(f"not a split file (schema {data.get('schema')!r})")
    cutoff = data.get("cutoff_date")
    return CorpusSplit(
        train_ids=frozenset(data["train_ids"]),
        dev_ids=frozenset(data["dev_ids"]),
        test_ids=frozenset(data["test_ids"]),
        cutoff_date=dt.date.fromisoformat(cutoff) if cutoff else None,
    )


def load_caption_file(path: str | Path) -> dict[str, CaptionRecord]:
    """Read a captions sidecar: JSONL of CaptionRecord fields."""
    records: dict[str, CaptionRecord] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                record = CaptionRecord(
                    sample_id=row["sample_id"],
                    text=row["text"],
                    token_count=row["token_count"],
                    origin=CaptionOrigin(row["origin"]),
                    qc_status=QCStatus(row["qc_status"]),
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise CorpusParseError(f"bad caption record: {exc}", line_no) from None
            records[record.sample_id] = record
    return records


def save_caption_file(captions: dict[str, CaptionRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for sample_id in sorted(captions):
            c = captions[sample_id]
            fh.write(json.dumps({
                "sample_id": c.sample_id,
                "text": c.text,
                "token_count": c.token_count,
                "origin": c.origin.value,
                "qc_status": c.qc_status.value,
            }, ensure_ascii=False) + "\n")


def load_entity_file(path: str | Path) -> dict[str, EntitySet]:
    """Read an entities sidecar: JSONL of {sample_id, entity_string}."""
    out: dict[str, EntitySet] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                out[row["sample_id"]] = parse_entity_set(row["entity_string"])
            except Exception as exc:
                raise CorpusParseError(f"bad entity record: {exc}", line_no) from None
    return out


def save_entity_file(entities: dict[str, EntitySet], path: str | Path,
                     flags: dict[str, bool] | None = None) -> None:
    """Write an entities sidecar; optional per-sample decode-failure flags."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for sample_id in sorted(entities):
            row = {"sample_id": sample_id,
                   "entity_string": serialize_entity_set(entities[sample_id])}
            if flags is not None:
                row["decode_failed"] = bool(flags.get(sample_id, False))
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
