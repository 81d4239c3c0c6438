"""Caption evaluation: BLEU-4, ROUGE-L, CIDEr-D, Entity-F1, hallucination.

Scales follow the reporting convention of captioning tables: everything
lands in [0, 100], including CIDEr-D (raw 0..10 scale times ten, so an
identical corpus scores 100).
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .entities import EntitySet, find_surfaces, normalize_surface, parse_entity_set
from .llm import LLMClient
from .prompts import render_entity_extraction_prompt
from .tokenizer import word_tokenize


@dataclass(frozen=True)
class MetricReport:
    bleu4: float
    rouge_l: float
    cider: float
    entity_f1: float
    hallucination_rate: float
    n_samples: int

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("report needs at least one sample")
        for name in ("bleu4", "rouge_l", "cider", "entity_f1", "hallucination_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 100.0 + 1e-9:
                raise ValueError(f"{name} = {value} outside [0, 100]")

    def to_dict(self) -> dict:
        return {
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "entity_f1": self.entity_f1,
            "hallucination_rate": self.hallucination_rate,
            "n_samples": self.n_samples,
        }


@dataclass(frozen=True)
class EntityMatchConfig:
    normalization: str = "surface_fold"
    aggregation: str = "micro"  # or "macro"
    type_sensitive: bool = False

    def __post_init__(self):
        if self.normalization != "surface_fold":
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.aggregation not in ("micro", "macro"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


def _check_pairs(predictions, references):
    if len(predictions) != len(references):
        raise ValueError(
            f"got {len(predictions)} predictions for {len(references)} references")
    if not predictions:
        raise ValueError("need at least one prediction/reference pair")


def _ngram_counts(tokens: list[str], max_n: int = 4) -> dict[int, Counter]:
    counts: dict[int, Counter] = {}
    for n in range(1, max_n + 1):
        counts[n] = Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return counts


def bleu4(predictions: list[str], references: list[str], smoothing: bool = False) -> float:
    """Corpus-level BLEU-4 x100.

    Modified n-gram precision with per-reference clipping, strict
    geometric mean over n = 1..4 and the standard brevity penalty. With
    smoothing on, zero clipped counts for n >= 2 get add-one smoothing
    (useful for single-sentence corpora, which otherwise zero out).
    """
    _check_pairs(predictions, references)
    clipped = Counter()
    totals = Counter()
    pred_len = 0
    ref_len = 0
    for pred, ref in zip(predictions, references):
        pred_tokens = word_tokenize(pred)
        ref_tokens = word_tokenize(ref)
        pred_len += len(pred_tokens)
        ref_len += len(ref_tokens)
        pred_counts = _ngram_counts(pred_tokens)
        ref_counts = _ngram_counts(ref_tokens)
        for n in range(1, 5):
            for gram, count in pred_counts[n].items():
                clipped[n] += min(count, ref_counts[n].get(gram, 0))
                totals[n] += count
    log_precision_sum = 0.0
    for n in range(1, 5):
        numerator, denominator = clipped[n], totals[n]
        if numerator == 0 and smoothing and n > 1:
            numerator, denominator = numerator + 1, denominator + 1
        if numerator == 0 or denominator == 0:
            return 0.0
        log_precision_sum += math.log(numerator / denominator)
    brevity = 1.0 if pred_len > ref_len else math.exp(1 - ref_len / max(1, pred_len))
    return math.exp(log_precision_sum / 4) * brevity * 100.0


def _lcs_length(a: list[str], b: list[str]) -> int:
    # one-row DP; a is the shorter side
    if len(a) > len(b):
        a, b = b, a
    prev = [0] * (len(a) + 1)
    for bj in b:
        current = [0]
        for i, ai in enumerate(a, start=1):
            current.append(prev[i - 1] + 1 if ai == bj else max(prev[i], current[i - 1]))
        prev = current
    return prev[len(a)]


def rouge_l(predictions: list[str], references: list[str], beta: float = 1.2) -> float:
    """Mean per-pair LCS F-measure with recall weight beta, x100."""
    _check_pairs(predictions, references)
    total = 0.0
    for pred, ref in zip(predictions, references):
        pred_tokens = word_tokenize(pred)
        ref_tokens = word_tokenize(ref)
        lcs = _lcs_length(pred_tokens, ref_tokens)
        precision = lcs / len(pred_tokens) if pred_tokens else 0.0
        recall = lcs / len(ref_tokens) if ref_tokens else 0.0
        if precision > 0.0 and recall > 0.0:
            total += ((1 + beta ** 2) * precision * recall) / (recall + beta ** 2 * precision)
    return total / len(predictions) * 100.0


def cider_d(predictions: list[str], references: list[str], sigma: float = 6.0) -> float:
    """CIDEr-D on the 0..100 reporting scale.

    tf-idf n-gram vectors (n = 1..4) with document frequency over
    reference sets, clipped cosine similarity and a gaussian length
    penalty. The 0..10 consensus scale is multiplied by ten to match the
    other metrics' percentage-like convention.
    """
    _check_pairs(predictions, references)
    if len(references) < 2:
        raise ValueError("cider_d needs a corpus of >= 2 pairs: idf is degenerate on one")
    ref_token_lists = [word_tokenize(r) for r in references]
    pred_token_lists = [word_tokenize(p) for p in predictions]
    document_frequency: dict[int, Counter] = {n: Counter() for n in range(1, 5)}
    for tokens in ref_token_lists:
        counts = _ngram_counts(tokens)
        for n in range(1, 5):
            for gram in counts[n]:
                document_frequency[n][gram] += 1  # once per reference set
    log_corpus = math.log(len(references))

    def tfidf(counts: Counter, n: int) -> tuple[dict, float]:
        vec = {gram: tf * (log_corpus - math.log(max(1.0, document_frequency[n][gram])))
               for gram, tf in counts.items()}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        return vec, norm

    score_total = 0.0
    for pred_tokens, ref_tokens in zip(pred_token_lists, ref_token_lists):
        pred_counts = _ngram_counts(pred_tokens)
        ref_counts = _ngram_counts(ref_tokens)
        delta = len(pred_tokens) - len(ref_tokens)
        penalty = math.exp(-(delta ** 2) / (2 * sigma ** 2))
        pair_score = 0.0
        for n in range(1, 5):
            pred_vec, pred_norm = tfidf(pred_counts[n], n)
            ref_vec, ref_norm = tfidf(ref_counts[n], n)
            if pred_norm == 0.0 or ref_norm == 0.0:
                continue
            overlap = sum(min(weight, ref_vec[gram]) * ref_vec[gram]
                          for gram, weight in pred_vec.items() if gram in ref_vec)
            pair_score += penalty * overlap / (pred_norm * ref_norm)
        score_total += pair_score / 4
    return score_total / len(predictions) * 10.0 * 10.0


def _surface_set(entities: EntitySet, config: EntityMatchConfig) -> set:
    if config.type_sensitive:
        return {(etype, normalize_surface(s))
                for etype, surfaces in entities.items() for s in surfaces}
    return {normalize_surface(s) for _, surfaces in entities.items() for s in surfaces}


def entity_f1(pred_entities: list[EntitySet], gt_entities: list[EntitySet],
              config: EntityMatchConfig = EntityMatchConfig()) -> float:
    """F1 between per-sample entity sets, x100.

    Default matching is exact on normalized surfaces, type-insensitive,
    micro-averaged over the corpus; macro averages per-sample F1.
    """
    if len(pred_entities) != len(gt_entities):
        raise ValueError(
            f"got {len(pred_entities)} predictions for {len(gt_entities)} references")
    if not pred_entities:
        raise ValueError("need at least one pair")
    per_sample = []
    tp = fp = fn = 0
    for pred, gt in zip(pred_entities, gt_entities):
        pred_set = _surface_set(pred, config)
        gt_set = _surface_set(gt, config)
        sample_tp = len(pred_set & gt_set)
        tp += sample_tp
        fp += len(pred_set - gt_set)
        fn += len(gt_set - pred_set)
        denom = 2 * sample_tp + len(pred_set - gt_set) + len(gt_set - pred_set)
        per_sample.append(2 * sample_tp / denom if denom else 1.0)
    if config.aggregation == "macro":
        return sum(per_sample) / len(per_sample) * 100.0
    denom = 2 * tp + fp + fn
    return (2 * tp / denom if denom else 1.0) * 100.0


class CaptionEntityExtractor(Protocol):
    def extract(self, caption: str) -> EntitySet: ...


@dataclass(frozen=True)
class GazetteerExtractor:
    """Deterministic extractor over a fixed (surface, type) inventory.

    A surface matches when it occurs word-bounded and case-folded in the
    caption. Ships with the synthetic corpus's entity inventory.
    """

    inventory: tuple[tuple[str, str], ...]

    @classmethod
    def from_file(cls, path: str | Path) -> "GazetteerExtractor":
        rows = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(tuple((row["surface"], row["type"]) for row in rows))

    def extract(self, caption: str) -> EntitySet:
        found: dict[str, list[str]] = {}
        for surface, etype in find_surfaces(caption, list(self.inventory)):
            found.setdefault(etype, []).append(surface)
        return EntitySet(found)


@dataclass(frozen=True)
class LLMExtractor:
    """Entity extraction through the LLM prompt used for ground truth."""

    llm: LLMClient

    def extract(self, caption: str) -> EntitySet:
        prompt = render_entity_extraction_prompt([caption])
        return parse_entity_set(self.llm.complete(prompt.text))


def extract_caption_entities(caption: str, extractor: CaptionEntityExtractor) -> EntitySet:
    if not caption:
        raise ValueError("caption must be nonempty")
    return extractor.extract(caption)


def hallucination_strict(pred_entities: EntitySet, gt_entities: EntitySet) -> bool:
    """True iff any predicted surface is absent from the ground truth.

    Deliberately unforgiving: one novel entity marks the caption.
    Type-insensitive on normalized surfaces.
    """
    config = EntityMatchConfig()
    return bool(_surface_set(pred_entities, config) - _surface_set(gt_entities, config))


def compute_report(predictions: list[str], references: list[str],
                   extractor: CaptionEntityExtractor,
                   config: EntityMatchConfig = EntityMatchConfig()) -> MetricReport:
    """All metrics over parallel prediction/reference caption lists."""
    _check_pairs(predictions, references)
    pred_entities = [extractor.extract(p) if p else EntitySet() for p in predictions]
    gt_entities = [extractor.extract(r) if r else EntitySet() for r in references]
    hallucinated = sum(hallucination_strict(p, g)
                       for p, g in zip(pred_entities, gt_entities))
    return MetricReport(
        bleu4=bleu4(predictions, references),
        rouge_l=rouge_l(predictions, references),
        cider=cider_d(predictions, references) if len(predictions) >= 2 else 0.0,
        entity_f1=entity_f1(pred_entities, gt_entities, config),
        hallucination_rate=hallucinated / len(predictions) * 100.0,
        n_samples=len(predictions),
    )


def save_report(report: MetricReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
