"""Experiment orchestration: pipeline runs, ablations, studies, reports.

A run is driven by an :class:`ExperimentSpec` (YAML or JSON file) and
writes every intermediate as a flat file under the spec's output
directory, so each stage is resumable and every table number can be
recomputed from the persisted predictions with the standalone eval CLI.

Stage order: ep-train, ep-decode, ke-extract, cm-train, generate, eval.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import yaml

from .captioner import (
    AblationConfig,
    CaptioningModel,
    CMConfig,
    VIDEO_ONLY,
    VIRecord,
    build_cm_vocab,
    generate,
    load_cm_checkpoint,
    load_vi_cache,
    save_cm_checkpoint,
    save_vi_cache,
    train_cm,
    vi_bundles_from_cache,
)
from .corpus import (
    Corpus,
    CorpusSplit,
    audit_time_split,
    load_caption_file,
    load_corpus,
    load_entity_file,
    save_caption_file,
    save_entity_file,
    split_by_date,
    split_from_annotations,
    split_random,
)
from .entities import EntitySet, serialize_entity_set
from .errors import (
    LeakageError,
    SpecValidationError,
    StageError,
    StrictModeError,
)
from .knowledge import (
    MockKB,
    NearestCaptionStub,
    extract_context,
    extract_context_single_stage,
    save_context_file,
    score_context,
)
from .metrics import GazetteerExtractor, MetricReport, compute_report, entity_f1
from .perceiver import (
    EntityPerceiver,
    EPConfig,
    build_ep_vocab,
    decode_entities_verbose,
    load_ep_checkpoint,
    save_ep_checkpoint,
    train_ep,
)
from .seq2seq import TrainConfig

MANIFEST_SCHEMA = "views-manifest/1"

STAGES = ("ep-train", "ep-decode", "ke-extract", "cm-train", "generate", "eval")

ABLATION_LABELS = {
    "full": "Ours",
    "no-entities": "w/o Entities",
    "no-knowledge": "w/o Knowledge",
    "no-vi": "w/o VI",
}
CANONICAL_ABLATIONS = ("full", "no-entities", "no-knowledge", "no-vi")

KE_VARIANTS = ("two_stage_structured", "two_stage_flat", "single_stage")
RECALL_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class SplitSpec:
    kind: str  # random | date | annotations
    dev_n: int = 0
    test_n: int = 0
    seed: int = 0
    cutoff: dt.date | None = None

    def __post_init__(self):
        if self.kind not in ("random", "date", "annotations"):
            raise SpecValidationError(f"unknown split kind {self.kind!r}")
        if self.kind == "date" and self.cutoff is None:
            raise SpecValidationError("date split needs a cutoff")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "random":
            out.update(dev_n=self.dev_n, test_n=self.test_n, seed=self.seed)
        if self.kind == "date":
            out["cutoff"] = self.cutoff.isoformat()
        return out


@dataclass(frozen=True)
class ExperimentSpec:
    corpus: Path
    captions: Path
    entities: Path
    kb: Path
    gazetteer: Path
    out_dir: Path
    split: SplitSpec
    ablations: tuple[AblationConfig, ...] = (AblationConfig(),)
    ep_model: dict = field(default_factory=dict)
    cm_model: dict = field(default_factory=dict)
    ep_train: TrainConfig = field(default_factory=TrainConfig.desk_profile)
    cm_train: TrainConfig = field(default_factory=TrainConfig.desk_profile)
    structured: bool = True
    vi_mode: str = "pipeline"  # pipeline | oracle
    eval_split: str = "dev"
    seed: int = 0
    beam: int = 1
    single_stage: bool = True  # include the single-stage stub in KE studies

    def validate(self) -> None:
        """Fail fast: every referenced artifact must resolve before work starts."""
        for label in ("corpus", "captions", "entities", "kb", "gazetteer"):
            path = getattr(self, label)
            if not Path(path).is_file():
                raise SpecValidationError(f"{label} file not found: {path}")
        if self.vi_mode not in ("pipeline", "oracle"):
            raise SpecValidationError(f"unknown vi_mode {self.vi_mode!r}")
        if self.eval_split not in ("dev", "test"):
            raise SpecValidationError(f"unknown eval_split {self.eval_split!r}")
        if not self.ablations:
            raise SpecValidationError("at least one ablation row is required")
        names = [a.name for a in self.ablations]
        if len(set(names)) != len(names):
            raise SpecValidationError(f"duplicate ablation rows: {names}")
        if self.beam < 1:
            raise SpecValidationError("beam must be >= 1")
        if self.split.kind == "date" and self.eval_split != "test":
            raise SpecValidationError("date splits put evaluation samples in "
                                      "'test'; set eval_split: test")

    def to_config_dict(self) -> dict:
        """Canonical dict of everything that affects results (not out_dir)."""
        return {
            "corpus": str(self.corpus),
            "captions": str(self.captions),
            "entities": str(self.entities),
            "kb": str(self.kb),
            "gazetteer": str(self.gazetteer),
            "split": self.split.to_dict(),
            "ablations": [a.name for a in self.ablations],
            "use_asr": any(a.use_asr for a in self.ablations),
            "ep_model": self.ep_model,
            "cm_model": self.cm_model,
            "ep_train": dataclasses.asdict(self.ep_train),
            "cm_train": dataclasses.asdict(self.cm_train),
            "structured": self.structured,
            "vi_mode": self.vi_mode,
            "eval_split": self.eval_split,
            "seed": self.seed,
            "beam": self.beam,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_config_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_SPEC_KEYS = {"corpus", "captions", "entities", "kb", "gazetteer", "out_dir",
              "split", "ablations", "use_asr", "ep", "cm", "structured",
              "vi_mode", "eval_split", "seed", "beam", "single_stage"}


def spec_from_dict(data: dict, base_dir: str | Path = ".") -> ExperimentSpec:
    base = Path(base_dir)
    unknown = set(data) - _SPEC_KEYS
    if unknown:
        raise SpecValidationError(f"unknown spec keys: {sorted(unknown)}")
    missing = {"corpus", "captions", "entities", "kb", "gazetteer",
               "out_dir", "split"} - set(data)
    if missing:
        raise SpecValidationError(f"missing spec keys: {sorted(missing)}")

    def path_of(key: str) -> Path:
        return base / str(data[key])

    split_data = dict(data["split"])
    kind = split_data.pop("kind", None)
    if kind is None:
        raise SpecValidationError("split needs a 'kind'")
    cutoff = split_data.pop("cutoff", None)
    if isinstance(cutoff, str):
        cutoff = dt.date.fromisoformat(cutoff)
    try:
        split = SplitSpec(kind=kind, cutoff=cutoff, **split_data)
    except TypeError as exc:
        raise SpecValidationError(f"bad split spec: {exc}") from None

    seed = int(data.get("seed", 0))
    use_asr = bool(data.get("use_asr", False))
    try:
        ablations = tuple(AblationConfig.from_name(name, use_asr=use_asr)
                          for name in data.get("ablations", ["full"]))
    except ValueError as exc:
        raise SpecValidationError(str(exc)) from None

    def train_config(section: dict) -> TrainConfig:
        overrides = dict(section.get("train", {}))
        overrides.setdefault("seed", seed)
        try:
            return TrainConfig.desk_profile(**overrides)
        except TypeError as exc:
            raise SpecValidationError(f"bad train config: {exc}") from None

    ep_section = data.get("ep", {})
    cm_section = data.get("cm", {})
    return ExperimentSpec(
        corpus=path_of("corpus"),
        captions=path_of("captions"),
        entities=path_of("entities"),
        kb=path_of("kb"),
        gazetteer=path_of("gazetteer"),
        out_dir=base / str(data["out_dir"]),
        split=split,
        ablations=ablations,
        ep_model=dict(ep_section.get("model", {})),
        cm_model=dict(cm_section.get("model", {})),
        ep_train=train_config(ep_section),
        cm_train=train_config(cm_section),
        structured=bool(data.get("structured", True)),
        vi_mode=str(data.get("vi_mode", "pipeline")),
        eval_split=str(data.get("eval_split", "dev")),
        seed=seed,
        beam=int(data.get("beam", 1)),
        single_stage=bool(data.get("single_stage", True)),
    )


def load_spec(path: str | Path) -> ExperimentSpec:
    """Read an experiment spec file; YAML is a superset of JSON."""
    path = Path(path)
    if not path.is_file():
        raise SpecValidationError(f"spec file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise SpecValidationError(f"unparseable spec file: {exc}") from None
    if not isinstance(data, dict):
        raise SpecValidationError("spec file must hold a mapping")
    return spec_from_dict(data, base_dir=path.parent)


def environment_fingerprint(spec: ExperimentSpec) -> dict:
    return {
        "seed": spec.seed,
        "spec": spec.fingerprint(),
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
    }


@dataclass
class ExperimentReport:
    """Everything a run produced, cell-per-(ablation, split)."""

    cells: dict[str, MetricReport] = field(default_factory=dict)
    loss_curves: dict[str, list[float]] = field(default_factory=dict)
    fingerprint: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    stages: list[dict] = field(default_factory=list)
    artifacts: dict[str, dict[str, str]] = field(default_factory=dict)
    failed_stage: str | None = None

    def cell(self, ablation_name: str, split: str) -> MetricReport:
        return self.cells[f"{ablation_name}/{split}"]

    def to_dict(self) -> dict:
        for key in self.cells:
            trace = self.artifacts.get(key, {})
            if "checkpoint" not in trace or "predictions" not in trace:
                raise ValueError(f"cell {key} is not traceable to a checkpoint "
                                 "and a predictions file")
        return {
            "cells": {k: v.to_dict() for k, v in self.cells.items()},
            "loss_curves": self.loss_curves,
            "fingerprint": self.fingerprint,
            "wall_clock_seconds": round(self.wall_clock_seconds, 3),
            "stages": self.stages,
            "artifacts": self.artifacts,
            "failed_stage": self.failed_stage,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")


def _check_manifest(spec: ExperimentSpec) -> None:
    """Refuse to mix artifacts produced under a different spec."""
    manifest_path = Path(spec.out_dir) / "manifest.json"
    fp = spec.fingerprint()
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("spec_fingerprint") != fp:
            raise SpecValidationError(
                f"output directory {spec.out_dir} holds artifacts from a "
                "different spec; pick a fresh directory or delete it")
        return
    manifest_path.write_text(json.dumps(
        {"schema": MANIFEST_SCHEMA, "spec_fingerprint": fp}, indent=2) + "\n",
        encoding="utf-8")


@dataclass
class _Workspace:
    spec: ExperimentSpec
    corpus: Corpus
    kb: MockKB
    extractor: GazetteerExtractor
    split: CorpusSplit
    train_ids: list[str]
    eval_ids: list[str]


def _load_inputs(spec: ExperimentSpec) -> _Workspace:
    corpus = load_corpus(spec.corpus)
    corpus.captions = load_caption_file(spec.captions)
    corpus.entities = load_entity_file(spec.entities)
    kb = MockKB.from_file(spec.kb, default_passage="no relevant news article was found .")
    extractor = GazetteerExtractor.from_file(spec.gazetteer)
    if spec.split.kind == "random":
        split = split_random(corpus, spec.split.dev_n, spec.split.test_n,
                             spec.split.seed)
    elif spec.split.kind == "date":
        split = split_by_date(corpus, spec.split.cutoff)
        offenders = audit_time_split(corpus, split)
        if offenders:
            raise LeakageError(
                f"time split leaks {len(offenders)} post-cutoff samples into "
                f"training: {offenders[:5]}")
    else:
        split = split_from_annotations(corpus)
    train_ids = sorted(split.train_ids)
    eval_ids = sorted(split.dev_ids if spec.eval_split == "dev" else split.test_ids)
    if not eval_ids:
        raise SpecValidationError(f"split has no {spec.eval_split} samples")
    missing_caps = [i for i in train_ids + eval_ids if i not in corpus.captions]
    if missing_caps:
        raise SpecValidationError(
            f"samples without captions: {missing_caps[:5]}")
    missing_ents = [i for i in train_ids if i not in corpus.entities]
    if missing_ents:
        raise SpecValidationError(
            f"train samples without ground-truth entities: {missing_ents[:5]}")
    return _Workspace(spec=spec, corpus=corpus, kb=kb, extractor=extractor,
                      split=split, train_ids=train_ids, eval_ids=eval_ids)


def _timed(stages: list[dict], name: str, fn: Callable):
    start = time.perf_counter()
    value, status = fn()
    stages.append({"name": name, "status": status,
                   "seconds": round(time.perf_counter() - start, 3)})
    return value


def _stage_ep_train(ws: _Workspace):
    spec = ws.spec
    ckpt = Path(spec.out_dir) / "ep.pt"
    curve_path = Path(spec.out_dir) / "ep_loss.json"
    if spec.vi_mode == "oracle":
        return (None, []), "skipped"
    if ckpt.exists():
        curve = json.loads(curve_path.read_text(encoding="utf-8"))
        return (load_ep_checkpoint(ckpt), curve), "cached"
    train_sub = ws.corpus.subset(ws.train_ids)
    vocab = build_ep_vocab(train_sub)
    model = EntityPerceiver(
        EPConfig(frame_dim=ws.corpus.feature_dim, **spec.ep_model), vocab)
    result = train_ep(model, ws.corpus, spec.ep_train, train_ids=ws.train_ids)
    save_ep_checkpoint(ckpt, model)
    curve_path.write_text(json.dumps(result.loss_curve) + "\n", encoding="utf-8")
    return (model, result.loss_curve), "done"


def _stage_ep_decode(ws: _Workspace, ep: EntityPerceiver | None):
    spec = ws.spec
    out = Path(spec.out_dir) / "entities_pred.jsonl"
    if spec.vi_mode == "oracle":
        # oracle VI reads ground truth straight from the corpus
        return dict(ws.corpus.entities), "skipped"
    if out.exists():
        return load_entity_file(out), "cached"
    decoded: dict[str, EntitySet] = {}
    flags: dict[str, bool] = {}
    for sample_id in ws.corpus.ids:
        result = decode_entities_verbose(ep, ws.corpus[sample_id].frame_features,
                                         beam=spec.beam)
        decoded[sample_id] = result.entities
        flags[sample_id] = result.failed
    save_entity_file(decoded, out, flags=flags)
    return decoded, "done"


def _stage_ke_extract(ws: _Workspace, entity_source: dict[str, EntitySet]):
    spec = ws.spec
    vi_path = Path(spec.out_dir) / "vi.jsonl"
    ctx_path = Path(spec.out_dir) / "context.jsonl"
    if vi_path.exists() and ctx_path.exists():
        return load_vi_cache(vi_path), "cached"
    passages = {}
    records: dict[str, VIRecord] = {}
    for sample_id in ws.corpus.ids:
        entities = entity_source.get(sample_id, EntitySet())
        passage = extract_context(entities, ws.kb, structured=spec.structured)
        passages[sample_id] = passage
        records[sample_id] = VIRecord(
            sample_id=sample_id,
            entity_string=serialize_entity_set(entities),
            context_text=passage.text,
            asr_text=ws.corpus[sample_id].asr_text,
        )
    save_context_file(passages, ctx_path)
    save_vi_cache(records, vi_path)
    return records, "done"


def _stage_cm_train(ws: _Workspace, vi_records: dict[str, VIRecord]):
    spec = ws.spec
    train_sub = ws.corpus.subset(ws.train_ids)
    kb_passages = [passage for _, passage in ws.kb.entries]
    vocab = build_cm_vocab(train_sub, extra_texts=kb_passages)
    models: dict[str, CaptioningModel] = {}
    curves: dict[str, list[float]] = {}
    checkpoints: dict[str, Path] = {}
    all_cached = True
    for ablation in spec.ablations:
        ckpt = Path(spec.out_dir) / f"cm_{ablation.name}.pt"
        curve_path = Path(spec.out_dir) / f"cm_{ablation.name}_loss.json"
        checkpoints[ablation.name] = ckpt
        if ckpt.exists():
            models[ablation.name], _ = load_cm_checkpoint(ckpt)
            curves[ablation.name] = json.loads(curve_path.read_text(encoding="utf-8"))
            continue
        all_cached = False
        model = CaptioningModel(
            CMConfig(frame_dim=ws.corpus.feature_dim, **spec.cm_model), vocab)
        bundles = vi_bundles_from_cache(vi_records, vocab, ablation)
        result = train_cm(model, ws.corpus, bundles, spec.cm_train, ablation,
                          train_ids=ws.train_ids)
        save_cm_checkpoint(ckpt, model, ablation)
        curve_path.write_text(json.dumps(result.loss_curve) + "\n", encoding="utf-8")
        models[ablation.name] = model
        curves[ablation.name] = result.loss_curve
    return (models, curves, checkpoints, vocab), "cached" if all_cached else "done"


def _stage_generate(ws: _Workspace, models, vi_records, vocab):
    spec = ws.spec
    refs_path = Path(spec.out_dir) / f"refs_{spec.eval_split}.jsonl"
    if not refs_path.exists():
        save_caption_file({i: ws.corpus.captions[i] for i in ws.eval_ids},
                          refs_path)
    preds_paths: dict[str, Path] = {}
    predictions: dict[str, dict[str, str]] = {}
    all_cached = True
    for ablation in spec.ablations:
        out = Path(spec.out_dir) / f"preds_{ablation.name}.jsonl"
        preds_paths[ablation.name] = out
        if out.exists():
            predictions[ablation.name] = {
                i: rec.text for i, rec in load_caption_file(out).items()}
            continue
        all_cached = False
        bundles = vi_bundles_from_cache(vi_records, vocab, ablation)
        records = {}
        for sample_id in ws.eval_ids:
            bundle = bundles[sample_id]
            records[sample_id] = generate(
                models[ablation.name], ws.corpus[sample_id].frame_features,
                bundle, beam=spec.beam, sample_id=sample_id)
        save_caption_file(records, out)
        predictions[ablation.name] = {i: r.text for i, r in records.items()}
    return (predictions, preds_paths, refs_path), "cached" if all_cached else "done"


def _stage_eval(ws: _Workspace, predictions: dict[str, dict[str, str]]):
    spec = ws.spec
    cells: dict[str, MetricReport] = {}
    references = [ws.corpus.captions[i].text for i in ws.eval_ids]
    for ablation in spec.ablations:
        preds = [predictions[ablation.name].get(i, "") for i in ws.eval_ids]
        cells[f"{ablation.name}/{spec.eval_split}"] = compute_report(
            preds, references, ws.extractor)
    return cells, "done"


def run_pipeline(spec: ExperimentSpec) -> ExperimentReport:
    """End-to-end staged run; intermediates persist, finished stages are reused."""
    spec.validate()
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _check_manifest(spec)
    report = ExperimentReport(fingerprint=environment_fingerprint(spec))
    start = time.perf_counter()
    current_stage = "setup"
    try:
        ws = _load_inputs(spec)
        current_stage = "ep-train"
        ep, ep_curve = _timed(report.stages, "ep-train",
                              lambda: _stage_ep_train(ws))
        if ep_curve:
            report.loss_curves["ep"] = ep_curve
        current_stage = "ep-decode"
        decoded = _timed(report.stages, "ep-decode",
                         lambda: _stage_ep_decode(ws, ep))
        current_stage = "ke-extract"
        vi_records = _timed(report.stages, "ke-extract",
                            lambda: _stage_ke_extract(ws, decoded))
        current_stage = "cm-train"
        models, cm_curves, checkpoints, vocab = _timed(
            report.stages, "cm-train", lambda: _stage_cm_train(ws, vi_records))
        for name, curve in cm_curves.items():
            report.loss_curves[f"cm/{name}"] = curve
        current_stage = "generate"
        predictions, preds_paths, refs_path = _timed(
            report.stages, "generate",
            lambda: _stage_generate(ws, models, vi_records, vocab))
        current_stage = "eval"
        cells = _timed(report.stages, "eval",
                       lambda: _stage_eval(ws, predictions))
        report.cells = cells
        for ablation in spec.ablations:
            key = f"{ablation.name}/{spec.eval_split}"
            report.artifacts[key] = {
                "checkpoint": checkpoints[ablation.name].name,
                "predictions": preds_paths[ablation.name].name,
                "references": refs_path.name,
            }
    except Exception as exc:
        report.failed_stage = current_stage
        report.wall_clock_seconds = time.perf_counter() - start
        report.save(out_dir / "report.json")
        if isinstance(exc, (SpecValidationError, LeakageError)):
            raise
        raise StageError(current_stage, str(exc)) from exc
    report.wall_clock_seconds = time.perf_counter() - start
    report.save(out_dir / "report.json")
    return report


def _format_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(cell)) for cell in column)
              for column in zip(headers, *rows)]
    def fmt(cells):
        return "| " + " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)) + " |"
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines += [fmt(row) for row in rows]
    return "\n".join(lines) + "\n"


def _metric_row(label: str, report: MetricReport) -> list[str]:
    return [label,
            f"{report.bleu4:.2f}", f"{report.rouge_l:.2f}",
            f"{report.cider:.2f}", f"{report.entity_f1:.2f}",
            f"{report.hallucination_rate:.2f}"]


@dataclass
class AblationTable:
    rows: list[dict]
    ordering_ok: bool
    violations: list[str]
    text: str
    report: ExperimentReport


def run_ablation_table(spec: ExperimentSpec, strict: bool = False) -> AblationTable:
    """The four-row design-choice table, with the ordering check attached.

    Ordering property on CIDEr: the full row must beat both single-channel
    rows, and each single-channel row must beat the no-VI row. Violations
    are flagged in the table; under ``strict`` they raise.
    """
    names = {a.name for a in spec.ablations}
    missing = [n for n in CANONICAL_ABLATIONS if n not in names]
    if missing:
        raise SpecValidationError(
            f"ablation table needs rows {CANONICAL_ABLATIONS}; missing {missing}")
    report = run_pipeline(spec)
    split = spec.eval_split
    cider = {name: report.cell(name, split).cider for name in CANONICAL_ABLATIONS}
    violations = []
    for partial in ("no-entities", "no-knowledge"):
        if not cider["full"] > cider[partial]:
            violations.append(
                f"CIDEr({ABLATION_LABELS[partial]}) >= CIDEr(Ours): "
                f"{cider[partial]:.2f} vs {cider['full']:.2f}")
        if not cider[partial] > cider["no-vi"]:
            violations.append(
                f"CIDEr(w/o VI) >= CIDEr({ABLATION_LABELS[partial]}): "
                f"{cider['no-vi']:.2f} vs {cider[partial]:.2f}")
    ordering_ok = not violations
    rows = []
    table_rows = []
    for name in CANONICAL_ABLATIONS:
        cell = report.cell(name, split)
        rows.append({"label": ABLATION_LABELS[name], "ablation": name,
                     **cell.to_dict()})
        table_rows.append(_metric_row(ABLATION_LABELS[name], cell))
    text = _format_table(
        ["Model", "BLEU-4", "ROUGE-L", "CIDEr", "Ent F1", "Halluc."],
        table_rows)
    if not ordering_ok:
        text += "ordering check FAILED: " + "; ".join(violations) + "\n"
    out_dir = Path(spec.out_dir)
    (out_dir / "ablation_table.txt").write_text(text, encoding="utf-8")
    (out_dir / "ablation.json").write_text(json.dumps({
        "rows": rows, "ordering_ok": ordering_ok, "violations": violations,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if strict and not ordering_ok:
        raise StrictModeError("ablation ordering violated: " + "; ".join(violations))
    return AblationTable(rows=rows, ordering_ok=ordering_ok,
                         violations=violations, text=text, report=report)


@dataclass
class TimeSplitTable:
    rows: list[dict]
    leakage_audit: list[str]
    text: str
    report: ExperimentReport


def run_time_generalization(spec: ExperimentSpec) -> TimeSplitTable:
    """Train before the cutoff, evaluate after it: video-only vs +VI.

    The leakage audit runs before any training and a dirty split is a
    hard failure.
    """
    if spec.split.kind != "date":
        raise SpecValidationError("time generalization needs a date split")
    spec = replace(spec,
                   ablations=(AblationConfig(), VIDEO_ONLY),
                   eval_split="test")
    report = run_pipeline(spec)
    labels = {"full": "+ VI", "no-vi": "video only"}
    rows = []
    table_rows = []
    for name in ("no-vi", "full"):
        cell = report.cell(name, "test")
        rows.append({"label": labels[name], "ablation": name, **cell.to_dict()})
        table_rows.append(_metric_row(labels[name], cell))
    text = _format_table(
        ["Model", "BLEU-4", "ROUGE-L", "CIDEr", "Ent F1", "Halluc."],
        table_rows)
    out_dir = Path(spec.out_dir)
    (out_dir / "time_table.txt").write_text(text, encoding="utf-8")
    (out_dir / "time_generalization.json").write_text(json.dumps({
        "rows": rows, "leakage_audit": [],
        "cutoff": spec.split.cutoff.isoformat(),
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return TimeSplitTable(rows=rows, leakage_audit=[], text=text, report=report)


def _entity_subset(entities: EntitySet, fraction: float) -> EntitySet:
    """First ``round(fraction * n)`` typed entities, insertion order."""
    pairs = [(etype, surface)
             for etype, surfaces in entities.items() for surface in surfaces]
    keep = pairs[:round(fraction * len(pairs))]
    grouped: dict[str, list[str]] = {}
    for etype, surface in keep:
        grouped.setdefault(etype, []).append(surface)
    return EntitySet(grouped)


@dataclass
class KEStudyReport:
    cells: dict[str, dict]
    recall_curve: list[dict]
    text: str

    def entity_f1(self, variant: str) -> float:
        return self.cells[variant]["entity_f1"]

    def context_score(self, variant: str) -> float:
        return self.cells[variant]["context_score"]


def run_ke_studies(spec: ExperimentSpec,
                   fractions: tuple[float, ...] = RECALL_FRACTIONS) -> KEStudyReport:
    """Structured vs flat vs single-stage retrieval, plus a recall curve.

    Passage quality is measured two ways per evaluation sample: Entity-F1
    of the passage's entities against the reference caption's, and the
    greedy-matching context score against the reference caption. The
    recall curve feeds truncated ground-truth entity sets to the KB and
    reports the raw (recall fraction, context score) pairs; any curve
    fitting is left to the caller.
    """
    spec.validate()
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _check_manifest(spec)
    ws = _load_inputs(spec)
    stages: list[dict] = []
    ep, _ = _timed(stages, "ep-train", lambda: _stage_ep_train(ws))
    decoded = _timed(stages, "ep-decode", lambda: _stage_ep_decode(ws, ep))
    stub = (NearestCaptionStub(ws.corpus, train_ids=ws.train_ids)
            if spec.single_stage else None)

    def passage_for(variant: str, sample_id: str):
        if variant == "two_stage_structured":
            return extract_context(decoded[sample_id], ws.kb, structured=True)
        if variant == "two_stage_flat":
            return extract_context(decoded[sample_id], ws.kb, structured=False)
        return extract_context_single_stage(
            ws.corpus[sample_id].frame_features, stub, kb=ws.kb)

    variants = [v for v in KE_VARIANTS if spec.single_stage or v != "single_stage"]
    cells: dict[str, dict] = {}
    gt_sets = {i: ws.extractor.extract(ws.corpus.captions[i].text)
               for i in ws.eval_ids}
    for variant in variants:
        passage_sets = []
        scores = []
        hashes = {}
        for sample_id in ws.eval_ids:
            passage = passage_for(variant, sample_id)
            hashes[sample_id] = passage.prompt_hash
            passage_sets.append(ws.extractor.extract(passage.text))
            scores.append(score_context(
                passage, ws.corpus.captions[sample_id].text))
        cells[variant] = {
            "entity_f1": entity_f1(passage_sets,
                                   [gt_sets[i] for i in ws.eval_ids]),
            "context_score": float(np.mean(scores)),
            "prompt_hashes": hashes,
        }

    recall_curve = []
    for fraction in fractions:
        scores = []
        for sample_id in ws.eval_ids:
            subset = _entity_subset(ws.corpus.entities[sample_id], fraction)
            passage = extract_context(subset, ws.kb, structured=True)
            scores.append(score_context(
                passage, ws.corpus.captions[sample_id].text))
        recall_curve.append({"fraction": fraction,
                             "context_score": float(np.mean(scores))})

    table_rows = [[variant, f"{cells[variant]['entity_f1']:.2f}",
                   f"{cells[variant]['context_score']:.4f}"]
                  for variant in variants]
    text = _format_table(["Variant", "Ent F1", "Context score"], table_rows)
    (out_dir / "ke_table.txt").write_text(text, encoding="utf-8")
    (out_dir / "ke_studies.json").write_text(json.dumps({
        "cells": cells, "recall_curve": recall_curve, "stages": stages,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return KEStudyReport(cells=cells, recall_curve=recall_curve, text=text)


def run_seed_sweep(spec: ExperimentSpec,
                   seeds: tuple[int, ...] = (0, 1, 2)) -> dict[int, dict[str, float]]:
    """Re-run the pipeline per seed; returns CIDEr per (seed, ablation)."""
    out: dict[int, dict[str, float]] = {}
    for seed in seeds:
        sub = replace(
            spec,
            seed=seed,
            out_dir=Path(spec.out_dir) / f"seed_{seed}",
            ep_train=replace(spec.ep_train, seed=seed),
            cm_train=replace(spec.cm_train, seed=seed),
        )
        report = run_pipeline(sub)
        out[seed] = {a.name: report.cell(a.name, sub.eval_split).cider
                     for a in sub.ablations}
    return out
