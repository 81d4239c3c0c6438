"""Stage 3 - Captioning Model: frames plus Video Information to caption.

The encoder consumes [frame tokens || entity tokens || context tokens ||
ASR tokens] with segment embeddings telling the channels apart; every
ablation is a switch over which channels are assembled. An empty bundle
reduces the encoder input to exactly the frame tokens, so the video-only
baseline shares weights and code with the full model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import torch

from .corpus import CaptionOrigin, CaptionRecord, Corpus, QCStatus
from .entities import EntitySet, serialize_entity_set
from .errors import DataError
from .knowledge import ContextPassage
from .seq2seq import (
    FrameSeq2Seq,
    TrainConfig,
    TrainResult,
    decode_ids,
    load_checkpoint_payload,
    pad_batch,
    pad_frames,
    prepare_target,
    run_training,
    save_checkpoint,
    teacher_forced_loss,
)
from .tokenizer import PAD_ID, Vocabulary

VI_TOKEN_CAP = 300

SEGMENT_FRAMES = 0
SEGMENT_ENTITIES = 1
SEGMENT_CONTEXT = 2
SEGMENT_ASR = 3


@dataclass(frozen=True)
class AblationConfig:
    use_entities: bool = True
    use_context: bool = True
    use_asr: bool = False

    @property
    def name(self) -> str:
        if not (self.use_entities or self.use_context or self.use_asr):
            return "no-vi"
        if not self.use_entities and self.use_context:
            return "no-entities"
        if self.use_entities and not self.use_context:
            return "no-knowledge"
        return "full"

    def wants_vi(self) -> bool:
        return self.use_entities or self.use_context or self.use_asr

    @classmethod
    def from_name(cls, name: str, use_asr: bool = False) -> "AblationConfig":
        table = {
            "full": cls(True, True, use_asr),
            "no-entities": cls(False, True, use_asr),
            "no-knowledge": cls(True, False, use_asr),
            "no-vi": cls(False, False, False),
        }
        if name not in table:
            raise ValueError(f"unknown ablation {name!r}, expected one of {sorted(table)}")
        return table[name]


VIDEO_ONLY = AblationConfig(False, False, False)


@dataclass(frozen=True)
class VIBundle:
    entity_tokens: tuple[int, ...] = ()
    context_tokens: tuple[int, ...] = ()
    asr_tokens: tuple[int, ...] = ()

    def __post_init__(self):
        if self.total_tokens > VI_TOKEN_CAP:
            raise ValueError(f"bundle of {self.total_tokens} tokens exceeds cap {VI_TOKEN_CAP}")

    @property
    def total_tokens(self) -> int:
        return len(self.entity_tokens) + len(self.context_tokens) + len(self.asr_tokens)

    def is_empty(self) -> bool:
        return self.total_tokens == 0

    def ids_and_segments(self) -> tuple[list[int], list[int]]:
        ids = list(self.entity_tokens) + list(self.context_tokens) + list(self.asr_tokens)
        segments = ([SEGMENT_ENTITIES] * len(self.entity_tokens)
                    + [SEGMENT_CONTEXT] * len(self.context_tokens)
                    + [SEGMENT_ASR] * len(self.asr_tokens))
        return ids, segments


EMPTY_BUNDLE = VIBundle()


def assemble_vi_bundle(entities: EntitySet | None, context: ContextPassage | str | None,
                       asr_text: str | None, vocab: Vocabulary,
                       ablation: AblationConfig,
                       max_tokens: int = VI_TOKEN_CAP) -> VIBundle:
    """Tokenize the enabled channels and truncate to the cap.

    Truncation priority: entity tokens are kept whole first, then the
    context is tail-truncated, then ASR. Entities are the scarcer,
    higher-value signal.
    """
    entity_tokens: list[int] = []
    context_tokens: list[int] = []
    asr_tokens: list[int] = []
    if ablation.use_entities and entities is not None and not entities.is_empty():
        entity_tokens = vocab.encode(serialize_entity_set(entities))
    if ablation.use_context and context is not None:
        text = context.text if isinstance(context, ContextPassage) else context
        context_tokens = vocab.encode(text)
    if ablation.use_asr and asr_text:
        asr_tokens = vocab.encode(asr_text)
    entity_tokens = entity_tokens[:max_tokens]
    budget = max_tokens - len(entity_tokens)
    context_tokens = context_tokens[:budget]
    budget -= len(context_tokens)
    asr_tokens = asr_tokens[:budget]
    return VIBundle(tuple(entity_tokens), tuple(context_tokens), tuple(asr_tokens))


@dataclass(frozen=True)
class CMConfig:
    frame_dim: int
    width: int = 64
    heads: int = 2
    encoder_layers: int = 2
    decoder_layers: int = 2
    ffn_dim: int = 128
    max_frames: int = 19
    max_caption_tokens: int = 100
    max_vi_tokens: int = VI_TOKEN_CAP


class CaptioningModel(FrameSeq2Seq):
    def __init__(self, config: CMConfig, vocab: Vocabulary):
        super().__init__(
            frame_dim=config.frame_dim, width=config.width, heads=config.heads,
            encoder_layers=config.encoder_layers, decoder_layers=config.decoder_layers,
            ffn_dim=config.ffn_dim, max_frames=config.max_frames,
            max_target_tokens=config.max_caption_tokens, vocab=vocab,
            n_segments=4)
        self.config = config
        self.vi_positions = torch.nn.Embedding(config.max_vi_tokens, config.width)

    def encoder_inputs(self, frames: torch.Tensor, vi_ids: torch.Tensor | None = None,
                       vi_segments: torch.Tensor | None = None):
        tokens, pad_mask = self.frame_tokens(frames)
        if vi_ids is None or vi_ids.shape[1] == 0:
            return tokens, pad_mask
        positions = torch.arange(vi_ids.shape[1], device=vi_ids.device)
        vi_tokens = (self.token_embedding(vi_ids)
                     + self.vi_positions(positions)
                     + self.segment_embedding(vi_segments))
        inputs = torch.cat([tokens, vi_tokens], dim=1)
        full_mask = torch.cat([pad_mask, vi_ids == PAD_ID], dim=1)
        return inputs, full_mask


def _bundle_tensors(bundles: list[VIBundle]) -> dict[str, torch.Tensor]:
    """Pad a batch of bundles into id/segment tensors (empty allowed)."""
    lengths = [b.total_tokens for b in bundles]
    max_len = max(lengths) if lengths else 0
    if max_len == 0:
        empty = torch.zeros((len(bundles), 0), dtype=torch.long)
        return {"vi_ids": empty, "vi_segments": empty.clone()}
    ids = torch.full((len(bundles), max_len), PAD_ID, dtype=torch.long)
    segments = torch.zeros((len(bundles), max_len), dtype=torch.long)
    for i, bundle in enumerate(bundles):
        row_ids, row_segments = bundle.ids_and_segments()
        ids[i, :len(row_ids)] = torch.tensor(row_ids, dtype=torch.long)
        segments[i, :len(row_segments)] = torch.tensor(row_segments, dtype=torch.long)
    return {"vi_ids": ids, "vi_segments": segments}


def cm_loss(model: CaptioningModel, frames, bundle: VIBundle,
            target_ids: list[int]) -> torch.Tensor:
    """Mean token cross-entropy for one sample, teacher forced."""
    if not target_ids:
        raise ValueError("target caption must be nonempty")
    if len(target_ids) > model.max_target_tokens + 1:
        raise ValueError(
            f"caption of {len(target_ids)} tokens exceeds the "
            f"{model.max_target_tokens}-token cap")
    # follow the model's dtype so double-precision gradient checks work
    dtype = next(model.parameters()).dtype
    frames_t = torch.as_tensor(np.asarray(frames), dtype=dtype).unsqueeze(0)
    targets_t = torch.tensor([target_ids], dtype=torch.long)
    return teacher_forced_loss(model, frames_t, targets_t,
                               **_bundle_tensors([bundle]))


VISource = Mapping[str, VIBundle] | Callable[[str], VIBundle]


def _bundle_for(vi_source: VISource, sample_id: str,
                ablation: AblationConfig) -> VIBundle:
    if not ablation.wants_vi():
        return EMPTY_BUNDLE
    if callable(vi_source):
        bundle = vi_source(sample_id)
    else:
        bundle = vi_source.get(sample_id) if vi_source is not None else None
    if bundle is None:
        raise DataError(f"sample {sample_id} has no VI bundle but ablation "
                        f"{ablation.name!r} requires one")
    return bundle


def train_cm(model: CaptioningModel, corpus: Corpus, vi_source: VISource | None,
             config: TrainConfig, ablation: AblationConfig,
             train_ids=None) -> TrainResult:
    """Teacher-forced caption training under an ablation switch."""
    ids = list(train_ids) if train_ids is not None else corpus.ids
    if not ids:
        raise ValueError("training set is empty")
    examples = []
    for sample_id in ids:
        if sample_id not in corpus.captions:
            raise DataError(f"sample {sample_id} has no ground-truth caption")
        sample = corpus[sample_id]
        target = prepare_target(model.vocab.encode(corpus.captions[sample_id].text),
                                model.max_target_tokens)
        bundle = _bundle_for(vi_source, sample_id, ablation)
        examples.append((sample.frame_features, bundle, target))

    def collate(batch):
        kwargs = {
            "frames": pad_frames([b[0] for b in batch], config.frames),
            "target_ids": pad_batch([b[2] for b in batch]),
        }
        kwargs.update(_bundle_tensors([b[1] for b in batch]))
        return kwargs

    return run_training(model, examples, collate, config)


def generate(model: CaptioningModel, frames, bundle: VIBundle = EMPTY_BUNDLE,
             beam: int = 1, sample_id: str = "") -> CaptionRecord:
    """Decode a caption (greedy by default; beam=1 is exactly greedy).

    An empty decode yields an empty caption flagged for review rather
    than an error.
    """
    frames_t = torch.as_tensor(np.asarray(frames), dtype=torch.float32).unsqueeze(0)
    ids = decode_ids(model, frames_t, beam=beam, **_bundle_tensors([bundle]))
    text = model.vocab.decode(ids)
    status = QCStatus.UNREVIEWED if text.strip() else QCStatus.FLAGGED
    return CaptionRecord.from_text(sample_id, text, CaptionOrigin.MODEL_PREDICTION, status)


def build_cm_vocab(corpus: Corpus, extra_texts=()) -> Vocabulary:
    """Vocabulary over captions, entity strings, and any VI-side texts."""
    texts = [c.text for c in corpus.captions.values()]
    texts += [serialize_entity_set(es) for es in corpus.entities.values()]
    texts += list(extra_texts)
    if not texts:
        raise ValueError("no texts to build a vocabulary from")
    return Vocabulary.from_texts(texts)


@dataclass(frozen=True)
class VIRecord:
    """One VI cache row; tokenization happens at assembly time."""

    sample_id: str
    entity_string: str
    context_text: str
    asr_text: str | None = None


def save_vi_cache(records: dict[str, VIRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for sample_id in sorted(records):
            r = records[sample_id]
            fh.write(json.dumps({
                "sample_id": r.sample_id,
                "entity_string": r.entity_string,
                "context_text": r.context_text,
                "asr_text": r.asr_text,
            }, ensure_ascii=False) + "\n")


def load_vi_cache(path: str | Path) -> dict[str, VIRecord]:
    out: dict[str, VIRecord] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out[row["sample_id"]] = VIRecord(
                sample_id=row["sample_id"],
                entity_string=row["entity_string"],
                context_text=row["context_text"],
                asr_text=row.get("asr_text"),
            )
    return out


def vi_bundles_from_cache(records: Mapping[str, VIRecord], vocab: Vocabulary,
                          ablation: AblationConfig,
                          max_tokens: int = VI_TOKEN_CAP) -> dict[str, VIBundle]:
    from .entities import parse_entity_set

    bundles = {}
    for sample_id, record in records.items():
        entities = parse_entity_set(record.entity_string) if record.entity_string else None
        bundles[sample_id] = assemble_vi_bundle(
            entities, record.context_text or None, record.asr_text, vocab,
            ablation, max_tokens=max_tokens)
    return bundles


def save_cm_checkpoint(path, model: CaptioningModel, ablation: AblationConfig,
                       extra: dict | None = None) -> None:
    payload = dict(extra or {})
    payload["ablation"] = {
        "use_entities": ablation.use_entities,
        "use_context": ablation.use_context,
        "use_asr": ablation.use_asr,
    }
    save_checkpoint(path, kind="captioning_model", model=model,
                    config=model.config, extra=payload)


def load_cm_checkpoint(path) -> tuple[CaptioningModel, AblationConfig]:
    payload = load_checkpoint_payload(path, "captioning_model")
    model = CaptioningModel(CMConfig(**payload["config"]),
                            Vocabulary(payload["vocab_tokens"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    ablation = AblationConfig(**payload["extra"]["ablation"])
    return model, ablation
