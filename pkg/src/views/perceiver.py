"""Stage 1 - Entity Perceiver: frame features in, structured entity string out.

A small encoder-decoder transformer trained with a language-modelling
loss over the canonical entity serialization. Also home to the
retrieval reference baseline (nearest bank entity per frame), which the
trained perceiver must beat.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch

from .corpus import Corpus
from .entities import EntitySet, parse_entity_set, serialize_entity_set
from .errors import EntityParseError
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
from .tokenizer import Vocabulary


@dataclass(frozen=True)
class EPConfig:
    frame_dim: int
    width: int = 64
    heads: int = 2
    encoder_layers: int = 2
    decoder_layers: int = 2
    ffn_dim: int = 128
    max_frames: int = 19
    max_target_tokens: int = 64


class EntityPerceiver(FrameSeq2Seq):
    def __init__(self, config: EPConfig, vocab: Vocabulary):
        super().__init__(
            frame_dim=config.frame_dim, width=config.width, heads=config.heads,
            encoder_layers=config.encoder_layers, decoder_layers=config.decoder_layers,
            ffn_dim=config.ffn_dim, max_frames=config.max_frames,
            max_target_tokens=config.max_target_tokens, vocab=vocab)
        self.config = config


def build_ep_vocab(corpus: Corpus) -> Vocabulary:
    """Vocabulary over the serialized ground-truth entity strings."""
    texts = [serialize_entity_set(es) for es in corpus.entities.values()]
    if not texts:
        raise ValueError("corpus has no ground-truth entity sets")
    return Vocabulary.from_texts(texts)


def encode_entity_target(entities: EntitySet, vocab: Vocabulary,
                         max_target_tokens: int) -> list[int]:
    return prepare_target(vocab.encode(serialize_entity_set(entities)), max_target_tokens)


def ep_loss(model: EntityPerceiver, frames, target_ids: list[int]) -> torch.Tensor:
    """Mean token cross-entropy for one sample, teacher forced.

    ``target_ids`` must already end with EOS (see
    :func:`encode_entity_target`).
    """
    if not target_ids:
        raise ValueError("target must be nonempty")
    if len(target_ids) > model.max_target_tokens + 1:
        raise ValueError(
            f"target of {len(target_ids)} tokens exceeds "
            f"max_target_tokens={model.max_target_tokens}")
    # follow the model's dtype so double-precision gradient checks work
    dtype = next(model.parameters()).dtype
    frames_t = torch.as_tensor(np.asarray(frames), dtype=dtype).unsqueeze(0)
    targets_t = torch.tensor([target_ids], dtype=torch.long)
    return teacher_forced_loss(model, frames_t, targets_t)


def train_ep(model: EntityPerceiver, corpus: Corpus, config: TrainConfig,
             train_ids=None) -> TrainResult:
    """Teacher-forced training over ground-truth entity strings."""
    ids = list(train_ids) if train_ids is not None else corpus.ids
    missing = [i for i in ids if i not in corpus.entities]
    if missing:
        raise ValueError(f"samples without ground-truth entities: {missing[:5]}")
    if not ids:
        raise ValueError("training set is empty")
    examples = []
    for sample_id in ids:
        sample = corpus[sample_id]
        target = encode_entity_target(corpus.entities[sample_id], model.vocab,
                                      model.max_target_tokens)
        examples.append((sample.frame_features, target))

    def collate(batch):
        return {
            "frames": pad_frames([b[0] for b in batch], config.frames),
            "target_ids": pad_batch([b[1] for b in batch]),
        }

    return run_training(model, examples, collate, config)


def repair_entity_string(text: str) -> str:
    """Best-effort cleanup of a malformed decode.

    Drops a trailing fragment after the last complete list and balances
    brackets/braces; parsing may still fail, in which case the decode
    degrades to an empty set.
    """
    text = text.strip()
    if not text.startswith("{"):
        text = "{" + text
    if "[" in text:
        last_close = text.rfind("]")
        if last_close >= 0:
            text = text[:last_close + 1]
        else:
            text = text + "]"
    if not text.endswith("}"):
        text = text + "}"
    return text


@dataclass(frozen=True)
class DecodeResult:
    entities: EntitySet
    raw_text: str
    failed: bool  # parse failed even after repair


def decode_entities_verbose(model: EntityPerceiver, frames, beam: int = 1) -> DecodeResult:
    frames_t = torch.as_tensor(np.asarray(frames), dtype=torch.float32).unsqueeze(0)
    ids = decode_ids(model, frames_t, beam=beam)
    text = model.vocab.decode(ids)
    if not text.strip():
        return DecodeResult(EntitySet(), text, failed=False)
    try:
        return DecodeResult(parse_entity_set(text), text, failed=False)
    except EntityParseError:
        pass
    try:
        return DecodeResult(parse_entity_set(repair_entity_string(text)), text, failed=False)
    except EntityParseError:
        return DecodeResult(EntitySet(), text, failed=True)


def decode_entities(model: EntityPerceiver, frames, beam: int = 1) -> EntitySet:
    """Decode and parse; malformed output degrades to an empty set."""
    return decode_entities_verbose(model, frames, beam=beam).entities


@dataclass
class EntityBank:
    """Typed train-split entities with embeddings for retrieval."""

    surfaces: list[tuple[str, str]]  # (surface, type)
    vectors: np.ndarray  # (len(surfaces), D), rows L2-normalized

    def __post_init__(self):
        if len(self.surfaces) != self.vectors.shape[0]:
            raise ValueError("bank surfaces and vectors disagree")


class HashTextEmbedder:
    """Deterministic text-to-vector map via a sha256-seeded gaussian.

    The desk-scale stand-in for a co-trained text/vision embedder: the
    synthetic corpus builds its frame features from these same
    directions, so retrieval has a meaningful shared space. Typed keys
    keep a surface that occurs under two types distinguishable.
    """

    def __init__(self, dim: int, salt: str = ""):
        self.dim = dim
        self.salt = salt

    def embed_text(self, surface: str, etype: str = "") -> np.ndarray:
        key = f"{self.salt}|{etype}|{surface}".encode("utf-8")
        seed = int.from_bytes(hashlib.sha256(key).digest()[:8], "big") % (2 ** 32)
        vec = np.random.default_rng(seed).standard_normal(self.dim)
        return (vec / np.linalg.norm(vec)).astype(np.float32)


def build_entity_bank(corpus: Corpus, embedder: HashTextEmbedder,
                      train_ids=None) -> EntityBank:
    ids = list(train_ids) if train_ids is not None else corpus.ids
    seen: set[tuple[str, str]] = set()
    surfaces: list[tuple[str, str]] = []
    for sample_id in ids:
        for etype, type_surfaces in corpus.entities.get(sample_id, EntitySet()).items():
            for surface in type_surfaces:
                key = (surface, etype)
                if key not in seen:
                    seen.add(key)
                    surfaces.append(key)
    if not surfaces:
        raise ValueError("entity bank is empty")
    vectors = np.stack([embedder.embed_text(s, t) for s, t in surfaces])
    return EntityBank(surfaces=surfaces, vectors=vectors)


def retrieval_entity_baseline(frame_features, bank: EntityBank,
                              max_frames: int = 6) -> EntitySet:
    """Reference baseline: nearest bank entity per frame, union over frames.

    Uses up to ``max_frames`` uniformly spaced frames and cosine
    similarity in the embedder space.
    """
    if not bank.surfaces:
        raise ValueError("entity bank is empty")
    frames = np.asarray(frame_features, dtype=np.float32)
    n_frames = frames.shape[0]
    take = min(max_frames, n_frames)
    indices = np.unique(np.linspace(0, n_frames - 1, take).round().astype(int))
    found: dict[str, list[str]] = {}
    for i in indices:
        row = frames[i]
        norm = np.linalg.norm(row)
        if norm == 0.0:
            continue
        sims = bank.vectors @ (row / norm)
        surface, etype = bank.surfaces[int(np.argmax(sims))]
        bucket = found.setdefault(etype, [])
        if surface not in bucket:
            bucket.append(surface)
    return EntitySet(found)


def save_ep_checkpoint(path, model: EntityPerceiver, extra: dict | None = None) -> None:
    save_checkpoint(path, kind="entity_perceiver", model=model,
                    config=model.config, extra=extra)


def load_ep_checkpoint(path) -> EntityPerceiver:
    payload = load_checkpoint_payload(path, "entity_perceiver")
    model = EntityPerceiver(EPConfig(**payload["config"]),
                            Vocabulary(payload["vocab_tokens"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
