"""Shared sequence-model machinery for the perceiver and the captioner.

Both stages are small encoder-decoder transformers (frames in, tokens
out) trained with teacher forcing under a mean-token cross-entropy. The
pieces here keep the two models byte-for-byte consistent: batching,
schedules, greedy/beam decoding, and the self-describing checkpoint
container.
"""

from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import torch
from torch import nn

from .tokenizer import BOS_ID, EOS_ID, PAD_ID, Vocabulary

CHECKPOINT_FORMAT = "views-checkpoint/1"


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    Defaults follow the full-scale recipe (42 epochs, batch 128, lr 1e-5,
    cosine schedule with linear warmup, 19 frames); desk-scale runs use
    :meth:`desk_profile`, which trains tiny models in minutes on CPU.
    """

    epochs: int = 42
    batch_size: int = 128
    learning_rate: float = 1e-5
    warmup_fraction: float = 0.1
    max_target_tokens: int = 100
    frames: int = 19
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.frames < 1:
            raise ValueError("epochs, batch_size and frames must be positive")

    @classmethod
    def desk_profile(cls, **overrides) -> "TrainConfig":
        base = dict(epochs=12, batch_size=32, learning_rate=3e-3,
                    warmup_fraction=0.1, max_target_tokens=64, frames=8, seed=0)
        base.update(overrides)
        return cls(**base)


def lr_lambda(step: int, total_steps: int, warmup_fraction: float) -> float:
    """Linear warmup into a cosine decay, as a multiplier on the base lr."""
    warmup_steps = int(total_steps * warmup_fraction)
    if warmup_steps > 0 and step < warmup_steps:
        return (step + 1) / warmup_steps
    remaining = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / remaining)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def sequence_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over non-pad target tokens.

    logits: (B, L, V); targets: (B, L) with PAD marking positions to
    ignore. The mean is over all real tokens in the batch, so epoch
    losses do not depend on how samples were grouped into batches.
    """
    vocab = logits.shape[-1]
    flat_logits = logits.reshape(-1, vocab)
    flat_targets = targets.reshape(-1)
    return nn.functional.cross_entropy(flat_logits, flat_targets, ignore_index=PAD_ID)


def _generate_square_subsequent_mask(size: int, device) -> torch.Tensor:
    # boolean mask (True = blocked) to match the boolean padding masks
    return torch.triu(torch.ones(size, size, dtype=torch.bool, device=device), diagonal=1)


class FrameSeq2Seq(nn.Module):
    """Encoder over projected frame vectors, autoregressive token decoder.

    Subclasses override :meth:`encoder_inputs` to splice extra token
    channels (the captioner's VI bundle) into the encoder sequence.
    """

    def __init__(self, *, frame_dim: int, width: int, heads: int,
                 encoder_layers: int, decoder_layers: int, ffn_dim: int,
                 max_frames: int, max_target_tokens: int, vocab: Vocabulary,
                 n_segments: int = 1, dropout: float = 0.0):
        super().__init__()
        self.vocab = vocab
        self.width = width
        self.max_frames = max_frames
        self.max_target_tokens = max_target_tokens
        self.frame_projector = nn.Linear(frame_dim, width)
        self.frame_positions = nn.Embedding(max_frames, width)
        self.segment_embedding = nn.Embedding(n_segments, width)
        self.token_embedding = nn.Embedding(len(vocab), width, padding_idx=PAD_ID)
        self.decoder_positions = nn.Embedding(max_target_tokens + 1, width)
        encoder_layer = nn.TransformerEncoderLayer(
            d_model=width, nhead=heads, dim_feedforward=ffn_dim,
            dropout=dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(encoder_layer, encoder_layers,
                                             enable_nested_tensor=False)
        decoder_layer = nn.TransformerDecoderLayer(
            d_model=width, nhead=heads, dim_feedforward=ffn_dim,
            dropout=dropout, batch_first=True)
        self.decoder = nn.TransformerDecoder(decoder_layer, decoder_layers)
        self.output_head = nn.Linear(width, len(vocab))
        # zero-init head: an untrained model is exactly uniform over the
        # vocabulary, pinning the ln(N) loss anchor
        nn.init.zeros_(self.output_head.weight)
        nn.init.zeros_(self.output_head.bias)

    def reset_parameters(self) -> None:
        """Re-init every weight; run_training calls this under the run seed
        so results do not depend on RNG state at construction time."""
        for module in self.modules():
            if module is self:
                continue
            if hasattr(module, "reset_parameters"):
                module.reset_parameters()
            elif hasattr(module, "_reset_parameters"):  # nn.MultiheadAttention
                module._reset_parameters()
        nn.init.zeros_(self.output_head.weight)
        nn.init.zeros_(self.output_head.bias)

    def frame_tokens(self, frames: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Project frames to encoder tokens; returns (tokens, pad_mask)."""
        batch, n_frames, _ = frames.shape
        if n_frames > self.max_frames:
            frames = frames[:, :self.max_frames]
            n_frames = self.max_frames
        positions = torch.arange(n_frames, device=frames.device)
        tokens = self.frame_projector(frames) + self.frame_positions(positions)
        tokens = tokens + self.segment_embedding(
            torch.zeros(n_frames, dtype=torch.long, device=frames.device))
        pad_mask = frames.abs().sum(dim=-1) == 0.0  # all-zero rows are padding
        return tokens, pad_mask

    def encoder_inputs(self, frames: torch.Tensor, **_) -> tuple[torch.Tensor, torch.Tensor]:
        return self.frame_tokens(frames)

    def encode(self, frames: torch.Tensor, **channels) -> tuple[torch.Tensor, torch.Tensor]:
        inputs, pad_mask = self.encoder_inputs(frames, **channels)
        memory = self.encoder(inputs, src_key_padding_mask=pad_mask)
        return memory, pad_mask

    def decode_step(self, memory: torch.Tensor, memory_pad: torch.Tensor,
                    decoder_input: torch.Tensor) -> torch.Tensor:
        length = decoder_input.shape[1]
        positions = torch.arange(length, device=decoder_input.device)
        embedded = self.token_embedding(decoder_input) + self.decoder_positions(positions)
        causal = _generate_square_subsequent_mask(length, decoder_input.device)
        hidden = self.decoder(
            embedded, memory, tgt_mask=causal,
            tgt_key_padding_mask=decoder_input == PAD_ID,
            memory_key_padding_mask=memory_pad)
        return self.output_head(hidden)

    def forward(self, frames: torch.Tensor, decoder_input: torch.Tensor,
                **channels) -> torch.Tensor:
        memory, memory_pad = self.encode(frames, **channels)
        return self.decode_step(memory, memory_pad, decoder_input)


def teacher_forced_loss(model: FrameSeq2Seq, frames: torch.Tensor,
                        target_ids: torch.Tensor, **channels) -> torch.Tensor:
    """Mean token cross-entropy with BOS-shifted teacher forcing.

    target_ids: (B, L) ending in EOS (then PAD); decoder input is the
    target shifted right behind BOS.
    """
    batch = target_ids.shape[0]
    bos = torch.full((batch, 1), BOS_ID, dtype=torch.long, device=target_ids.device)
    decoder_input = torch.cat([bos, target_ids[:, :-1]], dim=1)
    decoder_input[decoder_input == EOS_ID] = PAD_ID
    logits = model(frames, decoder_input, **channels)
    return sequence_cross_entropy(logits, target_ids)


def prepare_target(ids: list[int], max_target_tokens: int) -> list[int]:
    """Validate and terminate a target token sequence."""
    if not ids:
        raise ValueError("target must be nonempty")
    if len(ids) + 1 > max_target_tokens:
        raise ValueError(
            f"target of {len(ids)} tokens exceeds max_target_tokens={max_target_tokens} "
            "(one slot is reserved for EOS)")
    return ids + [EOS_ID]


def pad_batch(sequences: list[list[int]], device=None) -> torch.Tensor:
    length = max(len(s) for s in sequences)
    out = torch.full((len(sequences), length), PAD_ID, dtype=torch.long, device=device)
    for i, seq in enumerate(sequences):
        out[i, :len(seq)] = torch.tensor(seq, dtype=torch.long, device=device)
    return out


def pad_frames(frame_arrays: list, frames_cap: int) -> torch.Tensor:
    """Stack variable-length frame matrices, zero-padding short ones."""
    capped = [torch.as_tensor(f[:frames_cap], dtype=torch.float32) for f in frame_arrays]
    max_frames = max(f.shape[0] for f in capped)
    dim = capped[0].shape[1]
    out = torch.zeros(len(capped), max_frames, dim)
    for i, f in enumerate(capped):
        out[i, :f.shape[0]] = f
    return out


@dataclass
class TrainResult:
    model: FrameSeq2Seq
    loss_curve: list[float] = field(default_factory=list)


def run_training(model: FrameSeq2Seq, examples: list, collate: Callable,
                 config: TrainConfig) -> TrainResult:
    """Generic teacher-forced training loop.

    ``examples`` is any list; ``collate`` maps a sublist to kwargs for
    :func:`teacher_forced_loss` (must include ``frames`` and
    ``target_ids``). Epoch loss is token-weighted, so it is independent
    of the shuffle partition; with lr = 0 the curve is constant.
    """
    if not examples:
        raise ValueError("training set is empty")
    torch.manual_seed(config.seed)
    model.reset_parameters()
    rng = random.Random(config.seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    steps_per_epoch = math.ceil(len(examples) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer,
        lambda step: lr_lambda(step, total_steps, config.warmup_fraction))
    curve: list[float] = []
    order = list(range(len(examples)))
    for _ in range(config.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        epoch_tokens = 0
        model.train()
        for start in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            kwargs = collate(batch)
            loss = teacher_forced_loss(model, **kwargs)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            n_tokens = int((kwargs["target_ids"] != PAD_ID).sum())
            epoch_loss += loss.item() * n_tokens
            epoch_tokens += n_tokens
        curve.append(epoch_loss / max(1, epoch_tokens))
    model.eval()
    return TrainResult(model=model, loss_curve=curve)


@torch.no_grad()
def decode_ids(model: FrameSeq2Seq, frames: torch.Tensor, beam: int = 1,
               max_length: int | None = None, **channels) -> list[int]:
    """Greedy (beam=1) or beam-search decode of one sample to EOS.

    Beam search scores by mean token log-probability; beam = 1
    reproduces greedy decoding exactly.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    model.eval()
    max_length = max_length or model.max_target_tokens
    memory, memory_pad = model.encode(frames, **channels)
    # hypotheses: (token ids, summed logprob, finished)
    hypotheses: list[tuple[list[int], float, bool]] = [([BOS_ID], 0.0, False)]
    for _ in range(max_length):
        candidates: list[tuple[list[int], float, bool]] = []
        for ids, score, finished in hypotheses:
            if finished:
                candidates.append((ids, score, True))
                continue
            decoder_input = torch.tensor([ids], dtype=torch.long)
            logits = model.decode_step(memory, memory_pad, decoder_input)[0, -1]
            log_probs = torch.log_softmax(logits, dim=-1)
            top = torch.topk(log_probs, k=min(beam, log_probs.shape[-1]))
            for token_id, lp in zip(top.indices.tolist(), top.values.tolist()):
                candidates.append((ids + [token_id], score + lp, token_id == EOS_ID))
        candidates.sort(key=lambda c: (-c[1] / (len(c[0]) - 1), c[0]))
        hypotheses = candidates[:beam]
        if all(f for _, _, f in hypotheses):
            break
    ids = hypotheses[0][0][1:]  # drop BOS
    if ids and ids[-1] == EOS_ID:
        ids = ids[:-1]
    return ids


def save_checkpoint(path: str | Path, *, kind: str, model: FrameSeq2Seq,
                    config, extra: dict | None = None) -> None:
    """Self-describing checkpoint: format tag, config, vocab, tensors."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "config": asdict(config),
        "vocab_tokens": model.vocab.id_to_token[4:],  # specials are implied
        "extra": extra or {},
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint_payload(path: str | Path, expected_kind: str) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unknown checkpoint format {payload.get('format')!r}")
    if payload.get("kind") != expected_kind:
        raise ValueError(f"checkpoint is a {payload.get('kind')!r}, expected {expected_kind!r}")
    return payload
