import datetime as dt

import numpy as np
import pytest
import torch

from views.captioner import (
    EMPTY_BUNDLE,
    VI_TOKEN_CAP,
    AblationConfig,
    CaptioningModel,
    CMConfig,
    VIBundle,
    VIRecord,
    assemble_vi_bundle,
    build_cm_vocab,
    cm_loss,
    generate,
    load_cm_checkpoint,
    load_vi_cache,
    save_cm_checkpoint,
    save_vi_cache,
    train_cm,
    vi_bundles_from_cache,
)
from views.corpus import CaptionOrigin, CaptionRecord, Corpus, QCStatus
from views.entities import EntitySet
from views.errors import DataError
from views.seq2seq import TrainConfig, prepare_target
from views.tokenizer import Vocabulary

from conftest import make_corpus, make_sample

ENTITIES = EntitySet({"PERSON": ["Omar Rask"], "GPE": ["Talin Port"]})


def cm_vocab():
    return Vocabulary.from_texts([
        "{PERSON: [Omar Rask], GPE: [Talin Port]}",
        "omar rask inspected the port expansion today .",
        "crews dig at the wreck site .",
        "live remarks by omar rask",
        " ".join(f"w{i}" for i in range(400)),
    ])


class TestAblationConfig:
    def test_canonical_names(self):
        assert AblationConfig(True, True).name == "full"
        assert AblationConfig(False, True).name == "no-entities"
        assert AblationConfig(True, False).name == "no-knowledge"
        assert AblationConfig(False, False).name == "no-vi"

    def test_from_name_round_trip(self):
        for name in ("full", "no-entities", "no-knowledge", "no-vi"):
            assert AblationConfig.from_name(name).name == name

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError):
            AblationConfig.from_name("half-vi")

    def test_wants_vi(self):
        assert AblationConfig.from_name("full").wants_vi()
        assert not AblationConfig.from_name("no-vi").wants_vi()


class TestVIBundle:
    def test_cap_enforced_at_construction(self):
        with pytest.raises(ValueError):
            VIBundle(entity_tokens=tuple(range(VI_TOKEN_CAP + 1)))

    def test_segments_follow_channels(self):
        bundle = VIBundle(entity_tokens=(4, 5), context_tokens=(6,), asr_tokens=(7, 8))
        ids, segments = bundle.ids_and_segments()
        assert ids == [4, 5, 6, 7, 8]
        assert segments == [1, 1, 2, 3, 3]

    def test_empty_bundle(self):
        assert EMPTY_BUNDLE.is_empty()
        assert EMPTY_BUNDLE.total_tokens == 0


class TestAssembly:
    def test_entities_kept_whole_under_pressure(self):
        vocab = cm_vocab()
        long_context = " ".join(f"w{i}" for i in range(400))
        bundle = assemble_vi_bundle(ENTITIES, long_context, None, vocab,
                                    AblationConfig.from_name("full"))
        n_entity = len(vocab.encode(
            "{PERSON: [Omar Rask], GPE: [Talin Port]}"))
        assert len(bundle.entity_tokens) == n_entity
        assert bundle.total_tokens == VI_TOKEN_CAP
        assert len(bundle.context_tokens) == VI_TOKEN_CAP - n_entity

    def test_asr_gets_the_leftover_budget(self):
        vocab = cm_vocab()
        long_context = " ".join(f"w{i}" for i in range(400))
        bundle = assemble_vi_bundle(ENTITIES, long_context, "live remarks by omar rask",
                                    vocab, AblationConfig(True, True, True))
        assert bundle.asr_tokens == ()  # context exhausted the budget
        short = assemble_vi_bundle(ENTITIES, "crews dig .", "live remarks by omar rask",
                                   vocab, AblationConfig(True, True, True))
        assert len(short.asr_tokens) == len(vocab.encode("live remarks by omar rask"))

    def test_ablation_switches_drop_channels(self):
        vocab = cm_vocab()
        no_entities = assemble_vi_bundle(ENTITIES, "crews dig .", "asr", vocab,
                                         AblationConfig.from_name("no-entities"))
        assert no_entities.entity_tokens == ()
        assert no_entities.context_tokens != ()
        no_knowledge = assemble_vi_bundle(ENTITIES, "crews dig .", "asr", vocab,
                                          AblationConfig.from_name("no-knowledge"))
        assert no_knowledge.context_tokens == ()
        assert no_knowledge.entity_tokens != ()
        no_vi = assemble_vi_bundle(ENTITIES, "crews dig .", "asr", vocab,
                                   AblationConfig.from_name("no-vi"))
        assert no_vi == EMPTY_BUNDLE

    def test_empty_entity_set_contributes_nothing(self):
        bundle = assemble_vi_bundle(EntitySet(), None, None, cm_vocab(),
                                    AblationConfig.from_name("full"))
        assert bundle == EMPTY_BUNDLE


def tiny_cm(vocab=None):
    return CaptioningModel(
        CMConfig(frame_dim=4, width=8, heads=2, encoder_layers=1,
                 decoder_layers=1, ffn_dim=8, max_frames=4,
                 max_caption_tokens=16), vocab or cm_vocab())


class TestCMModel:
    def test_empty_bundle_is_bit_identical_to_frames_only(self):
        model = tiny_cm()
        frames = torch.randn(1, 2, 4)
        no_channel, mask_a = model.encoder_inputs(frames)
        empty = torch.zeros((1, 0), dtype=torch.long)
        with_empty, mask_b = model.encoder_inputs(frames, vi_ids=empty,
                                                  vi_segments=empty.clone())
        assert torch.equal(no_channel, with_empty)
        assert torch.equal(mask_a, mask_b)

    def test_vi_tokens_extend_the_encoder_sequence(self):
        model = tiny_cm()
        frames = torch.randn(1, 2, 4)
        bundle = VIBundle(entity_tokens=(4, 5, 6))
        from views.captioner import _bundle_tensors
        tensors = _bundle_tensors([bundle])
        inputs, mask = model.encoder_inputs(frames, **tensors)
        assert inputs.shape[1] == 2 + 3
        assert mask.shape[1] == 5

    def test_fresh_cm_loss_is_ln_vocab(self):
        vocab = cm_vocab()
        model = tiny_cm(vocab)
        frames = np.random.default_rng(0).standard_normal((2, 4)).astype(np.float32)
        target = prepare_target(vocab.encode("crews dig at the wreck site ."), 16)
        loss = cm_loss(model, frames, EMPTY_BUNDLE, target)
        assert loss.item() == pytest.approx(np.log(len(vocab)), rel=1e-5)

    def test_cm_loss_gradients_flow_through_vi_channel(self):
        vocab = cm_vocab()
        model = tiny_cm(vocab)
        # the head ships zero-initialized, which blocks upstream gradients
        # on a fresh model; give it signal first
        torch.manual_seed(0)
        torch.nn.init.normal_(model.output_head.weight)
        frames = np.random.default_rng(0).standard_normal((2, 4)).astype(np.float32)
        target = prepare_target(vocab.encode("crews dig ."), 16)
        bundle = VIBundle(entity_tokens=tuple(vocab.encode("omar rask")))
        loss = cm_loss(model, frames, bundle, target)
        loss.backward()
        assert model.vi_positions.weight.grad is not None
        assert model.vi_positions.weight.grad.abs().sum() > 0

    def test_cm_loss_validation(self):
        model = tiny_cm()
        frames = np.zeros((2, 4), dtype=np.float32)
        with pytest.raises(ValueError):
            cm_loss(model, frames, EMPTY_BUNDLE, [])
        with pytest.raises(ValueError):
            cm_loss(model, frames, EMPTY_BUNDLE, list(range(40)))


def _train_corpus():
    rng = np.random.default_rng(1)
    samples, captions = [], {}
    texts = ["omar rask inspected the port expansion today .",
             "crews dig at the wreck site ."]
    for i in range(6):
        sid = f"s{i}"
        samples.append(make_sample(sid, dt.date(2015, 1, i + 1),
                                   frames=rng.standard_normal((2, 4)).astype(np.float32)))
        captions[sid] = CaptionRecord.from_text(sid, texts[i % 2],
                                                CaptionOrigin.EVENT_DESCRIPTIONS)
    return Corpus(samples=samples, captions=captions)


class TestTrainCM:
    def test_smoke_train_and_generate(self):
        corpus = _train_corpus()
        vocab = build_cm_vocab(corpus)
        model = CaptioningModel(
            CMConfig(frame_dim=4, width=16, heads=2, encoder_layers=1,
                     decoder_layers=1, ffn_dim=32, max_frames=4,
                     max_caption_tokens=16), vocab)
        bundles = {sid: EMPTY_BUNDLE for sid in corpus.ids}
        result = train_cm(model, corpus, bundles,
                          TrainConfig.desk_profile(epochs=25, batch_size=6),
                          AblationConfig.from_name("no-vi"))
        assert result.loss_curve[-1] < result.loss_curve[0]
        record = generate(model, corpus.samples[0].frame_features)
        assert record.origin == CaptionOrigin.MODEL_PREDICTION

    def test_missing_bundle_is_a_data_error(self):
        corpus = _train_corpus()
        vocab = build_cm_vocab(corpus)
        model = CaptioningModel(
            CMConfig(frame_dim=4, width=8, heads=2, encoder_layers=1,
                     decoder_layers=1, ffn_dim=8, max_frames=4,
                     max_caption_tokens=16), vocab)
        with pytest.raises(DataError, match="no VI bundle"):
            train_cm(model, corpus, {}, TrainConfig.desk_profile(epochs=1),
                     AblationConfig.from_name("full"))

    def test_missing_caption_is_a_data_error(self):
        corpus = _train_corpus()
        del corpus.captions["s0"]
        vocab = build_cm_vocab(corpus)
        model = tiny_cm(vocab)
        with pytest.raises(DataError, match="caption"):
            train_cm(model, corpus, None, TrainConfig.desk_profile(epochs=1),
                     AblationConfig.from_name("no-vi"))

    def test_callable_vi_source(self):
        corpus = _train_corpus()
        vocab = build_cm_vocab(corpus)
        model = CaptioningModel(
            CMConfig(frame_dim=4, width=8, heads=2, encoder_layers=1,
                     decoder_layers=1, ffn_dim=8, max_frames=4,
                     max_caption_tokens=16), vocab)
        calls = []

        def source(sample_id):
            calls.append(sample_id)
            return VIBundle(entity_tokens=tuple(vocab.encode("omar rask")))

        train_cm(model, corpus, source, TrainConfig.desk_profile(epochs=1, batch_size=6),
                 AblationConfig.from_name("full"))
        assert sorted(calls) == corpus.ids


class TestGenerate:
    def test_empty_decode_is_flagged_not_fatal(self):
        # an untrained model with zero head decodes PAD forever; the
        # decoded text is empty and the record must carry the flag
        model = tiny_cm()
        record = generate(model, np.zeros((2, 4), dtype=np.float32))
        if not record.text.strip():
            assert record.qc_status == QCStatus.FLAGGED

    def test_generation_is_deterministic(self):
        corpus = _train_corpus()
        vocab = build_cm_vocab(corpus)
        model = CaptioningModel(
            CMConfig(frame_dim=4, width=16, heads=2, encoder_layers=1,
                     decoder_layers=1, ffn_dim=32, max_frames=4,
                     max_caption_tokens=16), vocab)
        train_cm(model, corpus, None, TrainConfig.desk_profile(epochs=10, batch_size=6),
                 AblationConfig.from_name("no-vi"))
        frames = corpus.samples[0].frame_features
        assert generate(model, frames).text == generate(model, frames).text


class TestVocab:
    def test_covers_captions_entities_and_extras(self):
        corpus = _train_corpus()
        corpus.entities["s0"] = ENTITIES
        vocab = build_cm_vocab(corpus, extra_texts=["bespoke context token zq"])
        for needle in ("omar", "rask", "person", "zq", "{"):
            assert needle in vocab.token_to_id

    def test_requires_some_text(self):
        corpus = Corpus(samples=[make_sample("s0", dt.date(2015, 1, 1))])
        with pytest.raises(ValueError):
            build_cm_vocab(corpus)


class TestVICache:
    def test_round_trip(self, tmp_path):
        records = {
            "s0": VIRecord("s0", "{PERSON: [Omar Rask]}", "context text", "asr text"),
            "s1": VIRecord("s1", "", "other context", None),
        }
        path = tmp_path / "vi.jsonl"
        save_vi_cache(records, path)
        assert load_vi_cache(path) == records

    def test_bundles_from_cache_respect_ablation(self):
        vocab = cm_vocab()
        records = {"s0": VIRecord("s0", "{PERSON: [Omar Rask]}", "crews dig .", "asr")}
        full = vi_bundles_from_cache(records, vocab, AblationConfig.from_name("full"))
        assert full["s0"].entity_tokens and full["s0"].context_tokens
        no_vi = vi_bundles_from_cache(records, vocab, AblationConfig.from_name("no-vi"))
        assert no_vi["s0"] == EMPTY_BUNDLE


class TestCheckpoint:
    def test_round_trip_with_ablation(self, tmp_path):
        corpus = _train_corpus()
        vocab = build_cm_vocab(corpus)
        model = CaptioningModel(
            CMConfig(frame_dim=4, width=16, heads=2, encoder_layers=1,
                     decoder_layers=1, ffn_dim=32, max_frames=4,
                     max_caption_tokens=16), vocab)
        ablation = AblationConfig.from_name("no-knowledge")
        train_cm(model, corpus,
                 {sid: VIBundle(entity_tokens=(4,)) for sid in corpus.ids},
                 TrainConfig.desk_profile(epochs=2, batch_size=6), ablation)
        path = tmp_path / "cm.pt"
        save_cm_checkpoint(path, model, ablation, extra={"cider": 1.0})
        restored, restored_ablation = load_cm_checkpoint(path)
        assert restored_ablation == ablation
        assert restored.config == model.config
        for a, b in zip(model.parameters(), restored.parameters()):
            assert torch.equal(a, b)
