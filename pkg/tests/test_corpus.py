import datetime as dt
import json

import numpy as np
import pytest

from views.corpus import (
    CaptionOrigin,
    CaptionRecord,
    Corpus,
    CorpusSplit,
    QCStatus,
    audit_time_split,
    load_caption_file,
    load_corpus,
    load_entity_file,
    load_split,
    save_caption_file,
    save_corpus,
    save_entity_file,
    save_split,
    split_by_date,
    split_from_annotations,
    split_random,
)
from views.entities import EntitySet
from views.errors import CorpusParseError

from conftest import make_corpus, make_sample


class TestCaptionRecord:
    def test_from_text_counts_tokens(self):
        rec = CaptionRecord.from_text("s1", "Omar Rask speaks.", CaptionOrigin.PAIRED_ARTICLE)
        assert rec.token_count == 4  # "omar rask speaks ."

    def test_wrong_token_count_rejected(self):
        with pytest.raises(ValueError, match="token_count"):
            CaptionRecord("s1", "two words", 7, CaptionOrigin.PAIRED_ARTICLE)

    def test_ground_truth_capped_at_100_tokens(self):
        long_text = " ".join(["word"] * 101)
        with pytest.raises(ValueError, match="capped"):
            CaptionRecord.from_text("s1", long_text, CaptionOrigin.EVENT_DESCRIPTIONS)
        # model predictions may run long
        CaptionRecord.from_text("s1", long_text, CaptionOrigin.MODEL_PREDICTION)


class TestCorpusIO:
    def test_save_load_round_trip(self, tmp_path):
        corpus = make_corpus(4)
        path = tmp_path / "corpus.jsonl"
        save_corpus(corpus, path)
        loaded = load_corpus(path)
        assert loaded.ids == corpus.ids
        for a, b in zip(loaded, corpus):
            assert a.publish_date == b.publish_date
            assert a.bullet_summaries == b.bullet_summaries
            np.testing.assert_array_equal(a.frame_features, b.frame_features)

    def test_second_save_is_byte_identical(self, tmp_path):
        corpus = make_corpus(4)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_corpus(corpus, p1)
        save_corpus(load_corpus(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_schema_rejected(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text('{"schema": "other/9"}\n')
        with pytest.raises(CorpusParseError, match="schema"):
            load_corpus(path)

    def test_missing_keys_name_the_line(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text('{"schema": "views-corpus/1"}\n{"id": "s1"}\n')
        with pytest.raises(CorpusParseError) as err:
            load_corpus(path)
        assert err.value.line_no == 2

    def test_duplicate_id_rejected(self, tmp_path):
        corpus = Corpus(samples=[make_sample("dup", dt.date(2015, 1, 1)),
                                 make_sample("dup2", dt.date(2015, 1, 2))])
        path = tmp_path / "corpus.jsonl"
        save_corpus(corpus, path)
        rows = path.read_text().splitlines()
        rows.append(rows[1])  # re-append the first sample verbatim
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(CorpusParseError, match="duplicate"):
            load_corpus(path)

    def test_future_date_rejected(self, tmp_path):
        sample = make_sample("s1", dt.date.today() + dt.timedelta(days=2))
        path = tmp_path / "corpus.jsonl"
        save_corpus(Corpus(samples=[sample]), path)
        with pytest.raises(CorpusParseError, match="future"):
            load_corpus(path)

    def test_inconsistent_feature_dim_rejected(self, tmp_path):
        a = make_sample("s1", dt.date(2015, 1, 1), frames=np.zeros((2, 4), dtype=np.float32))
        b = make_sample("s2", dt.date(2015, 1, 2), frames=np.zeros((2, 5), dtype=np.float32))
        path = tmp_path / "corpus.jsonl"
        save_corpus(Corpus(samples=[a, b]), path)
        with pytest.raises(CorpusParseError, match="dim"):
            load_corpus(path)

    def test_npy_sidecar_features(self, tmp_path):
        features = np.arange(8, dtype=np.float32).reshape(2, 4)
        np.save(tmp_path / "s1.npy", features)
        row = {
            "id": "s1", "source": "unit", "publish_date": "2015-01-01",
            "title": "t", "article_text": "a", "bullet_summaries": ["- b"],
            "frame_features": "s1.npy", "asr_text": None, "split": None,
        }
        path = tmp_path / "corpus.jsonl"
        path.write_text(json.dumps({"schema": "views-corpus/1"}) + "\n"
                        + json.dumps(row) + "\n")
        loaded = load_corpus(path)
        np.testing.assert_array_equal(loaded["s1"].frame_features, features)

    def test_missing_sidecar_named(self, tmp_path):
        row = {
            "id": "s1", "source": "unit", "publish_date": "2015-01-01",
            "title": "t", "article_text": "a", "bullet_summaries": ["- b"],
            "frame_features": "gone.npy", "asr_text": None, "split": None,
        }
        path = tmp_path / "corpus.jsonl"
        path.write_text(json.dumps({"schema": "views-corpus/1"}) + "\n"
                        + json.dumps(row) + "\n")
        with pytest.raises(CorpusParseError, match="gone.npy"):
            load_corpus(path)


class TestSplits:
    def test_random_split_sizes_and_disjoint(self):
        corpus = make_corpus(20)
        split = split_random(corpus, dev_n=4, test_n=5, seed=0)
        assert len(split.dev_ids) == 4
        assert len(split.test_ids) == 5
        assert len(split.train_ids) == 11
        assert split.train_ids | split.dev_ids | split.test_ids == set(corpus.ids)

    def test_random_split_deterministic_per_seed(self):
        corpus = make_corpus(20)
        a = split_random(corpus, 4, 5, seed=7)
        b = split_random(corpus, 4, 5, seed=7)
        c = split_random(corpus, 4, 5, seed=8)
        assert (a.train_ids, a.dev_ids, a.test_ids) == (b.train_ids, b.dev_ids, b.test_ids)
        assert a.dev_ids != c.dev_ids

    def test_random_split_must_leave_training_data(self):
        with pytest.raises(ValueError):
            split_random(make_corpus(6), 3, 3, seed=0)

    def test_overlapping_ids_rejected_at_construction(self):
        with pytest.raises(ValueError, match="disjoint"):
            CorpusSplit(frozenset({"a"}), frozenset({"a"}), frozenset())

    def test_date_split_strict_cutoff(self):
        corpus = make_corpus(10)
        cutoff = corpus.samples[5].publish_date
        split = split_by_date(corpus, cutoff)
        for s in corpus:
            side = split.side_of(s.id)
            if s.publish_date < cutoff:
                assert side == "train"
            else:
                assert side == "test"
        assert audit_time_split(corpus, split) == []

    def test_date_split_needs_both_sides(self):
        corpus = make_corpus(4)
        with pytest.raises(ValueError):
            split_by_date(corpus, dt.date(1990, 1, 1))
        with pytest.raises(ValueError):
            split_by_date(corpus, dt.date(2030, 1, 1))

    def test_audit_catches_leakage(self):
        corpus = make_corpus(10)
        cutoff = corpus.samples[5].publish_date
        leaky = CorpusSplit(
            train_ids=frozenset(corpus.ids[:6]),  # sample 5 is on the cutoff
            dev_ids=frozenset(),
            test_ids=frozenset(corpus.ids[6:]),
            cutoff_date=cutoff,
        )
        assert audit_time_split(corpus, leaky) == [corpus.ids[5]]

    def test_audit_requires_cutoff(self):
        corpus = make_corpus(4)
        with pytest.raises(ValueError):
            audit_time_split(corpus, split_random(corpus, 1, 1, seed=0))

    def test_split_from_annotations(self):
        samples = [make_sample(f"s{i}", dt.date(2015, 1, i + 1), split=name)
                   for i, name in enumerate(["train", "train", "dev", "test"])]
        split = split_from_annotations(Corpus(samples=samples))
        assert split.train_ids == {"s0", "s1"}
        assert split.dev_ids == {"s2"}
        assert split.test_ids == {"s3"}

    def test_split_from_annotations_requires_all(self):
        samples = [make_sample("s0", dt.date(2015, 1, 1), split="train"),
                   make_sample("s1", dt.date(2015, 1, 2))]
        with pytest.raises(ValueError, match="s1"):
            split_from_annotations(Corpus(samples=samples))

    def test_split_save_load_round_trip(self, tmp_path):
        corpus = make_corpus(10)
        split = split_by_date(corpus, corpus.samples[5].publish_date)
        path = tmp_path / "split.json"
        save_split(split, path)
        loaded = load_split(path)
        assert loaded == split

    def test_split_file_schema_checked(self, tmp_path):
        path = tmp_path / "split.json"
        path.write_text('{"schema": "bogus"}')
        with pytest.raises(CorpusParseError):
            load_split(path)


class TestSidecars:
    def test_caption_file_round_trip(self, tmp_path):
        captions = {
            "s1": CaptionRecord.from_text("s1", "Omar Rask speaks.",
                                          CaptionOrigin.PAIRED_ARTICLE, QCStatus.AUTO_PASS),
            "s2": CaptionRecord.from_text("s2", "Crews dig.",
                                          CaptionOrigin.EVENT_DESCRIPTIONS),
        }
        path = tmp_path / "captions.jsonl"
        save_caption_file(captions, path)
        assert load_caption_file(path) == captions

    def test_caption_file_validation_surfaces_line(self, tmp_path):
        path = tmp_path / "captions.jsonl"
        path.write_text(json.dumps({
            "sample_id": "s1", "text": "two words", "token_count": 9,
            "origin": "paired_article", "qc_status": "unreviewed",
        }) + "\n")
        with pytest.raises(CorpusParseError):
            load_caption_file(path)

    def test_entity_file_round_trip(self, tmp_path):
        entities = {
            "s1": EntitySet({"PERSON": ["Omar Rask"], "GPE": ["Talin Port"]}),
            "s2": EntitySet({}),
        }
        path = tmp_path / "entities.jsonl"
        save_entity_file(entities, path)
        assert load_entity_file(path) == entities

    def test_entity_file_flags_written(self, tmp_path):
        entities = {"s1": EntitySet({"PERSON": ["Omar Rask"]})}
        path = tmp_path / "entities.jsonl"
        save_entity_file(entities, path, flags={"s1": True})
        row = json.loads(path.read_text().splitlines()[0])
        assert row["decode_failed"] is True


class TestCorpusContainer:
    def test_lookup_and_membership(self):
        corpus = make_corpus(3)
        sid = corpus.ids[1]
        assert corpus[sid].id == sid
        assert sid in corpus
        assert "nope" not in corpus

    def test_subset_filters_attachments(self):
        corpus = make_corpus(4)
        keep = corpus.ids[:2]
        sub = corpus.subset(keep)
        assert sub.ids == keep
        assert set(sub.captions) == set(keep)
        assert set(sub.entities) == set(keep)
