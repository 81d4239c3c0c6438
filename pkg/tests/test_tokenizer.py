import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from views.tokenizer import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    SPECIALS,
    UNK_ID,
    Vocabulary,
    token_count,
    word_tokenize,
)


class TestWordTokenize:
    def test_punctuation_split_off(self):
        assert word_tokenize("Omar Rask, hello.") == ["omar", "rask", ",", "hello", "."]

    def test_lowercase_default(self):
        assert word_tokenize("ABC") == ["abc"]

    def test_lowercase_off(self):
        assert word_tokenize("ABC def", lowercase=False) == ["ABC", "def"]

    def test_empty(self):
        assert word_tokenize("") == []
        assert token_count("") == 0

    def test_numbers_kept_whole(self):
        assert word_tokenize("file k1 12/25") == ["file", "k1", "12", "/", "25"]


class TestVocabulary:
    def test_specials_occupy_fixed_ids(self):
        vocab = Vocabulary(["alpha"])
        assert vocab.id_to_token[:4] == list(SPECIALS)
        assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(["x", "x"])

    def test_unknown_maps_to_unk(self):
        vocab = Vocabulary(["alpha"])
        assert vocab.encode("alpha beta") == [4, UNK_ID]

    def test_decode_skips_structural_specials(self):
        vocab = Vocabulary(["alpha"])
        assert vocab.decode([BOS_ID, 4, EOS_ID, PAD_ID]) == "alpha"

    def test_decode_out_of_range_becomes_unk(self):
        vocab = Vocabulary(["alpha"])
        assert vocab.decode([999]) == "<unk>"

    def test_from_texts_sorted_and_deterministic(self):
        a = Vocabulary.from_texts(["b a", "c a"])
        b = Vocabulary.from_texts(["c b", "a"])
        assert a.id_to_token == b.id_to_token

    def test_save_load_round_trip(self, tmp_path):
        vocab = Vocabulary.from_texts(["omar rask in talin ."])
        path = tmp_path / "vocab.json"
        vocab.save(path)
        assert Vocabulary.load(path).id_to_token == vocab.id_to_token

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet=st.characters(whitelist_categories=("Ll", "Nd", "Zs")),
                   max_size=60))
    def test_encode_decode_round_trip_on_known_text(self, text):
        vocab = Vocabulary.from_texts([text])
        assert vocab.decode(vocab.encode(text)) == " ".join(word_tokenize(text))
