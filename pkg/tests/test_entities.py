import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from views.entities import (
    EntitySet,
    entity_signature,
    find_surfaces,
    flatten_entity_set,
    normalize_surface,
    parse_entity_set,
    serialize_entity_set,
)
from views.errors import EntityParseError

surface_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc")),
    min_size=1, max_size=24,
).filter(lambda s: s.strip() and normalize_surface(s))

type_label = st.sampled_from(["PERSON", "GPE", "ORG", "NORP", "EVENT", "FAC", "LOC"])

entity_sets = st.dictionaries(
    type_label,
    st.lists(surface_text, min_size=1, max_size=4),
    min_size=0, max_size=5,
).map(EntitySet)


class TestEntitySet:
    def test_type_labels_uppercased(self):
        es = EntitySet({"person": ["Omar Rask"]})
        assert es.types == ("PERSON",)

    def test_date_entries_dropped(self):
        es = EntitySet({"DATE": ["March 3, 2008"], "PERSON": ["Omar Rask"]})
        assert es.types == ("PERSON",)

    def test_date_only_set_is_empty(self):
        assert EntitySet({"DATE": ["2008"]}).is_empty()

    def test_per_type_dedup_keeps_first(self):
        es = EntitySet({"PERSON": ["Omar Rask", "omar  rask", "Mira Holt"]})
        assert es.surfaces("PERSON") == ("Omar Rask", "Mira Holt")

    def test_insertion_order_preserved(self):
        es = EntitySet({"GPE": ["Talin"], "PERSON": ["Omar Rask"]})
        assert es.types == ("GPE", "PERSON")

    def test_equality_ignores_order(self):
        a = EntitySet({"PERSON": ["Omar Rask"], "GPE": ["Talin"]})
        b = EntitySet({"GPE": ["Talin"], "PERSON": ["Omar Rask"]})
        assert a == b
        assert hash(a) == hash(b)

    def test_empty_type_label_rejected(self):
        with pytest.raises(ValueError):
            EntitySet({" ": ["x"]})

    def test_merge_unions_in_order(self):
        a = EntitySet({"PERSON": ["Omar Rask"]})
        b = EntitySet({"PERSON": ["Mira Holt"], "GPE": ["Talin"]})
        merged = a.merge(b)
        assert merged.surfaces("PERSON") == ("Omar Rask", "Mira Holt")
        assert merged.surfaces("GPE") == ("Talin",)


class TestRoundTrip:
    @settings(max_examples=1000, deadline=None)
    @given(entity_sets)
    def test_parse_inverts_serialize(self, es):
        assert parse_entity_set(serialize_entity_set(es)) == es

    def test_reserved_characters_survive(self):
        es = EntitySet({"ORG": ["A{B}C", "x[y]z", "a:b,c", "back\\slash"]})
        assert parse_entity_set(serialize_entity_set(es)) == es

    def test_canonical_example(self):
        text = "{PERSON: [George Bush, Condoleezza Rice], GPE: [Washington]}"
        es = parse_entity_set(text)
        assert es.surfaces("PERSON") == ("George Bush", "Condoleezza Rice")
        assert serialize_entity_set(es) == text


class TestParseErrors:
    @pytest.mark.parametrize("text", [
        "", "PERSON: [x]", "{PERSON [x]}", "{PERSON: [x}", "{PERSON: x}",
        "{PERSON: []", "{: [x]}", "{PERSON: [x]} junk",
    ])
    def test_malformed_inputs_raise(self, text):
        with pytest.raises(EntityParseError):
            parse_entity_set(text)

    def test_empty_braces_parse_to_empty_set(self):
        assert parse_entity_set("{}").is_empty()

    @pytest.mark.parametrize("text", [
        "{PERSON: [x],}", "{PERSON: [x,]}", "{ PERSON : [ x , y ] }",
    ])
    def test_trailing_commas_and_whitespace_tolerated(self, text):
        assert parse_entity_set(text).surfaces("PERSON")[0] == "x"

    def test_error_carries_offset(self):
        with pytest.raises(EntityParseError) as exc:
            parse_entity_set("{PERSON: [x}")
        assert exc.value.offset == 11 and exc.value.raw == "{PERSON: [x}"


class TestSignature:
    def test_order_insensitive(self):
        a = EntitySet({"PERSON": ["Mira Holt", "Omar Rask"], "GPE": ["Talin"]})
        b = EntitySet({"GPE": ["Talin"], "PERSON": ["Omar Rask", "Mira Holt"]})
        assert entity_signature(a) == entity_signature(b)

    def test_case_fold(self):
        a = EntitySet({"PERSON": ["OMAR RASK"]})
        b = EntitySet({"PERSON": ["omar rask"]})
        assert entity_signature(a) == entity_signature(b)

    def test_distinct_sets_differ(self):
        a = EntitySet({"PERSON": ["Omar Rask"]})
        b = EntitySet({"GPE": ["Omar Rask"]})
        assert entity_signature(a) != entity_signature(b)

    @settings(max_examples=200, deadline=None)
    @given(entity_sets)
    def test_signature_stable_under_reserialization(self, es):
        again = parse_entity_set(serialize_entity_set(es))
        assert entity_signature(again) == entity_signature(es)


class TestFindSurfaces:
    INVENTORY = [("Omar Rask", "PERSON"), ("Talin", "GPE"), ("k1", "CODE")]

    def test_word_bounded_case_folded(self):
        hits = find_surfaces("OMAR RASK spoke in talin .", self.INVENTORY)
        assert ("Omar Rask", "PERSON") in hits
        assert ("Talin", "GPE") in hits

    def test_substring_does_not_match(self):
        assert find_surfaces("Talinta is not Talin's name", [("Talin", "GPE")]) == [
            ("Talin", "GPE")]  # the possessive occurrence, not Talinta

    def test_no_hits(self):
        assert find_surfaces("nothing relevant here", self.INVENTORY) == []


def test_flatten_lists_surfaces_in_order():
    es = EntitySet({"PERSON": ["Omar Rask"], "GPE": ["Talin"]})
    assert flatten_entity_set(es) == ["Omar Rask", "Talin"]


def test_flatten_dedups_across_types():
    es = EntitySet({"PERSON": ["Soleya"], "GPE": ["soleya", "Talin"]})
    assert flatten_entity_set(es) == ["Soleya", "Talin"]
