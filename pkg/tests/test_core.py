import pytest
from hypothesis import given, strategies as st

from tablefill.core import (
    EntitySpan,
    Label,
    LabelTable,
    NUM_LABELS,
    RelationSchema,
    Sentence,
    Triple,
    ValidationError,
    canonical_triple_set,
)


def test_label_set():
    assert NUM_LABELS == 8
    assert [l.text for l in Label] == ["N/A", "MMH", "MMT", "MSH", "MST", "SMH", "SMT", "SS"]
    assert Label.NA == 0


@pytest.mark.parametrize("label", list(Label))
def test_label_code_round_trip(label):
    assert Label(int(label)) is label
    assert Label.from_text(label.text) is label


def test_label_roles():
    assert {l for l in Label if l.is_head} == {Label.MMH, Label.MSH, Label.SMH}
    assert {l for l in Label if l.is_tail} == {Label.MMT, Label.MST, Label.SMT}
    assert Label.MSH.subject_multi and not Label.MSH.object_multi


def test_span_validation():
    assert EntitySpan(2, 2).is_single
    assert EntitySpan(1, 3).length == 3
    with pytest.raises(ValidationError):
        EntitySpan(3, 2)
    with pytest.raises(ValidationError):
        EntitySpan(-1, 0)
    with pytest.raises(ValidationError):
        EntitySpan(0, 4).check(4)


def test_sentence_validation():
    assert len(Sentence("s", ["a", "b"])) == 2
    with pytest.raises(ValidationError):
        Sentence("s", [])
    with pytest.raises(ValidationError):
        Sentence("s", ["a"] * 101)
    with pytest.raises(ValidationError):
        Sentence("s", ["a", ""])


def test_schema():
    schema = RelationSchema(["live_in", "located_in"])
    assert schema.id("located_in") == 1 and schema.name(0) == "live_in" and len(schema) == 2
    with pytest.raises(ValidationError):
        RelationSchema(["a", "a"])
    with pytest.raises(ValidationError):
        schema.id("missing")


t1 = Triple.of(0, 0, 0, 2, 2)
t2 = Triple.of(0, 1, 0, 2, 2)


def test_canonical_examples():
    assert canonical_triple_set([]) == []
    assert canonical_triple_set([t1, t1]) == [t1]
    assert canonical_triple_set([t2, t1]) == [t1, t2]


def test_canonical_order_is_relation_first():
    a = Triple.of(5, 5, 0, 6, 6)
    b = Triple.of(0, 0, 1, 1, 1)
    assert canonical_triple_set([b, a]) == [a, b]


def test_canonical_validation_names_triple():
    bad = Triple.of(0, 5, 0, 1, 1)
    with pytest.raises(ValidationError, match="invalid triple"):
        canonical_triple_set([bad], n=3, num_relations=1)
    with pytest.raises(ValidationError, match="relation"):
        canonical_triple_set([Triple.of(0, 0, 3, 1, 1)], n=3, num_relations=2)


spans = st.tuples(st.integers(0, 6), st.integers(0, 3)).map(lambda p: EntitySpan(p[0], p[0] + p[1]))
triples = st.builds(Triple, spans, st.integers(0, 3), spans)


@given(st.lists(triples, max_size=12), st.randoms())
def test_canonical_idempotent_and_order_insensitive(ts, rnd):
    once = canonical_triple_set(ts)
    assert canonical_triple_set(once) == once
    shuffled = list(ts)
    rnd.shuffle(shuffled)
    assert canonical_triple_set(shuffled) == once


def test_label_table():
    t = LabelTable.empty(2, 3)
    assert t.grid.shape == (2, 3, 3) and t[1, 2, 2] is Label.NA
    with pytest.raises(ValidationError):
        LabelTable([[[9]]])
    with pytest.raises(ValidationError):
        LabelTable([[[0, 0]]])
