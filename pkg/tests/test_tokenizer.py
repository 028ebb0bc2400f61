import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phideid.corpus import Annotation, PhiType
from phideid.tokenizer import (
    LabelError, Token, conll_lines, project_labels, segment, spans_from_labels, tokenize, tokenize_document,
)


def test_empty_text():
    assert tokenize("") == []


def test_title_abbreviation():
    toks = tokenize("Dr. Smith")
    assert [t.surface for t in toks] == ["Dr", ".", "Smith"]
    assert [(t.start, t.end) for t in toks] == [(0, 2), (2, 3), (4, 9)]


def test_phone_splits_on_class_transitions():
    assert [t.surface for t in tokenize("617-554-2395")] == ["617", "-", "554", "-", "2395"]


def test_hard_split_at_max_len():
    text = " ".join(["w"] * 300)
    seqs = segment(tokenize(text), text, 250)
    assert [len(s) for s in seqs] == [250, 50]
    assert seqs[1].tokens[0].sequence_index == 0


def test_sentence_boundary():
    assert len(tokenize_document("He slept. She left.")) == 2
    assert len(tokenize_document("He slept. she left.")) == 1


def test_blank_line_separates_sections():
    seqs = tokenize_document("HISTORY\n\nMEDS\n  \nPLAN")
    assert [s.surfaces for s in seqs] == [["HISTORY"], ["MEDS"], ["PLAN"]]


def test_segment_rejects_zero_max_len():
    with pytest.raises(ValueError):
        segment(tokenize("a"), "a", 0)


def test_project_two_token_name():
    text = "John Doe"
    labels = project_labels(tokenize(text), [Annotation(PhiType.PATIENT, 0, 8, text)])
    assert labels == ["B-Patient", "I-Patient"]


def test_project_no_annotations():
    assert project_labels(tokenize("a b c"), []) == ["O", "O", "O"]


def test_partial_overlap_labels_whole_token():
    text = "gave Natrecor today"
    assert project_labels(tokenize(text), [Annotation(PhiType.LOCATION, 7, 10, "tre")]) == ["O", "B-Location", "O"]


def test_token_overlapping_two_spans_is_an_error():
    text = "ab"
    anns = [Annotation(PhiType.ID, 0, 1, "a"), Annotation(PhiType.ZIP, 1, 2, "b")]
    with pytest.raises(LabelError):
        project_labels(tokenize(text), anns)


def test_conll_layout():
    seqs = tokenize_document("Dr. Smith\n\nok")
    assert conll_lines(seqs) == "Dr\t0\t2\tO\n.\t2\t3\tO\n\nSmith\t4\t9\tO\n\nok\t11\t13\tO\n\n"


text_st = st.text(alphabet=st.sampled_from(list("ab9-. \n\t'/ÄZ")), max_size=80)


@given(text_st)
@settings(max_examples=200, deadline=None)
def test_lossless(text):
    toks = tokenize(text)
    pos, out = 0, []
    for t in toks:
        assert t.start < t.end and t.surface == text[t.start:t.end] and t.start >= pos
        out.append(text[pos:t.start])
        out.append(t.surface)
        pos = t.end
    out.append(text[pos:])
    assert "".join(out) == text
    assert all(not text[a:b].strip() for a, b in zip([0] + [t.end for t in toks], [t.start for t in toks] + [len(text)]))


@given(text_st, st.integers(1, 20))
@settings(max_examples=100, deadline=None)
def test_segment_preserves_tokens(text, max_len):
    seqs = tokenize_document(text, max_len)
    flat = [(t.surface, t.start, t.end) for s in seqs for t in s.tokens]
    assert flat == [(t.surface, t.start, t.end) for t in tokenize(text)]
    assert all(1 <= len(s) <= max_len for s in seqs)


@st.composite
def annotated(draw):
    text = draw(st.text(alphabet=st.sampled_from(list("ab9- .")), min_size=1, max_size=40))
    cuts = sorted(set(draw(st.lists(st.integers(0, len(text)), max_size=8))))
    anns, types = [], list(PhiType)
    for a, b in zip(cuts[::2], cuts[1::2]):
        while a < b and text[a] == " ":
            a += 1
        while b > a and text[b - 1] == " ":
            b -= 1
        if b > a:
            anns.append(Annotation(draw(st.sampled_from(types)), a, b, text[a:b]))
    return text, anns


@given(annotated())
@settings(max_examples=200, deadline=None)
def test_projection_total_and_spans_widen_only_to_token_edges(case):
    text, anns = case
    toks = tokenize(text)
    try:
        labels = project_labels(toks, anns)
    except LabelError:
        return  # two spans inside one token
    assert len(labels) == len(toks)
    assert project_labels(toks, anns) == labels
    back = spans_from_labels(toks, labels, text)
    assert len(back) == len(anns)
    edges_start, edges_end = {t.start for t in toks}, {t.end for t in toks}
    for g, b in zip(anns, back):
        assert b.phi_type == g.phi_type
        assert b.start <= g.start and b.end >= g.end
        assert b.start in edges_start and b.end in edges_end


def test_gold_i_labels_follow_same_type():
    text = "John Doe 555-1234"
    anns = [Annotation(PhiType.PATIENT, 0, 8, "John Doe"), Annotation(PhiType.PHONE, 9, 17, "555-1234")]
    labels = project_labels(tokenize(text), anns)
    for prev, cur in zip(["O"] + labels, labels):
        if cur.startswith("I-"):
            assert prev != "O" and prev[2:] == cur[2:]


def test_spans_from_labels_length_mismatch():
    with pytest.raises(LabelError):
        spans_from_labels([Token("a", 0, 1)], [])
