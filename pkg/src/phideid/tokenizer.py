"""Tokenization, sentence segmentation and gold-label projection.

Tokens are maximal letter runs, maximal digit runs, or single symbol
characters; offsets always index the original text.  Labels use BIO2 strings
such as ``"B-Patient"``.
"""
from __future__ import annotations

import bisect
import re
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .corpus import Annotation, PhiType

_TOKEN = re.compile(r"[^\W\d_]+|\d+|\S")
_BLANK_LINE = re.compile(r"\n[ \t\r\f\v]*\n")
_SENTENCE_END = frozenset(".?!")

DEFAULT_MAX_LEN = 250
OUTSIDE = "O"


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int
    sequence_index: int = 0


@dataclass
class TokenSequence:
    tokens: list[Token]
    doc_id: str = ""

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]


def tokenize(text: str) -> list[Token]:
    return [Token(m.group(), m.start(), m.end(), i) for i, m in enumerate(_TOKEN.finditer(text))]


def _is_boundary(prev: Token, nxt: Token, text: str) -> bool:
    gap = text[prev.end:nxt.start]
    if _BLANK_LINE.search(gap):
        return True
    return prev.surface in _SENTENCE_END and gap != "" and gap.isspace() and nxt.surface[0].isupper()


def segment(tokens: Sequence[Token], text: str, max_len: int = DEFAULT_MAX_LEN, doc_id: str = "") -> list[TokenSequence]:
    """Split at sentence ends or blank lines, then hard-split overlong pieces."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    groups: list[list[Token]] = []
    current: list[Token] = []
    for tok in tokens:
        if current and _is_boundary(current[-1], tok, text):
            groups.append(current)
            current = []
        current.append(tok)
    if current:
        groups.append(current)
    out = []
    for g in groups:
        for lo in range(0, len(g), max_len):
            chunk = [replace(t, sequence_index=i) for i, t in enumerate(g[lo:lo + max_len])]
            out.append(TokenSequence(chunk, doc_id))
    return out


def tokenize_document(text: str, max_len: int = DEFAULT_MAX_LEN, doc_id: str = "") -> list[TokenSequence]:
    return segment(tokenize(text), text, max_len, doc_id)


def project_labels(seq: TokenSequence | Sequence[Token], annotations: Sequence[Annotation]) -> list[str]:
    """BIO2 labels: a token overlapping a span by >= 1 character takes its type."""
    tokens = seq.tokens if isinstance(seq, TokenSequence) else list(seq)
    anns = sorted(annotations, key=lambda a: a.start)
    starts = [a.start for a in anns]
    labels = []
    opened: set[int] = set()
    for tok in tokens:
        # spans are disjoint and sorted, so the hits form a run ending at hi - 1
        hi = bisect.bisect_left(starts, tok.end)
        hits = []
        k = hi - 1
        while k >= 0 and anns[k].end > tok.start:
            hits.append(k)
            k -= 1
        if len(hits) > 1:
            raise LabelError(f"token {tok.surface!r} at [{tok.start}, {tok.end}) overlaps {len(hits)} annotations")
        if not hits:
            labels.append(OUTSIDE)
            continue
        k = hits[0]
        prefix = "I" if k in opened else "B"
        opened.add(k)
        labels.append(f"{prefix}-{anns[k].phi_type.value}")
    return labels


def label_type(label: str) -> str | None:
    return None if label == OUTSIDE else label[2:]


def spans_from_labels(tokens: Sequence[Token], labels: Sequence[str], text: str = "") -> list[Annotation]:
    """Merge B/I runs of one type into character spans (first start .. last end)."""
    if len(tokens) != len(labels):
        raise LabelError("tokens and labels differ in length")
    spans: list[tuple[str, int, int]] = []
    cur: list | None = None
    for tok, lab in zip(tokens, labels):
        kind = label_type(lab)
        if kind is None:
            cur = None
            continue
        if cur is not None and lab.startswith("I-") and cur[0] == kind:
            cur[2] = tok.end
            continue
        cur = [kind, tok.start, tok.end]
        spans.append(cur)
    return [Annotation(PhiType.parse(k), s, e, text[s:e] if text else "") for k, s, e in spans]


def conll_lines(sequences: Iterable[TokenSequence], labels: Iterable[Sequence[str]] | None = None) -> str:
    """``surface<TAB>start<TAB>end<TAB>label`` rows, blank line between sequences."""
    out = []
    label_iter = iter(labels) if labels is not None else None
    for seq in sequences:
        labs = next(label_iter) if label_iter is not None else [OUTSIDE] * len(seq)
        for tok, lab in zip(seq.tokens, labs):
            out.append(f"{tok.surface}\t{tok.start}\t{tok.end}\t{lab}\n")
        out.append("\n")
    return "".join(out)
