"""Token-level precision, recall and F1 for binary and per-type scopes.

Scopes:

* ``binary-all``: a token is positive iff its label is not ``O``.
* ``binary-hipaa``: gold positives are tokens of HIPAA-required types.  A
  gold HIPAA token predicted as any PHI type is a true positive; a prediction
  of a HIPAA type on a token that is not gold HIPAA PHI is a false positive.
  Non-HIPAA types are otherwise ignored.
* one scope per PHI type: positive iff the label carries exactly that type.

When a denominator is empty the metric is 100 if there was nothing to find,
else 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import PHI_TYPES, PhiType
from .tokenizer import label_type

BINARY_HIPAA = "binary-hipaa"
BINARY_ALL = "binary-all"
TYPE_SCOPES = tuple(t.value for t in PHI_TYPES)
SCOPES = TYPE_SCOPES + (BINARY_HIPAA, BINARY_ALL)

_HIPAA = frozenset(t.value for t in PHI_TYPES if t.hipaa_required)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def support(self) -> int:
        return self.tp + self.fn


@dataclass(frozen=True)
class ScopeMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricReport:
    rows: dict[str, ScopeMetrics]
    n_runs: int = 1

    def __getitem__(self, scope: str) -> ScopeMetrics:
        return self.rows[scope]

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "scopes": {s: {"precision": round(m.precision, 3), "recall": round(m.recall, 3),
                           "f1": round(m.f1, 3), "support": m.support} for s, m in self.rows.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        rows = {s: ScopeMetrics(v["precision"], v["recall"], v["f1"], v["support"]) for s, v in data["scopes"].items()}
        return cls(rows, data.get("n_runs", 1))


def _positive(label: str, scope: str) -> bool:
    kind = label_type(label)
    if kind is None:
        return False
    if scope == BINARY_ALL:
        return True
    if scope == BINARY_HIPAA:
        return kind in _HIPAA
    return kind == scope


def token_confusion(gold: Sequence[str], pred: Sequence[str], scope: str | PhiType) -> ConfusionCounts:
    scope = scope.value if isinstance(scope, PhiType) else scope
    if scope not in SCOPES:
        raise EvaluationError(f"unknown scope {scope!r}")
    if len(gold) != len(pred):
        raise EvaluationError(f"gold has {len(gold)} tokens, prediction has {len(pred)}")
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        g_pos = _positive(g, scope)
        if scope == BINARY_HIPAA:
            # any PHI prediction detects a HIPAA token
            p_pos = label_type(p) is not None if g_pos else _positive(p, scope)
        else:
            p_pos = _positive(p, scope)
        tp += g_pos and p_pos
        fp += p_pos and not g_pos
        fn += g_pos and not p_pos
    return ConfusionCounts(tp, fp, fn)


def metrics(counts: ConfusionCounts) -> tuple[float, float, float]:
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    nothing_to_find = tp + fn == 0
    p = 100.0 * tp / (tp + fp) if tp + fp else (100.0 if nothing_to_find else 0.0)
    r = 100.0 * tp / (tp + fn) if tp + fn else (100.0 if tp + fp == 0 else 0.0)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def full_report(gold: Iterable[Sequence[str]], pred: Iterable[Sequence[str]]) -> MetricReport:
    """Report over aligned label sequences (one per sentence or document)."""
    totals = {s: ConfusionCounts() for s in SCOPES}
    gold, pred = list(gold), list(pred)
    if len(gold) != len(pred):
        raise EvaluationError(f"{len(gold)} gold sequences vs {len(pred)} predicted")
    for k, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise EvaluationError(f"sequence {k}: token misalignment ({len(g)} gold vs {len(p)} predicted)")
        for s in SCOPES:
            totals[s] = totals[s] + token_confusion(g, p, s)
    return report_from_counts(totals)


def report_from_counts(counts: dict[str, ConfusionCounts]) -> MetricReport:
    return MetricReport({s: ScopeMetrics(*metrics(c), c.support) for s, c in counts.items()})


def aggregate(reports: Sequence[MetricReport]) -> MetricReport:
    """Arithmetic mean of every cell; scopes and supports must agree."""
    if not reports:
        raise EvaluationError("nothing to aggregate")
    first = reports[0]
    for r in reports[1:]:
        if list(r.rows) != list(first.rows):
            raise EvaluationError("reports have different scopes")
        for s, m in r.rows.items():
            if m.support != first.rows[s].support:
                raise EvaluationError(f"support differs for scope {s!r}")
    n = len(reports)
    rows = {}
    for s, m in first.rows.items():
        cells = [r.rows[s] for r in reports]
        rows[s] = ScopeMetrics(
            sum(c.precision for c in cells) / n,
            sum(c.recall for c in cells) / n,
            sum(c.f1 for c in cells) / n,
            m.support,
        )
    return MetricReport(rows, sum(r.n_runs for r in reports))


def format_tsv(report: MetricReport) -> str:
    lines = ["scope\tP\tR\tF1\tsupport"]
    for s, m in report.rows.items():
        lines.append(f"{s}\t{m.precision:.2f}\t{m.recall:.2f}\t{m.f1:.2f}\t{m.support}")
    return "\n".join(lines) + "\n"


def write_report(report: MetricReport, tsv_path: str | Path, json_path: str | Path | None = None) -> None:
    Path(tsv_path).write_text(format_tsv(report))
    if json_path is not None:
        Path(json_path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
