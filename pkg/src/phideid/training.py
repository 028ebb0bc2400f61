"""SGD training with per-epoch validation, epoch selection and multi-seed runs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Document
from .embedding import CharVocab, Config, TokenVocab, load_pretrained
from .evaluation import BINARY_HIPAA, MetricReport, aggregate, full_report
from .features import CATALOG, FeatureSchema, Resources, feature_matrix
from .neural.autodiff import Tape
from .neural.optim import SgdConfig, sgd_step
from .neural.rng import Rng
from .tagger import Example, Tagger, predict_example
from .tokenizer import project_labels, tokenize_document

log = logging.getLogger(__name__)

CRITERIA = ("f1", "recall")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LabeledSequence:
    surfaces: tuple[str, ...]
    features: np.ndarray  # (T, len(CATALOG)) over the full catalog
    labels: tuple[str, ...]
    doc_id: str

    def __len__(self) -> int:
        return len(self.surfaces)


def prepare_documents(docs: Sequence[Document], resources: Resources | None = None,
                      schema: FeatureSchema = CATALOG) -> list[LabeledSequence]:
    """Tokenize, label and featurize; features are computed once for ``schema``."""
    if len(schema) and resources is None:
        resources = Resources.load()
    out = []
    for doc in docs:
        for seq in tokenize_document(doc.text, doc_id=doc.doc_id):
            feats = feature_matrix(seq, doc.metadata, schema, resources)
            out.append(LabeledSequence(tuple(seq.surfaces), feats, tuple(project_labels(seq, doc.annotations)),
                                       doc.doc_id))
    return out


def select_columns(source: FeatureSchema, target: FeatureSchema) -> np.ndarray:
    pos = {name: i for i, name in enumerate(source.names)}
    missing = [n for n in target.names if n not in pos]
    if missing:
        raise TrainingError(f"feature {missing[0]!r} was not extracted")
    return np.array([pos[n] for n in target.names], dtype=np.int64)


def to_examples(model: Tagger, data: Sequence[LabeledSequence], source: FeatureSchema = CATALOG) -> list[Example]:
    cols = select_columns(source, model.schema)
    return [model.encode(s.surfaces, s.features[:, cols] if len(cols) else None, s.labels, s.doc_id) for s in data]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    validation: MetricReport
    checkpoint: str | None = None
    train_loss: float = math.nan

    def metric(self, criterion: str, scope: str = BINARY_HIPAA) -> float:
        m = self.validation[scope]
        return m.f1 if criterion == "f1" else m.recall


def _check_criterion(criterion: str) -> None:
    if criterion not in CRITERIA:
        raise TrainingError(f"unknown selection criterion {criterion!r}; expected one of {CRITERIA}")


def select_epoch(records: Sequence[EpochRecord], criterion: str = "f1", scope: str = BINARY_HIPAA) -> EpochRecord:
    """Best record by the criterion; the earliest epoch wins ties."""
    _check_criterion(criterion)
    if not records:
        raise TrainingError("no epochs to select from")
    best = records[0]
    for r in records[1:]:
        if r.metric(criterion, scope) > best.metric(criterion, scope):
            best = r
    return best


def evaluate(model: Tagger, examples: Sequence[Example]) -> MetricReport:
    gold = [model.label_set.decode(ex.gold) for ex in examples]
    pred = [predict_example(model, ex).labels for ex in examples]
    return full_report(gold, pred)


@dataclass
class TrainResult:
    model: Tagger
    records: list[EpochRecord]
    snapshots: dict[int, dict[str, np.ndarray]] = field(repr=False, default_factory=dict)

    def restore(self, epoch: int) -> Tagger:
        self.model.load_values(self.snapshots[epoch])
        return self.model


def build_model(cfg: Config, schema: FeatureSchema, train: Sequence[LabeledSequence], seed: int,
                embeddings: str | Path | None = None) -> Tagger:
    surfaces = [s for seq in train for s in seq.surfaces]
    chars = CharVocab.build(surfaces)
    tokens = TokenVocab.build(surfaces)
    rng = Rng(seed)
    table = None
    if embeddings is not None:
        table = load_pretrained(embeddings, tokens, cfg.d_token, rng.derive("embedding"))
    return Tagger.init(cfg, schema, chars, tokens, rng.derive("model"), token_table=table)


def train(cfg: Config, schema: FeatureSchema, train_data: Sequence[LabeledSequence],
          val_data: Sequence[LabeledSequence], seed: int | None = None, criterion: str = "f1",
          out_dir: str | Path | None = None, embeddings: str | Path | None = None,
          source_schema: FeatureSchema = CATALOG, on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """One run: shuffle, one SGD step per sequence, validate, checkpoint, stop on patience."""
    _check_criterion(criterion)
    if not train_data or not val_data:
        raise TrainingError("train and validation splits must be nonempty")
    seed = cfg.seed if seed is None else seed
    model = build_model(cfg, schema, train_data, seed, embeddings)
    train_ex = to_examples(model, train_data, source_schema)
    val_ex = to_examples(model, val_data, source_schema)
    rng = Rng(seed)
    order_rng, drop_rng = rng.derive("shuffle"), rng.derive("dropout")
    sgd = SgdConfig(cfg.learning_rate, cfg.clip_norm, cfg.dropout_p)
    params = model.parameters()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model, [])
    best, since_best = -math.inf, 0
    for epoch in range(1, cfg.max_epochs + 1):
        total = 0.0
        for k in order_rng.permutation(len(train_ex)):
            ex = train_ex[k]
            with Tape() as tape:
                loss = model.loss(ex, training=True, rng=drop_rng)
                value = float(loss.value)
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, sequence {k} (document {ex.doc_id})")
                grads = tape.backward(loss)
            sgd_step(params, grads, sgd)
            total += value
        report = evaluate(model, val_ex)
        ckpt = None
        if out is not None:
            ckpt = str(model.save(out / f"epoch{epoch:03d}.ckpt", {"epoch": epoch, "seed": seed}))
        result.snapshots[epoch] = model.snapshot()
        rec = EpochRecord(epoch, report, ckpt, total / len(train_ex))
        result.records.append(rec)
        m = report[BINARY_HIPAA]
        log.info("%d\t%.2f\t%.2f\t%.2f\t%s", epoch, m.precision, m.recall, m.f1, ckpt or "-")
        if on_epoch is not None:
            on_epoch(rec)
        score = rec.metric(criterion)
        if score > best:
            best, since_best = score, 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return result


def log_line(rec: EpochRecord) -> str:
    m = rec.validation[BINARY_HIPAA]
    return f"{rec.epoch}\t{m.precision:.2f}\t{m.recall:.2f}\t{m.f1:.2f}\t{rec.checkpoint or '-'}"


def prune_checkpoints(records: Sequence[EpochRecord], keep: Sequence[EpochRecord]) -> None:
    keep_paths = {r.checkpoint for r in keep}
    for r in records:
        if r.checkpoint and r.checkpoint not in keep_paths:
            for p in (Path(r.checkpoint), Path(r.checkpoint + ".json")):
                p.unlink(missing_ok=True)


@dataclass(frozen=True)
class RunResult:
    seed: int
    records: tuple[EpochRecord, ...]
    selected: EpochRecord
    test: MetricReport


@dataclass(frozen=True)
class RunSet:
    runs: tuple[RunResult, ...]
    mean: MetricReport
    criterion: str

    def manifest(self, cfg: Config, schema: FeatureSchema, extra: dict | None = None) -> dict:
        return {
            "config": cfg.to_dict(),
            "criterion": self.criterion,
            "schema_length": len(schema),
            "schema_hash": schema.hash,
            "seeds": [r.seed for r in self.runs],
            "runs": [
                {
                    "seed": r.seed,
                    "selected_epoch": r.selected.epoch,
                    "checkpoint": r.selected.checkpoint,
                    "epochs": [{"epoch": e.epoch, "train_loss": e.train_loss,
                                "validation": e.validation.to_dict()["scopes"][BINARY_HIPAA]} for e in r.records],
                    "test": r.test.to_dict(),
                }
                for r in self.runs
            ],
            "mean_test": self.mean.to_dict(),
            **(extra or {}),
        }


def run_experiment(cfg: Config, schema: FeatureSchema, train_data: Sequence[LabeledSequence],
                   val_data: Sequence[LabeledSequence], test_data: Sequence[LabeledSequence], seeds: Sequence[int],
                   criterion: str = "recall", out_dir: str | Path | None = None,
                   embeddings: str | Path | None = None, source_schema: FeatureSchema = CATALOG,
                   keep_all_checkpoints: bool = False) -> RunSet:
    """Train one model per seed, select an epoch per run and score it on test."""
    _check_criterion(criterion)
    seeds = list(seeds)
    if not seeds:
        raise TrainingError("at least one run is required")
    if len(set(seeds)) != len(seeds):
        raise TrainingError(f"seeds must be distinct, got {seeds}")
    runs = []
    for seed in seeds:
        run_dir = Path(out_dir) / f"seed{seed}" if out_dir is not None else None
        res = train(cfg, schema, train_data, val_data, seed, criterion, run_dir, embeddings, source_schema)
        chosen = select_epoch(res.records, criterion)
        model = res.restore(chosen.epoch)
        test = evaluate(model, to_examples(model, test_data, source_schema))
        if run_dir is not None:
            (run_dir / "train.log").write_text("".join(log_line(r) + "\n" for r in res.records))
            if not keep_all_checkpoints:
                prune_checkpoints(res.records, [chosen])
        runs.append(RunResult(seed, tuple(res.records), chosen, test))
    return RunSet(tuple(runs), aggregate([r.test for r in runs]), criterion)


def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
