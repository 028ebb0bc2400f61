"""Label prediction bi-LSTM and the linear-chain CRF on top of it.

Transition matrices are ``(K + 2, K + 2)``: row ``K`` holds START -> label
scores and column ``K + 1`` holds label -> END scores.  The START column and
the END row are never read, which is equivalent to masking them with -inf
while keeping every stored value finite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import PHI_TYPES, Annotation, EhrMetadata
from .embedding import (
    CharVocab, Config, EmbeddingParams, EncodedTokens, TokenVocab, embed, embed_sequence, encode_tokens,
)
from .features import FeatureSchema, Resources, feature_matrix
from .neural import autodiff as ad
from .neural import kernels
from .neural.autodiff import Parameter, Tensor
from .neural.checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .neural.layers import LstmParams, bilstm, glorot, lstm_sequence
from .neural.rng import Rng
from .tokenizer import OUTSIDE, TokenSequence, label_type, spans_from_labels, tokenize_document

MODEL_FORMAT = "phideid-bilstm-crf"


class TaggerError(ValueError):
    pass


class SchemaMismatchError(TaggerError):
    pass


class LabelSet:
    """``O`` followed by ``B-``/``I-`` pairs for each PHI type."""

    def __init__(self, labels: Sequence[str] | None = None):
        if labels is None:
            labels = [OUTSIDE] + [f"{p}-{t.value}" for t in PHI_TYPES for p in ("B", "I")]
        self.labels = list(labels)
        if len(set(self.labels)) != len(self.labels) or not self.labels:
            raise TaggerError("labels must be unique and nonempty")
        self.index = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelSet) and self.labels == other.labels

    @property
    def start(self) -> int:
        return len(self.labels)

    @property
    def end(self) -> int:
        return len(self.labels) + 1

    def encode(self, labels: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.index[lab] for lab in labels], dtype=np.int64)
        except KeyError as exc:
            raise TaggerError(f"unknown label {exc.args[0]!r}") from None

    def decode(self, indices: Sequence[int]) -> tuple[str, ...]:
        return tuple(self.labels[int(i)] for i in indices)


@dataclass(frozen=True)
class TagSequence:
    labels: tuple[str, ...]
    score: float = 0.0
    path: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.labels)


# --- CRF on plain arrays ---------------------------------------------------------

def _check_crf(em: np.ndarray, trans: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    em = np.ascontiguousarray(em, dtype=np.float64)
    trans = np.ascontiguousarray(trans, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] == 0 or em.shape[1] == 0:
        raise TaggerError(f"emissions must be a nonempty (T, K) matrix, got {em.shape}")
    K = em.shape[1]
    if trans.shape != (K + 2, K + 2):
        raise TaggerError(f"transitions {trans.shape} do not fit {K} labels")
    return em, trans


def path_score(em: np.ndarray, trans: np.ndarray, path: Sequence[int]) -> float:
    em, trans = _check_crf(em, trans)
    if len(path) != em.shape[0]:
        raise TaggerError("path length differs from sequence length")
    return ad.crf_path_score(em, trans, [int(p) for p in path])


def log_partition(em: np.ndarray, trans: np.ndarray) -> float:
    em, trans = _check_crf(em, trans)
    return float(kernels.crf_log_partition(em, trans))


def nll_loss(em: np.ndarray, trans: np.ndarray, gold: Sequence[int]) -> float:
    em, trans = _check_crf(em, trans)
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (em.shape[0],):
        raise TaggerError("gold length differs from sequence length")
    if gold.min() < 0 or gold.max() >= em.shape[1]:
        raise TaggerError("gold label index out of range")
    return log_partition(em, trans) - path_score(em, trans, gold)


def marginals(em: np.ndarray, trans: np.ndarray) -> np.ndarray:
    em, trans = _check_crf(em, trans)
    return kernels.crf_forward_backward(em, trans)[1]


def viterbi(em: np.ndarray, trans: np.ndarray, label_set: LabelSet | None = None) -> TagSequence:
    """Best path; ties go to the lower label index."""
    em, trans = _check_crf(em, trans)
    path, score = kernels.viterbi(em, trans)
    path = tuple(int(p) for p in path)
    labels = label_set.decode(path) if label_set is not None else tuple(str(p) for p in path)
    return TagSequence(labels, float(score), path)


def repair_bio(tags: TagSequence | Sequence[str]) -> TagSequence | list[str]:
    """Turn every I-X that does not continue an X span into B-X."""
    labels = list(tags.labels if isinstance(tags, TagSequence) else tags)
    prev = OUTSIDE
    for i, lab in enumerate(labels):
        if lab.startswith("I-") and label_type(prev) != lab[2:]:
            labels[i] = "B-" + lab[2:]
        prev = labels[i]
    if isinstance(tags, TagSequence):
        return TagSequence(tuple(labels), tags.score, tags.path)
    return labels


# --- model -----------------------------------------------------------------------

@dataclass(frozen=True)
class Example:
    enc: EncodedTokens
    gold: np.ndarray | None = None
    doc_id: str = ""

    def __len__(self) -> int:
        return len(self.enc)


@dataclass
class Tagger:
    cfg: Config
    schema: FeatureSchema
    label_set: LabelSet
    chars: CharVocab
    tokens: TokenVocab
    emb: EmbeddingParams
    label_fwd: LstmParams
    label_bwd: LstmParams
    out_W: Parameter
    out_b: Parameter
    trans: Parameter
    _singletons: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)

    @classmethod
    def init(cls, cfg: Config, schema: FeatureSchema, chars: CharVocab, tokens: TokenVocab, rng: Rng,
             label_set: LabelSet | None = None, token_table: np.ndarray | None = None) -> "Tagger":
        label_set = label_set or LabelSet()
        K = len(label_set)
        emb = EmbeddingParams.init(cfg, chars, tokens, len(schema), rng.derive("embedding"), token_table)
        d_in = cfg.embedding_dim(len(schema))
        H = cfg.d_label_lstm
        model = cls(
            cfg=cfg, schema=schema, label_set=label_set, chars=chars, tokens=tokens, emb=emb,
            label_fwd=LstmParams.init("label_fwd", d_in, H, rng.derive("label_fwd")),
            label_bwd=LstmParams.init("label_bwd", d_in, H, rng.derive("label_bwd")),
            out_W=Parameter(glorot(rng.derive("out_W"), 2 * H, K), "out_W"),
            out_b=Parameter(np.zeros(K), "out_b"),
            trans=Parameter(np.zeros((K + 2, K + 2)), "transitions"),
        )
        model._singletons = np.array(sorted(tokens.singletons()), dtype=np.int64)
        return model

    def parameters(self) -> list[Parameter]:
        return [*self.emb.parameters(), *self.label_fwd.parameters(), *self.label_bwd.parameters(),
                self.out_W, self.out_b, self.trans]

    @property
    def embedding_dim(self) -> int:
        return self.cfg.embedding_dim(len(self.schema))

    def encode(self, surfaces: Sequence[str], features: np.ndarray | None, labels: Sequence[str] | None = None,
               doc_id: str = "") -> Example:
        if features is None and len(self.schema):
            raise SchemaMismatchError("model expects feature vectors but none were given")
        if features is not None and np.shape(features)[1:] != (len(self.schema),):
            raise SchemaMismatchError(
                f"feature vectors have {np.shape(features)[1:]} columns, model schema has {len(self.schema)}")
        enc = encode_tokens(surfaces, features, self.chars, self.tokens)
        gold = self.label_set.encode(labels) if labels is not None else None
        return Example(enc, gold, doc_id)

    # taped forward -------------------------------------------------------------
    def _token_ids(self, enc: EncodedTokens, rng: Rng | None, training: bool) -> np.ndarray:
        ids = enc.token_ids
        if not training or rng is None or not self.cfg.unk_replace_p or not self._singletons.size:
            return ids
        single = np.isin(ids, self._singletons)
        if not single.any():
            return ids
        drop = single & (rng.random(ids.size) < self.cfg.unk_replace_p)
        return np.where(drop, 0, ids)

    def emissions_tensor(self, ex: Example, training: bool = False, rng: Rng | None = None) -> Tensor:
        x = embed_sequence(ex.enc, self.emb, self.cfg, rng, training, self._token_ids(ex.enc, rng, training))
        T, D = x.shape
        xs = ad.reshape(x, (T, 1, D))
        rev = np.arange(T - 1, -1, -1)
        hf = lstm_sequence(self.label_fwd, xs)
        hb = ad.rows(lstm_sequence(self.label_bwd, ad.rows(xs, rev)), rev)
        H = self.cfg.d_label_lstm
        h = ad.reshape(ad.concat([hf, hb], axis=2), (T, 2 * H))
        return ad.affine(h, self.out_W, self.out_b)

    def loss(self, ex: Example, training: bool = False, rng: Rng | None = None) -> Tensor:
        if ex.gold is None:
            raise TaggerError("loss needs gold labels")
        return ad.crf_nll(self.emissions_tensor(ex, training, rng), self.trans, ex.gold)

    def emissions(self, ex: Example) -> np.ndarray:
        return self.emissions_tensor(ex, training=False).value

    # reference forward on plain arrays --------------------------------------------
    def emissions_reference(self, surfaces: Sequence[str], features: np.ndarray | None) -> np.ndarray:
        """Token-at-a-time forward pass used to cross-check :meth:`emissions`."""
        if not surfaces:
            raise TaggerError("emissions: empty sequence")
        feats = np.zeros((len(surfaces), 0)) if features is None else np.asarray(features, dtype=np.float64)
        xs = [embed(s, f, self.chars, self.tokens, self.emb, self.cfg) for s, f in zip(surfaces, feats)]
        states = bilstm(self.label_fwd, self.label_bwd, xs)
        return np.array([s @ self.out_W.value + self.out_b.value for s in states])

    # persistence -------------------------------------------------------------------
    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        header = {
            "format": MODEL_FORMAT,
            "config": self.cfg.to_dict(),
            "schema": [list(e) for e in self.schema.entries],
            "schema_hash": self.schema.hash,
            "labels": self.label_set.labels,
            "chars": self.chars.items,
            "tokens": self.tokens.items,
            "extra": extra or {},
        }
        return write_checkpoint(path, header, {p.name: p.value for p in self.parameters()})

    @classmethod
    def load(cls, path: str | Path) -> "Tagger":
        header, tensors = read_checkpoint(path)
        if header.get("format") != MODEL_FORMAT:
            raise CheckpointError(f"{path}: not a tagger checkpoint")
        schema = FeatureSchema(tuple((n, f) for n, f in header["schema"]))
        if schema.hash != header["schema_hash"]:
            raise SchemaMismatchError(f"{path}: stored schema does not match its hash")
        cfg = Config.from_dict(header["config"])
        chars = CharVocab(header["chars"][1:])
        tokens = TokenVocab(header["tokens"][1:])
        if chars.items != header["chars"] or tokens.items != header["tokens"]:
            raise CheckpointError(f"{path}: vocabulary order is not canonical")
        model = cls.init(cfg, schema, chars, tokens, Rng(0), LabelSet(header["labels"]))
        model.load_values(tensors)
        return model

    def load_values(self, tensors: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        if set(params) != set(tensors):
            raise CheckpointError("checkpoint tensors do not match the model's parameters")
        for name, p in params.items():
            if tensors[name].shape != p.shape:
                raise CheckpointError(f"tensor {name!r} has shape {tensors[name].shape}, expected {p.shape}")
            p.value[...] = tensors[name]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}


# --- inference ---------------------------------------------------------------------

def predict(model: Tagger, surfaces: Sequence[str], features: np.ndarray | None,
            schema: FeatureSchema | None = None) -> TagSequence:
    """Embed, score, decode and repair one sequence with dropout off."""
    if not len(surfaces):
        raise TaggerError("predict: empty sequence")
    if schema is not None and schema.hash != model.schema.hash:
        raise SchemaMismatchError(f"feature schema {schema.hash} does not match the model's {model.schema.hash}")
    ex = model.encode(surfaces, features)
    return predict_example(model, ex)


def predict_example(model: Tagger, ex: Example) -> TagSequence:
    em = model.emissions(ex)
    return repair_bio(viterbi(em, model.trans.value, model.label_set))


def tag_document(model: Tagger, text: str, meta: EhrMetadata, resources: Resources | None = None,
                 doc_id: str = "") -> tuple[list[TokenSequence], list[tuple[str, ...]], list[Annotation]]:
    """Tokenize, featurize and tag a note; returns sequences, labels and merged spans."""
    sequences = tokenize_document(text, doc_id=doc_id)
    labels = []
    spans: list[Annotation] = []
    for seq in sequences:
        feats = feature_matrix(seq, meta, model.schema, resources) if len(model.schema) else None
        tags = predict(model, seq.surfaces, feats)
        labels.append(tags.labels)
        spans.extend(spans_from_labels(seq.tokens, tags.labels, text))
    return sequences, labels, spans
