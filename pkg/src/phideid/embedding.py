"""Token representation: feature projection, token embedding, character bi-LSTM.

The three blocks are concatenated in that order and dropout is applied once to
the whole vector during training.  Two code paths compute the same function:
``char_encode``/``embed`` work on plain arrays one token at a time and serve as
the reference; ``embed_sequence`` is the taped, batched version used in
training.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .neural import autodiff as ad
from .neural.autodiff import Parameter, Tensor
from .neural.layers import LstmParams, apply_dropout, bilstm, dense, dropout, feedforward, glorot, lstm_sequence
from .neural.rng import Rng

UNK = "<unk>"
PRETRAINED_INIT_SCALE = 0.25


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    d_char: int = 25
    d_char_lstm: int = 25
    d_token: int = 100
    d_label_lstm: int = 100
    dropout_p: float = 0.5
    d_feat: int = 25
    feature_layers: int = 1
    learning_rate: float = 0.005
    clip_norm: float = 5.0
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    # probability of swapping a training singleton for UNK so the UNK row is learned
    unk_replace_p: float = 0.5

    def __post_init__(self):
        for name in ("d_char", "d_char_lstm", "d_token", "d_label_lstm", "d_feat", "feature_layers", "max_epochs"):
            if getattr(self, name) < 1:
                raise EmbeddingError(f"{name} must be >= 1")
        if self.patience < 1:
            raise EmbeddingError("patience must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0 or not 0.0 <= self.unk_replace_p <= 1.0:
            raise EmbeddingError("probabilities must lie in [0, 1)")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise EmbeddingError("learning_rate and clip_norm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise EmbeddingError(f"unknown config key {sorted(unknown)[0]!r}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "Config":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def embedding_dim(self, n_features: int) -> int:
        return (self.d_feat if n_features else 0) + self.d_token + 2 * self.d_char_lstm


class Vocab:
    """String to index map; index 0 is UNK."""

    def __init__(self, items: Iterable[str], counts: dict[str, int] | None = None):
        self.items = [UNK] + sorted(set(items) - {UNK})
        self.index = {s: i for i, s in enumerate(self.items)}
        self.counts = dict(counts or {})

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item: str) -> bool:
        return item in self.index

    def lookup(self, item: str) -> int:
        return self.index.get(item, 0)


class CharVocab(Vocab):
    @classmethod
    def build(cls, surfaces: Iterable[str]) -> "CharVocab":
        return cls({c for s in surfaces for c in s})

    def encode(self, surface: str) -> list[int]:
        return [self.lookup(c) for c in surface]


class TokenVocab(Vocab):
    @classmethod
    def build(cls, surfaces: Iterable[str], extra: Iterable[str] = ()) -> "TokenVocab":
        counts = Counter(s.casefold() for s in surfaces)
        return cls(list(counts) + [e.casefold() for e in extra], counts)

    def lookup(self, item: str) -> int:
        return self.index.get(item.casefold(), 0)

    def singletons(self) -> set[int]:
        return {self.index[s] for s, n in self.counts.items() if n == 1}


def read_word_vectors(path: str | Path, dim: int | None = None) -> dict[str, np.ndarray]:
    """Parse ``token v1 .. vd`` lines; every line must have the same width."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) < 2 or not parts[0]:
                raise EmbeddingError(f"{path}:{lineno}: malformed word-vector line")
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric vector component") from None
            if dim is None:
                dim = vec.size
            if vec.size != dim:
                raise EmbeddingError(f"{path}:{lineno}: vector has {vec.size} components, expected {dim}")
            vectors.setdefault(parts[0].casefold(), vec)
    return vectors


def load_pretrained(path: str | Path, vocab: TokenVocab, d_token: int = 100, rng: Rng | None = None) -> np.ndarray:
    """Token table with file rows copied for in-vocabulary tokens, the rest uniform in ±0.25."""
    vectors = read_word_vectors(path, d_token)
    table = random_token_table(vocab, d_token, rng or Rng(0))
    for tok, i in vocab.index.items():
        if tok in vectors:
            table[i] = vectors[tok]
    return table


def random_token_table(vocab: Vocab, d_token: int, rng: Rng) -> np.ndarray:
    return rng.derive("token_table").uniform(-PRETRAINED_INIT_SCALE, PRETRAINED_INIT_SCALE, (len(vocab), d_token))


@dataclass
class EmbeddingParams:
    char_table: Parameter
    char_fwd: LstmParams
    char_bwd: LstmParams
    token_table: Parameter
    feat_W: list[Parameter]
    feat_b: list[Parameter]

    @classmethod
    def init(cls, cfg: Config, chars: CharVocab, tokens: TokenVocab, n_features: int, rng: Rng,
             token_table: np.ndarray | None = None) -> "EmbeddingParams":
        if token_table is None:
            token_table = random_token_table(tokens, cfg.d_token, rng)
        if token_table.shape != (len(tokens), cfg.d_token):
            raise EmbeddingError(f"token table {token_table.shape} does not match vocab ({len(tokens)}, {cfg.d_token})")
        bound = np.sqrt(3.0 / cfg.d_char)
        feat_W, feat_b = [], []
        fan_in = n_features
        if n_features:
            for k in range(cfg.feature_layers):
                feat_W.append(Parameter(glorot(rng.derive(f"feat_W{k}"), fan_in, cfg.d_feat), f"feat_W{k}"))
                feat_b.append(Parameter(np.zeros(cfg.d_feat), f"feat_b{k}"))
                fan_in = cfg.d_feat
        return cls(
            char_table=Parameter(rng.derive("char_table").uniform(-bound, bound, (len(chars), cfg.d_char)), "char_table"),
            char_fwd=LstmParams.init("char_fwd", cfg.d_char, cfg.d_char_lstm, rng.derive("char_fwd")),
            char_bwd=LstmParams.init("char_bwd", cfg.d_char, cfg.d_char_lstm, rng.derive("char_bwd")),
            token_table=Parameter(np.array(token_table, dtype=np.float64), "token_table"),
            feat_W=feat_W,
            feat_b=feat_b,
        )

    @property
    def n_features(self) -> int:
        return self.feat_W[0].shape[0] if self.feat_W else 0

    def parameters(self) -> list[Parameter]:
        out = [self.char_table, *self.char_fwd.parameters(), *self.char_bwd.parameters(), self.token_table]
        for W, b in zip(self.feat_W, self.feat_b):
            out += [W, b]
        return out


# --- reference (plain array) path ----------------------------------------------

def char_encode(surface: str, chars: CharVocab, params: EmbeddingParams) -> np.ndarray:
    """Final forward state concatenated with final backward state."""
    if not surface:
        raise EmbeddingError("char_encode: empty token surface")
    xs = params.char_table.value[chars.encode(surface)]
    states = bilstm(params.char_fwd, params.char_bwd, xs)
    H = params.char_fwd.hidden_dim
    return np.concatenate([states[-1][:H], states[0][H:]])


def project_features(feature_vector: Sequence[float], params: EmbeddingParams) -> np.ndarray:
    x = np.asarray(feature_vector, dtype=np.float64)
    if x.shape != (params.n_features,):
        raise EmbeddingError(f"feature vector of length {x.size} does not match schema length {params.n_features}")
    for W, b in zip(params.feat_W, params.feat_b):
        x = feedforward(W, b, x)
    return x


def embed(surface: str, feature_vector: Sequence[float], chars: CharVocab, tokens: TokenVocab,
          params: EmbeddingParams, cfg: Config, rng: Rng | None = None, training: bool = False) -> np.ndarray:
    parts = []
    feats = project_features(feature_vector, params)
    if params.n_features:
        parts.append(feats)
    parts.append(params.token_table.value[tokens.lookup(surface)])
    parts.append(char_encode(surface, chars, params))
    out = np.concatenate(parts)
    if training:
        if rng is None:
            raise EmbeddingError("training mode needs an rng for dropout")
        out = dropout(out, cfg.dropout_p, rng, True)
    return out


# --- taped batched path --------------------------------------------------------

@dataclass(frozen=True)
class EncodedTokens:
    """Index arrays for one token sequence."""

    token_ids: np.ndarray   # (T,)
    char_ids: np.ndarray    # (Lc, T), zero padded after each token's end
    char_ids_rev: np.ndarray
    char_lengths: np.ndarray  # (T,)
    features: np.ndarray    # (T, F)

    def __len__(self) -> int:
        return self.token_ids.size


def encode_tokens(surfaces: Sequence[str], features: np.ndarray | None, chars: CharVocab,
                  tokens: TokenVocab) -> EncodedTokens:
    T = len(surfaces)
    if T == 0:
        raise EmbeddingError("cannot encode an empty sequence")
    if any(not s for s in surfaces):
        raise EmbeddingError("empty token surface")
    feats = np.zeros((T, 0)) if features is None else np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != T:
        raise EmbeddingError(f"feature matrix {feats.shape} does not cover {T} tokens")
    lengths = np.array([len(s) for s in surfaces], dtype=np.int64)
    fwd = np.zeros((lengths.max(), T), dtype=np.int64)
    rev = np.zeros_like(fwd)
    for j, s in enumerate(surfaces):
        ids = chars.encode(s)
        fwd[:len(ids), j] = ids
        rev[:len(ids), j] = ids[::-1]
    token_ids = np.array([tokens.lookup(s) for s in surfaces], dtype=np.int64)
    return EncodedTokens(token_ids, fwd, rev, lengths, feats)


def _char_block(enc: EncodedTokens, params: EmbeddingParams) -> Tensor:
    Lc, T = enc.char_ids.shape
    d = params.char_table.shape[1]
    outs = []
    for ids, lstm_params in ((enc.char_ids, params.char_fwd), (enc.char_ids_rev, params.char_bwd)):
        xs = ad.reshape(ad.take_rows(params.char_table, ids), (Lc, T, d))
        outs.append(ad.gather_last(lstm_sequence(lstm_params, xs), enc.char_lengths))
    return ad.concat(outs, axis=1)


def embed_sequence(enc: EncodedTokens, params: EmbeddingParams, cfg: Config, rng: Rng | None = None,
                   training: bool = False, token_ids: np.ndarray | None = None) -> Tensor:
    """(T, embedding_dim) tensor; ``token_ids`` overrides the lookup (UNK replacement)."""
    if enc.features.shape[1] != params.n_features:
        raise EmbeddingError(
            f"feature matrix has {enc.features.shape[1]} columns, projection expects {params.n_features}")
    parts = []
    if params.n_features:
        x = ad.constant(enc.features)
        for W, b in zip(params.feat_W, params.feat_b):
            x = dense(x, W, b)
        parts.append(x)
    parts.append(ad.take_rows(params.token_table, enc.token_ids if token_ids is None else token_ids))
    parts.append(_char_block(enc, params))
    out = ad.concat(parts, axis=1)
    if training:
        if rng is None:
            raise EmbeddingError("training mode needs an rng for dropout")
        out = apply_dropout(out, cfg.dropout_p, rng, True)
    return out
