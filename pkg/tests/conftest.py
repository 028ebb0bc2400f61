import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from phideid.corpus import generate_synthetic_corpus  # noqa: E402
from phideid.embedding import CharVocab, Config, TokenVocab  # noqa: E402
from phideid.features import CATALOG, FeatureSchema, Resources  # noqa: E402
from phideid.neural.rng import Rng  # noqa: E402
from phideid.tagger import Tagger  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def resources():
    return Resources.load()


@pytest.fixture(scope="session")
def corpus20():
    return generate_synthetic_corpus(20, 5)


TINY = Config(d_char=4, d_char_lstm=3, d_token=5, d_label_lstm=4, d_feat=3, dropout_p=0.5)


def tiny_model(surfaces, n_features=6, seed=0, scale=0.5, cfg=TINY):
    """A model with every dimension <= 8 and nonzero random parameters."""
    schema = FeatureSchema(tuple(CATALOG.entries[:n_features]))
    model = Tagger.init(cfg, schema, CharVocab.build(surfaces), TokenVocab.build(surfaces), Rng(seed))
    rng = Rng(seed + 1)
    for p in model.parameters():
        p.value[...] = rng.derive(p.name).uniform(-scale, scale, p.shape)
    return model


def random_features(rng: Rng, T: int, F: int) -> np.ndarray:
    return (rng.random(T * F).reshape(T, F) < 0.4).astype(np.float64)


def load_eval_golden():
    """Gold and predicted label sequences of the 20-token metric fixture."""
    seqs, cur = [], []
    for line in (FIXTURES / "eval_golden" / "labels.tsv").read_text().splitlines():
        if line.startswith("#"):
            continue
        if not line:
            seqs.append(cur)
            cur = []
            continue
        cur.append(line.split("\t"))
    if cur:
        seqs.append(cur)
    return [[r[1] for r in s] for s in seqs], [[r[2] for r in s] for s in seqs]
