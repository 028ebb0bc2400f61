import math
import struct

import numpy as np
import pytest

from phideid.neural.autodiff import Gradients, IndexedRows, Parameter, Tape
from phideid.neural import autodiff as ad
from phideid.neural.checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from phideid.neural.gradcheck import check_entries, gradient_check
from phideid.neural.optim import NonFiniteGradientError, SgdConfig, global_norm, sgd_step


def test_scalar_step():
    p = Parameter(np.array([1.0]), "p")
    sgd_step([p], Gradients({p: np.array([0.5])}), SgdConfig(0.1, math.inf))
    assert p.value[0] == pytest.approx(0.95, abs=1e-15)


def test_zero_gradient_leaves_params():
    p = Parameter(np.arange(3.0), "p")
    sgd_step([p], Gradients({p: np.zeros(3)}), SgdConfig())
    np.testing.assert_array_equal(p.value, np.arange(3.0))


def test_clipping_to_norm_five():
    p, q = Parameter(np.zeros(2), "p"), Parameter(np.zeros((4, 2)), "q")
    g = Gradients({p: np.array([6.0, 0.0]), q: IndexedRows(np.array([1]), np.array([[0.0, 8.0]]), (4, 2))})
    assert global_norm(g) == pytest.approx(10.0)
    sgd_step([p, q], g, SgdConfig(learning_rate=1.0, gradient_clip_norm=5.0))
    applied = np.concatenate([p.value, q.value.ravel()])
    assert np.linalg.norm(applied) == pytest.approx(5.0)
    assert q.value[1, 1] == pytest.approx(-4.0) and q.value[0].tolist() == [0.0, 0.0]


def test_non_finite_gradient_names_tensor():
    p = Parameter(np.zeros(2), "emission.W")
    with pytest.raises(NonFiniteGradientError, match="emission.W"):
        sgd_step([p], Gradients({p: np.array([np.nan, 0.0])}), SgdConfig())


@pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"dropout_p": 1.0}, {"gradient_clip_norm": -1}])
def test_sgd_config_validation(kw):
    with pytest.raises(ValueError):
        SgdConfig(**kw)


class LinearToy:
    def __init__(self):
        rng = np.random.default_rng(0)
        self.W = Parameter(rng.normal(size=(4, 3)), "W")
        self.b = Parameter(rng.normal(size=3), "b")

    def parameters(self):
        return [self.W, self.b]

    def loss(self, x, training=False):
        return ad.total(ad.affine(ad.constant(x), self.W, self.b))


def test_gradcheck_linear_toy_is_exact():
    x = np.random.default_rng(1).normal(size=(5, 4))
    assert gradient_check(LinearToy(), x, n_samples=15) <= 1e-9


def test_gradcheck_rejects_zero_step():
    with pytest.raises(ValueError):
        gradient_check(LinearToy(), np.zeros((1, 4)), epsilon=0.0)


def test_gradcheck_samples_every_tensor():
    entries = check_entries(LinearToy(), np.ones((2, 4)), n_samples=10)
    assert {e.name for e in entries} == {"W", "b"}


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=7), "s": np.array(2.5)}
    path = write_checkpoint(tmp_path / "m.ckpt", {"dims": [3, 4], "labels": ["O"]}, tensors)
    header, back = read_checkpoint(path)
    assert header == {"dims": [3, 4], "labels": ["O"]}
    for k, v in tensors.items():
        assert back[k].tobytes() == v.tobytes() and back[k].shape == v.shape
    assert (tmp_path / "m.ckpt.json").exists()


def test_checkpoint_is_little_endian_row_major(tmp_path):
    path = write_checkpoint(tmp_path / "m.ckpt", {}, {"x": np.array([[1.0, 2.0], [3.0, 4.0]])})
    raw = path.read_bytes()
    assert raw.endswith(struct.pack("<4d", 1.0, 2.0, 3.0, 4.0))


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + b"\0" * 8)
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        read_checkpoint(bad)
    good = write_checkpoint(tmp_path / "g.ckpt", {}, {"x": np.zeros(4)})
    (tmp_path / "t.ckpt").write_bytes(good.read_bytes()[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(tmp_path / "t.ckpt")
    raw = bytearray(good.read_bytes())
    raw[8:12] = struct.pack("<I", 99)
    (tmp_path / "v.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(tmp_path / "v.ckpt")


def test_tape_is_inactive_outside_context():
    p = Parameter(np.ones(2), "p")
    out = ad.tanh(p)
    assert not out.requires_grad
    with Tape() as tape:
        out = ad.tanh(p)
        assert out.requires_grad and len(tape) == 1
