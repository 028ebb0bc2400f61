"""Compare the compiled and numpy kernels on model-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel and shape with milliseconds per call for each
backend, the speedup, and the max absolute difference between outputs.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from phideid.neural import _pykernels as py

try:
    from phideid.neural import _ckernels as cy
except ImportError:  # pragma: no cover - depends on the build
    cy = None


def cases(rng: np.random.Generator):
    for L, B, H in [(15, 1, 100), (40, 1, 100), (8, 15, 25), (12, 40, 25)]:
        x = rng.normal(size=(L, B, 4 * H))
        U = rng.normal(scale=0.1, size=(H, 4 * H))
        hs, cs, acts = py.lstm_forward(x, U)
        dh = rng.normal(size=hs.shape)
        yield f"lstm_forward L={L} B={B} H={H}", "lstm_forward", (x, U)
        yield f"lstm_backward L={L} B={B} H={H}", "lstm_backward", (dh, U, hs, cs, acts)
    for T in (15, 60):
        em = rng.normal(size=(T, 25))
        tr = rng.normal(size=(27, 27))
        yield f"crf_forward_backward T={T} K=25", "crf_forward_backward", (em, tr)
        yield f"viterbi T={T} K=25", "viterbi", (em, tr)


def _flat(out) -> np.ndarray:
    parts = out if isinstance(out, tuple) else (out,)
    return np.concatenate([np.ravel(np.asarray(p, dtype=np.float64)) for p in parts])


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    if cy is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
        return
    print(f"{'case':38s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for label, name, inputs in cases(np.random.default_rng(0)):
        f_c, f_p = getattr(cy, name), getattr(py, name)
        t_c = timeit.timeit(lambda: f_c(*inputs), number=args.repeat) / args.repeat * 1e3
        t_p = timeit.timeit(lambda: f_p(*inputs), number=args.repeat) / args.repeat * 1e3
        diff = float(np.max(np.abs(_flat(f_c(*inputs)) - _flat(f_p(*inputs)))))
        print(f"{label:38s} {t_c:10.3f} {t_p:10.3f} {t_p / t_c:7.1f}x {diff:10.1e}")


if __name__ == "__main__":
    main()
