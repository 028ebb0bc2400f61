"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_pykernels`` are used.  Setting
``PHIDEID_PURE_PYTHON=1`` forces the numpy path.
"""
from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("PHIDEID_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _pykernels

BACKEND: str = _impl.BACKEND
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
crf_log_partition = _impl.crf_log_partition
crf_forward_backward = _impl.crf_forward_backward
viterbi = _impl.viterbi
