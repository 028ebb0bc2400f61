"""Numerical substrate: taped autodiff, LSTM kernels, SGD, checkpoints."""
from .autodiff import Gradients, IndexedRows, Parameter, Tape, Tensor
from .kernels import BACKEND
from .layers import LstmParams, bilstm, dropout, feedforward, lstm_step
from .optim import NonFiniteGradientError, SgdConfig, sgd_step
from .rng import Rng

__all__ = [
    "BACKEND",
    "Gradients",
    "IndexedRows",
    "LstmParams",
    "NonFiniteGradientError",
    "Parameter",
    "Rng",
    "SgdConfig",
    "Tape",
    "Tensor",
    "bilstm",
    "dropout",
    "feedforward",
    "lstm_step",
    "sgd_step",
]
