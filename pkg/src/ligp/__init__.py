"""Local inducing-point Gaussian processes for replicated stochastic simulations."""

__version__ = "0.1.0"

from ligp.kernel import JitterPolicy, cross_matrix, kernel, stable_factor
from ligp.design import RawDesign, ReplicatedDesign, compress
from ligp.model import LigpConfig, predict_batch

__all__ = [
    "JitterPolicy",
    "kernel",
    "cross_matrix",
    "stable_factor",
    "RawDesign",
    "ReplicatedDesign",
    "compress",
    "LigpConfig",
    "predict_batch",
]
