"""MCMC transition kernels and the kernel lifecycle protocol."""

from .base import (
    ERR_DIVERGENCE,
    ERR_INDEFINITE_FISHER,
    ERR_KERNEL_EXCEPTION,
    ERR_LOGPROB_NEG_INF,
    ERR_MAX_TREE_DEPTH,
    ERR_OK,
    DualAveragingState,
    Kernel,
    PositionCodec,
    TransitionInfo,
    TransitionResult,
    TuningInfo,
    TuningResult,
    WelfordState,
    da_init,
    da_update,
    welford_init,
    welford_update,
    welford_variance,
)
from .gibbs import GibbsKernel
from .hmc import HMCKernel, leapfrog
from .iwls import IWLSKernel
from .mh import MHKernel
from .nuts import NUTSKernel
from .random_walk import RandomWalkKernel

__all__ = [
    "ERR_DIVERGENCE",
    "ERR_INDEFINITE_FISHER",
    "ERR_KERNEL_EXCEPTION",
    "ERR_LOGPROB_NEG_INF",
    "ERR_MAX_TREE_DEPTH",
    "ERR_OK",
    "DualAveragingState",
    "GibbsKernel",
    "HMCKernel",
    "IWLSKernel",
    "Kernel",
    "MHKernel",
    "NUTSKernel",
    "PositionCodec",
    "RandomWalkKernel",
    "TransitionInfo",
    "TransitionResult",
    "TuningInfo",
    "TuningResult",
    "WelfordState",
    "da_init",
    "da_update",
    "leapfrog",
    "welford_init",
    "welford_update",
    "welford_variance",
]
