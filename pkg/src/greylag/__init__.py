"""greylag: graph-based Bayesian models with a modular MCMC engine.

The package has two halves that can be used independently: a model
library representing Bayesian models as DAGs of strong and weak nodes
with cached values and log-probabilities, and a sampling engine that
drives exchangeable transition kernels (random walk, HMC, NUTS, IWLS,
Gibbs, Metropolis-Hastings) through an epoch-based warmup/posterior
schedule.  Semi-parametric regression builders, chain diagnostics, and a
CLI for running experiment configurations sit on top.
"""

from . import diagnostics, dists, engine, epochs, errors, graph, interface, kernels, regression, rng
from .dists import BIJECTORS, EXP, FAMILIES, IDENTITY, LOG, SOFTPLUS, DistributionSpec
from .engine import EngineBuilder, SamplingResults
from .epochs import EpochConfig, EpochState, EpochType, stan_warmup_schedule
from .graph import (
    ModelGraph,
    ModelState,
    Node,
    NodeKind,
    NodeRole,
    Position,
    build_graph,
    strong,
    transform_node,
    weak,
)
from .interface import FunctionInterface, GraphInterface, ModelInterface
from .kernels import (
    GibbsKernel,
    HMCKernel,
    IWLSKernel,
    MHKernel,
    NUTSKernel,
    RandomWalkKernel,
)
from .regression import (
    DistRegModel,
    Predictor,
    SmoothTerm,
    apply_sum_to_zero,
    bspline_basis,
    build_distreg_model,
    difference_penalty,
    distreg_model,
    smooth_term,
    tau2_gibbs_draw,
)
from .rng import PrngKey

__version__ = "0.1.0"

__all__ = [
    "BIJECTORS",
    "DistRegModel",
    "DistributionSpec",
    "EXP",
    "EngineBuilder",
    "EpochConfig",
    "EpochState",
    "EpochType",
    "FAMILIES",
    "FunctionInterface",
    "GibbsKernel",
    "GraphInterface",
    "HMCKernel",
    "IDENTITY",
    "IWLSKernel",
    "LOG",
    "MHKernel",
    "ModelGraph",
    "ModelInterface",
    "ModelState",
    "NUTSKernel",
    "Node",
    "NodeKind",
    "NodeRole",
    "Position",
    "Predictor",
    "PrngKey",
    "RandomWalkKernel",
    "SOFTPLUS",
    "SamplingResults",
    "SmoothTerm",
    "apply_sum_to_zero",
    "bspline_basis",
    "build_distreg_model",
    "build_graph",
    "diagnostics",
    "difference_penalty",
    "dists",
    "distreg_model",
    "engine",
    "epochs",
    "errors",
    "graph",
    "interface",
    "kernels",
    "regression",
    "rng",
    "smooth_term",
    "stan_warmup_schedule",
    "strong",
    "tau2_gibbs_draw",
    "transform_node",
    "weak",
]
