"""Kernel lifecycle protocol and shared tuning building blocks.

A kernel moves one block of the position with a valid MCMC transition.
All kernel methods are pure: randomness enters through an explicit
:class:`~greylag.rng.PrngKey` and all mutable data flows through the
kernel-state and model-state arguments.  The engine drives the lifecycle

    init_state -> (start_epoch -> transition* -> end_epoch -> [tune])*
               -> end_warmup -> posterior epochs

and calls ``tune`` only at the end of adaptation epochs.

Error codes: 0 ok, 1 log-posterior is -inf at the proposal, 2 divergent
transition, 3 maximum tree depth reached, 4 non-positive-definite Fisher
information, >= 100 user-defined / unexpected kernel exceptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..epochs import EpochState
from ..interface import ModelInterface
from ..graph import ModelState, Position
from ..rng import PrngKey

ERR_OK = 0
ERR_LOGPROB_NEG_INF = 1
ERR_DIVERGENCE = 2
ERR_MAX_TREE_DEPTH = 3
ERR_INDEFINITE_FISHER = 4
ERR_KERNEL_EXCEPTION = 100

ERROR_MESSAGES = {
    ERR_OK: "ok",
    ERR_LOGPROB_NEG_INF: "log-posterior evaluated to -inf",
    ERR_DIVERGENCE: "divergent transition",
    ERR_MAX_TREE_DEPTH: "maximum tree depth reached",
    ERR_INDEFINITE_FISHER: "Fisher information not positive definite",
    ERR_KERNEL_EXCEPTION: "kernel raised an exception",
}


@dataclass
class TransitionInfo:
    error_code: int = ERR_OK
    acceptance_prob: float = 1.0
    position_moved: bool = False
    tree_depth: int = -1
    divergent: bool = False


@dataclass
class TransitionResult:
    kernel_state: object
    model_state: ModelState
    info: TransitionInfo


@dataclass
class TuningInfo:
    error_code: int = ERR_OK
    step_size: float | None = None


@dataclass
class TuningResult:
    kernel_state: object
    info: TuningInfo


# --- dual averaging -------------------------------------------------------

_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


@dataclass(frozen=True)
class DualAveragingState:
    """Accumulators of the dual averaging step-size controller."""

    t: int
    h_bar: float
    log_eps: float
    log_eps_bar: float
    mu: float


def da_init(step_size: float) -> DualAveragingState:
    """Fresh controller anchored at ``mu = log(10 * step_size)``."""
    log_eps = math.log(step_size)
    return DualAveragingState(t=0, h_bar=0.0, log_eps=log_eps, log_eps_bar=log_eps,
                              mu=math.log(10.0 * step_size))


def da_update(state: DualAveragingState, accept_prob: float, target: float) -> DualAveragingState:
    """One dual-averaging step driving the acceptance toward ``target``."""
    t = state.t + 1
    h_bar = (1.0 - 1.0 / (t + _DA_T0)) * state.h_bar + (target - accept_prob) / (t + _DA_T0)
    log_eps = state.mu - math.sqrt(t) / _DA_GAMMA * h_bar
    w = t ** (-_DA_KAPPA)
    log_eps_bar = w * log_eps + (1.0 - w) * state.log_eps_bar
    return DualAveragingState(t=t, h_bar=h_bar, log_eps=log_eps, log_eps_bar=log_eps_bar, mu=state.mu)


def da_smoothed_step(state: DualAveragingState, fallback: float) -> float:
    """The averaged step size, or ``fallback`` before any update."""
    return math.exp(state.log_eps_bar) if state.t > 0 else fallback


# --- Welford online moments -------------------------------------------------


@dataclass(frozen=True)
class WelfordState:
    """Online mean and (co)variance accumulator.

    ``m2`` is a vector for elementwise variances or a matrix for a full
    covariance, chosen at initialization.
    """

    count: int
    mean: np.ndarray
    m2: np.ndarray


def welford_init(dim: int, dense: bool = False) -> WelfordState:
    m2 = np.zeros((dim, dim)) if dense else np.zeros(dim)
    return WelfordState(count=0, mean=np.zeros(dim), m2=m2)


def welford_update(state: WelfordState, x: np.ndarray) -> WelfordState:
    x = np.asarray(x, dtype=np.float64)
    count = state.count + 1
    delta = x - state.mean
    mean = state.mean + delta / count
    delta2 = x - mean
    if state.m2.ndim == 2:
        m2 = state.m2 + np.outer(delta, delta2)
    else:
        m2 = state.m2 + delta * delta2
    return WelfordState(count=count, mean=mean, m2=m2)


def welford_variance(state: WelfordState) -> np.ndarray:
    """Sample (co)variance; needs at least two observations."""
    if state.count < 2:
        raise ValueError("Welford variance requires count >= 2")
    return state.m2 / (state.count - 1)


# --- position flattening ----------------------------------------------------


class PositionCodec:
    """Bijection between a named position and one flat float vector."""

    def __init__(self, position: Position):
        self._keys = list(position)
        self._shapes = [np.shape(position[k]) for k in self._keys]
        self._sizes = [int(np.prod(s, dtype=int)) for s in self._shapes]
        self.dim = int(sum(self._sizes))

    def flatten(self, position: Position) -> np.ndarray:
        return np.concatenate(
            [np.ravel(np.asarray(position[k], dtype=np.float64)) for k in self._keys]
        ) if self._keys else np.empty(0)

    def unflatten(self, vec: np.ndarray) -> Position:
        out: Position = {}
        offset = 0
        for k, shape, size in zip(self._keys, self._shapes, self._sizes):
            out[k] = np.asarray(vec[offset : offset + size], dtype=np.float64).reshape(shape)
            offset += size
        return out


def metropolis_accept(rng: np.random.Generator, log_ratio: float) -> tuple[bool, float]:
    """Standard MH decision; returns (accepted, acceptance probability)."""
    if math.isnan(log_ratio):
        return False, 0.0
    accept_prob = math.exp(min(0.0, log_ratio))
    return bool(rng.random() < accept_prob), accept_prob


# --- kernel base classes ------------------------------------------------------


class Kernel:
    """Base class: each instance is responsible for one position block.

    The engine binds the model interface at build time (``self.model``);
    kernel objects hold no per-chain mutable state, so one instance can
    serve all chains.
    """

    needs_history: bool = False

    def __init__(self, position_keys: Sequence[str]):
        if not position_keys:
            raise ValueError("kernel needs at least one position key")
        self.position_keys = tuple(position_keys)
        self.model: ModelInterface | None = None
        self.label = type(self).__name__

    def _codec(self, model_state: ModelState) -> PositionCodec:
        return PositionCodec(self.model.extract_position(self.position_keys, model_state))

    # lifecycle defaults

    def init_state(self, key: PrngKey, model_state: ModelState):
        return None

    def start_epoch(self, key: PrngKey, state, model_state: ModelState, epoch: EpochState):
        return state

    def transition(self, key: PrngKey, state, model_state: ModelState, epoch: EpochState) -> TransitionResult:
        raise NotImplementedError

    def end_epoch(self, key: PrngKey, state, model_state: ModelState, epoch: EpochState):
        return state

    def tune(self, key: PrngKey, state, model_state: ModelState, epoch: EpochState,
             history: Position | None = None) -> TuningResult:
        return TuningResult(state, TuningInfo())

    def end_warmup(self, key: PrngKey, state, model_state: ModelState):
        return state


class StepTunedKernel(Kernel):
    """Shared dual-averaging plumbing for kernels with a tunable step size.

    Kernel states must be dataclasses with ``step_size`` and ``da``
    fields.  One controller runs across the whole warmup: during
    adaptation epochs each transition feeds its acceptance probability in
    and proposes with the current iterate; ``tune`` locks the averaged
    step in at the end of every adaptation epoch, and ``end_warmup``
    freezes it.  Restarting the controller per window would poison its
    slowly-forgetting error average through the prox-center excursion and
    leave systematically small frozen steps, so the controller is never
    restarted.
    """

    target_accept: float = 0.8

    def _after_transition(self, state, accept_prob: float, epoch: EpochState):
        if not epoch.type.is_adaptation:
            return state
        da = da_update(state.da, accept_prob, self.target_accept)
        return replace(state, da=da, step_size=float(np.exp(da.log_eps)))

    def tune(self, key, state, model_state, epoch, history=None):
        step = da_smoothed_step(state.da, state.step_size)
        state = replace(state, step_size=step)
        return TuningResult(state, TuningInfo(step_size=step))

    def end_warmup(self, key, state, model_state):
        return replace(state, step_size=da_smoothed_step(state.da, state.step_size))
