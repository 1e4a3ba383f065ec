"""Hamiltonian Monte Carlo kernel and the leapfrog integrator.

The kernel refreshes the momentum from ``N(0, M)``, integrates the
Hamiltonian dynamics with a fixed number of leapfrog steps, and accepts
with the usual Metropolis rule on the energy error.  The step size is
tuned by dual averaging; the diagonal (or optionally dense) mass matrix
is re-estimated from the empirical variance of the samples of each slow
adaptation epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from ..epochs import EpochType
from ..errors import DivergenceError
from .base import (
    ERR_DIVERGENCE,
    ERR_LOGPROB_NEG_INF,
    DualAveragingState,
    StepTunedKernel,
    TransitionInfo,
    TransitionResult,
    TuningInfo,
    TuningResult,
    WelfordState,
    da_init,
    da_smoothed_step,
    metropolis_accept,
    welford_init,
    welford_update,
    welford_variance,
)

DIVERGENCE_THRESHOLD = 1000.0

# Mass estimates are shrunk toward 1e-3 * identity with weight 5 / (n + 5)
# so short windows cannot produce a degenerate metric.
_MASS_SHRINK = 5.0
_MASS_FLOOR = 1e-3


def _velocity(p: np.ndarray, inv_mass: np.ndarray) -> np.ndarray:
    """dq/dt = M^-1 p for a diagonal (vector) or dense (matrix) inverse mass."""
    return inv_mass @ p if inv_mass.ndim == 2 else inv_mass * p


def kinetic_energy(p: np.ndarray, inv_mass: np.ndarray) -> float:
    return 0.5 * float(p @ _velocity(p, inv_mass))


def draw_momentum(rng: np.random.Generator, inv_mass: np.ndarray) -> np.ndarray:
    """Sample p ~ N(0, M) with M the inverse of ``inv_mass``."""
    z = rng.standard_normal(inv_mass.shape[-1])
    if inv_mass.ndim == 2:
        # cov(p) = inv(inv_mass) = L^-T L^-1 for inv_mass = L L^T
        chol = np.linalg.cholesky(inv_mass)
        return solve_triangular(chol.T, z, lower=False)
    return z / np.sqrt(inv_mass)


def leapfrog(
    q: np.ndarray,
    p: np.ndarray,
    step_size: float,
    num_steps: int,
    grad_fn: Callable[[np.ndarray], np.ndarray],
    inv_mass: np.ndarray | None = None,
    energy_fn: Callable[[np.ndarray, np.ndarray], float] | None = None,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
) -> tuple[np.ndarray, np.ndarray]:
    """Velocity leapfrog for the Hamiltonian -log_prob(q) + p'M^-1 p / 2.

    ``grad_fn`` returns the gradient of the *log-probability*.  The
    integrator is volume preserving and reversible: re-integrating from
    ``(q', -p')`` returns to the start.  If ``energy_fn`` is given, the
    energy error is checked after every step and a :class:`DivergenceError`
    is raised when |H - H0| exceeds the threshold.
    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if inv_mass is None:
        inv_mass = np.ones_like(q)
    h0 = energy_fn(q, p) if energy_fn is not None else 0.0
    grad = grad_fn(q)
    for _ in range(num_steps):
        p_half = p + 0.5 * step_size * grad
        q = q + step_size * _velocity(p_half, inv_mass)
        grad = grad_fn(q)
        p = p_half + 0.5 * step_size * grad
        if energy_fn is not None:
            h = energy_fn(q, p)
            if not math.isfinite(h) or abs(h - h0) > divergence_threshold:
                raise DivergenceError(
                    f"energy error {h - h0!r} exceeded {divergence_threshold}"
                )
    return q, p


@dataclass(frozen=True)
class HMCState:
    step_size: float
    da: DualAveragingState
    inv_mass: np.ndarray
    welford: WelfordState


class _MassAdaptingKernel(StepTunedKernel):
    """Step-size tuning plus windowed (co)variance mass adaptation,
    shared by the HMC and NUTS kernels."""

    dense_mass = False

    def _init_mass_state(self, dim: int):
        inv_mass = np.eye(dim) if self.dense_mass else np.ones(dim)
        return inv_mass, welford_init(dim, dense=self.dense_mass)

    def _record_sample(self, state, q: np.ndarray, epoch):
        if epoch.type is EpochType.SLOW_ADAPTATION:
            return replace(state, welford=welford_update(state.welford, q))
        return state

    def tune(self, key, state, model_state, epoch, history=None):
        step = da_smoothed_step(state.da, state.step_size)
        if epoch.type is EpochType.SLOW_ADAPTATION:
            if state.welford.count >= 2:
                n = state.welford.count
                var = welford_variance(state.welford)
                w = n / (n + _MASS_SHRINK)
                if self.dense_mass:
                    inv_mass = w * var + (1.0 - w) * _MASS_FLOOR * np.eye(var.shape[0])
                else:
                    inv_mass = w * var + (1.0 - w) * _MASS_FLOOR
                state = replace(state, inv_mass=inv_mass)
            # the variance window restarts per slow epoch; the step-size
            # controller keeps running (see StepTunedKernel)
            state = replace(state, welford=welford_init(state.inv_mass.shape[-1], dense=self.dense_mass))
        state = replace(state, step_size=step)
        return TuningResult(state, TuningInfo(step_size=step))


class HMCKernel(_MassAdaptingKernel):
    """Fixed-length HMC with dual-averaging step size and adaptive mass."""

    def __init__(self, position_keys, initial_step_size: float = 0.1,
                 num_integration_steps: int = 64, target_accept: float = 0.8,
                 dense_mass: bool = False,
                 divergence_threshold: float = DIVERGENCE_THRESHOLD):
        super().__init__(position_keys)
        self.initial_step_size = float(initial_step_size)
        self.num_integration_steps = int(num_integration_steps)
        self.target_accept = float(target_accept)
        self.dense_mass = bool(dense_mass)
        self.divergence_threshold = float(divergence_threshold)

    def init_state(self, key, model_state):
        dim = self._codec(model_state).dim
        inv_mass, welford = self._init_mass_state(dim)
        return HMCState(self.initial_step_size, da_init(self.initial_step_size), inv_mass, welford)

    def transition(self, key, state, model_state, epoch):
        rng = key.generator()
        codec = self._codec(model_state)
        q0 = codec.flatten(self.model.extract_position(self.position_keys, model_state))
        lp0 = self.model.log_prob(model_state)
        info = TransitionInfo(acceptance_prob=0.0)
        if not math.isfinite(lp0):
            info.error_code = ERR_LOGPROB_NEG_INF
            state = self._after_transition(state, 0.0, epoch)
            return TransitionResult(state, model_state, info)

        p0 = draw_momentum(rng, state.inv_mass)
        h0 = -lp0 + kinetic_energy(p0, state.inv_mass)

        last = {"state": model_state}

        def grad_fn(qv: np.ndarray) -> np.ndarray:
            st = self.model.update_state(codec.unflatten(qv), model_state)
            last["state"] = st
            g = self.model.grad(self.position_keys, st)
            return codec.flatten(g)

        q1, p1 = leapfrog(q0, p0, state.step_size, self.num_integration_steps,
                          grad_fn, state.inv_mass)
        proposed_state = last["state"]
        lp1 = self.model.log_prob(proposed_state)
        h1 = -lp1 + kinetic_energy(p1, state.inv_mass)
        delta = h1 - h0

        if not math.isfinite(delta) or abs(delta) > self.divergence_threshold:
            info.error_code = ERR_DIVERGENCE
            info.divergent = True
            accepted = False
        else:
            accepted, info.acceptance_prob = metropolis_accept(rng, -delta)
        new_model_state = proposed_state if accepted else model_state
        info.position_moved = accepted and not np.array_equal(q1, q0)
        state = self._after_transition(state, info.acceptance_prob, epoch)
        state = self._record_sample(state, q1 if accepted else q0, epoch)
        return TransitionResult(state, new_model_state, info)
