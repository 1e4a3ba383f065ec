"""Iteratively weighted least squares kernel.

A Langevin-type Gaussian proposal whose mean and covariance are built
from the score and the observed Fisher information F (the negative
Hessian of the log-posterior) at the current position:

    mean = theta + (s^2 / 2) F(theta)^-1 score(theta)
    cov  = s^2 F(theta)^-1

with the full Metropolis-Hastings correction using the analogous reverse
proposal at the proposed point.  The step size s is tuned by dual
averaging.  A Cholesky factorization failure of F defines "not positive
definite" and rejects the transition with error code 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .base import (
    ERR_INDEFINITE_FISHER,
    ERR_LOGPROB_NEG_INF,
    DualAveragingState,
    StepTunedKernel,
    TransitionInfo,
    TransitionResult,
    da_init,
    metropolis_accept,
)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class IWLSState:
    step_size: float
    da: DualAveragingState


def _proposal_moments(q, grad, fisher_chol, step_size):
    half_newton = cho_solve((fisher_chol, True), grad)
    return q + 0.5 * step_size**2 * half_newton


def _proposal_logpdf(x, mean, fisher_chol, step_size):
    """log N(x; mean, s^2 F^-1) via the Cholesky factor L of F.

    |cov| = s^(2d) / |F| and (x-m)' F (x-m) = ||L'(x-m)||^2.
    """
    d = x.size
    y = fisher_chol.T @ (x - mean)
    log_det_f = 2.0 * float(np.sum(np.log(np.diag(fisher_chol))))
    return (-0.5 * d * _LOG_2PI - d * math.log(step_size) + 0.5 * log_det_f
            - 0.5 * float(y @ y) / step_size**2)


class IWLSKernel(StepTunedKernel):
    """Metropolis-Hastings with a Fisher-scoring Gaussian proposal."""

    def __init__(self, position_keys, initial_step_size: float = 1.0,
                 target_accept: float = 0.8):
        super().__init__(position_keys)
        self.initial_step_size = float(initial_step_size)
        self.target_accept = float(target_accept)

    def init_state(self, key, model_state):
        return IWLSState(self.initial_step_size, da_init(self.initial_step_size))

    def _fisher_chol(self, model_state) -> np.ndarray | None:
        fisher = -self.model.hessian(self.position_keys, model_state)
        try:
            return np.linalg.cholesky(fisher)
        except np.linalg.LinAlgError:
            return None

    def transition(self, key, state, model_state, epoch):
        rng = key.generator()
        codec = self._codec(model_state)
        q = codec.flatten(self.model.extract_position(self.position_keys, model_state))
        lp0 = self.model.log_prob(model_state)
        s = state.step_size
        info = TransitionInfo(acceptance_prob=0.0)

        def reject(code):
            info.error_code = code
            new_state = self._after_transition(state, 0.0, epoch)
            return TransitionResult(new_state, model_state, info)

        if not math.isfinite(lp0):
            return reject(ERR_LOGPROB_NEG_INF)
        grad0 = codec.flatten(self.model.grad(self.position_keys, model_state))
        chol0 = self._fisher_chol(model_state)
        if chol0 is None:
            return reject(ERR_INDEFINITE_FISHER)
        mean0 = _proposal_moments(q, grad0, chol0, s)
        z = rng.standard_normal(q.size)
        proposal = mean0 + s * solve_triangular(chol0, z, lower=True, trans="T")

        proposed_state = self.model.update_state(codec.unflatten(proposal), model_state)
        lp1 = self.model.log_prob(proposed_state)
        if not math.isfinite(lp1):
            return reject(ERR_LOGPROB_NEG_INF)
        grad1 = codec.flatten(self.model.grad(self.position_keys, proposed_state))
        chol1 = self._fisher_chol(proposed_state)
        if chol1 is None:
            return reject(ERR_INDEFINITE_FISHER)
        mean1 = _proposal_moments(proposal, grad1, chol1, s)

        log_fwd = _proposal_logpdf(proposal, mean0, chol0, s)
        log_rev = _proposal_logpdf(q, mean1, chol1, s)
        accepted, info.acceptance_prob = metropolis_accept(rng, lp1 - lp0 + log_rev - log_fwd)
        new_model_state = proposed_state if accepted else model_state
        info.position_moved = accepted and not np.array_equal(proposal, q)
        state = self._after_transition(state, info.acceptance_prob, epoch)
        return TransitionResult(state, new_model_state, info)
