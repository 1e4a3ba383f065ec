"""Gaussian random-walk kernel with a Metropolis-Hastings correction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import (
    ERR_LOGPROB_NEG_INF,
    DualAveragingState,
    StepTunedKernel,
    TransitionInfo,
    TransitionResult,
    da_init,
    metropolis_accept,
)


@dataclass(frozen=True)
class RandomWalkState:
    step_size: float
    da: DualAveragingState


class RandomWalkKernel(StepTunedKernel):
    """Proposes ``theta + step_size * z`` with standard normal ``z``.

    The step size is driven toward an acceptance rate of 0.234 by dual
    averaging during adaptation epochs.
    """

    target_accept = 0.234

    def __init__(self, position_keys, initial_step_size: float = 1.0,
                 target_accept: float = 0.234):
        super().__init__(position_keys)
        self.initial_step_size = float(initial_step_size)
        self.target_accept = float(target_accept)

    def init_state(self, key, model_state):
        return RandomWalkState(self.initial_step_size, da_init(self.initial_step_size))

    def transition(self, key, state, model_state, epoch):
        rng = key.generator()
        codec = self._codec(model_state)
        q = codec.flatten(self.model.extract_position(self.position_keys, model_state))
        lp0 = self.model.log_prob(model_state)
        proposal = q + state.step_size * rng.standard_normal(q.size)
        proposed_state = self.model.update_state(codec.unflatten(proposal), model_state)
        lp1 = self.model.log_prob(proposed_state)

        info = TransitionInfo()
        if math.isinf(lp1) or math.isnan(lp1):
            info.error_code = ERR_LOGPROB_NEG_INF
            info.acceptance_prob = 0.0
            accepted = False
        else:
            accepted, info.acceptance_prob = metropolis_accept(rng, lp1 - lp0)
        new_model_state = proposed_state if accepted else model_state
        info.position_moved = accepted and not np.array_equal(proposal, q)
        state = self._after_transition(state, info.acceptance_prob, epoch)
        return TransitionResult(state, new_model_state, info)
