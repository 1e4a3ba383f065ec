"""Metropolis-Hastings kernel wrapping a user-defined proposal."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .base import (
    ERR_LOGPROB_NEG_INF,
    DualAveragingState,
    StepTunedKernel,
    TransitionInfo,
    TransitionResult,
    TuningInfo,
    TuningResult,
    da_init,
    metropolis_accept,
)


@dataclass(frozen=True)
class MHState:
    step_size: float
    da: DualAveragingState


class MHKernel(StepTunedKernel):
    """Accept/reject around a user proposal function.

    ``proposal_fn(key, model_state)`` returns ``(position, log_correction)``
    where the correction is log q(theta | theta') - log q(theta' | theta)
    (zero for symmetric proposals).  With ``uses_step_size=True`` the
    proposal receives the current step size as a third argument and the
    step size is tuned by dual averaging during adaptation epochs.
    """

    def __init__(self, position_keys, proposal_fn: Callable,
                 uses_step_size: bool = False, initial_step_size: float = 1.0,
                 target_accept: float = 0.8):
        super().__init__(position_keys)
        self.proposal_fn = proposal_fn
        self.uses_step_size = bool(uses_step_size)
        self.initial_step_size = float(initial_step_size)
        self.target_accept = float(target_accept)

    def init_state(self, key, model_state):
        return MHState(self.initial_step_size, da_init(self.initial_step_size))

    def transition(self, key, state, model_state, epoch):
        rng = key.generator()
        if self.uses_step_size:
            proposal, log_correction = self.proposal_fn(key, model_state, state.step_size)
        else:
            proposal, log_correction = self.proposal_fn(key, model_state)
        position = {k: np.asarray(proposal[k]) for k in self.position_keys}
        before = self.model.extract_position(self.position_keys, model_state)
        lp0 = self.model.log_prob(model_state)
        proposed_state = self.model.update_state(position, model_state)
        lp1 = self.model.log_prob(proposed_state)

        info = TransitionInfo()
        if math.isinf(lp1) or math.isnan(lp1):
            info.error_code = ERR_LOGPROB_NEG_INF
            info.acceptance_prob = 0.0
            accepted = False
        else:
            accepted, info.acceptance_prob = metropolis_accept(
                rng, lp1 - lp0 + float(log_correction)
            )
        new_model_state = proposed_state if accepted else model_state
        info.position_moved = accepted and any(
            not np.array_equal(position[k], before[k]) for k in self.position_keys
        )
        if self.uses_step_size:
            state = self._after_transition(state, info.acceptance_prob, epoch)
        return TransitionResult(state, new_model_state, info)

    def tune(self, key, state, model_state, epoch, history=None):
        if not self.uses_step_size:
            return TuningResult(state, TuningInfo())
        return super().tune(key, state, model_state, epoch, history)

    def end_warmup(self, key, state, model_state):
        if not self.uses_step_size:
            return state
        return super().end_warmup(key, state, model_state)
