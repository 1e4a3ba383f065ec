"""Gibbs kernel wrapping a user-supplied full-conditional sampler."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..graph import ModelState, Position
from ..rng import PrngKey
from .base import Kernel, TransitionInfo, TransitionResult


class GibbsKernel(Kernel):
    """Replaces its position block with an exact draw from the full
    conditional; the acceptance probability is one by construction and no
    tuning is necessary or possible.

    ``full_conditional_fn(key, model_state)`` must return a dict with one
    value per position key, drawn from the block's full conditional given
    the rest of the model state.
    """

    def __init__(self, position_keys, full_conditional_fn: Callable[[PrngKey, ModelState], Position]):
        super().__init__(position_keys)
        self.full_conditional_fn = full_conditional_fn

    def transition(self, key, state, model_state, epoch):
        draw = self.full_conditional_fn(key, model_state)
        missing = set(self.position_keys) - set(draw)
        if missing:
            raise KeyError(f"full conditional did not return {sorted(missing)}")
        position = {k: np.asarray(draw[k]) for k in self.position_keys}
        before = self.model.extract_position(self.position_keys, model_state)
        new_model_state = self.model.update_state(position, model_state)
        moved = any(not np.array_equal(position[k], before[k]) for k in self.position_keys)
        return TransitionResult(state, new_model_state,
                                TransitionInfo(acceptance_prob=1.0, position_moved=moved))
