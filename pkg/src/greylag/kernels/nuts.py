"""No-U-Turn Sampler with multinomial sampling from the trajectory.

The trajectory is grown by iterative doubling: at each depth a subtree
of 2^depth leapfrog states is built (recursively, with U-turn checks on
every balanced subtree and a divergence cutoff on the energy error), and
the proposal is updated by biased progressive sampling, favoring the new
subtree proportionally to its probability mass.  Step-size and mass
adaptation are shared with the HMC kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import (
    ERR_DIVERGENCE,
    ERR_LOGPROB_NEG_INF,
    ERR_MAX_TREE_DEPTH,
    DualAveragingState,
    TransitionInfo,
    TransitionResult,
    WelfordState,
    da_init,
)
from .hmc import DIVERGENCE_THRESHOLD, _MassAdaptingKernel, _velocity, draw_momentum, kinetic_energy


@dataclass(frozen=True)
class NUTSState:
    step_size: float
    da: DualAveragingState
    inv_mass: np.ndarray
    welford: WelfordState


@dataclass
class _Point:
    q: np.ndarray
    p: np.ndarray
    grad: np.ndarray
    lp: float
    state: object
    energy: float


@dataclass
class _Subtree:
    minus: _Point  # backward-most point in trajectory order
    plus: _Point  # forward-most point
    proposal: _Point
    log_weight: float
    sum_alpha: float
    n_leaf: int
    diverged: bool
    turning: bool


class NUTSKernel(_MassAdaptingKernel):
    """Dynamic-trajectory HMC stopping at the first U-turn."""

    def __init__(self, position_keys, initial_step_size: float = 0.1,
                 target_accept: float = 0.8, max_tree_depth: int = 10,
                 dense_mass: bool = False,
                 divergence_threshold: float = DIVERGENCE_THRESHOLD):
        super().__init__(position_keys)
        self.initial_step_size = float(initial_step_size)
        self.target_accept = float(target_accept)
        self.max_tree_depth = int(max_tree_depth)
        self.dense_mass = bool(dense_mass)
        self.divergence_threshold = float(divergence_threshold)

    def init_state(self, key, model_state):
        dim = self._codec(model_state).dim
        inv_mass, welford = self._init_mass_state(dim)
        return NUTSState(self.initial_step_size, da_init(self.initial_step_size), inv_mass, welford)

    def _uturn(self, zm: _Point, zp: _Point, inv_mass: np.ndarray) -> bool:
        dq = zp.q - zm.q
        return bool(dq @ _velocity(zm.p, inv_mass) < 0 or dq @ _velocity(zp.p, inv_mass) < 0)

    def _leaf(self, codec, start: _Point, direction: int, step: float,
              inv_mass: np.ndarray, h0: float, template) -> _Subtree:
        """One leapfrog step from ``start``; the base case of the tree."""
        eps = direction * step
        p_half = start.p + 0.5 * eps * start.grad
        q = start.q + eps * _velocity(p_half, inv_mass)
        st = self.model.update_state(codec.unflatten(q), template)
        lp = self.model.log_prob(st)
        if math.isfinite(lp):
            grad = codec.flatten(self.model.grad(self.position_keys, st))
            p = p_half + 0.5 * eps * grad
            energy = -lp + kinetic_energy(p, inv_mass)
        else:
            grad = np.zeros_like(q)
            p = p_half
            energy = math.inf
        delta = energy - h0
        diverged = not math.isfinite(delta) or delta > self.divergence_threshold
        log_weight = -delta if not diverged else -math.inf
        alpha = math.exp(min(0.0, -delta)) if math.isfinite(delta) else 0.0
        point = _Point(q, p, grad, lp, st, energy)
        return _Subtree(point, point, point, log_weight, alpha, 1, diverged, False)

    def _build(self, rng, codec, start: _Point, direction: int, depth: int,
               step: float, inv_mass: np.ndarray, h0: float, template) -> _Subtree:
        if depth == 0:
            return self._leaf(codec, start, direction, step, inv_mass, h0, template)
        first = self._build(rng, codec, start, direction, depth - 1, step, inv_mass, h0, template)
        if first.diverged or first.turning:
            return first
        start2 = first.plus if direction == 1 else first.minus
        second = self._build(rng, codec, start2, direction, depth - 1, step, inv_mass, h0, template)
        n_leaf = first.n_leaf + second.n_leaf
        sum_alpha = first.sum_alpha + second.sum_alpha
        minus = first.minus if direction == 1 else second.minus
        plus = second.plus if direction == 1 else first.plus
        if second.diverged or second.turning:
            return _Subtree(minus, plus, first.proposal, first.log_weight, sum_alpha,
                            n_leaf, second.diverged, second.turning)
        log_weight = np.logaddexp(first.log_weight, second.log_weight)
        # unbiased multinomial choice between the two halves
        if math.log(rng.random() + 1e-300) < second.log_weight - log_weight:
            proposal = second.proposal
        else:
            proposal = first.proposal
        turning = self._uturn(minus, plus, inv_mass)
        return _Subtree(minus, plus, proposal, float(log_weight), sum_alpha, n_leaf, False, turning)

    def transition(self, key, state, model_state, epoch):
        rng = key.generator()
        codec = self._codec(model_state)
        q0 = codec.flatten(self.model.extract_position(self.position_keys, model_state))
        lp0 = self.model.log_prob(model_state)
        info = TransitionInfo(acceptance_prob=0.0, tree_depth=0)
        if not math.isfinite(lp0):
            info.error_code = ERR_LOGPROB_NEG_INF
            state = self._after_transition(state, 0.0, epoch)
            return TransitionResult(state, model_state, info)

        p0 = draw_momentum(rng, state.inv_mass)
        h0 = -lp0 + kinetic_energy(p0, state.inv_mass)
        grad0 = codec.flatten(self.model.grad(self.position_keys, model_state))
        z0 = _Point(q0, p0, grad0, lp0, model_state, h0)

        tree_minus, tree_plus, proposal = z0, z0, z0
        tree_log_weight = 0.0
        sum_alpha, n_leaf = 0.0, 0
        divergent = turning = False
        depth = 0
        while depth < self.max_tree_depth:
            direction = 1 if rng.random() < 0.5 else -1
            start = tree_plus if direction == 1 else tree_minus
            sub = self._build(rng, codec, start, direction, depth, state.step_size,
                              state.inv_mass, h0, model_state)
            sum_alpha += sub.sum_alpha
            n_leaf += sub.n_leaf
            if sub.diverged:
                divergent = True
                break
            if sub.turning:
                turning = True
                break
            # biased progressive sampling: favor the new half of the doubled tree
            if math.log(rng.random() + 1e-300) < sub.log_weight - tree_log_weight:
                proposal = sub.proposal
            tree_log_weight = float(np.logaddexp(tree_log_weight, sub.log_weight))
            if direction == 1:
                tree_plus = sub.plus
            else:
                tree_minus = sub.minus
            depth += 1
            if self._uturn(tree_minus, tree_plus, state.inv_mass):
                turning = True
                break

        info.tree_depth = depth
        info.divergent = divergent
        info.acceptance_prob = sum_alpha / max(1, n_leaf)
        if divergent:
            info.error_code = ERR_DIVERGENCE
        elif depth >= self.max_tree_depth and not turning:
            info.error_code = ERR_MAX_TREE_DEPTH
        info.position_moved = proposal is not z0 and not np.array_equal(proposal.q, q0)
        new_model_state = proposal.state if proposal is not z0 else model_state
        state = self._after_transition(state, info.acceptance_prob, epoch)
        state = self._record_sample(state, proposal.q, epoch)
        return TransitionResult(state, new_model_state, info)
