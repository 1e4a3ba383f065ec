"""Interfaces between the sampling engine and model implementations.

The engine and the kernels only ever talk to a model through this
interface: evaluate the unnormalized log-posterior of a state, write a
position into a state, and (for gradient-based kernels) get derivatives.
:class:`GraphInterface` backs the interface with a :class:`ModelGraph`;
:class:`FunctionInterface` wraps a plain log-probability function so the
engine also works with hand-coded models.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .graph import ModelGraph, ModelState, Position, total_log_prob


class ModelInterface:
    """Protocol the engine relies on.  Subclasses must be picklable so
    chains can run on worker processes."""

    def log_prob(self, state: ModelState) -> float:
        raise NotImplementedError

    def update_state(self, position: Position, state: ModelState) -> ModelState:
        """Write the position into the state and restore consistency."""
        raise NotImplementedError

    def extract_position(self, keys: Sequence[str], state: ModelState) -> Position:
        raise NotImplementedError

    def parameter_names(self) -> list[str] | None:
        """All sampled parameter names, or None when unknown (then the
        engine can only check that kernel positions are disjoint)."""
        return None

    # gradient access for HMC/NUTS/IWLS kernels

    def grad(self, keys: Sequence[str], state: ModelState) -> Position:
        raise NotImplementedError

    def hessian(self, keys: Sequence[str], state: ModelState) -> np.ndarray:
        raise NotImplementedError


class GraphInterface(ModelInterface):
    """Connects the engine to a model graph via its pure functions."""

    def __init__(self, graph: ModelGraph):
        self._graph = graph.__class__(list(graph.nodes.values()))  # private copy

    def initial_state(self) -> ModelState:
        return self._graph.get_state()

    def log_prob(self, state: ModelState) -> float:
        return total_log_prob(state)

    def log_lik(self, state: ModelState) -> float:
        self._graph.set_state(state)
        return self._graph.log_lik

    def log_prior(self, state: ModelState) -> float:
        self._graph.set_state(state)
        return self._graph.log_prior

    def update_state(self, position: Position, state: ModelState) -> ModelState:
        g = self._graph
        g.set_state(state)
        for k, v in position.items():
            g.set_value(k, v)
        g.update()
        return g.get_state()

    def extract_position(self, keys: Sequence[str], state: ModelState) -> Position:
        return {k: state.values[k] for k in keys}

    def parameter_names(self) -> list[str]:
        return self._graph.parameter_names()

    def grad(self, keys: Sequence[str], state: ModelState) -> Position:
        self._graph.set_state(state)
        return self._graph.grad_log_prob(keys)

    def hessian(self, keys: Sequence[str], state: ModelState) -> np.ndarray:
        self._graph.set_state(state)
        return self._graph.hessian_log_prob(keys)


class FunctionInterface(ModelInterface):
    """Wraps ``logprob_fn(values) -> float`` over a dict of named arrays.

    ``grad_fn`` may be given (same signature, returning a dict); without
    it, gradients fall back to central finite differences, and Hessians
    are finite differences of whichever gradient is available.
    """

    _LP = "__log_prob__"

    def __init__(
        self,
        logprob_fn: Callable[[dict], float],
        initial_values: dict[str, np.ndarray],
        grad_fn: Callable[[dict], dict] | None = None,
        fd_step: float = 1e-6,
    ):
        self._logprob_fn = logprob_fn
        self._grad_fn = grad_fn
        self._fd_step = fd_step
        values = {k: np.asarray(v, dtype=np.float64) for k, v in initial_values.items()}
        self._initial = self._make_state(values)

    def _make_state(self, values: dict[str, np.ndarray]) -> ModelState:
        return ModelState(values=values, log_probs={self._LP: float(self._logprob_fn(values))})

    def initial_state(self) -> ModelState:
        return self._initial

    def log_prob(self, state: ModelState) -> float:
        return state.log_probs[self._LP]

    def update_state(self, position: Position, state: ModelState) -> ModelState:
        values = dict(state.values)
        for k, v in position.items():
            values[k] = np.asarray(v, dtype=np.float64)
        return self._make_state(values)

    def extract_position(self, keys: Sequence[str], state: ModelState) -> Position:
        return {k: state.values[k] for k in keys}

    def grad(self, keys: Sequence[str], state: ModelState) -> Position:
        if self._grad_fn is not None:
            g = self._grad_fn(dict(state.values))
            return {k: np.asarray(g[k], dtype=np.float64) for k in keys}
        out: Position = {}
        values = dict(state.values)
        for k in keys:
            base = np.array(values[k], dtype=np.float64)
            flat = base.ravel()
            g = np.empty_like(flat)
            for i in range(flat.size):
                h = self._fd_step * max(1.0, abs(float(flat[i])))
                orig = float(flat[i])
                flat[i] = orig + h
                values[k] = base
                up = self._logprob_fn(values)
                flat[i] = orig - h
                down = self._logprob_fn(values)
                flat[i] = orig
                g[i] = (up - down) / (2.0 * h)
            values[k] = state.values[k]
            out[k] = g.reshape(base.shape)
        return out

    def hessian(self, keys: Sequence[str], state: ModelState) -> np.ndarray:
        values = {k: np.array(state.values[k], dtype=np.float64) for k in state.values}

        def grad_flat() -> np.ndarray:
            g = self.grad(keys, ModelState(values=dict(values), log_probs=state.log_probs))
            return np.concatenate([np.ravel(g[k]) for k in keys])

        dim = int(sum(np.size(values[k]) for k in keys))
        hess = np.empty((dim, dim))
        col = 0
        for k in keys:
            base = values[k]
            flat = base.ravel()
            for i in range(flat.size):
                h = 1e-5 * max(1.0, abs(float(flat[i])))
                orig = float(flat[i])
                flat[i] = orig + h
                gp = grad_flat()
                flat[i] = orig - h
                gm = grad_flat()
                flat[i] = orig
                hess[:, col] = (gp - gm) / (2.0 * h)
                col += 1
        return 0.5 * (hess + hess.T)
