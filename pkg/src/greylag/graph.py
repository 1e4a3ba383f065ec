"""Directed acyclic graphs of strong and weak nodes.

A model is a DAG in which *strong* nodes hold values set from outside
(data, parameters, hyperparameters) and *weak* nodes are deterministic
functions of their inputs, acting as caches that can always be rebuilt
from the strong nodes.  Every node carries a cached value and a cached
log-probability (zero when the node has no distribution); summing the
per-node log-probabilities gives the unnormalized log-posterior.

Writing a strong node flags its transitive outputs as outdated; calling
:meth:`ModelGraph.update` recomputes exactly the outdated nodes (or the
subset needed for a list of target nodes) in topological order.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .dists import Bijector, DistributionSpec, _unbroadcast
from .errors import (
    CycleError,
    DomainError,
    EvaluationError,
    MissingInputError,
    NonDifferentiableError,
    ShapeError,
    UnsupportedTransformError,
    WeakWriteError,
)

Position = dict[str, np.ndarray]


def _freeze(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value)
    if dtype is None:
        dtype = np.int64 if np.issubdtype(arr.dtype, np.integer) else np.float64
    arr = np.array(arr, dtype=dtype)
    arr.flags.writeable = False
    return arr


# --- weak-function vocabulary --------------------------------------------
#
# Each built-in pairs the forward computation with a vector-Jacobian
# product; the reverse pass composes these to get exact gradients of the
# model log-probability.


@dataclass(frozen=True)
class WeakFn:
    """A deterministic node function with an optional vector-Jacobian product.

    ``vjp(inputs, output, cotangent)`` returns one cotangent per input
    (``None`` for inputs that are treated as constants).
    """

    name: str
    fn: Callable[..., np.ndarray]
    vjp: Callable[..., tuple] | None = None


def _matvec(a, x):
    return a @ x


def _matvec_vjp(inputs, output, c):
    a, x = inputs
    return np.outer(c, x), a.T @ c


def _affine(intercept, *terms):
    out = np.asarray(intercept, dtype=np.float64)
    for t in terms:
        out = out + t
    return np.asarray(out, dtype=np.float64)


def _affine_vjp(inputs, output, c):
    return tuple(_unbroadcast(c, np.shape(x)) for x in inputs)


def _exp_vjp(inputs, output, c):
    return (c * output,)


def _log_vjp(inputs, output, c):
    return (c / inputs[0],)


def _identity(x):
    return np.asarray(x, dtype=np.float64)


def _identity_vjp(inputs, output, c):
    return (c,)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def _sigmoid_vjp(inputs, output, c):
    return (c * output * (1.0 - output),)


def _softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def _softplus_vjp(inputs, output, c):
    return (c * _sigmoid(inputs[0]),)


def _sum(x):
    return np.asarray(np.sum(x), dtype=np.float64)


def _sum_vjp(inputs, output, c):
    return (np.full_like(np.asarray(inputs[0], dtype=np.float64), float(c)),)


def _dot(x, y):
    return np.asarray(np.dot(np.ravel(x), np.ravel(y)), dtype=np.float64)


def _dot_vjp(inputs, output, c):
    x, y = inputs
    return float(c) * np.asarray(y, dtype=np.float64), float(c) * np.asarray(x, dtype=np.float64)


def _quadform(k, x):
    x = np.ravel(x)
    return np.asarray(x @ k @ x, dtype=np.float64)


def _quadform_vjp(inputs, output, c):
    k, x = inputs
    x = np.ravel(x)
    return float(c) * np.outer(x, x), float(c) * ((k + k.T) @ x)


MATVEC = WeakFn("matvec", _matvec, _matvec_vjp)
AFFINE = WeakFn("affine", _affine, _affine_vjp)
EXP_FN = WeakFn("exp", np.exp, _exp_vjp)
LOG_FN = WeakFn("log", np.log, _log_vjp)
IDENTITY_FN = WeakFn("identity", _identity, _identity_vjp)
SIGMOID_FN = WeakFn("sigmoid", _sigmoid, _sigmoid_vjp)
SOFTPLUS_FN = WeakFn("softplus", _softplus, _softplus_vjp)
SUM_FN = WeakFn("sum", _sum, _sum_vjp)
DOT_FN = WeakFn("dot", _dot, _dot_vjp)
QUADFORM = WeakFn("quadform", _quadform, _quadform_vjp)

WEAK_FNS: dict[str, WeakFn] = {
    f.name: f
    for f in (MATVEC, AFFINE, EXP_FN, LOG_FN, IDENTITY_FN, SIGMOID_FN, SOFTPLUS_FN, SUM_FN, DOT_FN, QUADFORM)
}

# Weak functions realizing each bijector's forward map (used by transform_node).
_BIJECTOR_FNS = {"Identity": IDENTITY_FN, "Exp": EXP_FN, "Log": LOG_FN, "Softplus": SOFTPLUS_FN}


# --- nodes ----------------------------------------------------------------


class NodeKind(Enum):
    STRONG = "strong"
    WEAK = "weak"


class NodeRole(Enum):
    OBSERVED = "observed"
    PARAMETER = "parameter"
    HYPERPARAMETER = "hyperparameter"
    COMPUTED = "computed"


@dataclass
class Node:
    """One node of a model graph.

    Strong nodes hold externally set values and never have a ``weak_fn``;
    weak nodes are recomputed as ``weak_fn(*input values)``.  ``log_prob``
    and ``outdated`` are runtime caches managed by the graph.
    """

    name: str
    kind: NodeKind
    role: NodeRole
    value: np.ndarray | None = None
    inputs: tuple[str, ...] = ()
    distribution: DistributionSpec | None = None
    weak_fn: WeakFn | None = None
    log_prob: float = 0.0
    outdated: bool = False

    def __post_init__(self):
        if not self.name:
            raise ValueError("node name must be non-empty")
        if self.kind is NodeKind.WEAK and self.weak_fn is None:
            raise ValueError(f"weak node '{self.name}' needs a weak_fn")
        if self.kind is NodeKind.STRONG and self.weak_fn is not None:
            raise ValueError(f"strong node '{self.name}' cannot have a weak_fn")
        if self.kind is NodeKind.STRONG and self.value is None:
            raise ValueError(f"strong node '{self.name}' needs an initial value")


def strong(
    name: str,
    value,
    *,
    distribution: DistributionSpec | None = None,
    role: NodeRole = NodeRole.PARAMETER,
) -> Node:
    return Node(name, NodeKind.STRONG, role, value=_freeze(value), distribution=distribution)


def weak(
    name: str,
    fn: WeakFn | str,
    inputs: Sequence[str],
    *,
    distribution: DistributionSpec | None = None,
    role: NodeRole = NodeRole.COMPUTED,
) -> Node:
    if isinstance(fn, str):
        fn = WEAK_FNS[fn]
    return Node(name, NodeKind.WEAK, role, inputs=tuple(inputs), distribution=distribution, weak_fn=fn)


@dataclass(eq=False)
class ModelState:
    """Snapshot of a graph: all node values and log-probabilities.

    Arrays are immutable and shared structurally, so states are cheap to
    pass around; the state is fully determined by the strong-node values.
    """

    values: dict[str, np.ndarray]
    log_probs: dict[str, float]


def total_log_prob(state: ModelState) -> float:
    """Sum of the per-node log-probabilities in a state."""
    return float(sum(state.log_probs.values()))


# --- the graph -------------------------------------------------------------


class ModelGraph:
    """A DAG of nodes with cached values and log-probabilities."""

    def __init__(self, nodes: Iterable[Node]):
        nodes = [copy.deepcopy(n) for n in nodes]
        names = [n.name for n in nodes]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise MissingInputError(f"duplicate node names: {dup}")
        self._nodes: dict[str, Node] = {n.name: n for n in nodes}
        self._parents: dict[str, tuple[str, ...]] = {}
        self._children: dict[str, list[str]] = {n.name: [] for n in nodes}
        for node in nodes:
            parents = list(node.inputs)
            if node.distribution is not None:
                parents.extend(node.distribution.refs.values())
            for p in parents:
                if p not in self._nodes:
                    raise MissingInputError(f"node '{node.name}' references missing input '{p}'")
            # dedupe, keeping order
            seen: dict[str, None] = {}
            for p in parents:
                seen.setdefault(p, None)
            self._parents[node.name] = tuple(seen)
            for p in seen:
                self._children[p].append(node.name)
        self._topo = self._topological_order(names)
        self._initial_eval()

    # -- construction helpers

    def _topological_order(self, names: list[str]) -> list[str]:
        indegree = {n: len(self._parents[n]) for n in names}
        ready = [n for n in names if indegree[n] == 0]
        order: list[str] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self._children[n]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    ready.append(c)
        if len(order) != len(names):
            stuck = sorted(n for n in names if indegree[n] > 0)
            raise CycleError(f"graph contains a cycle through {stuck}")
        return order

    def _initial_eval(self) -> None:
        for name in self._topo:
            node = self._nodes[name]
            if node.kind is NodeKind.WEAK:
                value = self._compute_weak(node)
                if node.value is not None and node.value.shape != value.shape:
                    raise ShapeError(
                        f"weak node '{name}' declared shape {node.value.shape}, "
                        f"computed {value.shape}"
                    )
                node.value = value
            node.log_prob = self._compute_log_prob(node)
            node.outdated = False

    # -- evaluation primitives

    def _lookup(self, name: str) -> np.ndarray:
        return self._nodes[name].value

    def _compute_weak(self, node: Node) -> np.ndarray:
        args = [self._nodes[p].value for p in node.inputs]
        try:
            value = node.weak_fn.fn(*args)
        except Exception as exc:  # noqa: BLE001 - reported with the node name
            raise EvaluationError(node.name, f"weak_fn '{node.weak_fn.name}' failed: {exc}") from exc
        return _freeze(value)

    def _compute_log_prob(self, node: Node) -> float:
        if node.distribution is None:
            return 0.0
        try:
            lp = node.distribution.log_prob(node.value, self._lookup)
        except DomainError:
            return -math.inf
        return -math.inf if math.isnan(lp) else float(lp)

    # -- public API

    @property
    def topo_order(self) -> list[str]:
        return list(self._topo)

    @property
    def nodes(self) -> dict[str, Node]:
        return self._nodes

    def node(self, name: str) -> Node:
        if name not in self._nodes:
            raise MissingInputError(f"no node named '{name}'")
        return self._nodes[name]

    def parameter_names(self) -> list[str]:
        return [
            n
            for n in self._topo
            if self._nodes[n].kind is NodeKind.STRONG and self._nodes[n].role is NodeRole.PARAMETER
        ]

    def set_value(self, name: str, value) -> None:
        """Write a strong node and flag its transitive outputs as outdated."""
        node = self.node(name)
        if node.kind is not NodeKind.STRONG:
            raise WeakWriteError(f"cannot write weak node '{name}'")
        arr = _freeze(value, dtype=node.value.dtype)
        if arr.shape != node.value.shape:
            raise ShapeError(
                f"node '{name}' has shape {node.value.shape}, got {arr.shape}"
            )
        node.value = arr
        if node.distribution is not None:
            node.outdated = True
        self._flag_descendants(name)

    def _flag_descendants(self, name: str) -> None:
        stack = list(self._children[name])
        while stack:
            n = stack.pop()
            node = self._nodes[n]
            if node.outdated:
                continue
            node.outdated = True
            stack.extend(self._children[n])

    def _ancestors_closure(self, targets: Sequence[str]) -> set[str]:
        needed: set[str] = set()
        stack = list(targets)
        while stack:
            n = stack.pop()
            if n in needed:
                continue
            needed.add(n)
            stack.extend(self._parents[n])
        return needed

    def update(self, targets: Sequence[str] | None = None) -> None:
        """Recompute outdated nodes in topological order.

        With ``targets``, only the ancestor closure of the targets is
        brought up to date; other outdated nodes stay flagged.  Each weak
        function runs at most once per update.
        """
        needed: set[str] | None = None
        if targets is not None:
            for t in targets:
                self.node(t)
            needed = self._ancestors_closure(targets)
        for name in self._topo:
            node = self._nodes[name]
            if not node.outdated or (needed is not None and name not in needed):
                continue
            if node.kind is NodeKind.WEAK:
                value = self._compute_weak(node)
                if value.shape != node.value.shape:
                    raise ShapeError(
                        f"weak node '{name}' changed shape {node.value.shape} -> {value.shape}"
                    )
                node.value = value
            node.log_prob = self._compute_log_prob(node)
            node.outdated = False

    @property
    def log_prob(self) -> float:
        """Sum of all node log-probabilities (graph must be up to date)."""
        return float(sum(self._nodes[n].log_prob for n in self._topo))

    @property
    def log_lik(self) -> float:
        return float(
            sum(
                self._nodes[n].log_prob
                for n in self._topo
                if self._nodes[n].role is NodeRole.OBSERVED
            )
        )

    @property
    def log_prior(self) -> float:
        return float(
            sum(
                self._nodes[n].log_prob
                for n in self._topo
                if self._nodes[n].role is NodeRole.PARAMETER
            )
        )

    # -- state handling

    def get_state(self) -> ModelState:
        return ModelState(
            values={n: self._nodes[n].value for n in self._topo},
            log_probs={n: self._nodes[n].log_prob for n in self._topo},
        )

    def set_state(self, state: ModelState) -> None:
        for name in self._topo:
            node = self._nodes[name]
            value = state.values[name]
            if not isinstance(value, np.ndarray) or value.flags.writeable:
                value = _freeze(value, dtype=node.value.dtype)
            node.value = value
            node.log_prob = state.log_probs[name]
            node.outdated = False

    def extract_position(self, keys: Sequence[str]) -> Position:
        out: Position = {}
        for k in keys:
            node = self.node(k)
            if node.kind is not NodeKind.STRONG or node.role is not NodeRole.PARAMETER:
                raise WeakWriteError(f"position entry '{k}' is not a strong parameter node")
            out[k] = node.value
        return out

    def extract_pure_fns(self):
        """Pure (state -> scalar) and ((position, state) -> state) functions.

        The returned closures own a private copy of the graph, so they
        never touch this instance, and identical inputs give identical
        outputs.
        """
        work = copy.deepcopy(self)

        def logprob_fn(state: ModelState) -> float:
            return total_log_prob(state)

        def update_fn(position: Position, state: ModelState) -> ModelState:
            work.set_state(state)
            for k, v in position.items():
                work.set_value(k, v)
            work.update()
            return work.get_state()

        return logprob_fn, update_fn

    # -- derivatives

    def grad_log_prob(self, position_keys: Sequence[str]) -> Position:
        """Gradient of the total log-probability with respect to a position.

        Accumulates analytic score functions through the registered
        vector-Jacobian products in reverse topological order; the graph
        must be fully updated.
        """
        for k in position_keys:
            node = self.node(k)
            if np.issubdtype(node.value.dtype, np.integer):
                raise NonDifferentiableError(f"position entry '{k}' is discrete")
        adjoints: dict[str, np.ndarray] = {}

        def add(name: str, g: np.ndarray) -> None:
            g = np.asarray(g, dtype=np.float64).reshape(np.shape(self._nodes[name].value))
            if name in adjoints:
                adjoints[name] = adjoints[name] + g
            else:
                adjoints[name] = g

        for name in self._topo:
            node = self._nodes[name]
            if node.distribution is None:
                continue
            sc = node.distribution.score(node.value, self._lookup)
            if "x" in sc and not np.issubdtype(node.value.dtype, np.integer):
                add(name, sc["x"])
            for pname, ref in node.distribution.refs.items():
                if pname in sc:
                    add(ref, sc[pname])
        for name in reversed(self._topo):
            if name not in adjoints:
                continue
            node = self._nodes[name]
            if node.kind is not NodeKind.WEAK:
                continue
            if node.weak_fn.vjp is None:
                raise NonDifferentiableError(
                    f"weak node '{name}' ({node.weak_fn.name}) has no vjp"
                )
            args = [self._nodes[p].value for p in node.inputs]
            cots = node.weak_fn.vjp(args, node.value, adjoints[name])
            for inp, c in zip(node.inputs, cots):
                if c is not None:
                    add(inp, c)
        return {
            k: adjoints.get(k, np.zeros_like(self._nodes[k].value, dtype=np.float64))
            for k in position_keys
        }

    def hessian_log_prob(self, position_keys: Sequence[str]) -> np.ndarray:
        """Hessian over the flattened position via central differences of
        the analytic gradient, symmetrized as (H + H^T) / 2."""
        keys = list(position_keys)
        saved = {k: self._nodes[k].value for k in keys}

        def grad_flat() -> np.ndarray:
            g = self.grad_log_prob(keys)
            return np.concatenate([np.ravel(g[k]) for k in keys])

        dim = int(sum(np.size(saved[k]) for k in keys))
        hess = np.empty((dim, dim))
        col = 0
        for k in keys:
            base = np.array(saved[k], dtype=np.float64)
            flat = base.ravel()
            for i in range(flat.size):
                h = 1e-5 * max(1.0, abs(float(flat[i])))
                orig = float(flat[i])
                flat[i] = orig + h
                self.set_value(k, base)
                self.update()
                gp = grad_flat()
                flat[i] = orig - h
                self.set_value(k, base)
                self.update()
                gm = grad_flat()
                flat[i] = orig
                hess[:, col] = (gp - gm) / (2.0 * h)
                col += 1
            self.set_value(k, saved[k])
        self.update()
        return 0.5 * (hess + hess.T)

    # -- transforms

    def transform_node(self, name: str, bijector: Bijector) -> str:
        """Reparameterize a strong node x as u = bijector.inverse(x).

        Adds a strong node ``<name>_transformed`` carrying the
        change-of-variables density, and turns the original node into a
        weak node recomputing x = bijector.forward(u); the model
        log-probability is invariant in distribution.  Returns the new
        node name.
        """
        node = self.node(name)
        if node.kind is not NodeKind.STRONG or node.distribution is None:
            raise UnsupportedTransformError(
                f"'{name}' must be a strong node with a distribution"
            )
        if bijector.name not in _BIJECTOR_FNS:
            raise UnsupportedTransformError(f"no weak function for bijector '{bijector.name}'")
        new_name = f"{name}_transformed"
        if new_name in self._nodes:
            raise UnsupportedTransformError(f"node '{new_name}' already exists")
        try:
            u0 = bijector.inverse(node.value)
        except DomainError as exc:
            raise UnsupportedTransformError(str(exc)) from exc
        rebuilt = []
        for other in self._topo:
            if other == name:
                rebuilt.append(
                    Node(new_name, NodeKind.STRONG, node.role, value=_freeze(u0),
                         distribution=node.distribution.transformed(bijector))
                )
                rebuilt.append(
                    Node(name, NodeKind.WEAK, NodeRole.COMPUTED, inputs=(new_name,),
                         weak_fn=_BIJECTOR_FNS[bijector.name])
                )
            else:
                rebuilt.append(self._nodes[other])
        fresh = ModelGraph(rebuilt)
        self.__dict__.update(fresh.__dict__)
        return new_name

    # -- visualization

    def export_dot(self) -> str:
        """The graph in DOT format: strong nodes blue, weak nodes orange,
        double border when a distribution is attached, parameters oblique."""
        lines = ["digraph model {", "  rankdir=LR;", '  node [style=filled, fontname="Helvetica"];']
        for name in self._topo:
            node = self._nodes[name]
            color = "#aaccee" if node.kind is NodeKind.STRONG else "#ffcc99"
            attrs = [f'fillcolor="{color}"']
            attrs.append("peripheries=2" if node.distribution is not None else "peripheries=1")
            if node.role is NodeRole.PARAMETER:
                attrs.append("shape=parallelogram")
            else:
                attrs.append("shape=ellipse")
            lines.append(f'  "{name}" [{", ".join(attrs)}];')
        for name in self._topo:
            for parent in self._parents[name]:
                lines.append(f'  "{parent}" -> "{name}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_graph(nodes: Iterable[Node]) -> ModelGraph:
    """Build a graph, compute its topological order, and evaluate all weak
    nodes and log-probabilities once."""
    return ModelGraph(nodes)


def transform_node(graph: ModelGraph, name: str, bijector: Bijector) -> str:
    return graph.transform_node(name, bijector)
