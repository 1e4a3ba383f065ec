"""Probability distributions and bijectors for graph nodes.

Each family provides a summed log-density, analytic score functions
(derivatives of the log-density with respect to the value and the
continuous parameters), and a sampler.  Distribution parameters can be
constants or references to other graph nodes; a :class:`DistributionSpec`
records which is which and precomputes derived constants (e.g. the
pseudo-determinant of a fixed penalty matrix).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import digamma, gammaln

from .errors import DomainError, UnsupportedTransformError

_LOG_2PI = float(np.log(2.0 * np.pi))
_EPS = float(np.finfo(np.float64).eps)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that were broadcast to produce it."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Family:
    """Base class for distribution families.

    Subclasses define ``param_names`` (required parameters) and may
    define ``derived_names`` (constants computed by :meth:`prepare`).
    ``score`` returns a dict with key ``"x"`` for the derivative with
    respect to the value (absent for discrete families) plus one key per
    differentiable parameter.
    """

    name: str = ""
    param_names: tuple[str, ...] = ()
    derived_names: tuple[str, ...] = ()
    discrete: bool = False

    def prepare(self, consts: dict[str, np.ndarray], refs: dict[str, str]) -> None:
        """Validate constant parameters and add derived constants in place."""

    def log_prob(self, x: np.ndarray, params: Mapping[str, np.ndarray]) -> float:
        raise NotImplementedError

    def score(self, x: np.ndarray, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def sample(
        self, rng: np.random.Generator, shape: tuple[int, ...], params: Mapping[str, np.ndarray]
    ) -> np.ndarray:
        raise NotImplementedError


class Normal(Family):
    """Independent normals, parameterized by mean ``loc`` and standard
    deviation ``scale``; the log-density is summed over elements."""

    name = "Normal"
    param_names = ("loc", "scale")

    def log_prob(self, x, params):
        loc, scale = params["loc"], params["scale"]
        if np.any(scale <= 0):
            raise DomainError("Normal: scale must be positive")
        z = (x - loc) / scale
        terms = -0.5 * _LOG_2PI - np.log(scale) - 0.5 * z * z
        return float(np.sum(np.broadcast_to(terms, np.asarray(x).shape)))

    def score(self, x, params):
        loc, scale = params["loc"], params["scale"]
        if np.any(scale <= 0):
            raise DomainError("Normal: scale must be positive")
        d = (x - loc) / (scale * scale)
        return {
            "x": _unbroadcast(-d, np.shape(x)),
            "loc": _unbroadcast(d, np.shape(loc)),
            "scale": _unbroadcast((x - loc) * d / scale - 1.0 / scale, np.shape(scale)),
        }

    def sample(self, rng, shape, params):
        loc, scale = params["loc"], params["scale"]
        if np.any(scale <= 0):
            raise DomainError("Normal: scale must be positive")
        return np.asarray(loc + scale * rng.standard_normal(shape), dtype=np.float64)


class InverseGamma(Family):
    """Inverse gamma with shape ``concentration`` a and scale ``scale`` b,
    density proportional to x^(-a-1) exp(-b/x) on x > 0."""

    name = "InverseGamma"
    param_names = ("concentration", "scale")

    def _check(self, params):
        a, b = params["concentration"], params["scale"]
        if np.any(a <= 0) or np.any(b <= 0):
            raise DomainError("InverseGamma: concentration and scale must be positive")
        return a, b

    def log_prob(self, x, params):
        a, b = self._check(params)
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0):
            return -np.inf
        terms = a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x
        return float(np.sum(np.broadcast_to(terms, x.shape)))

    def score(self, x, params):
        a, b = self._check(params)
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0):
            raise DomainError("InverseGamma: score requires x > 0")
        return {
            "x": _unbroadcast(-(a + 1.0) / x + b / (x * x), x.shape),
            "concentration": _unbroadcast(
                np.broadcast_to(np.log(b) - digamma(a) - np.log(x), x.shape), np.shape(a)
            ),
            "scale": _unbroadcast(np.broadcast_to(a / b - 1.0 / x, x.shape), np.shape(b)),
        }

    def sample(self, rng, shape, params):
        a, b = self._check(params)
        g = rng.gamma(shape=np.broadcast_to(a, shape), scale=1.0 / np.broadcast_to(b, shape))
        return np.asarray(1.0 / g, dtype=np.float64)


class Uniform(Family):
    """Continuous uniform on [low, high], elementwise."""

    name = "Uniform"
    param_names = ("low", "high")

    def _check(self, params):
        low, high = params["low"], params["high"]
        if np.any(high <= low):
            raise DomainError("Uniform: high must exceed low")
        return low, high

    def log_prob(self, x, params):
        low, high = self._check(params)
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < low) or np.any(x > high):
            return -np.inf
        terms = -np.log(high - low)
        return float(np.sum(np.broadcast_to(terms, x.shape)))

    def score(self, x, params):
        low, high = self._check(params)
        x = np.asarray(x, dtype=np.float64)
        w = np.broadcast_to(1.0 / (high - low), x.shape)
        return {
            "x": np.zeros_like(x),
            "low": _unbroadcast(w, np.shape(low)),
            "high": _unbroadcast(-w, np.shape(high)),
        }

    def sample(self, rng, shape, params):
        low, high = self._check(params)
        return np.asarray(low + (high - low) * rng.random(shape), dtype=np.float64)


class Bernoulli(Family):
    """Bernoulli over {0, 1} integer arrays with success probability ``probs``."""

    name = "Bernoulli"
    param_names = ("probs",)
    discrete = True

    def _check(self, params):
        p = params["probs"]
        if np.any(p <= 0) or np.any(p >= 1):
            raise DomainError("Bernoulli: probs must lie strictly in (0, 1)")
        return p

    def log_prob(self, x, params):
        p = self._check(params)
        x = np.asarray(x)
        if not np.all((x == 0) | (x == 1)):
            return -np.inf
        terms = np.where(x == 1, np.log(p), np.log1p(-np.asarray(p, dtype=np.float64)))
        return float(np.sum(np.broadcast_to(terms, x.shape)))

    def score(self, x, params):
        p = self._check(params)
        x = np.asarray(x)
        d = x / p - (1 - x) / (1.0 - p)
        return {"probs": _unbroadcast(d, np.shape(p))}

    def sample(self, rng, shape, params):
        p = self._check(params)
        return (rng.random(shape) < p).astype(np.int64)


def numeric_rank(matrix: np.ndarray, eigvals: np.ndarray | None = None) -> int:
    """Rank of a symmetric PSD matrix: eigenvalues above p * lambda_max * eps."""
    if eigvals is None:
        eigvals = np.linalg.eigvalsh(matrix)
    p = matrix.shape[0]
    tol = p * float(np.max(np.abs(eigvals), initial=0.0)) * _EPS
    return int(np.sum(eigvals > tol))


class MultivariateNormalDegenerate(Family):
    """Rank-deficient multivariate normal defined by a PSD penalty matrix.

    The density on the row space of the penalty K with variance tau2 is

        -(rank/2) log(2 pi tau2) + (1/2) log pdet(K) - x'Kx / (2 tau2),

    with pdet the product of the nonzero eigenvalues of K.  ``rank`` and
    ``log_pdet`` are derived once from a constant penalty and can also be
    supplied explicitly (e.g. as a precomputed-rank node input).
    """

    name = "MultivariateNormalDegenerate"
    param_names = ("penalty", "tau2")
    derived_names = ("rank", "log_pdet")

    def prepare(self, consts, refs):
        if "penalty" not in consts:
            return
        k = consts["penalty"]
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise DomainError("penalty must be a square matrix")
        if np.max(np.abs(k - k.T)) > 1e-12 * max(1.0, float(np.max(np.abs(k)))):
            raise DomainError("penalty must be symmetric")
        eigvals = np.linalg.eigvalsh(0.5 * (k + k.T))
        tol = k.shape[0] * float(np.max(np.abs(eigvals), initial=0.0)) * _EPS
        positive = eigvals[eigvals > tol]
        if "rank" not in consts and "rank" not in refs:
            consts["rank"] = np.asarray(float(len(positive)))
        if "log_pdet" not in consts and "log_pdet" not in refs:
            consts["log_pdet"] = np.asarray(float(np.sum(np.log(positive))) if len(positive) else 0.0)

    def _unpack(self, params):
        k = np.asarray(params["penalty"], dtype=np.float64)
        tau2 = float(np.asarray(params["tau2"]))
        rank = params.get("rank")
        log_pdet = params.get("log_pdet")
        if tau2 <= 0:
            raise DomainError("MultivariateNormalDegenerate: tau2 must be positive")
        if rank is None or log_pdet is None:
            eigvals = np.linalg.eigvalsh(0.5 * (k + k.T))
            tol = k.shape[0] * float(np.max(np.abs(eigvals), initial=0.0)) * _EPS
            positive = eigvals[eigvals > tol]
            if rank is None:
                rank = float(len(positive))
            if log_pdet is None:
                log_pdet = float(np.sum(np.log(positive))) if len(positive) else 0.0
        return k, float(np.asarray(rank)), tau2, float(np.asarray(log_pdet))

    def log_prob(self, x, params):
        k, rank, tau2, log_pdet = self._unpack(params)
        x = np.asarray(x, dtype=np.float64).ravel()
        quad = float(x @ k @ x)
        return -0.5 * rank * (_LOG_2PI + np.log(tau2)) + 0.5 * log_pdet - 0.5 * quad / tau2

    def score(self, x, params):
        k, rank, tau2, _ = self._unpack(params)
        x = np.asarray(x, dtype=np.float64)
        kx = (k @ x.ravel()).reshape(x.shape)
        quad = float(x.ravel() @ k @ x.ravel())
        return {
            "x": -kx / tau2,
            "tau2": np.asarray(-0.5 * rank / tau2 + 0.5 * quad / tau2**2),
        }

    def sample(self, rng, shape, params):
        k, _, tau2, _ = self._unpack(params)
        eigvals, eigvecs = np.linalg.eigh(0.5 * (k + k.T))
        tol = k.shape[0] * float(np.max(np.abs(eigvals), initial=0.0)) * _EPS
        keep = eigvals > tol
        z = rng.standard_normal(int(np.sum(keep)))
        x = eigvecs[:, keep] @ (z * np.sqrt(tau2 / eigvals[keep]))
        return np.asarray(x.reshape(shape), dtype=np.float64)


NORMAL = Normal()
INVERSE_GAMMA = InverseGamma()
UNIFORM = Uniform()
BERNOULLI = Bernoulli()
MVN_DEGENERATE = MultivariateNormalDegenerate()

FAMILIES: dict[str, Family] = {
    f.name: f for f in (NORMAL, INVERSE_GAMMA, UNIFORM, BERNOULLI, MVN_DEGENERATE)
}


# --- bijectors ----------------------------------------------------------


class Bijector:
    """Invertible map from an unconstrained variable u to the original
    variable x = forward(u), with the log-Jacobian terms needed for the
    change of variables and its gradient."""

    name: str = ""

    def forward(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_det_jacobian(self, u: np.ndarray) -> float:
        """Sum over elements of log |d forward / du| at u."""
        raise NotImplementedError

    def forward_deriv(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def ldj_grad(self, u: np.ndarray) -> np.ndarray:
        """Elementwise derivative of log |d forward / du|."""
        raise NotImplementedError


class Identity(Bijector):
    name = "Identity"

    def forward(self, u):
        return np.asarray(u, dtype=np.float64)

    def inverse(self, x):
        return np.asarray(x, dtype=np.float64)

    def log_det_jacobian(self, u):
        return 0.0

    def forward_deriv(self, u):
        return np.ones_like(np.asarray(u, dtype=np.float64))

    def ldj_grad(self, u):
        return np.zeros_like(np.asarray(u, dtype=np.float64))


class Exp(Bijector):
    """x = exp(u); the transform that samples a positive x on the log scale."""

    name = "Exp"

    def forward(self, u):
        return np.exp(u)

    def inverse(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0):
            raise DomainError("Exp.inverse requires positive values")
        return np.log(x)

    def log_det_jacobian(self, u):
        return float(np.sum(u))

    def forward_deriv(self, u):
        return np.exp(u)

    def ldj_grad(self, u):
        return np.ones_like(np.asarray(u, dtype=np.float64))


class Log(Bijector):
    """x = log(u) for positive u."""

    name = "Log"

    def forward(self, u):
        u = np.asarray(u, dtype=np.float64)
        if np.any(u <= 0):
            raise DomainError("Log.forward requires positive values")
        return np.log(u)

    def inverse(self, x):
        return np.exp(x)

    def log_det_jacobian(self, u):
        u = np.asarray(u, dtype=np.float64)
        if np.any(u <= 0):
            raise DomainError("Log.log_det_jacobian requires positive values")
        return float(-np.sum(np.log(u)))

    def forward_deriv(self, u):
        return 1.0 / np.asarray(u, dtype=np.float64)

    def ldj_grad(self, u):
        return -1.0 / np.asarray(u, dtype=np.float64)


class Softplus(Bijector):
    """x = log(1 + exp(u)), a smooth map onto the positive half-line."""

    name = "Softplus"

    def forward(self, u):
        return np.logaddexp(0.0, u)

    def inverse(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(x <= 0):
            raise DomainError("Softplus.inverse requires positive values")
        return x + np.log1p(-np.exp(-x))

    def log_det_jacobian(self, u):
        return float(-np.sum(np.logaddexp(0.0, -np.asarray(u, dtype=np.float64))))

    def forward_deriv(self, u):
        return 1.0 / (1.0 + np.exp(-np.asarray(u, dtype=np.float64)))

    def ldj_grad(self, u):
        return 1.0 / (1.0 + np.exp(np.asarray(u, dtype=np.float64)))


IDENTITY = Identity()
EXP = Exp()
LOG = Log()
SOFTPLUS = Softplus()

BIJECTORS: dict[str, Bijector] = {b.name: b for b in (IDENTITY, EXP, LOG, SOFTPLUS)}


class TransformedFamily(Family):
    """Pushback of a base family through a bijector.

    If x ~ base and x = forward(u), the log-density of u is
    base.log_prob(forward(u)) + log_det_jacobian(u).
    """

    def __init__(self, base: Family, bijector: Bijector):
        if base.discrete:
            raise UnsupportedTransformError("cannot transform a discrete distribution")
        self.base = base
        self.bijector = bijector
        self.name = f"Transformed[{base.name},{bijector.name}]"
        self.param_names = base.param_names
        self.derived_names = base.derived_names

    def prepare(self, consts, refs):
        self.base.prepare(consts, refs)

    def log_prob(self, u, params):
        x = self.bijector.forward(u)
        base_lp = self.base.log_prob(x, params)
        if not np.isfinite(base_lp):
            return base_lp
        return base_lp + self.bijector.log_det_jacobian(u)

    def score(self, u, params):
        x = self.bijector.forward(u)
        sc = dict(self.base.score(x, params))
        sc["x"] = sc["x"] * self.bijector.forward_deriv(u) + self.bijector.ldj_grad(u)
        return sc

    def sample(self, rng, shape, params):
        return self.bijector.inverse(self.base.sample(rng, shape, params))


# --- distribution spec ---------------------------------------------------


@dataclass
class DistributionSpec:
    """A family plus its parameters, each a node reference (string) or a
    constant array.  Derived constants are filled in by the family."""

    family: Family
    refs: dict[str, str] = field(default_factory=dict)
    consts: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def make(cls, family: Family | str, **params) -> "DistributionSpec":
        fam = FAMILIES[family] if isinstance(family, str) else family
        refs: dict[str, str] = {}
        consts: dict[str, np.ndarray] = {}
        allowed = set(fam.param_names) | set(fam.derived_names)
        for name, value in params.items():
            if name not in allowed:
                raise DomainError(f"{fam.name} has no parameter '{name}'")
            if isinstance(value, str):
                refs[name] = value
            else:
                consts[name] = np.asarray(value, dtype=np.float64)
        for name in fam.param_names:
            if name not in refs and name not in consts:
                raise DomainError(f"{fam.name} requires parameter '{name}'")
        fam.prepare(consts, refs)
        return cls(fam, refs, consts)

    def resolve(self, lookup: Callable[[str], np.ndarray]) -> dict[str, np.ndarray]:
        """Materialize the parameter dict given a node-value lookup."""
        params = dict(self.consts)
        for name, ref in self.refs.items():
            params[name] = lookup(ref)
        return params

    def log_prob(self, x, lookup) -> float:
        return self.family.log_prob(x, self.resolve(lookup))

    def score(self, x, lookup) -> dict[str, np.ndarray]:
        return self.family.score(x, self.resolve(lookup))

    def sample(self, rng, shape, lookup) -> np.ndarray:
        return self.family.sample(rng, shape, self.resolve(lookup))

    def transformed(self, bijector: Bijector) -> "DistributionSpec":
        return DistributionSpec(
            TransformedFamily(self.family, bijector), dict(self.refs), dict(self.consts)
        )
