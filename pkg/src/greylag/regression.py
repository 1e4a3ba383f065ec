"""Semi-parametric regression building blocks.

B-spline bases on equidistant knots, difference penalties, the
sum-to-zero identification constraint, the conjugate Gibbs update for
smoothing variances, and a builder assembling the full distributional
regression graph: per smooth term a coefficient block with a
rank-deficient multivariate normal prior (precomputed rank stored as a
strong node), a smoothing variance with an inverse gamma hyperprior, and
weak nodes for the fitted term, the predictor, and the inverse link.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .dists import FAMILIES, DistributionSpec, numeric_rank
from .errors import DataError, DegenerateError, DomainError
from .graph import (
    AFFINE,
    EXP_FN,
    IDENTITY_FN,
    MATVEC,
    SIGMOID_FN,
    ModelGraph,
    Node,
    NodeRole,
    build_graph,
    strong,
    weak,
)
from .rng import PrngKey

INVERSE_LINKS = {"Identity": IDENTITY_FN, "Exp": EXP_FN, "Logistic": SIGMOID_FN}


def bspline_basis(
    x: np.ndarray,
    n_basis: int,
    degree: int,
    lower: float | None = None,
    upper: float | None = None,
) -> np.ndarray:
    """Design matrix of ``n_basis`` B-splines evaluated at ``x``.

    Knots are equidistant over [lower, upper] (the data range by default)
    with the boundary knots repeated ``degree`` times, so the basis is a
    partition of unity on the full interval and every row has at most
    degree + 1 nonzero entries.  Points outside the knot span are an
    error.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise DomainError("spline inputs must be finite")
    if n_basis < degree + 1:
        raise DomainError("n_basis must be at least degree + 1")
    lo = float(np.min(x)) if lower is None else float(lower)
    hi = float(np.max(x)) if upper is None else float(upper)
    if not hi > lo:
        raise DomainError("knot span is empty")
    if np.any(x < lo) or np.any(x > hi):
        raise DomainError("evaluation points outside the knot span")
    inner = np.linspace(lo, hi, n_basis - degree + 1)
    knots = np.concatenate([np.full(degree, lo), inner, np.full(degree, hi)])

    n_intervals = len(knots) - 1
    basis = np.zeros((x.size, n_intervals))
    for j in range(n_intervals):
        if knots[j] < knots[j + 1]:
            basis[:, j] = (x >= knots[j]) & (x < knots[j + 1])
    basis[x == hi, n_basis - 1] = 1.0
    for k in range(1, degree + 1):
        nxt = np.zeros((x.size, n_intervals - k))
        for j in range(n_intervals - k):
            acc = np.zeros(x.size)
            den_left = knots[j + k] - knots[j]
            if den_left > 0:
                acc += (x - knots[j]) / den_left * basis[:, j]
            den_right = knots[j + k + 1] - knots[j + 1]
            if den_right > 0:
                acc += (knots[j + k + 1] - x) / den_right * basis[:, j + 1]
            nxt[:, j] = acc
        basis = nxt
    return basis


def difference_penalty(n_basis: int, order: int) -> np.ndarray:
    """Penalty K = D_r' D_r with D_r the r-th order difference operator.

    K has rank n_basis - order and annihilates polynomials of degree
    below ``order`` on the coefficient index grid.
    """
    if order < 1 or n_basis <= order:
        raise DomainError("difference penalty requires n_basis > order >= 1")
    d = np.diff(np.eye(n_basis), n=order, axis=0)
    return d.T @ d


def apply_sum_to_zero(
    basis: np.ndarray, penalty: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reparameterize so the fitted term sums to zero over the data.

    With c = B'1, coefficients are written beta = Z beta~ where Z is an
    orthonormal basis of the null space of c'; returns (B Z, Z' K Z, Z).
    Fitted values and the penalty quadratic form are preserved.
    """
    basis = np.asarray(basis, dtype=np.float64)
    if basis.size == 0:
        raise DegenerateError("empty design matrix")
    c = basis.sum(axis=0)
    z = null_space(c[None, :])
    if z.shape[1] == 0:
        raise DegenerateError("sum-to-zero constraint removes every coefficient direction")
    constrained_penalty = z.T @ penalty @ z
    constrained_penalty = 0.5 * (constrained_penalty + constrained_penalty.T)
    return basis @ z, constrained_penalty, z


def tau2_gibbs_draw(
    key: PrngKey, beta: np.ndarray, penalty: np.ndarray, rank: float, a: float, b: float
) -> np.ndarray:
    """Draw the smoothing variance from its inverse gamma full conditional
    IG(a + rank/2, b + beta'K beta / 2)."""
    if a <= 0 or b <= 0:
        raise DomainError("inverse gamma hyperparameters must be positive")
    beta = np.asarray(beta, dtype=np.float64).ravel()
    quad = float(beta @ penalty @ beta)
    if quad < -1e-10:
        raise DomainError("penalty quadratic form must be non-negative")
    rng = key.generator()
    g = rng.gamma(shape=a + 0.5 * float(rank), scale=1.0 / (b + 0.5 * max(quad, 0.0)))
    return np.asarray(1.0 / g)


@dataclass
class SmoothTerm:
    """A penalized basis-expansion term of one predictor."""

    basis: np.ndarray
    penalty: np.ndarray
    rank: int
    constraint: str = "sum_to_zero"
    back_transform: np.ndarray | None = None
    a: float = 0.01
    b: float = 0.01
    # needed to re-evaluate the basis at new covariate values
    n_basis: int = 0
    degree: int = 0
    lower: float = 0.0
    upper: float = 0.0

    @property
    def n_coef(self) -> int:
        return self.basis.shape[1]

    def design_at(self, x_new: np.ndarray) -> np.ndarray:
        """The constrained design evaluated at new covariate values."""
        raw = bspline_basis(x_new, self.n_basis, self.degree, self.lower, self.upper)
        return raw @ self.back_transform if self.back_transform is not None else raw


def smooth_term(
    x: np.ndarray,
    n_basis: int = 20,
    degree: int = 3,
    penalty_order: int = 2,
    constraint: str = "sum_to_zero",
    a: float = 0.01,
    b: float = 0.01,
) -> SmoothTerm:
    """P-spline term: B-spline basis plus difference penalty, with the
    sum-to-zero constraint applied by default."""
    x = np.asarray(x, dtype=np.float64).ravel()
    basis = bspline_basis(x, n_basis, degree)
    penalty = difference_penalty(n_basis, penalty_order)
    back = None
    if constraint == "sum_to_zero":
        basis, penalty, back = apply_sum_to_zero(basis, penalty)
    elif constraint != "none":
        raise DomainError(f"unknown constraint '{constraint}'")
    return SmoothTerm(
        basis=basis,
        penalty=penalty,
        rank=numeric_rank(penalty),
        constraint=constraint,
        back_transform=back,
        a=a,
        b=b,
        n_basis=n_basis,
        degree=degree,
        lower=float(np.min(x)),
        upper=float(np.max(x)),
    )


@dataclass
class Predictor:
    """Structured additive predictor for one response parameter."""

    name: str
    terms: list[SmoothTerm] = field(default_factory=list)
    inverse_link: str = "Identity"
    intercept: float = 0.0

    def __post_init__(self):
        if self.inverse_link not in INVERSE_LINKS:
            raise DomainError(f"unknown inverse link '{self.inverse_link}'")


@dataclass
class DistRegModel:
    """A distributional regression model and its graph.

    Node names follow the pattern ``<param>_p0_beta`` for intercepts,
    ``<param>_np<l>_beta`` / ``<param>_np<l>_tau2`` for the l-th smooth
    term of the predictor for response parameter ``<param>``.
    """

    response: np.ndarray
    family: str
    predictors: list[Predictor]
    graph: ModelGraph | None = None
    response_name: str = "response"

    @staticmethod
    def intercept_name(param: str) -> str:
        return f"{param}_p0_beta"

    @staticmethod
    def coef_name(param: str, term: int) -> str:
        return f"{param}_np{term}_beta"

    @staticmethod
    def tau2_name(param: str, term: int) -> str:
        return f"{param}_np{term}_tau2"

    def term(self, param: str, index: int) -> SmoothTerm:
        for pred in self.predictors:
            if pred.name == param:
                return pred.terms[index]
        raise KeyError(param)

    def parameter_count(self) -> int:
        n = 0
        for pred in self.predictors:
            n += 1 + sum(t.n_coef + 1 for t in pred.terms)
        return n


def distreg_model(
    response: np.ndarray, family: str, predictors: list[Predictor]
) -> DistRegModel:
    """Assemble the distributional regression DAG.

    Per term: coefficient node with the rank-deficient multivariate
    normal prior (rank precomputed and stored in a strong node), a
    smoothing variance with an inverse gamma prior, hyperparameter nodes,
    and a weak node for the fitted term; per predictor: weak nodes for
    the additive predictor and the inverse link; one observed response
    node carrying the likelihood.
    """
    fam = FAMILIES[family]
    response = np.asarray(response, dtype=np.float64).ravel()
    names = [p.name for p in predictors]
    if sorted(names) != sorted(fam.param_names):
        raise DataError(
            f"family {family} needs one predictor per parameter {fam.param_names}, got {names}"
        )
    nodes: list[Node] = []
    theta_refs: dict[str, str] = {}
    for pred in predictors:
        k = pred.name
        term_outputs: list[str] = []
        nodes.append(strong(DistRegModel.intercept_name(k), np.asarray(float(pred.intercept))))
        for l, term in enumerate(pred.terms):
            if term.basis.shape[0] != response.size:
                raise DataError(
                    f"design for {k}_np{l} has {term.basis.shape[0]} rows, "
                    f"response has {response.size}"
                )
            x_name = f"{k}_np{l}_X"
            rank_name = f"{k}_np{l}_K_rank"
            a_name = f"{k}_np{l}_a"
            b_name = f"{k}_np{l}_b"
            tau2_name = DistRegModel.tau2_name(k, l)
            beta_name = DistRegModel.coef_name(k, l)
            f_name = f"{k}_np{l}_f"
            nodes.append(strong(x_name, term.basis, role=NodeRole.HYPERPARAMETER))
            nodes.append(strong(rank_name, float(term.rank), role=NodeRole.HYPERPARAMETER))
            nodes.append(strong(a_name, float(term.a), role=NodeRole.HYPERPARAMETER))
            nodes.append(strong(b_name, float(term.b), role=NodeRole.HYPERPARAMETER))
            nodes.append(
                strong(
                    tau2_name,
                    1.0,
                    distribution=DistributionSpec.make(
                        "InverseGamma", concentration=a_name, scale=b_name
                    ),
                )
            )
            nodes.append(
                strong(
                    beta_name,
                    np.zeros(term.n_coef),
                    distribution=DistributionSpec.make(
                        "MultivariateNormalDegenerate",
                        penalty=term.penalty,
                        rank=rank_name,
                        tau2=tau2_name,
                    ),
                )
            )
            nodes.append(weak(f_name, MATVEC, (x_name, beta_name)))
            term_outputs.append(f_name)
        eta_name = f"{k}_eta"
        theta_name = f"{k}_theta"
        nodes.append(weak(eta_name, AFFINE, (DistRegModel.intercept_name(k), *term_outputs)))
        nodes.append(weak(theta_name, INVERSE_LINKS[pred.inverse_link], (eta_name,)))
        theta_refs[k] = theta_name
    nodes.append(
        strong(
            "response",
            response,
            role=NodeRole.OBSERVED,
            distribution=DistributionSpec.make(family, **theta_refs),
        )
    )
    model = DistRegModel(response=response, family=family, predictors=list(predictors))
    model.graph = build_graph(nodes)
    return model


def build_distreg_model(
    response: np.ndarray, family: str, predictors: list[Predictor]
) -> ModelGraph:
    """The distributional regression graph alone (see :func:`distreg_model`
    for the wrapper that keeps the term metadata)."""
    return distreg_model(response, family, predictors).graph


class Tau2FullConditional:
    """Picklable full-conditional sampler for one smoothing variance,
    suitable for a Gibbs kernel."""

    def __init__(self, tau2_name: str, beta_name: str, penalty: np.ndarray,
                 rank: float, a: float, b: float):
        self.tau2_name = tau2_name
        self.beta_name = beta_name
        self.penalty = np.asarray(penalty, dtype=np.float64)
        self.rank = float(rank)
        self.a = float(a)
        self.b = float(b)

    def __call__(self, key: PrngKey, model_state) -> dict:
        beta = model_state.values[self.beta_name]
        draw = tau2_gibbs_draw(key, beta, self.penalty, self.rank, self.a, self.b)
        return {self.tau2_name: draw}


def tau2_gibbs_conditional(model: DistRegModel, param: str, term_index: int) -> Tau2FullConditional:
    term = model.term(param, term_index)
    return Tau2FullConditional(
        DistRegModel.tau2_name(param, term_index),
        DistRegModel.coef_name(param, term_index),
        term.penalty,
        term.rank,
        term.a,
        term.b,
    )
