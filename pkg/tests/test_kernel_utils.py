import math

import numpy as np
import pytest

from greylag.errors import DivergenceError
from greylag.kernels import (
    PositionCodec,
    da_init,
    da_update,
    leapfrog,
    welford_init,
    welford_update,
    welford_variance,
)


# --- dual averaging ----------------------------------------------------------


def test_da_fixed_point_at_target():
    da = da_init(1.0)
    for _ in range(50):
        da = da_update(da, accept_prob=0.8, target=0.8)
    assert da.h_bar == 0.0
    assert da.log_eps == pytest.approx(da.mu)  # log(10 * eps0)


def test_da_persistent_rejection_shrinks_step():
    da = da_init(1.0)
    steps = []
    for _ in range(30):
        da = da_update(da, accept_prob=0.0, target=0.8)
        steps.append(da.log_eps)
    assert all(b < a for a, b in zip(steps, steps[1:]))  # strictly decreasing


def test_da_single_step_hand_values():
    # delta=0.8, alpha=0, eps0=1: H_bar = 0.8/11, log_eps = log 10 - (1/0.05)*(0.8/11)
    da = da_update(da_init(1.0), accept_prob=0.0, target=0.8)
    assert da.t == 1
    assert da.h_bar == pytest.approx(0.8 / 11.0, abs=1e-15)
    assert da.log_eps == pytest.approx(math.log(10.0) - (1.0 / 0.05) * (0.8 / 11.0), abs=1e-12)
    # smoothing weight t^-0.75 = 1 at t=1: log_eps_bar equals log_eps
    assert da.log_eps_bar == pytest.approx(da.log_eps, abs=1e-12)


# --- Welford -----------------------------------------------------------------


def test_welford_simple_sequence():
    w = welford_init(1)
    for v in (1.0, 2.0, 3.0):
        w = welford_update(w, np.array([v]))
    assert w.mean[0] == pytest.approx(2.0)
    assert welford_variance(w)[0] == pytest.approx(1.0)


def test_welford_constant_stream():
    w = welford_init(2)
    for _ in range(10):
        w = welford_update(w, np.array([3.0, -1.0]))
    np.testing.assert_allclose(welford_variance(w), [0.0, 0.0], atol=1e-15)


def test_welford_matches_two_pass():
    rng = np.random.default_rng(0)
    xs = rng.standard_normal((1000, 3)) * np.array([1.0, 10.0, 0.1])
    w = welford_init(3)
    for x in xs:
        w = welford_update(w, x)
    np.testing.assert_allclose(welford_variance(w), np.var(xs, axis=0, ddof=1), rtol=1e-12)
    np.testing.assert_allclose(w.mean, xs.mean(axis=0), rtol=1e-12)


def test_welford_dense_matches_numpy_cov():
    rng = np.random.default_rng(1)
    xs = rng.standard_normal((500, 3))
    w = welford_init(3, dense=True)
    for x in xs:
        w = welford_update(w, x)
    np.testing.assert_allclose(welford_variance(w), np.cov(xs.T, ddof=1), rtol=1e-10)


def test_welford_variance_needs_two_samples():
    w = welford_update(welford_init(1), np.array([1.0]))
    with pytest.raises(ValueError):
        welford_variance(w)


# --- leapfrog -------------------------------------------------------------------


def _quad_grad(q):
    return -q  # log p = -q^2 / 2


def test_leapfrog_hand_step():
    q, p = leapfrog(np.array([0.0]), np.array([1.0]), 0.1, 1, _quad_grad)
    assert q[0] == pytest.approx(0.1, abs=1e-15)
    assert p[0] == pytest.approx(0.995, abs=1e-15)


def test_leapfrog_reversible():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((3, 3))
    prec = a @ a.T + 3 * np.eye(3)

    def grad(q):
        return -prec @ q

    q0 = rng.standard_normal(3)
    p0 = rng.standard_normal(3)
    inv_mass = np.array([1.0, 2.0, 0.5])
    q1, p1 = leapfrog(q0, p0, 0.05, 20, grad, inv_mass)
    q2, p2 = leapfrog(q1, -p1, 0.05, 20, grad, inv_mass)
    np.testing.assert_allclose(q2, q0, atol=1e-10)
    np.testing.assert_allclose(-p2, p0, atol=1e-10)


def test_leapfrog_energy_error_small():
    def energy(q, p):
        return 0.5 * float(q @ q) + 0.5 * float(p @ p)

    q, p = np.array([1.0]), np.array([0.5])
    h0 = energy(q, p)
    q1, p1 = leapfrog(q, p, 0.01, 100, _quad_grad)
    assert abs(energy(q1, p1) - h0) < 1e-3


def test_leapfrog_divergence_error():
    def energy(q, p):
        return 0.5 * float(q @ q) + 0.5 * float(p @ p)

    with pytest.raises(DivergenceError):
        leapfrog(np.array([1.0]), np.array([1.0]), 50.0, 10, _quad_grad, energy_fn=energy)


# --- position codec ------------------------------------------------------------


def test_codec_round_trip():
    position = {"a": np.arange(6.0).reshape(2, 3), "b": np.asarray(5.0), "c": np.ones(2)}
    codec = PositionCodec(position)
    assert codec.dim == 9
    flat = codec.flatten(position)
    back = codec.unflatten(flat)
    for k in position:
        assert np.array_equal(back[k], np.asarray(position[k], dtype=np.float64))
        assert back[k].shape == np.shape(position[k])
