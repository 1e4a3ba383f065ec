import numpy as np
import pytest

import greylag as gl
from greylag.errors import (
    CycleError,
    MissingInputError,
    NonDifferentiableError,
    ShapeError,
    WeakWriteError,
)
from greylag.graph import AFFINE, MATVEC, WeakFn, total_log_prob


class CountingFn:
    """Weak function wrapper that counts invocations (picklable not needed here)."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, *args):
        self.calls += 1
        return self.fn(*args)


def counting_weak(name, fn, inputs):
    return gl.weak(name, WeakFn(name, CountingFn(fn)), inputs)


def live_counter(graph, name):
    # the graph deep-copies nodes at construction; fetch the copy it calls
    return graph.nodes[name].weak_fn.fn


def double(x):
    return 2.0 * np.asarray(x, dtype=np.float64)


def plus_one(x):
    return np.asarray(x, dtype=np.float64) + 1.0


# --- construction -------------------------------------------------------------


def test_chain_topological_order():
    a = gl.strong("a", 1.0)
    b = gl.weak("b", WeakFn("double", double), ["a"])
    c = gl.weak("c", WeakFn("plus_one", plus_one), ["b"])
    graph = gl.build_graph([c, a, b])  # construction order must not matter
    assert graph.topo_order == ["a", "b", "c"]
    assert graph.nodes["b"].value == pytest.approx(2.0)
    assert graph.nodes["c"].value == pytest.approx(3.0)


def test_diamond_partial_order():
    a = gl.strong("a", 1.0)
    b = gl.weak("b", WeakFn("double", double), ["a"])
    c = gl.weak("c", WeakFn("plus_one", plus_one), ["a"])
    d = gl.weak("d", AFFINE, ["b", "c"])
    order = gl.build_graph([d, c, b, a]).topo_order
    assert order[0] == "a" and order[-1] == "d"


def test_cycle_rejected():
    a = gl.weak("a", WeakFn("id", plus_one), ["b"])
    b = gl.weak("b", WeakFn("id", plus_one), ["a"])
    with pytest.raises(CycleError):
        gl.build_graph([a, b])


def test_missing_input_and_duplicates():
    with pytest.raises(MissingInputError):
        gl.build_graph([gl.weak("b", WeakFn("id", plus_one), ["nope"])])
    with pytest.raises(MissingInputError):
        gl.build_graph([gl.strong("a", 1.0), gl.strong("a", 2.0)])


# --- set_value and flagging ----------------------------------------------------


def make_xyz():
    x = gl.strong("x", 1.0)
    y = gl.weak("y", WeakFn("double", double), ["x"])
    z = gl.weak("z", WeakFn("plus_one", plus_one), ["y"])
    return gl.build_graph([x, y, z])


def test_set_value_flags_lazily():
    graph = make_xyz()
    graph.set_value("x", 3.0)
    assert graph.nodes["y"].outdated and graph.nodes["z"].outdated
    assert graph.nodes["y"].value == pytest.approx(2.0)  # unchanged until update
    assert not graph.nodes["x"].outdated  # no distribution on x
    graph.update()
    assert graph.nodes["y"].value == pytest.approx(6.0)
    assert graph.nodes["z"].value == pytest.approx(7.0)
    assert not any(graph.nodes[n].outdated for n in graph.topo_order)


def test_set_value_no_outputs_flags_only_own_log_prob():
    theta = gl.strong("theta", 0.0, distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=1.0))
    graph = gl.build_graph([theta])
    graph.set_value("theta", 1.0)
    assert graph.nodes["theta"].outdated
    graph.update()
    assert graph.nodes["theta"].log_prob == pytest.approx(-0.9189385332046727 - 0.5)


def test_weak_write_and_shape_errors():
    graph = make_xyz()
    with pytest.raises(WeakWriteError):
        graph.set_value("y", 1.0)
    with pytest.raises(ShapeError):
        graph.set_value("x", np.zeros(3))


# --- update: counts and partial updates -----------------------------------------


def test_update_calls_each_weak_fn_once():
    x = gl.strong("x", 1.0)
    graph = gl.build_graph([x, counting_weak("y", double, ["x"]),
                            counting_weak("z", plus_one, ["y"])])
    y_count, z_count = live_counter(graph, "y"), live_counter(graph, "z")
    y_count.calls = z_count.calls = 0
    graph.set_value("x", 2.0)
    graph.set_value("x", 3.0)  # two writes, one update
    graph.update()
    assert y_count.calls == 1 and z_count.calls == 1


def test_partial_update_skips_other_branch():
    root = gl.strong("root", 1.0)
    s1 = gl.strong("s1", 1.0)
    s2 = gl.strong("s2", 1.0)
    graph = gl.build_graph([root, s1, s2,
                            counting_weak("b1", lambda r, s: r + s, ["root", "s1"]),
                            counting_weak("b2", lambda r, s: r * s, ["root", "s2"])])
    c1, c2 = live_counter(graph, "b1"), live_counter(graph, "b2")
    c1.calls = c2.calls = 0
    graph.set_value("s1", 5.0)
    graph.update(targets=["b1"])
    assert c1.calls == 1
    assert c2.calls == 0
    assert not graph.nodes["b1"].outdated


def test_update_clean_graph_is_free():
    x = gl.strong("x", 1.0)
    graph = gl.build_graph([x, counting_weak("y", double, ["x"])])
    y_count = live_counter(graph, "y")
    y_count.calls = 0
    graph.update()
    assert y_count.calls == 0


def test_partial_update_leaves_unneeded_nodes_outdated():
    graph = make_xyz()
    graph.set_value("x", 10.0)
    graph.update(targets=["y"])
    assert not graph.nodes["y"].outdated
    assert graph.nodes["z"].outdated
    graph.update()
    assert graph.nodes["z"].value == pytest.approx(21.0)


# --- log-probability decomposition ----------------------------------------------


def test_log_prob_decomposition():
    mu = gl.strong("mu", 0.0, distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=1.0))
    y = gl.strong("y", 0.0, role=gl.NodeRole.OBSERVED,
                  distribution=gl.DistributionSpec.make("Normal", loc="mu", scale=1.0))
    graph = gl.build_graph([mu, y])
    ln = -0.9189385332046727
    assert graph.log_prob == pytest.approx(2 * ln, abs=1e-12)
    assert graph.log_lik == pytest.approx(ln, abs=1e-12)
    assert graph.log_prior == pytest.approx(ln, abs=1e-12)


def test_no_distribution_means_zero():
    graph = make_xyz()
    assert graph.log_prob == 0.0


# --- state handling ---------------------------------------------------------------


def test_state_round_trip_bit_exact():
    graph = make_xyz()
    graph.set_value("x", 1.2345)
    graph.update()
    state = graph.get_state()
    graph.set_value("x", 9.0)
    graph.update()
    graph.set_state(state)
    new = graph.get_state()
    for name in state.values:
        assert np.array_equal(state.values[name], new.values[name])
        assert state.log_probs[name] == new.log_probs[name]


def test_weak_values_reconstructible_from_strong():
    rng = np.random.default_rng(0)
    x_mat = rng.standard_normal((4, 3))
    beta = gl.strong("beta", rng.standard_normal(3))
    xn = gl.strong("X", x_mat, role=gl.NodeRole.HYPERPARAMETER)
    eta = gl.weak("eta", MATVEC, ["X", "beta"])
    graph = gl.build_graph([beta, xn, eta])
    state = graph.get_state()
    # a fresh graph built only from the strong values reproduces the weak ones
    rebuilt = gl.build_graph(
        [gl.strong("beta", state.values["beta"]),
         gl.strong("X", state.values["X"], role=gl.NodeRole.HYPERPARAMETER),
         gl.weak("eta", MATVEC, ["X", "beta"])]
    )
    assert np.array_equal(rebuilt.nodes["eta"].value, state.values["eta"])


# --- pure functions -----------------------------------------------------------------


def build_small_model():
    rng = np.random.default_rng(1)
    x_mat = rng.standard_normal((6, 2))
    y_obs = rng.standard_normal(6)
    beta = gl.strong("beta", np.zeros(2),
                     distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=2.0))
    xn = gl.strong("X", x_mat, role=gl.NodeRole.HYPERPARAMETER)
    eta = gl.weak("eta", MATVEC, ["X", "beta"])
    y = gl.strong("y", y_obs, role=gl.NodeRole.OBSERVED,
                  distribution=gl.DistributionSpec.make("Normal", loc="eta", scale=1.0))
    return gl.build_graph([beta, xn, eta, y])


def test_pure_fns_match_stateful_on_random_positions():
    graph = build_small_model()
    logprob_fn, update_fn = graph.extract_pure_fns()
    base_state = graph.get_state()
    rng = np.random.default_rng(2)
    for _ in range(100):
        beta = rng.standard_normal(2)
        new_state = update_fn({"beta": beta}, base_state)
        graph.set_value("beta", beta)
        graph.update()
        assert logprob_fn(new_state) == graph.log_prob  # bit-exact


def test_pure_fns_are_referentially_transparent():
    graph = build_small_model()
    _, update_fn = graph.extract_pure_fns()
    state = graph.get_state()
    first = update_fn({"beta": np.array([1.0, -1.0])}, state)
    for _ in range(1000):
        again = update_fn({"beta": np.array([1.0, -1.0])}, state)
        assert again.log_probs == first.log_probs
    for name in first.values:
        assert np.array_equal(first.values[name], again.values[name])


def test_update_fn_empty_position_is_identity():
    graph = build_small_model()
    _, update_fn = graph.extract_pure_fns()
    state = graph.get_state()
    out = update_fn({}, state)
    for name in state.values:
        assert np.array_equal(out.values[name], state.values[name])
    assert out.log_probs == state.log_probs


def test_pure_fns_do_not_touch_original_graph():
    graph = build_small_model()
    before = graph.get_state()
    _, update_fn = graph.extract_pure_fns()
    update_fn({"beta": np.array([5.0, 5.0])}, before)
    after = graph.get_state()
    assert np.array_equal(before.values["beta"], after.values["beta"])


# --- gradients -------------------------------------------------------------------


def test_grad_standard_normal():
    theta = gl.strong("theta", 2.0, distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=1.0))
    graph = gl.build_graph([theta])
    assert graph.grad_log_prob(["theta"])["theta"] == pytest.approx(-2.0)


def test_grad_linear_model_normal_equations():
    rng = np.random.default_rng(3)
    x_mat = rng.standard_normal((8, 3))
    y_obs = rng.standard_normal(8)
    beta_val = rng.standard_normal(3)
    graph = gl.build_graph([
        gl.strong("beta", beta_val),
        gl.strong("X", x_mat, role=gl.NodeRole.HYPERPARAMETER),
        gl.weak("eta", MATVEC, ["X", "beta"]),
        gl.strong("y", y_obs, role=gl.NodeRole.OBSERVED,
                  distribution=gl.DistributionSpec.make("Normal", loc="eta", scale=1.0)),
    ])
    expected = x_mat.T @ (y_obs - x_mat @ beta_val)
    np.testing.assert_allclose(graph.grad_log_prob(["beta"])["beta"], expected, rtol=1e-12)


def _fd_gradient(graph, keys, h=1e-5):
    logprob_fn, update_fn = graph.extract_pure_fns()
    state = graph.get_state()
    grads = {}
    for key in keys:
        base = np.array(state.values[key], dtype=np.float64)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape if base.shape else (1,)):
            pert = base.copy()
            sel = idx if base.shape else ()
            step = h * max(1.0, abs(float(base[sel])))
            pert[sel] = base[sel] + step
            up = logprob_fn(update_fn({key: pert}, state))
            pert[sel] = base[sel] - step
            down = logprob_fn(update_fn({key: pert}, state))
            g[sel] = (up - down) / (2 * step)
        grads[key] = g
    return grads


def test_grad_random_five_parameter_model_matches_fd():
    rng = np.random.default_rng(4)
    x_mat = rng.standard_normal((10, 3))
    y_obs = rng.standard_normal(10)
    nodes = [
        gl.strong("beta", rng.standard_normal(3),
                  distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=1.5)),
        gl.strong("log_sigma", 0.3, distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=1.0)),
        gl.strong("shift", 0.7, distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=3.0)),
        gl.strong("X", x_mat, role=gl.NodeRole.HYPERPARAMETER),
        gl.weak("eta0", MATVEC, ["X", "beta"]),
        gl.weak("eta", AFFINE, ["shift", "eta0"]),
        gl.weak("sigma", "exp", ["log_sigma"]),
        gl.strong("y", y_obs, role=gl.NodeRole.OBSERVED,
                  distribution=gl.DistributionSpec.make("Normal", loc="eta", scale="sigma")),
    ]
    graph = gl.build_graph(nodes)
    keys = ["beta", "log_sigma", "shift"]
    analytic = graph.grad_log_prob(keys)
    fd = _fd_gradient(graph, keys)
    for key in keys:
        np.testing.assert_allclose(analytic[key], fd[key], rtol=1e-6, atol=1e-8)


def test_grad_discrete_position_rejected():
    b = gl.strong("b", np.int64(1), distribution=gl.DistributionSpec.make("Bernoulli", probs=0.5))
    graph = gl.build_graph([b])
    with pytest.raises(NonDifferentiableError):
        graph.grad_log_prob(["b"])


def test_grad_missing_vjp_rejected():
    x = gl.strong("x", 1.0, distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=1.0))
    y = gl.weak("y", WeakFn("opaque", double, vjp=None), ["x"],
                distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=1.0))
    graph = gl.build_graph([x, y])
    with pytest.raises(NonDifferentiableError):
        graph.grad_log_prob(["x"])


# --- Hessians ----------------------------------------------------------------------


def test_hessian_scalar_normal():
    for sigma2 in (0.5, 1.0, 4.0):
        theta = gl.strong("theta", 0.7,
                          distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=np.sqrt(sigma2)))
        graph = gl.build_graph([theta])
        h = graph.hessian_log_prob(["theta"])
        assert h.shape == (1, 1)
        assert h[0, 0] == pytest.approx(-1.0 / sigma2, rel=1e-6)


def test_hessian_gaussian_linear_model():
    rng = np.random.default_rng(5)
    x_mat = rng.standard_normal((12, 3))
    sigma = 0.8
    graph = gl.build_graph([
        gl.strong("beta", rng.standard_normal(3)),
        gl.strong("X", x_mat, role=gl.NodeRole.HYPERPARAMETER),
        gl.weak("eta", MATVEC, ["X", "beta"]),
        gl.strong("y", rng.standard_normal(12), role=gl.NodeRole.OBSERVED,
                  distribution=gl.DistributionSpec.make("Normal", loc="eta", scale=sigma)),
    ])
    h = graph.hessian_log_prob(["beta"])
    np.testing.assert_allclose(h, -(x_mat.T @ x_mat) / sigma**2, rtol=1e-4, atol=1e-4)
    assert np.max(np.abs(h - h.T)) == 0.0  # symmetrized exactly


def test_hessian_restores_graph_state():
    graph = build_small_model()
    before = graph.get_state()
    graph.hessian_log_prob(["beta"])
    after = graph.get_state()
    assert np.array_equal(before.values["beta"], after.values["beta"])
    assert total_log_prob(before) == pytest.approx(total_log_prob(after), abs=1e-12)


# --- DOT export ----------------------------------------------------------------------


def test_dot_export_edges_and_borders():
    graph = build_small_model()
    dot = graph.export_dot()
    assert dot.startswith("digraph")
    assert '"X" -> "eta"' in dot
    assert '"beta" -> "eta"' in dot
    assert '"eta" -> "y"' in dot
    lines = {line.strip() for line in dot.splitlines()}
    assert any('"y"' in ln and "peripheries=2" in ln for ln in lines)
    assert any('"eta"' in ln and "peripheries=1" in ln for ln in lines)


def test_dot_export_empty_graph():
    dot = gl.build_graph([]).export_dot()
    assert dot.startswith("digraph") and dot.rstrip().endswith("}")


# --- transform_node -------------------------------------------------------------------


def test_transform_node_log_scale():
    tau2 = gl.strong("tau2", 2.0,
                     distribution=gl.DistributionSpec.make("InverseGamma", concentration=2.0, scale=3.0))
    graph = gl.build_graph([tau2])
    base_spec = gl.DistributionSpec.make("InverseGamma", concentration=2.0, scale=3.0)
    new_name = graph.transform_node("tau2", gl.EXP)
    assert new_name == "tau2_transformed"
    node_u = graph.nodes[new_name]
    node_x = graph.nodes["tau2"]
    assert node_u.kind is gl.NodeKind.STRONG and node_u.role is gl.NodeRole.PARAMETER
    assert node_x.kind is gl.NodeKind.WEAK
    u = float(node_u.value)
    assert u == pytest.approx(np.log(2.0))
    expected = base_spec.log_prob(np.exp(u), None) + u
    assert graph.log_prob == pytest.approx(expected, abs=1e-12)
    # moving u moves tau2 through the weak node
    graph.set_value(new_name, 1.0)
    graph.update()
    assert float(graph.nodes["tau2"].value) == pytest.approx(np.e)


def test_transform_keeps_consumers_working():
    tau2 = gl.strong("tau2", 1.0,
                     distribution=gl.DistributionSpec.make("InverseGamma", concentration=0.01, scale=0.01))
    beta = gl.strong("beta", np.zeros(3),
                     distribution=gl.DistributionSpec.make(
                         "MultivariateNormalDegenerate",
                         penalty=np.diff(np.eye(3), n=1, axis=0).T @ np.diff(np.eye(3), n=1, axis=0),
                         tau2="tau2"))
    graph = gl.build_graph([tau2, beta])
    lp_before = graph.log_prob
    graph.transform_node("tau2", gl.EXP)
    # u = log(1) = 0, jacobian term log(1): identical total log-probability
    assert graph.log_prob == pytest.approx(lp_before, abs=1e-12)
    grads = graph.grad_log_prob(["tau2_transformed", "beta"])
    assert np.isfinite(grads["tau2_transformed"]).all()
    # gradient flows through exp into the degenerate prior: compare to FD
    fd = _fd_gradient(graph, ["tau2_transformed"])["tau2_transformed"]
    np.testing.assert_allclose(grads["tau2_transformed"], fd, rtol=1e-6, atol=1e-8)


def test_identity_transform_preserves_log_prob():
    theta = gl.strong("theta", 0.4,
                      distribution=gl.DistributionSpec.make("Normal", loc=0.0, scale=1.0))
    graph = gl.build_graph([theta])
    lp_before = graph.log_prob
    graph.transform_node("theta", gl.IDENTITY)
    assert graph.log_prob == pytest.approx(lp_before, abs=1e-14)
