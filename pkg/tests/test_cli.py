import json
from pathlib import Path

import numpy as np
import pytest

from greylag import cli
from greylag.errors import ConfigError, DataError
from greylag.graph import NodeKind
from greylag.regression import DistRegModel, Predictor, distreg_model, smooth_term


def small_config(**overrides):
    config = {
        "seed": 11,
        "num_chains": 2,
        "warmup": 40,
        "posterior": 30,
        "model": {
            "response": "y",
            "family": "Normal",
            "predictors": {
                "loc": {"covariate": "x", "n_basis": 6, "degree": 3, "link": "Identity"},
                "scale": {"covariate": "x", "n_basis": 6, "degree": 3, "link": "Exp"},
            },
        },
        "scheme": "nuts-gibbs",
        "simulation": {
            "n": 50, "seed": 3, "x_min": 0.0, "x_max": 1.0,
            "mean": "sin(2*pi*x)", "log_sd": "-2 + x",
        },
    }
    config.update(overrides)
    return config


@pytest.fixture()
def workdir(tmp_path):
    config = small_config()
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    data_path = tmp_path / "data.csv"
    assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(data_path)]) == 0
    return tmp_path, cfg_path, data_path


# --- simulate -------------------------------------------------------------------


def test_simulate_row_count_and_determinism(workdir):
    tmp, cfg, data = workdir
    assert len(data.read_text().splitlines()) == 51  # header + n rows
    second = tmp / "data2.csv"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(second)]) == 0
    assert data.read_bytes() == second.read_bytes()


def test_simulate_matches_model_structure(workdir):
    _, _, data = workdir
    table = cli.load_table(data)
    assert set(table) == {"x", "y"}
    assert table["x"].shape == (50,)
    # heteroscedastic: spread grows with x under log_sd = -2 + x
    lo = table["y"][table["x"] < 0.5]
    hi = table["y"][table["x"] >= 0.5]
    assert np.std(np.diff(hi)) > np.std(np.diff(lo))


def test_simulate_rejects_bad_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(small_config(simulation={"n": 0, "mean": "x", "log_sd": "x"})))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d.csv")]) == 2


def test_simulate_requires_block(tmp_path):
    config = small_config()
    del config["simulation"]
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(config))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d.csv")]) == 2


# --- run -------------------------------------------------------------------------


def test_run_writes_all_outputs(workdir):
    tmp, cfg, data = workdir
    out = tmp / "out"
    code = cli.main(["run", "--config", str(cfg), "--data", str(data), "--out", str(out)])
    assert code == 0
    for name in ("chain_0.csv", "chain_1.csv", "summary.csv", "summary.txt",
                 "errors.txt", "model.dot", "manifest.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 11
    assert manifest["parameters"] == 2 * 5 + 2 + 2
    assert manifest["timings"]["posterior_seconds"] > 0
    header = (out / "chain_0.csv").read_text().splitlines()[0]
    assert "loc_p0_beta" in header and "scale_np0_tau2" in header
    n_rows = len((out / "chain_0.csv").read_text().splitlines()) - 1
    assert n_rows == 30


def test_run_byte_identical_reruns(workdir):
    tmp, cfg, data = workdir
    out1, out2 = tmp / "o1", tmp / "o2"
    assert cli.main(["run", "--config", str(cfg), "--data", str(data), "--out", str(out1)]) == 0
    assert cli.main(["run", "--config", str(cfg), "--data", str(data), "--out", str(out2)]) == 0
    for c in ("chain_0.csv", "chain_1.csv"):
        assert (out1 / c).read_bytes() == (out2 / c).read_bytes()


def test_run_unknown_scheme_lists_valid_ones(workdir, capsys):
    tmp, cfg, data = workdir
    config = small_config(scheme="warp-drive")
    bad = tmp / "bad.json"
    bad.write_text(json.dumps(config))
    code = cli.main(["run", "--config", str(bad), "--data", str(data), "--out", str(tmp / "o")])
    assert code == 2
    err = capsys.readouterr().err
    for name in cli.SCHEMES:
        assert name in err


def test_run_missing_column_is_data_error(workdir):
    tmp, cfg, data = workdir
    config = small_config()
    config["model"]["response"] = "nope"
    bad = tmp / "bad.json"
    bad.write_text(json.dumps(config))
    assert cli.main(["run", "--config", str(bad), "--data", str(data), "--out", str(tmp / "o")]) == 2


def test_run_missing_config_file(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_graph_subcommand(workdir):
    tmp, cfg, data = workdir
    out = tmp / "model.dot"
    assert cli.main(["graph", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    dot = out.read_text()
    assert dot.startswith("digraph")
    assert '"loc_np0_beta"' in dot and '"response"' in dot


def test_load_table_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,y\n1,notanumber\n")
    with pytest.raises(DataError):
        cli.load_table(p)
    p2 = tmp_path / "ragged.csv"
    p2.write_text("x,y\n1\n")
    with pytest.raises(DataError):
        cli.load_table(p2)


# --- scheme structure (Table-1 fidelity) ----------------------------------------------


def two_predictor_model(n=40, n_basis=6):
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(0, 1, n))
    y = rng.standard_normal(n)
    return distreg_model(
        y, "Normal",
        [Predictor("loc", [smooth_term(x, n_basis=n_basis)], "Identity"),
         Predictor("scale", [smooth_term(x, n_basis=n_basis)], "Exp")],
    )


def blocks(scheme):
    model = two_predictor_model()
    return [(s.kind, s.positions) for s in cli.scheme_blocks(scheme, model)]


def test_iwls_gibbs_block_matrix():
    assert blocks("iwls-gibbs") == [
        ("iwls", ("loc_p0_beta",)),
        ("iwls", ("loc_np0_beta",)),
        ("gibbs", ("loc_np0_tau2",)),
        ("iwls", ("scale_p0_beta",)),
        ("iwls", ("scale_np0_beta",)),
        ("gibbs", ("scale_np0_tau2",)),
    ]


def test_nuts_gibbs_block_matrix():
    assert blocks("nuts-gibbs") == [
        ("nuts", ("loc_p0_beta",)),
        ("nuts", ("loc_np0_beta",)),
        ("gibbs", ("loc_np0_tau2",)),
        ("nuts", ("scale_p0_beta",)),
        ("nuts", ("scale_np0_beta",)),
        ("gibbs", ("scale_np0_tau2",)),
    ]


def test_nuts1_single_block_with_transformed_variances():
    assert blocks("nuts1") == [
        ("nuts", ("loc_p0_beta", "loc_np0_beta", "loc_np0_tau2_transformed",
                  "scale_p0_beta", "scale_np0_beta", "scale_np0_tau2_transformed")),
    ]


def test_nuts2_and_hmc2_two_blocks():
    expected = [
        ("loc_p0_beta", "loc_np0_beta", "loc_np0_tau2_transformed"),
        ("scale_p0_beta", "scale_np0_beta", "scale_np0_tau2_transformed"),
    ]
    assert [p for _, p in blocks("nuts2")] == expected
    assert [k for k, _ in blocks("nuts2")] == ["nuts", "nuts"]
    assert [p for _, p in blocks("hmc2")] == expected
    assert [k for k, _ in blocks("hmc2")] == ["hmc", "hmc"]


def test_transforms_applied_exactly_for_gradient_schemes():
    for scheme in ("nuts1", "nuts2", "hmc2"):
        model = two_predictor_model()
        cli.instantiate_scheme(scheme, model)
        for param in ("loc", "scale"):
            assert model.graph.nodes[f"{param}_np0_tau2"].kind is NodeKind.WEAK
            assert f"{param}_np0_tau2_transformed" in model.graph.nodes
    for scheme in ("iwls-gibbs", "nuts-gibbs"):
        model = two_predictor_model()
        cli.instantiate_scheme(scheme, model)
        for param in ("loc", "scale"):
            assert model.graph.nodes[f"{param}_np0_tau2"].kind is NodeKind.STRONG
            assert f"{param}_np0_tau2_transformed" not in model.graph.nodes


def test_hmc_kernels_use_table_defaults():
    model = two_predictor_model()
    kernels = cli.instantiate_scheme("hmc2", model)
    assert all(k.num_integration_steps == 64 for k in kernels)
    model = two_predictor_model()
    kernels = cli.instantiate_scheme("nuts1", model)
    assert kernels[0].max_tree_depth == 10


def test_explicit_kernel_list_scheme():
    model = two_predictor_model()
    scheme = {
        "kernels": [
            {"kernel": "rw", "positions": ["loc_p0_beta", "scale_p0_beta"],
             "options": {"initial_step_size": 0.5}},
            {"kernel": "nuts", "positions": ["loc_np0_beta", "scale_np0_beta",
                                             "loc_np0_tau2_transformed",
                                             "scale_np0_tau2_transformed"]},
        ],
        "transforms": ["loc_np0_tau2", "scale_np0_tau2"],
    }
    kernels = cli.instantiate_scheme(scheme, model)
    assert len(kernels) == 2
    assert kernels[0].initial_step_size == 0.5
    assert model.graph.nodes["loc_np0_tau2"].kind is NodeKind.WEAK


def test_scheme_option_overrides():
    model = two_predictor_model()
    kernels = cli.instantiate_scheme({"name": "nuts2", "options": {"nuts": {"max_tree_depth": 6}}},
                                     model)
    assert all(k.max_tree_depth == 6 for k in kernels)


def test_eval_curve_rejects_bad_expressions():
    with pytest.raises(ConfigError):
        cli.eval_curve("__import__('os')", np.zeros(3))
    with pytest.raises(ConfigError):
        cli.eval_curve("unknown_name(x)", np.zeros(3))
