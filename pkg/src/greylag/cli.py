"""Command-line front end.

Subcommands:

* ``run --config cfg.json --data data.csv --out dir`` builds the model
  described by the config, runs the named sampling scheme, and writes
  per-chain posterior CSVs, a summary table, an error report, the model
  graph in DOT format, and a run manifest with timings.
* ``simulate --config cfg.json --out data.csv`` draws a synthetic
  heteroscedastic dataset from the config's simulation block.
* ``graph --config cfg.json --out model.dot`` writes the model DAG.

Exit codes: 0 success, 2 configuration or data error, 3 fatal sampling
error.  The environment variable ``GREYLAG_THREADS`` caps the number of
chain workers.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import summarize, summary_table
from .dists import EXP
from .engine import EngineBuilder, SamplingResults
from .errors import ConfigError, DataError, GreylagError
from .kernels import GibbsKernel, HMCKernel, IWLSKernel, NUTSKernel, RandomWalkKernel
from .regression import DistRegModel, Predictor, distreg_model, smooth_term, tau2_gibbs_conditional

SCHEMES = ("iwls-gibbs", "nuts-gibbs", "nuts1", "nuts2", "hmc2")

_KERNEL_TYPES = {
    "iwls": IWLSKernel,
    "nuts": NUTSKernel,
    "hmc": HMCKernel,
    "rw": RandomWalkKernel,
}


@dataclass(frozen=True)
class KernelSpec:
    """Structural description of one kernel block of a scheme."""

    kind: str
    positions: tuple[str, ...]
    options: dict


# --- configuration ---------------------------------------------------------


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    return config


def load_table(path) -> dict[str, np.ndarray]:
    """Read a numeric CSV with a header row into named columns."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration as exc:
                raise DataError(f"{path}: empty file") from exc
            rows = list(reader)
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {path}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    columns: dict[str, list[float]] = {name.strip(): [] for name in header}
    names = [name.strip() for name in header]
    for i, row in enumerate(rows):
        if len(row) != len(names):
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(names)}")
        for name, cell in zip(names, row):
            try:
                columns[name].append(float(cell))
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric value {cell!r} in column '{name}'") from exc
    return {name: np.asarray(vals, dtype=np.float64) for name, vals in columns.items()}


def _require(config: dict, key: str, kind=None):
    if key not in config:
        raise ConfigError(f"config is missing '{key}'")
    value = config[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"config entry '{key}' has the wrong type")
    return value


def build_model_from_config(model_cfg: dict, data: dict[str, np.ndarray]) -> DistRegModel:
    response_col = _require(model_cfg, "response", str)
    family = model_cfg.get("family", "Normal")
    predictors_cfg = _require(model_cfg, "predictors", dict)
    if response_col not in data:
        raise DataError(f"response column '{response_col}' not in data")
    y = data[response_col]
    predictors = []
    for name, spec in predictors_cfg.items():
        covariate = _require(spec, "covariate", str)
        if covariate not in data:
            raise DataError(f"covariate column '{covariate}' not in data")
        term = smooth_term(
            data[covariate],
            n_basis=int(spec.get("n_basis", 20)),
            degree=int(spec.get("degree", 3)),
            penalty_order=int(spec.get("penalty_order", 2)),
            a=float(spec.get("a", 0.01)),
            b=float(spec.get("b", 0.01)),
        )
        link = spec.get("link", "Identity")
        predictors.append(
            Predictor(
                name=name,
                terms=[term],
                inverse_link=link,
                intercept=_intercept_init(family, name, y, link),
            )
        )
    return distreg_model(y, family, predictors)


def _intercept_init(family: str, param: str, y: np.ndarray, link: str) -> float:
    """Start the intercept so the linked parameter matches a crude moment."""
    if family == "Normal":
        target = float(np.mean(y)) if param == "loc" else float(np.std(y))
    else:
        target = 0.0
    if link == "Identity":
        return target
    if link == "Exp":
        return float(np.log(max(target, 1e-6)))
    if link == "Logistic":
        t = min(max(target, 1e-6), 1 - 1e-6)
        return float(np.log(t / (1 - t)))
    return 0.0


# --- sampling schemes --------------------------------------------------------


def scheme_blocks(scheme: str, model: DistRegModel, options: dict | None = None) -> list[KernelSpec]:
    """The kernel/block layout of a named scheme.

    Position names refer to the graph *after* any log-transform of the
    smoothing variances (gradient-based schemes sample tau2 on the log
    scale; the Gibbs schemes sample it directly).
    """
    if scheme not in SCHEMES:
        raise ConfigError(
            f"unknown scheme '{scheme}'; valid schemes: {', '.join(SCHEMES)}"
        )
    options = options or {}

    def opts(kind: str) -> dict:
        return dict(options.get(kind, {}))

    specs: list[KernelSpec] = []
    if scheme in ("iwls-gibbs", "nuts-gibbs"):
        coef_kind = "iwls" if scheme == "iwls-gibbs" else "nuts"
        for pred in model.predictors:
            specs.append(KernelSpec(coef_kind, (DistRegModel.intercept_name(pred.name),), opts(coef_kind)))
            for l in range(len(pred.terms)):
                specs.append(
                    KernelSpec(coef_kind, (DistRegModel.coef_name(pred.name, l),), opts(coef_kind))
                )
                specs.append(KernelSpec("gibbs", (DistRegModel.tau2_name(pred.name, l),), {}))
    elif scheme == "nuts1":
        block: list[str] = []
        for pred in model.predictors:
            block.append(DistRegModel.intercept_name(pred.name))
            for l in range(len(pred.terms)):
                block.append(DistRegModel.coef_name(pred.name, l))
                block.append(DistRegModel.tau2_name(pred.name, l) + "_transformed")
        specs.append(KernelSpec("nuts", tuple(block), opts("nuts")))
    else:  # nuts2 / hmc2: one gradient kernel per predictor block
        kind = "nuts" if scheme == "nuts2" else "hmc"
        for pred in model.predictors:
            block = [DistRegModel.intercept_name(pred.name)]
            for l in range(len(pred.terms)):
                block.append(DistRegModel.coef_name(pred.name, l))
                block.append(DistRegModel.tau2_name(pred.name, l) + "_transformed")
            specs.append(KernelSpec(kind, tuple(block), opts(kind)))
    return specs


def scheme_transforms(scheme: str, model: DistRegModel) -> list[str]:
    """Smoothing-variance nodes that the scheme samples on the log scale."""
    if scheme in ("nuts1", "nuts2", "hmc2"):
        return [
            DistRegModel.tau2_name(pred.name, l)
            for pred in model.predictors
            for l in range(len(pred.terms))
        ]
    return []


def _make_kernel(spec: KernelSpec, model: DistRegModel):
    if spec.kind == "gibbs":
        name = spec.positions[0]
        for pred in model.predictors:
            for l in range(len(pred.terms)):
                if DistRegModel.tau2_name(pred.name, l) == name:
                    return GibbsKernel(spec.positions, tau2_gibbs_conditional(model, pred.name, l))
        raise ConfigError(f"no smoothing variance named '{name}' for a Gibbs kernel")
    if spec.kind not in _KERNEL_TYPES:
        raise ConfigError(f"unknown kernel type '{spec.kind}'")
    return _KERNEL_TYPES[spec.kind](spec.positions, **spec.options)


def instantiate_scheme(scheme, model: DistRegModel) -> list:
    """Apply the scheme's transforms to the model graph and build kernels.

    ``scheme`` is a scheme name, ``{"name": ..., "options": {...}}``, or an
    explicit ``{"kernels": [{"kernel": ..., "positions": [...], "options":
    {...}}], "transforms": [...]}`` block.
    """
    if isinstance(scheme, str):
        scheme = {"name": scheme}
    if not isinstance(scheme, dict):
        raise ConfigError("scheme must be a name or an object")
    if "name" in scheme:
        name = scheme["name"]
        specs = scheme_blocks(name, model, scheme.get("options"))
        transforms = scheme_transforms(name, model)
    elif "kernels" in scheme:
        specs = [
            KernelSpec(
                _require(k, "kernel", str),
                tuple(_require(k, "positions", list)),
                dict(k.get("options", {})),
            )
            for k in scheme["kernels"]
        ]
        transforms = list(scheme.get("transforms", []))
    else:
        raise ConfigError("scheme needs a 'name' or a 'kernels' list")
    for node_name in transforms:
        model.graph.transform_node(node_name, EXP)
    return [_make_kernel(spec, model) for spec in specs]


# --- experiment driver --------------------------------------------------------


def run_experiment(
    config: dict, data: dict[str, np.ndarray], workers: int | None = None
) -> tuple[SamplingResults, DistRegModel, float]:
    """Build the model and scheme from a config dict, sample, and return
    (results, model, setup seconds); the heart of the ``run`` subcommand."""
    setup_start = time.perf_counter()
    model = build_model_from_config(_require(config, "model", dict), data)
    kernels = instantiate_scheme(config.get("scheme", "iwls-gibbs"), model)
    builder = EngineBuilder(
        seed=int(config.get("seed", 0)), num_chains=int(config.get("num_chains", 4))
    )
    for kernel in kernels:
        builder.add_kernel(kernel)
    builder.set_model(model.graph)
    builder.set_duration(
        int(config.get("warmup", 1000)),
        int(config.get("posterior", 1000)),
        int(config.get("thinning", 1)),
    )
    builder.set_workers(int(workers if workers is not None else config.get("workers", 1)))
    builder.track("log_prob")
    engine = builder.build()
    setup_seconds = time.perf_counter() - setup_start
    engine.sample_all_epochs()
    return engine.get_results(), model, setup_seconds


# --- output writers -----------------------------------------------------------


def _fmt(value: float) -> str:
    return repr(float(value))


def write_chain_csvs(results: SamplingResults, out_dir: Path) -> list[Path]:
    draws = results.scalar_draws()
    names = list(draws)
    paths = []
    n_chains = results.num_chains
    for c in range(n_chains):
        path = out_dir / f"chain_{c}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            n_iter = draws[names[0]].shape[1]
            for i in range(n_iter):
                writer.writerow([_fmt(draws[name][c, i]) for name in names])
        paths.append(path)
    return paths


def write_summary(rows, report, out_dir: Path) -> None:
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["parameter", "mean", "sd", "q5", "q25", "median", "q75", "q95",
             "ess_bulk", "ess_per_second", "rhat"]
        )
        for r in rows:
            writer.writerow(
                [r.name, _fmt(r.mean), _fmt(r.sd), _fmt(r.q5), _fmt(r.q25), _fmt(r.median),
                 _fmt(r.q75), _fmt(r.q95), _fmt(r.ess_bulk), _fmt(r.ess_per_second), _fmt(r.rhat)]
            )
    with open(out_dir / "errors.txt", "w") as fh:
        fh.write("\n".join(report.lines()) + "\n")


def write_manifest(config: dict, results: SamplingResults, setup_seconds: float,
                   out_dir: Path) -> None:
    manifest = {
        "seed": results.seed,
        "num_chains": results.num_chains,
        "scheme": config.get("scheme", "iwls-gibbs"),
        "warmup": int(config.get("warmup", 1000)),
        "posterior": int(config.get("posterior", 1000)),
        "parameters": len(results.scalar_draws()),
        "error_count": len(results.error_log),
        "timings": {
            "setup_seconds": setup_seconds,
            "warmup_seconds": sum(
                v for k, v in results.timings.items() if k not in ("posterior", "total")
            ),
            "posterior_seconds": results.timings.get("posterior", 0.0),
            "total_seconds": results.timings.get("total", 0.0) + setup_seconds,
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- subcommands ----------------------------------------------------------------


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.chains is not None:
        config["num_chains"] = args.chains
    if args.seed is not None:
        config["seed"] = args.seed
    if args.scheme is not None:
        config["scheme"] = args.scheme
    data_path = args.data or config.get("data")
    if data_path is None:
        raise ConfigError("no data file: pass --data or set 'data' in the config")
    data = load_table(data_path)
    out_dir = Path(args.out or config.get("output", "greylag-out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    results, model, setup_seconds = run_experiment(config, data)

    rows, report = summarize(results)
    write_chain_csvs(results, out_dir)
    write_summary(rows, report, out_dir)
    with open(out_dir / "model.dot", "w") as fh:
        fh.write(model.graph.export_dot())
    write_manifest(config, results, setup_seconds, out_dir)
    table = summary_table(rows)
    with open(out_dir / "summary.txt", "w") as fh:
        fh.write(table + "\n\n" + "\n".join(report.lines()) + "\n")
    print(table)
    print()
    for line in report.lines():
        print(line)
    print(f"\noutputs written to {out_dir}")
    return 0


_EXPR_NAMES = {
    "np": np, "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "log": np.log, "sqrt": np.sqrt, "tanh": np.tanh, "abs": np.abs, "pi": np.pi,
}


def eval_curve(expr: str, x: np.ndarray) -> np.ndarray:
    """Evaluate a numpy expression in ``x`` (e.g. ``"sin(3*x) / (x + 1)"``)."""
    try:
        value = eval(expr, {"__builtins__": {}}, {**_EXPR_NAMES, "x": x})  # noqa: S307
    except Exception as exc:  # noqa: BLE001
        raise ConfigError(f"cannot evaluate expression {expr!r}: {exc}") from exc
    return np.broadcast_to(np.asarray(value, dtype=np.float64), x.shape).copy()


def simulate_data(sim_cfg: dict) -> dict[str, np.ndarray]:
    """Heteroscedastic Gaussian draws y ~ N(mean(x), exp(log_sd(x))^2) on an
    equidistant covariate grid."""
    n = int(_require(sim_cfg, "n"))
    if n < 1:
        raise ConfigError("simulation needs n >= 1")
    seed = int(sim_cfg.get("seed", 0))
    lo = float(sim_cfg.get("x_min", 0.0))
    hi = float(sim_cfg.get("x_max", 1.0))
    if not hi > lo:
        raise ConfigError("simulation needs x_max > x_min")
    x = np.linspace(lo, hi, n)
    mean = eval_curve(_require(sim_cfg, "mean", str), x)
    log_sd = eval_curve(_require(sim_cfg, "log_sd", str), x)
    rng = np.random.Generator(np.random.Philox(key=seed))
    y = mean + np.exp(log_sd) * rng.standard_normal(n)
    return {"x": x, "y": y}


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    sim_cfg = config.get("simulation")
    if sim_cfg is None:
        raise ConfigError("config has no 'simulation' block")
    data = simulate_data(sim_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        for xi, yi in zip(data["x"], data["y"]):
            writer.writerow([_fmt(xi), _fmt(yi)])
    print(f"wrote {len(data['x'])} rows to {out}")
    return 0


def cmd_graph(args) -> int:
    config = load_config(args.config)
    data_path = args.data or config.get("data")
    if data_path is None:
        raise ConfigError("no data file: pass --data or set 'data' in the config")
    data = load_table(data_path)
    model = build_model_from_config(_require(config, "model", dict), data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write(model.graph.export_dot())
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="greylag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a sampling scheme on a dataset")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--data")
    p_run.add_argument("--out")
    p_run.add_argument("--chains", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--scheme", choices=SCHEMES)
    p_run.set_defaults(fn=cmd_run)

    p_sim = sub.add_parser("simulate", help="write a synthetic dataset")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(fn=cmd_simulate)

    p_graph = sub.add_parser("graph", help="export the model DAG as DOT")
    p_graph.add_argument("--config", required=True)
    p_graph.add_argument("--data")
    p_graph.add_argument("--out", required=True)
    p_graph.set_defaults(fn=cmd_graph)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GreylagError as exc:
        print(f"sampling error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
