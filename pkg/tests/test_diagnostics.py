import numpy as np
import pytest

from greylag.diagnostics import ErrorReport, ess_bulk, split_rhat, summarize, summary_table
from greylag.errors import DiagnosticError


def ar1(rho, n, chains, seed=0):
    rng = np.random.default_rng(seed)
    innov_sd = np.sqrt(1 - rho**2)
    x = np.empty((chains, n))
    for c in range(chains):
        x[c, 0] = rng.standard_normal()
        for t in range(1, n):
            x[c, t] = rho * x[c, t - 1] + innov_sd * rng.standard_normal()
    return x


# --- ESS --------------------------------------------------------------------


def test_ess_iid_chains_near_nominal():
    rng = np.random.default_rng(1)
    draws = rng.standard_normal((4, 1000))
    ess = ess_bulk(draws)
    assert 3200 <= ess <= 4800


def test_ess_ar1_matches_analytic_rate():
    rho = 0.9
    # analytic ESS fraction of an AR(1): (1 - rho) / (1 + rho)
    expected = (1 - rho) / (1 + rho)
    draws = ar1(rho, 10_000, 4, seed=2)
    ess = ess_bulk(draws)
    assert ess / draws.size == pytest.approx(expected, rel=0.30)


def test_ess_constant_chain_raises():
    with pytest.raises(DiagnosticError):
        ess_bulk(np.ones((2, 100)))


def test_ess_too_short_raises():
    with pytest.raises(DiagnosticError):
        ess_bulk(np.random.default_rng(0).standard_normal((2, 5)))


def test_ess_nan_raises():
    draws = np.random.default_rng(0).standard_normal((2, 100))
    draws[0, 3] = np.nan
    with pytest.raises(DiagnosticError):
        ess_bulk(draws)


def test_ess_invariant_under_monotone_transforms():
    draws = ar1(0.5, 2000, 4, seed=3)
    base = ess_bulk(draws)
    assert ess_bulk(np.exp(draws)) == pytest.approx(base, rel=1e-10)
    assert ess_bulk(3.0 * draws - 7.0) == pytest.approx(base, rel=1e-10)


def test_ess_capped_and_finite():
    rng = np.random.default_rng(4)
    # antithetic pattern that can push the naive estimator above n_total
    x = rng.standard_normal((2, 500))
    x[:, 1::2] = -x[:, ::2]
    ess = ess_bulk(x)
    assert np.isfinite(ess)
    assert ess <= x.size * np.log10(x.size)


# --- R-hat -------------------------------------------------------------------


def test_rhat_identical_distribution_near_one():
    rng = np.random.default_rng(5)
    draws = rng.standard_normal((4, 2000))
    assert split_rhat(draws) == pytest.approx(1.0, abs=0.01)


def test_rhat_disjoint_chains_large():
    # rank normalization bounds the two-chain fully-separated case near 1.83
    # (raw-scale R-hat would be ~5.9); with four disjoint chains it exceeds 2
    rng = np.random.default_rng(6)
    two = np.vstack([rng.standard_normal((1, 1000)), rng.standard_normal((1, 1000)) + 10.0])
    assert split_rhat(two) > 1.7
    four = np.vstack([rng.standard_normal((1, 1000)) + 10.0 * i for i in range(4)])
    assert split_rhat(four) > 2.0


def test_rhat_detects_within_chain_trend():
    # a strong trend inside a single chain splits into two shifted halves
    drift = np.linspace(0, 10, 1000)[None, :] + np.random.default_rng(7).standard_normal((1, 1000))
    assert split_rhat(drift) > 1.5


def test_rhat_invariant_under_common_affine_map():
    draws = ar1(0.3, 1000, 4, seed=8)
    assert split_rhat(2.5 * draws + 1.0) == pytest.approx(split_rhat(draws), rel=1e-10)


# --- summaries ------------------------------------------------------------------


class _FakeResults:
    """Duck-typed stand-in for SamplingResults."""

    def __init__(self, draws, errors=(), infos=None):
        self._draws = draws
        self.error_log = list(errors)
        self.transition_infos = infos or {}
        self.timings = {"posterior": 2.0}

    def scalar_draws(self):
        return self._draws


def test_summarize_rows_and_quantiles():
    rng = np.random.default_rng(9)
    draws = {f"p{i}": rng.standard_normal((4, 500)) for i in range(22)}
    rows, report = summarize(_FakeResults(draws))
    assert len(rows) == 22
    row = rows[0]
    flat = draws["p0"].ravel()
    assert row.median == pytest.approx(np.quantile(flat, 0.5))
    assert row.q5 == pytest.approx(np.quantile(flat, 0.05))
    assert row.ess_per_second == pytest.approx(row.ess_bulk / 2.0)
    assert report.counts == {}
    assert report.lines() == ["no kernel errors"]
    table = summary_table(rows)
    assert "p0" in table and "rhat" in table


def test_summarize_aggregates_errors():
    from greylag.engine import ErrorLogEntry

    rng = np.random.default_rng(10)
    draws = {"p": rng.standard_normal((2, 100))}
    errors = [ErrorLogEntry(2, "NUTSKernel_00", 0, 3, 7),
              ErrorLogEntry(2, "NUTSKernel_00", 1, 3, 9),
              ErrorLogEntry(1, "IWLSKernel_01", 0, 2, 4)]
    _, report = summarize(_FakeResults(draws, errors=errors))
    assert report.counts[(2, "NUTSKernel_00")] == 2
    assert report.counts[(1, "IWLSKernel_01")] == 1
    assert any("divergent" in line for line in report.lines())
