"""Chain diagnostics: bulk effective sample size, split R-hat, summaries.

Both diagnostics work on rank-normalized split chains: each chain is
halved, the pooled draws are converted to normal quantiles through their
average ranks, and the between/within variance decomposition is applied
to the result.  Autocorrelation sums for the ESS are truncated by
Geyer's initial monotone positive sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import DiagnosticError


def _validate(chains: np.ndarray) -> np.ndarray:
    chains = np.atleast_2d(np.asarray(chains, dtype=np.float64))
    if chains.ndim != 2:
        raise DiagnosticError("chains must be a [n_chains, n_iterations] array")
    if not np.all(np.isfinite(chains)):
        raise DiagnosticError("chains contain non-finite values")
    if chains.shape[1] < 8:
        raise DiagnosticError("need at least 8 iterations per chain")
    if np.allclose(chains, chains.flat[0]):
        raise DiagnosticError("chains are constant")
    return chains


def _split_chains(chains: np.ndarray) -> np.ndarray:
    half = chains.shape[1] // 2
    return np.vstack([chains[:, :half], chains[:, -half:]])


def _rank_normalize(chains: np.ndarray) -> np.ndarray:
    ranks = rankdata(chains, method="average").reshape(chains.shape)
    size = chains.size
    return ndtri((ranks - 3.0 / 8.0) / (size + 1.0 / 4.0))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased (1/n) autocovariance of one chain via FFT."""
    n = x.size
    centered = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    freq = np.fft.rfft(centered, nfft)
    acov = np.fft.irfft(freq * np.conjugate(freq), nfft)[:n].real
    return acov / n


def _ess_from_normalized(z: np.ndarray) -> float:
    m, n = z.shape
    acov = np.stack([_autocovariance(z[i]) for i in range(m)])
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = float(np.mean(chain_var))
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += float(np.var(z.mean(axis=1), ddof=1))

    rho = 1.0 - (mean_var - np.mean(acov, axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer pairs: initial positive, then monotone decreasing
    max_pairs = (n - 2) // 2
    pair_sums = []
    for k in range(max_pairs + 1):
        p = rho[2 * k] + rho[2 * k + 1]
        if p <= 0:
            break
        pair_sums.append(p)
    for k in range(1, len(pair_sums)):
        pair_sums[k] = min(pair_sums[k], pair_sums[k - 1])
    tau = -1.0 + 2.0 * float(np.sum(pair_sums)) if pair_sums else 1.0
    tau = max(tau, 1.0 / np.log10(m * n + 10.0))
    ess = m * n / tau
    return float(min(ess, m * n * np.log10(m * n)))


def ess_bulk(chains: np.ndarray) -> float:
    """Bulk effective sample size of rank-normalized split chains."""
    chains = _validate(chains)
    z = _rank_normalize(_split_chains(chains))
    return _ess_from_normalized(z)


def split_rhat(chains: np.ndarray) -> float:
    """Rank-normalized split R-hat: sqrt((W(n-1)/n + B/n) / W)."""
    chains = _validate(chains)
    z = _rank_normalize(_split_chains(chains))
    m, n = z.shape
    within = float(np.mean(np.var(z, axis=1, ddof=1)))
    var_plus = within * (n - 1.0) / n
    if m > 1:
        var_plus += float(np.var(z.mean(axis=1), ddof=1))
    return float(np.sqrt(var_plus / within))


@dataclass
class SummaryRow:
    name: str
    mean: float
    sd: float
    q5: float
    q25: float
    median: float
    q75: float
    q95: float
    ess_bulk: float
    ess_per_second: float
    rhat: float


@dataclass
class ErrorReport:
    """Engine error log aggregated by error code and kernel."""

    counts: dict[tuple[int, str], int]
    total_transitions: int

    def lines(self) -> list[str]:
        from .kernels.base import ERROR_MESSAGES

        if not self.counts:
            return ["no kernel errors"]
        out = []
        for (code, kernel), n in sorted(self.counts.items()):
            msg = ERROR_MESSAGES.get(code, "user-defined error")
            out.append(f"error {code} ({msg}) in {kernel}: {n} transitions")
        return out


def summarize(results, posterior_wall_time: float | None = None) -> tuple[list[SummaryRow], ErrorReport]:
    """One row per scalar parameter plus an aggregated error report.

    ``results`` is a :class:`~greylag.engine.SamplingResults`; ESS per
    second uses the posterior wall time (taken from the engine timings
    when not given explicitly).
    """
    if posterior_wall_time is None:
        posterior_wall_time = results.timings.get("posterior", float("nan"))
    rows = []
    for name, draws in results.scalar_draws().items():
        flat = draws.ravel()
        try:
            ess = ess_bulk(draws)
            rhat = split_rhat(draws)
        except DiagnosticError:
            ess, rhat = float("nan"), float("nan")
        q5, q25, q50, q75, q95 = np.quantile(flat, [0.05, 0.25, 0.50, 0.75, 0.95])
        rows.append(
            SummaryRow(
                name=name,
                mean=float(np.mean(flat)),
                sd=float(np.std(flat, ddof=1)),
                q5=float(q5),
                q25=float(q25),
                median=float(q50),
                q75=float(q75),
                q95=float(q95),
                ess_bulk=ess,
                ess_per_second=ess / posterior_wall_time if posterior_wall_time else float("nan"),
                rhat=rhat,
            )
        )
    counts: dict[tuple[int, str], int] = {}
    for entry in results.error_log:
        key = (entry.code, entry.kernel)
        counts[key] = counts.get(key, 0) + 1
    n_transitions = sum(
        arr["error_code"].size for arr in results.transition_infos.values()
    )
    return rows, ErrorReport(counts=counts, total_transitions=n_transitions)


def summary_table(rows: list[SummaryRow]) -> str:
    """Plain-text table of the summary rows."""
    header = (
        f"{'parameter':<28} {'mean':>10} {'sd':>10} {'5%':>10} {'25%':>10} "
        f"{'median':>10} {'75%':>10} {'95%':>10} {'ess_bulk':>10} {'ess/s':>10} {'rhat':>8}"
    )
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.name:<28} {r.mean:>10.4f} {r.sd:>10.4f} {r.q5:>10.4f} {r.q25:>10.4f} "
            f"{r.median:>10.4f} {r.q75:>10.4f} {r.q95:>10.4f} {r.ess_bulk:>10.1f} "
            f"{r.ess_per_second:>10.1f} {r.rhat:>8.4f}"
        )
    return "\n".join(lines)
