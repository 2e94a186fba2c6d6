"""Sampling-hardness indicators for random circuit ensembles.

Anti-concentration fraction, total-variation distance of the output
probability spectrum to the Porter-Thomas density, cross-entropy
difference from samples, and t-sparseness curves, plus an ensemble driver
that aggregates all of them over random instances.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circuits import random_ensemble_instance
from .rng import as_rng, derive_rng
from .statevector import ProbabilityTable, full_distribution, simulate

EULER_GAMMA = 0.5772156649015329
DEFAULT_TV_BINS = 50
DEFAULT_EPS_GRID = tuple(np.logspace(math.log10(1e-2), math.log10(0.7), 12))


def anti_concentration_fraction(probs: ProbabilityTable, alpha: float = 1.0) -> float:
    """Fraction of outcomes with probability at least alpha / 2^n."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n_states = probs.probs.size
    return float(np.mean(probs.probs >= alpha / n_states))


def porter_thomas_tv(probs: ProbabilityTable, bins: int = DEFAULT_TV_BINS) -> float:
    """Total-variation distance between the circuit's probability spectrum
    and the Porter-Thomas density, over equally weighted quantile bins.

    Bin edges are p_i = -ln(1 - i/m)/N so each bin holds Porter-Thomas
    mass 1/m; the statistic is half the L1 gap of the empirical bin
    occupancies to uniform.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    n_states = probs.probs.size
    i = np.arange(1, bins)
    edges = -np.log(1.0 - i / bins) / n_states
    occupancy = np.bincount(np.searchsorted(edges, probs.probs, side="right"),
                            minlength=bins) / n_states
    return float(0.5 * np.sum(np.abs(occupancy - 1.0 / bins)))


def xeb_delta_h(samples: Sequence[int] | np.ndarray,
                prob_fn: Callable[[int], float] | np.ndarray,
                n: int) -> tuple[float, float]:
    """Cross-entropy difference from samples.

    DeltaH = log N + gamma - mean log(1/p(x_j)). Uniform p gives exactly
    gamma; the ideal sampler of a Porter-Thomas table gives 1. The second
    return value is the empirical standard error of the mean of log(1/p).
    """
    samples = np.asarray(samples, dtype=np.int64)
    if samples.size == 0:
        raise ValueError("no samples")
    if callable(prob_fn):
        p = np.array([prob_fn(int(s)) for s in samples], dtype=float)
    else:
        p = np.asarray(prob_fn, dtype=float)[samples]
    if np.any(p <= 0):
        raise ValueError("zero-probability sample under prob_fn")
    log_inv = -np.log(p)
    value = n * math.log(2.0) + EULER_GAMMA - float(log_inv.mean())
    stderr = float(log_inv.std() / math.sqrt(samples.size))
    return value, stderr


def t_sparse_curve(probs: ProbabilityTable,
                   eps_values: Sequence[float] = DEFAULT_EPS_GRID):
    """Pairs (1/eps, f) with f = 1 - t/N, t the minimal number of largest
    probabilities whose dropped tail mass is at most eps."""
    p = np.sort(probs.probs)[::-1]
    n_states = p.size
    # dropped[t] = tail mass left out when keeping the top t entries
    dropped = np.append(p[::-1].cumsum()[::-1], 0.0)
    out = []
    for eps in eps_values:
        if not 0 < eps < 1:
            raise ValueError("eps must lie in (0,1)")
        t = int(np.searchsorted(-dropped, -eps, side="left"))
        t = min(t, n_states)
        out.append((1.0 / eps, 1.0 - t / n_states))
    return out


def porter_thomas_probs(n: int, rng, renormalize: bool = False) -> ProbabilityTable:
    """Synthetic spectrum with i.i.d. exponential entries of mean 1/2^n.

    Without renormalization the table is only approximately normalized;
    self-tests that need exact Porter-Thomas marginals should skip it.
    """
    r = as_rng(rng)
    p = r.exponential(scale=1.0 / (1 << n), size=1 << n)
    if renormalize:
        p = p / p.sum()
    return ProbabilityTable(n, p)


@dataclass
class TrialDiagnostics:
    """Every scalar diagnostic of one random instance, plus the raw
    log-probability sums needed to pool Delta-H across trials."""

    family: str
    n: int
    trial: int
    anti_concentration: float
    tv: float
    delta_h: float
    delta_h_stderr: float
    tsparse_curve: list[tuple[float, float]]
    log_inv_sum: float
    log_inv_sq_sum: float
    xeb_shots: int


def run_trial(family: str, n: int, seed: int, trial: int, alpha: float = 1.0,
              bins: int = DEFAULT_TV_BINS,
              eps_values: Sequence[float] = DEFAULT_EPS_GRID,
              xeb_shots: int = 2000) -> TrialDiagnostics:
    """All diagnostics of the `trial`-th random instance of the ensemble.

    Deterministic in (seed, family, n, trial); the sampling stream for the
    cross-entropy estimate is derived separately from the instance stream.
    """
    rng = derive_rng(seed, "diagnostics", family, n, trial)
    inst = random_ensemble_instance(family, n, rng)
    table = full_distribution(simulate(inst))
    sample_rng = derive_rng(seed, "diagnostics", "xeb", family, n, trial)
    cdf = np.cumsum(table.probs)
    cdf[-1] = 1.0
    samples = np.searchsorted(cdf, sample_rng.random(xeb_shots), side="right")
    log_inv = -np.log(table.probs[samples])
    mean_log = float(log_inv.mean())
    var_log = max(float(np.mean(log_inv ** 2)) - mean_log ** 2, 0.0)
    return TrialDiagnostics(
        family=family, n=n, trial=trial,
        anti_concentration=anti_concentration_fraction(table, alpha),
        tv=porter_thomas_tv(table, bins),
        delta_h=n * math.log(2.0) + EULER_GAMMA - mean_log,
        delta_h_stderr=math.sqrt(var_log / xeb_shots),
        tsparse_curve=t_sparse_curve(table, eps_values),
        log_inv_sum=float(log_inv.sum()),
        log_inv_sq_sum=float(np.sum(log_inv ** 2)),
        xeb_shots=xeb_shots,
    )


@dataclass
class DiagnosticsEntry:
    family: str
    n: int
    trials: int
    anti_concentration_mean: float
    anti_concentration_std: float
    tv_mean: float
    tv_std: float
    delta_h: float
    delta_h_stderr: float
    tsparse_curve: list[tuple[float, float]]


@dataclass
class DiagnosticsReport:
    family: str
    trials: int
    entries: list[DiagnosticsEntry] = field(default_factory=list)


def _trial_stats(args):
    return run_trial(*args)


def ensemble_study(family: str, ns: Sequence[int], trials: int, seed: int,
                   alpha: float = 1.0, bins: int = DEFAULT_TV_BINS,
                   eps_values: Sequence[float] = DEFAULT_EPS_GRID,
                   xeb_shots: int = 2000, workers: int = 1) -> DiagnosticsReport:
    """Aggregate every diagnostic over `trials` random instances per n.

    Results are deterministic in `seed` and independent of `workers`
    (each trial owns a derived stream).
    """
    if trials < 2:
        raise ValueError("need at least 2 trials")
    report = DiagnosticsReport(family=family, trials=trials)
    for n in ns:
        jobs = [(family, n, seed, t, alpha, bins, tuple(eps_values), xeb_shots)
                for t in range(trials)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_trial_stats, jobs))
        else:
            results = [_trial_stats(j) for j in jobs]
        fracs = np.array([r.anti_concentration for r in results])
        tvs = np.array([r.tv for r in results])
        log_sum = sum(r.log_inv_sum for r in results)
        log_sq = sum(r.log_inv_sq_sum for r in results)
        m_tot = sum(r.xeb_shots for r in results)
        mean_log = log_sum / m_tot
        var_log = max(log_sq / m_tot - mean_log ** 2, 0.0)
        report.entries.append(DiagnosticsEntry(
            family=family, n=n, trials=trials,
            anti_concentration_mean=float(fracs.mean()),
            anti_concentration_std=float(fracs.std()),
            tv_mean=float(tvs.mean()),
            tv_std=float(tvs.std()),
            delta_h=n * math.log(2.0) + EULER_GAMMA - mean_log,
            delta_h_stderr=math.sqrt(var_log / m_tot),
            tsparse_curve=results[0].tsparse_curve,
        ))
    return report
