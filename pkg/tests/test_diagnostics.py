"""Hardness indicators against synthetic spectra with known statistics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iqpforge.diagnostics import (DEFAULT_EPS_GRID, EULER_GAMMA,
                                  anti_concentration_fraction, ensemble_study,
                                  porter_thomas_probs, porter_thomas_tv,
                                  run_trial, t_sparse_curve, xeb_delta_h)
from iqpforge.statevector import ProbabilityTable


def _uniform_table(n):
    return ProbabilityTable(n, np.full(1 << n, 1.0 / (1 << n)))


def test_anti_concentration_uniform_and_point_mass():
    assert anti_concentration_fraction(_uniform_table(6)) == 1.0
    p = np.zeros(64)
    p[3] = 1.0
    assert anti_concentration_fraction(ProbabilityTable(6, p)) == 1.0 / 64
    assert anti_concentration_fraction(_uniform_table(6), alpha=1.1) == 0.0
    with pytest.raises(ValueError):
        anti_concentration_fraction(_uniform_table(4), alpha=0.0)


def test_anti_concentration_porter_thomas_near_inverse_e():
    # an exponential spectrum exceeds its mean with probability 1/e
    table = porter_thomas_probs(14, 5)
    frac = anti_concentration_fraction(table)
    assert abs(frac - 1.0 / math.e) < 0.01


def test_porter_thomas_tv_small_on_matching_spectrum():
    table = porter_thomas_probs(14, 7)
    assert porter_thomas_tv(table) < 0.03
    # a uniform spectrum piles every outcome into one quantile bin
    assert porter_thomas_tv(_uniform_table(10)) == pytest.approx(1.0 - 1.0 / 50)
    with pytest.raises(ValueError):
        porter_thomas_tv(_uniform_table(4), bins=1)


def test_xeb_delta_h_uniform_gives_euler_gamma():
    n = 8
    samples = np.arange(1 << n)
    value, stderr = xeb_delta_h(samples, np.full(1 << n, 1.0 / (1 << n)), n)
    assert value == pytest.approx(EULER_GAMMA)
    assert stderr == 0.0
    with pytest.raises(ValueError):
        xeb_delta_h([], np.full(4, 0.25), 2)
    with pytest.raises(ValueError):
        xeb_delta_h([0], np.zeros(4), 2)


def test_xeb_delta_h_ideal_porter_thomas_sampler_near_one():
    table = porter_thomas_probs(12, 3, renormalize=True)
    rng = np.random.default_rng(9)
    cdf = np.cumsum(table.probs)
    samples = np.searchsorted(cdf, rng.random(40_000), side="right")
    value, stderr = xeb_delta_h(samples, table.probs, 12)
    assert abs(value - 1.0) < 5 * stderr + 0.02
    # callable and table forms agree
    v2, _ = xeb_delta_h(samples[:100], lambda s: float(table.probs[s]), 12)
    ref, _ = xeb_delta_h(samples[:100], table.probs, 12)
    assert v2 == pytest.approx(ref)


def test_t_sparse_uniform_spectrum():
    # keeping the top t of N equal entries leaves tail mass 1 - t/N, so
    # f = 1 - t/N = 1 - (1 - eps rounded up to the grid)
    curve = t_sparse_curve(_uniform_table(4), eps_values=(0.5, 0.25))
    assert curve[0] == (2.0, pytest.approx(0.5))
    assert curve[1] == (4.0, pytest.approx(0.25))
    with pytest.raises(ValueError):
        t_sparse_curve(_uniform_table(4), eps_values=(0.0,))


def test_t_sparse_point_mass_spectrum():
    p = np.zeros(16)
    p[5] = 1.0
    curve = t_sparse_curve(ProbabilityTable(4, p), eps_values=(0.1, 0.01))
    # one entry always suffices
    assert all(f == pytest.approx(1.0 - 1.0 / 16) for _, f in curve)


def test_t_sparse_monotone_default_grid():
    table = porter_thomas_probs(10, 11, renormalize=True)
    curve = t_sparse_curve(table)
    # the grid runs from small eps to large, so fewer entries are kept and
    # f = 1 - t/N grows along the curve
    fs = [f for _, f in curve]
    assert all(a <= b + 1e-12 for a, b in zip(fs, fs[1:]))
    assert len(curve) == len(DEFAULT_EPS_GRID)


def test_run_trial_deterministic_and_consistent():
    a = run_trial("iqp", 8, seed=4, trial=2)
    b = run_trial("iqp", 8, seed=4, trial=2)
    assert a == b
    c = run_trial("iqp", 8, seed=4, trial=3)
    assert a.anti_concentration != c.anti_concentration
    assert a.xeb_shots == 2000
    assert a.log_inv_sum == pytest.approx(
        (8 * math.log(2.0) + EULER_GAMMA - a.delta_h) * 2000)


def test_ensemble_study_aggregates_and_ignores_workers():
    one = ensemble_study("extended_iqp", [8], trials=4, seed=6, xeb_shots=200)
    two = ensemble_study("extended_iqp", [8], trials=4, seed=6, xeb_shots=200,
                         workers=2)
    assert one == two
    entry = one.entries[0]
    trials = [run_trial("extended_iqp", 8, 6, t, xeb_shots=200)
              for t in range(4)]
    assert entry.anti_concentration_mean == pytest.approx(
        np.mean([t.anti_concentration for t in trials]))
    assert entry.tv_mean == pytest.approx(np.mean([t.tv for t in trials]))
    pooled = sum(t.log_inv_sum for t in trials) / 800
    assert entry.delta_h == pytest.approx(
        8 * math.log(2.0) + EULER_GAMMA - pooled)
    with pytest.raises(ValueError):
        ensemble_study("iqp", [4], trials=1, seed=0)


def test_ensemble_anti_concentration_matches_porter_thomas_value():
    report = ensemble_study("iqp", [10], trials=20, seed=1, xeb_shots=100)
    assert abs(report.entries[0].anti_concentration_mean - 1.0 / math.e) < 0.05


def test_porter_thomas_tv_shrinks_with_register_width():
    # the spectrum of a random instance approaches Porter-Thomas as n grows
    tvs = []
    for n in (8, 12):
        r = ensemble_study("extended_iqp", [n], trials=5, seed=3,
                           xeb_shots=100)
        tvs.append(r.entries[0].tv_mean)
    assert tvs[1] < tvs[0]


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 10), st.integers(0, 2 ** 31 - 1))
def test_anti_concentration_fraction_bounds(n, seed):
    table = porter_thomas_probs(n, seed, renormalize=True)
    frac = anti_concentration_fraction(table)
    assert 0.0 <= frac <= 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 10), st.integers(0, 2 ** 31 - 1))
def test_tv_bounds(n, seed):
    table = porter_thomas_probs(n, seed, renormalize=True)
    assert 0.0 <= porter_thomas_tv(table) <= 1.0
