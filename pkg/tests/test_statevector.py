"""Dense oracle: exact small-case values, identities, sampling, and IO."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iqpforge.circuits import (AngleRef, Circuit, CircuitFamily, Gate, bind,
                               build_family, random_ensemble_instance)
from iqpforge.statevector import (CapacityError, ProbabilityTable,
                                  bitstring_to_index,
                                  dqgm_sampling_distribution,
                                  dqgm_training_probability, expectation_gamma,
                                  expectation_zz, full_distribution,
                                  index_to_bitstring, parameter_shift_grad,
                                  probability, read_probability_table, sample,
                                  sample_table, simulate,
                                  write_probability_table)


def _bound(gates, n, theta=(), x=None):
    return bind(Circuit(n, tuple(gates)), theta, x)


def test_single_hadamard_layer():
    state = simulate(_bound([Gate("h_layer", (), None)], 2))
    assert np.allclose(state.amplitudes, 0.5)


def test_rz_phase_convention():
    # H then Rz(t): amplitudes (e^{-it/2}, e^{+it/2}) / sqrt(2)
    t = 0.7
    state = simulate(_bound([Gate("h_layer", (), None),
                             Gate("rz", (0,), AngleRef.fixed(t))], 1))
    expected = np.array([np.exp(-0.5j * t), np.exp(0.5j * t)]) / math.sqrt(2)
    assert np.allclose(state.amplitudes, expected)


def test_rzz_phase_convention():
    t = 1.1
    state = simulate(_bound([Gate("h_layer", (), None),
                             Gate("rzz", (0, 1), AngleRef.fixed(t))], 2))
    # s = +1 on 00 and 11, -1 on 01 and 10 (little-endian irrelevant here)
    signs = np.array([1.0, -1.0, -1.0, 1.0])
    expected = 0.5 * np.exp(-0.5j * t * signs)
    assert np.allclose(state.amplitudes, expected)


def test_little_endian_bit_order():
    # Rz(pi) on qubit 0 after H: sign flip between even/odd indices
    state = simulate(_bound([Gate("h_layer", (), None),
                             Gate("rz", (0,), AngleRef.fixed(math.pi))], 2))
    probs = full_distribution(state).probs
    assert np.allclose(probs, 0.25)
    rel = state.amplitudes / state.amplitudes[0]
    assert rel[1] == pytest.approx(-1.0)  # index 1 flips qubit 0
    assert rel[2] == pytest.approx(1.0)


def test_three_layer_zero_probability_closed_form_n1():
    # p(0) = (1 + sin t1 sin t2) / 2 for H Rz(t1) H Rz(t2) H
    for t1, t2 in [(0.3, 1.2), (math.pi / 2, math.pi / 2), (0.0, 2.0)]:
        gates = [Gate("h_layer", (), None),
                 Gate("rz", (0,), AngleRef.fixed(t1)),
                 Gate("h_layer", (), None),
                 Gate("rz", (0,), AngleRef.fixed(t2)),
                 Gate("h_layer", (), None)]
        p = probability(simulate(_bound(gates, 1)), 0)
        assert p == pytest.approx(0.5 * (1 + math.sin(t1) * math.sin(t2)))


def test_probability_accepts_bitstrings():
    state = simulate(bind(build_family(CircuitFamily.IQP, 3),
                          np.array([0.4, 0.9, -0.3, 0.1, 0.8, 0.2])))
    for x in range(8):
        assert probability(state, index_to_bitstring(x, 3)) == pytest.approx(
            probability(state, x))
    with pytest.raises(ValueError):
        probability(state, "01")


def test_capacity_cap():
    c = build_family(CircuitFamily.HADAMARD, 8)
    with pytest.raises(CapacityError):
        simulate(bind(c, []), cap=6)


def test_sampling_matches_table():
    inst = random_ensemble_instance(CircuitFamily.IQP, 6, 11)
    state = simulate(inst)
    table = full_distribution(state)
    counts = sample(state, 200_000, 5)
    assert counts.shots == 200_000
    emp = np.zeros(64)
    for bits, k in counts.counts.items():
        emp[bitstring_to_index(bits)] = k / counts.shots
    assert 0.5 * np.abs(emp - table.probs).sum() < 0.01


def test_sample_determinism_and_validation():
    state = simulate(random_ensemble_instance(CircuitFamily.IQP, 4, 3))
    assert sample(state, 1000, 9).counts == sample(state, 1000, 9).counts
    assert sample(state, 0, 1).counts == {}
    with pytest.raises(ValueError):
        sample(state, -1, 1)


def test_expectation_zz_against_direct_sum():
    inst = random_ensemble_instance(CircuitFamily.EXTENDED_IQP, 5, 21)
    state = simulate(inst)
    probs = full_distribution(state).probs
    x = np.arange(32)
    for (i, j) in [(0, 1), (1, 4), (2, 3)]:
        signs = (1 - 2 * ((x >> i) & 1)) * (1 - 2 * ((x >> j) & 1))
        assert expectation_zz(state, i, j) == pytest.approx(
            float(np.sum(probs * signs)))
    with pytest.raises(ValueError):
        expectation_zz(state, 2, 2)


def test_expectation_gamma_conventions():
    inst = random_ensemble_instance(CircuitFamily.EXTENDED_IQP, 4, 8)
    state = simulate(inst)
    unordered = sum(expectation_zz(state, i, j)
                    for i in range(4) for j in range(i + 1, 4))
    assert expectation_gamma(state, "unordered") == pytest.approx(unordered)
    assert expectation_gamma(state, "ordered") == pytest.approx(2 * unordered)


def test_parameter_shift_matches_finite_difference():
    c = build_family(CircuitFamily.EXTENDED_IQP, 4)
    rng = np.random.default_rng(2)
    theta = rng.uniform(-2, 2, c.param_count)
    grad = parameter_shift_grad(c, theta, None, 0)
    h = 1e-6
    for j in range(0, c.param_count, 5):
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        fd = (probability(simulate(bind(c, up)), 0)
              - probability(simulate(bind(c, dn)), 0)) / (2 * h)
        assert grad[j] == pytest.approx(fd, abs=1e-7)


def test_dqgm_duality_exact():
    n = 5
    c = build_family(CircuitFamily.EXTENDED_IQP, n, feature_qubits=n)
    rng = np.random.default_rng(4)
    for _ in range(3):
        theta = rng.uniform(-2, 2, c.param_count)
        table = dqgm_sampling_distribution(c, theta)
        assert table.probs.sum() == pytest.approx(1.0)
        for x in range(1 << n):
            assert abs(table.probs[x]
                       - dqgm_training_probability(c, theta, x)) < 1e-12


def test_probability_table_io_round_trip(tmp_path):
    table = full_distribution(simulate(
        random_ensemble_instance(CircuitFamily.IQP, 5, 13)))
    path = tmp_path / "table.bin"
    write_probability_table(path, table)
    back = read_probability_table(path)
    assert back.n == 5
    assert np.array_equal(back.probs, table.probs)


def test_sample_table_equivalent_to_sample():
    state = simulate(random_ensemble_instance(CircuitFamily.IQP, 4, 6))
    assert (sample(state, 500, 3).counts
            == sample_table(full_distribution(state), 500, 3).counts)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.data())
def test_bitstring_round_trip(n, data):
    x = data.draw(st.integers(0, (1 << n) - 1))
    s = index_to_bitstring(x, n)
    assert len(s) == n
    assert bitstring_to_index(s) == x


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
def test_simulated_states_are_normalized(n, seed):
    inst = random_ensemble_instance(CircuitFamily.EXTENDED_IQP, n, seed)
    state = simulate(inst)
    assert np.sum(np.abs(state.amplitudes) ** 2) == pytest.approx(1.0)
