"""Circuit IR, bipartition, phase polynomials, and serialization."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iqpforge.circuits import (AngleRef, Circuit, CircuitFamily, Gate,
                               NotBipartiteError, OddCycleError, bind,
                               build_family, check_bipartite,
                               circuit_from_json, circuit_to_json,
                               connectivity_graph, default_bipartition,
                               phase_feature_map, random_ensemble_instance)


def test_gate_validation():
    with pytest.raises(ValueError):
        Gate("rz", (0, 1), AngleRef.fixed(1.0))
    with pytest.raises(ValueError):
        Gate("rzz", (2, 2), AngleRef.fixed(1.0))
    with pytest.raises(ValueError):
        Gate("h_layer", (0,), None)
    with pytest.raises(ValueError):
        Gate("cnot", (0, 1), None)


def test_param_indices_must_be_contiguous():
    gates = (Gate("h_layer", (), None),
             Gate("rz", (0,), AngleRef.param(1)),
             Gate("h_layer", (), None))
    with pytest.raises(ValueError):
        Circuit(1, gates)


def test_form_predicates():
    iqp = build_family(CircuitFamily.IQP, 4)
    ext = build_family(CircuitFamily.EXTENDED_IQP, 4)
    assert iqp.is_iqp_form() and not iqp.is_extended_iqp_form()
    assert ext.is_extended_iqp_form() and not ext.is_iqp_form()
    layer1, layer2 = iqp.diagonal_layers()
    assert layer1 and layer2 == []
    layer1, layer2 = ext.diagonal_layers()
    assert layer1 and layer2


def test_family_parameter_counts():
    for n in (2, 4, 6):
        ext = build_family(CircuitFamily.EXTENDED_IQP, n)
        n_a = (n + 1) // 2
        n_b = n - n_a
        assert ext.param_count == 2 * (n + n_a * n_b)
        assert build_family(CircuitFamily.PRODUCT, n).param_count == n
        assert build_family(CircuitFamily.HADAMARD, n).param_count == 0


def test_bipartite_split_of_builtin_families():
    for n in (4, 5, 8):
        ext = build_family(CircuitFamily.EXTENDED_IQP, n)
        part = check_bipartite(connectivity_graph(ext))
        expected_a, expected_b = default_bipartition(n)
        assert sorted(part.A) == list(expected_a)
        assert sorted(part.B) == list(expected_b)


def test_odd_cycle_detection_reports_witness():
    gates = [Gate("h_layer", (), None)]
    for (u, v) in [(0, 1), (1, 2), (2, 0)]:
        gates.append(Gate("rzz", (u, v), AngleRef.fixed(0.3)))
    gates.append(Gate("h_layer", (), None))
    c = Circuit(3, tuple(gates))
    with pytest.raises(OddCycleError) as err:
        check_bipartite(connectivity_graph(c))
    cycle = err.value.cycle
    assert len(cycle) % 2 == 1
    edges = {(min(u, v), max(u, v))
             for u, v in zip(cycle, cycle[1:] + cycle[:1])}
    assert edges <= {(0, 1), (1, 2), (0, 2)}
    assert issubclass(NotBipartiteError, ValueError)


def test_feature_map_angles():
    c = build_family(CircuitFamily.IQP, 3, feature_qubits=3)
    x = 1.25
    bc = bind(c, np.zeros(c.param_count), x)
    feature_angles = [a for g, a in zip(c.gates, bc.angles)
                      if g.angle is not None and g.angle.kind == "feature"]
    assert feature_angles == pytest.approx(
        [2.0 * math.pi * x / 2.0 ** (q + 1) for q in range(3)])


def test_phase_feature_map_values():
    x = 0.75
    assert phase_feature_map(3, x) == pytest.approx(
        [2.0 * math.pi * x / 2.0 ** i for i in (1, 2, 3)])


def test_bind_requires_all_params():
    c = build_family(CircuitFamily.EXTENDED_IQP, 4)
    with pytest.raises(ValueError):
        bind(c, np.zeros(c.param_count - 1))
    with pytest.raises(ValueError):
        bind(build_family(CircuitFamily.IQP, 3, feature_qubits=3),
             np.zeros(9))  # feature circuit without x


def test_random_ensemble_angles_on_pi8_grid():
    inst = random_ensemble_instance(CircuitFamily.EXTENDED_IQP, 6, 42)
    ks = np.array(inst.theta) / (math.pi / 8.0)
    assert np.allclose(ks, np.round(ks))
    assert np.all((np.round(ks) >= 0) & (np.round(ks) <= 7))


def test_random_ensemble_deterministic():
    a = random_ensemble_instance(CircuitFamily.IQP, 5, 7)
    b = random_ensemble_instance(CircuitFamily.IQP, 5, 7)
    assert np.array_equal(a.theta, b.theta)
    with pytest.raises(ValueError):
        random_ensemble_instance(CircuitFamily.PRODUCT, 5, 7)


def test_json_round_trip():
    for family in CircuitFamily.ALL:
        features = 3 if family in (CircuitFamily.IQP,
                                   CircuitFamily.EXTENDED_IQP) else 0
        c = build_family(family, 5, feature_qubits=features)
        c2 = circuit_from_json(circuit_to_json(c))
        assert c2.n == c.n
        assert len(c2.gates) == len(c.gates)
        for g1, g2 in zip(c.gates, c2.gates):
            assert g1.kind == g2.kind and g1.qubits == g2.qubits
            if g1.angle is not None and g1.angle.kind == "fixed":
                assert g2.angle.value == g1.angle.value  # exact via repr


def test_json_rejects_bad_schema():
    c = build_family(CircuitFamily.IQP, 3)
    doc = circuit_to_json(c).replace('"schema_version": 1', '"schema_version": 99')
    with pytest.raises(ValueError):
        circuit_from_json(doc)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
def test_default_bipartition_covers_register(n, seed):
    a, b = default_bipartition(n)
    assert sorted(a + b) == list(range(n))
    assert len(a) == (n + 1) // 2


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2 ** 31 - 1))
def test_ensemble_instances_stay_bipartite(n, seed):
    inst = random_ensemble_instance(CircuitFamily.EXTENDED_IQP, n, seed)
    check_bipartite(connectivity_graph(inst.circuit))
