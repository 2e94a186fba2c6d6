"""Cross-module oracle verification suites.

Each check pits an estimator or identity against the dense statevector
oracle and reports a pass/fail with its margin. Three sizes trade speed
for coverage: quick (n <= 8), standard (n <= 12), extended (n <= 16).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, asdict

import numpy as np

from .circuits import bind, build_family, random_ensemble_instance
from .forrelation import (ForrelationEngine, alpha_amplitude, beta_amplitude,
                          estimate_p_bitstring, estimate_p_zero,
                          estimate_zz_expectation)
from .rng import derive_rng
from .statevector import (dqgm_sampling_distribution,
                          dqgm_training_probability, expectation_zz,
                          full_distribution, parameter_shift_grad,
                          probability, simulate)
from .tncomplexity import circuit_to_network, contract, greedy_plan

LEVELS = {
    "quick": {"n": 8, "m": 100_000, "trials": 4},
    "standard": {"n": 12, "m": 400_000, "trials": 8},
    "extended": {"n": 16, "m": 1_000_000, "trials": 8},
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float  # how far inside (positive) or outside (negative) tolerance
    detail: str

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.margin = float(self.margin)


def _random_instance(n: int, seed: int, family: str = "extended_iqp"):
    return random_ensemble_instance(family, n, derive_rng(seed, "verify", family, n))


def check_amplitude_exactness(n: int, seed: int) -> CheckResult:
    """alpha/beta closed forms vs dense amplitudes of the half-circuits."""
    inst = _random_instance(n, seed)
    eng = ForrelationEngine(inst.circuit, inst.theta)
    # dense |alpha>: run H, layer 1, then H on A only
    from .statevector import _apply_h, _apply_h_layer, _apply_rz, _apply_rzz
    layer1, layer2 = inst.circuit.diagonal_layers()
    idx = np.arange(1 << n)

    def half_state(layer, negate, h_side):
        amps = np.zeros(1 << n, dtype=complex)
        amps[0] = 1.0
        amps = _apply_h_layer(amps, n)
        for gi in layer:
            g = inst.circuit.gates[gi]
            a = -inst.angles[gi] if negate else inst.angles[gi]
            if g.kind == "rz":
                _apply_rz(amps, g.qubits[0], a, idx)
            else:
                _apply_rzz(amps, g.qubits[0], g.qubits[1], a, idx)
        for q in h_side:
            amps = _apply_h(amps, q)
        return amps

    alpha_dense = half_state(layer1, False, eng.a_idx)
    beta_dense = half_state(layer2, True, eng.b_idx)
    worst = 0.0
    rng = derive_rng(seed, "verify", "amp-points")
    for x in rng.integers(0, 1 << n, size=64):
        y = [(int(x) >> q) & 1 for q in range(n)]
        worst = max(worst,
                    abs(alpha_amplitude(eng.alpha, y) - alpha_dense[x]),
                    abs(beta_amplitude(eng.beta, y) - np.conj(beta_dense[x])))
    tol = 1e-10
    return CheckResult("amplitude_exactness", worst < tol, tol - worst,
                       f"n={n} max amplitude gap {worst:.2e}")


def check_sampler(n: int, seed: int, m: int = 200_000) -> CheckResult:
    """Chi-square goodness of fit of the ancestral sampler against P(y)."""
    inst = _random_instance(n, seed)
    eng = ForrelationEngine(inst.circuit, inst.theta)
    ys = eng.sample_p(m, derive_rng(seed, "verify", "sampler"))
    codes = ys @ (1 << np.arange(n, dtype=np.int64))
    counts = np.bincount(codes, minlength=1 << n)
    # exact P(y) from the alpha amplitudes
    bits = ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(float)
    p = np.array([abs(alpha_amplitude(eng.alpha, bits[k])) ** 2
                  for k in range(1 << n)])
    mask = p * m >= 5.0
    other = 1.0 - p[mask].sum()
    expected = np.append(p[mask] * m, max(other, 1e-12) * m)
    observed = np.append(counts[mask], m - counts[mask].sum())
    chi2 = float(np.sum((observed - expected) ** 2 / np.maximum(expected, 1e-9)))
    dof = max(int(mask.sum()) - 1, 1)
    # normal tail bound for the chi-square statistic
    zscore = (chi2 - dof) / math.sqrt(2.0 * dof)
    passed = zscore < 4.0
    return CheckResult("sampler_chi_square", passed, 4.0 - zscore,
                       f"n={n} chi2={chi2:.1f} dof={dof}")


def check_p_zero(n: int, seed: int, m: int) -> CheckResult:
    inst = _random_instance(n, seed)
    exact = probability(simulate(inst), 0)
    res = estimate_p_zero(inst.circuit, inst.theta, None, m,
                          derive_rng(seed, "verify", "p0"))
    err = abs(res.mean - exact)
    tol = max(5.0 * res.stderr, 5e-3)
    return CheckResult("p_zero_vs_oracle", err < tol, tol - err,
                       f"n={n} err={err:.2e} stderr={res.stderr:.2e}")


def check_gradients(n: int, seed: int, m: int) -> CheckResult:
    inst = _random_instance(min(n, 8), seed)
    ref = parameter_shift_grad(inst.circuit, inst.theta, None, 0)
    eng = ForrelationEngine(inst.circuit, inst.theta)
    _, dp, dp_se = eng.grad_p(m, derive_rng(seed, "verify", "grad"))
    z = np.abs(dp - ref) / np.maximum(dp_se, 1e-12)
    worst = float(z.max())
    return CheckResult("gradient_vs_parameter_shift", worst < 5.0, 5.0 - worst,
                       f"n={min(n, 8)} worst z-score {worst:.2f}")


def check_duality(n: int, seed: int) -> CheckResult:
    n = min(n, 8)
    c = build_family("extended_iqp", n, feature_qubits=n)
    rng = derive_rng(seed, "verify", "duality")
    worst = 0.0
    for _ in range(5):
        theta = rng.uniform(-2.0, 2.0, c.param_count)
        table = dqgm_sampling_distribution(c, theta)
        for x in range(1 << n):
            worst = max(worst, abs(table.probs[x]
                                   - dqgm_training_probability(c, theta, x)))
    tol = 1e-9
    return CheckResult("dqgm_duality", worst < tol, tol - worst,
                       f"n={n} max gap {worst:.2e}")


def check_z_absorption(n: int, seed: int, m: int) -> CheckResult:
    inst = _random_instance(n, seed)
    st = simulate(inst)
    rng_out = derive_rng(seed, "verify", "absorb-out")
    x_out = int(rng_out.integers(0, 1 << n))
    res = estimate_p_bitstring(inst.circuit, inst.theta, x_out, m,
                               derive_rng(seed, "verify", "absorb"))
    err = abs(res.mean - probability(st, x_out))
    tol = max(5.0 * res.stderr, 5e-3)
    zero_a = estimate_p_bitstring(inst.circuit, inst.theta, 0, 1000, 123)
    zero_b = estimate_p_zero(inst.circuit, inst.theta, None, 1000, 123)
    identical = zero_a.mean == zero_b.mean and zero_a.stderr == zero_b.stderr
    passed = err < tol and identical
    return CheckResult("z_absorption", passed, tol - err,
                       f"n={n} err={err:.2e} zero-string bitwise match: {identical}")


def check_zz(seed: int, m: int) -> CheckResult:
    inst = _random_instance(6, seed)
    st = simulate(inst)
    exact = expectation_zz(st, 1, 4)
    res = estimate_zz_expectation(inst.circuit, inst.theta, 1, 4, m,
                                  derive_rng(seed, "verify", "zz"))
    err = abs(res.mean - exact)
    tol = 5e-2
    return CheckResult("zz_expectation", err < tol, tol - err,
                       f"n=6 err={err:.2e} stderr={res.stderr:.2e}")


def check_contraction(seed: int) -> CheckResult:
    inst = _random_instance(6, seed)
    net = circuit_to_network(inst, closed=True)
    val = complex(contract(net, greedy_plan(net)))
    amp = simulate(inst).amplitudes[0]
    err = abs(val - amp)
    tol = 1e-9
    return CheckResult("tn_contraction", err < tol, tol - err,
                       f"n=6 scalar gap {err:.2e}")


def check_determinism(seed: int) -> CheckResult:
    inst = _random_instance(6, seed)
    a = estimate_p_zero(inst.circuit, inst.theta, None, 20_000, 999)
    b = estimate_p_zero(inst.circuit, inst.theta, None, 20_000, 999)
    same = a.mean == b.mean and a.stderr == b.stderr
    return CheckResult("seed_determinism", same, 0.0 if same else -1.0,
                       "byte-identical repeated estimates" if same
                       else "results differ under identical seed")


def run_suite(level: str = "quick", seed: int = 2024) -> dict:
    if level not in LEVELS:
        raise ValueError(f"level must be one of {sorted(LEVELS)}")
    params = LEVELS[level]
    n, m = params["n"], params["m"]
    t0 = time.time()
    checks = [
        check_amplitude_exactness(n, seed),
        check_sampler(min(n, 10), seed),
        check_p_zero(n, seed, m),
        check_gradients(n, seed, m),
        check_duality(n, seed),
        check_z_absorption(n, seed, m),
        check_zz(seed, m),
        check_contraction(seed),
        check_determinism(seed),
    ]
    return {
        "level": level,
        "seed": seed,
        "elapsed_s": time.time() - t0,
        "passed": all(c.passed for c in checks),
        "checks": [asdict(c) for c in checks],
    }
