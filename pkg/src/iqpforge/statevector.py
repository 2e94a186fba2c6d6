"""Dense statevector oracle.

Exact simulation used as ground truth for the Monte-Carlo estimators, as
the small-n sampling backend, and as the parameter-shift gradient
reference. Amplitudes are stored little-endian: basis index x has qubit q
in bit q of x. Bitstring strings are rendered MSB-left ("011" on three
qubits means qubit 0 = 1, qubit 1 = 1, qubit 2 = 0).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .circuits import BoundCircuit, Circuit, bind
from .rng import as_rng

DEFAULT_QUBIT_CAP = 24

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


class CapacityError(RuntimeError):
    """Requested register size exceeds the dense-simulation cap."""


def index_to_bitstring(x: int, n: int) -> str:
    return format(x, f"0{n}b")


def bitstring_to_index(s: str) -> int:
    return int(s, 2)


@dataclass(frozen=True)
class StateVector:
    n: int
    amplitudes: np.ndarray  # complex128, length 2**n

    def check(self, tol: float = 1e-9) -> None:
        norm = float(np.sum(np.abs(self.amplitudes) ** 2))
        if abs(norm - 1.0) > tol:
            raise ValueError(f"state norm {norm} deviates from 1")


@dataclass(frozen=True)
class ProbabilityTable:
    n: int
    probs: np.ndarray  # float64, length 2**n

    def check(self, tol: float = 1e-9) -> None:
        if np.any(self.probs < -tol):
            raise ValueError("negative probability entry")
        total = float(self.probs.sum())
        if abs(total - 1.0) > tol:
            raise ValueError(f"table total {total} deviates from 1")


@dataclass(frozen=True)
class SampleCounts:
    counts: dict[str, int]
    shots: int

    def check(self) -> None:
        if sum(self.counts.values()) != self.shots:
            raise ValueError("counts do not sum to total shots")


def _apply_h(amps: np.ndarray, q: int) -> np.ndarray:
    """Hadamard on qubit q (little-endian axis layout)."""
    n_amp = amps.shape[0]
    view = amps.reshape(n_amp >> (q + 1), 2, 1 << q)
    lo = view[:, 0, :].copy()
    hi = view[:, 1, :]
    view[:, 0, :] = (lo + hi) * _INV_SQRT2
    view[:, 1, :] = (lo - hi) * _INV_SQRT2
    return amps


def _apply_h_layer(amps: np.ndarray, n: int) -> np.ndarray:
    for q in range(n):
        amps = _apply_h(amps, q)
    return amps


def _bit(idx: np.ndarray, q: int) -> np.ndarray:
    return (idx >> q) & 1


def _apply_rz(amps: np.ndarray, q: int, theta: float, idx: np.ndarray) -> np.ndarray:
    # exp(-i t/2) on z=0, exp(+i t/2) on z=1
    z = _bit(idx, q)
    amps *= np.exp(1j * theta * (z - 0.5))
    return amps


def _apply_rzz(amps: np.ndarray, q1: int, q2: int, theta: float,
               idx: np.ndarray) -> np.ndarray:
    # exp(-i t/2 * s), s = +1 when bits agree, -1 otherwise
    s = 1.0 - 2.0 * (_bit(idx, q1) ^ _bit(idx, q2))
    amps *= np.exp(-0.5j * theta * s)
    return amps


def _apply_cphase(amps: np.ndarray, q1: int, q2: int, phase: float,
                  idx: np.ndarray) -> np.ndarray:
    mask = (_bit(idx, q1) & _bit(idx, q2)).astype(bool)
    amps[mask] *= np.exp(1j * phase)
    return amps


def simulate(c: BoundCircuit, cap: int = DEFAULT_QUBIT_CAP) -> StateVector:
    """Run the bound program on |0...0> and return the exact state."""
    n = c.n
    if n > cap:
        raise CapacityError(f"n={n} exceeds dense cap {cap}")
    amps = np.zeros(1 << n, dtype=np.complex128)
    amps[0] = 1.0
    idx = np.arange(1 << n)
    for gate, angle in zip(c.circuit.gates, c.angles):
        if gate.kind == "h_layer":
            amps = _apply_h_layer(amps, n)
        elif gate.kind == "rz":
            amps = _apply_rz(amps, gate.qubits[0], angle, idx)
        else:
            amps = _apply_rzz(amps, gate.qubits[0], gate.qubits[1], angle, idx)
    return StateVector(n, amps)


def probability(s: StateVector, x: int | str) -> float:
    if isinstance(x, str):
        if len(x) != s.n:
            raise ValueError("bitstring length mismatch")
        x = bitstring_to_index(x)
    return float(np.abs(s.amplitudes[x]) ** 2)


def full_distribution(s: StateVector) -> ProbabilityTable:
    return ProbabilityTable(s.n, np.abs(s.amplitudes) ** 2)


def sample(s: StateVector, shots: int,
           rng: np.random.Generator | int | None) -> SampleCounts:
    """Inverse-CDF sampling over the full table; deterministic per seed."""
    return sample_table(full_distribution(s), shots, rng)


def sample_table(table: ProbabilityTable, shots: int,
                 rng: np.random.Generator | int | None) -> SampleCounts:
    """Inverse-CDF sampling from an explicit table; deterministic per seed."""
    if shots < 0:
        raise ValueError("shots must be >= 0")
    r = as_rng(rng)
    cdf = np.cumsum(table.probs)
    cdf[-1] = 1.0
    draws = np.searchsorted(cdf, r.random(shots), side="right")
    values, counts = np.unique(draws, return_counts=True)
    return SampleCounts(
        {index_to_bitstring(int(v), table.n): int(k)
         for v, k in zip(values, counts)},
        shots,
    )


def dqgm_training_probability(c: Circuit, theta: Sequence[float], x: float,
                              cap: int = DEFAULT_QUBIT_CAP) -> float:
    """Probability of the all-zeros outcome of the feature-mapped circuit."""
    state = simulate(bind(c, theta, x), cap=cap)
    return probability(state, 0)


def _inverse_feature_frame(amps: np.ndarray, n: int, idx: np.ndarray) -> np.ndarray:
    """Apply the conjugate transpose of the feature-map frame.

    The frame column for feature value x is the feature-mapped plus state,
    which under the 1-indexed exponent convention and little-endian order
    is a bit-reversed Fourier vector. Its inverse reduces to an ascending
    per-qubit H plus controlled-phase sweep with no extra permutation.
    """
    for q in range(n):
        amps = _apply_h(amps, q)
        for q2 in range(q + 1, n):
            amps = _apply_cphase(amps, q, q2, -math.pi / (1 << (q2 - q)), idx)
    return amps


def dqgm_sampling_distribution(c: Circuit, theta: Sequence[float],
                               cap: int = DEFAULT_QUBIT_CAP) -> ProbabilityTable:
    """Output distribution of the sampling companion circuit.

    Runs the adjoint of the trained block (feature slots excluded) on
    |0...0>, then the inverse feature frame. The result satisfies
    P_sampling(x) = P_train(0...0; x) for every integer x.
    """
    n = c.n
    if n > cap:
        raise CapacityError(f"n={n} exceeds dense cap {cap}")
    if not c.is_extended_iqp_form():
        raise ValueError("sampling duality requires extended-IQP form")
    layer1, layer2 = c.diagonal_layers()
    theta = tuple(float(t) for t in theta)

    amps = np.zeros(1 << n, dtype=np.complex128)
    amps[0] = 1.0
    idx = np.arange(1 << n)
    amps = _apply_h_layer(amps, n)
    # adjoint of the outer diagonal layer (diagonals commute, order free)
    for gi in layer2:
        _apply_bound_diagonal(amps, c, gi, theta, idx, negate=True)
    amps = _apply_h_layer(amps, n)
    # adjoint of the trainable part of the inner layer; feature slots are
    # replaced by the inverse frame below
    for gi in layer1:
        if c.gates[gi].angle.kind == "feature":
            continue
        _apply_bound_diagonal(amps, c, gi, theta, idx, negate=True)
    amps = _inverse_feature_frame(amps, n, idx)
    return full_distribution(StateVector(n, amps))


def _apply_bound_diagonal(amps: np.ndarray, c: Circuit, gate_index: int,
                          theta: tuple[float, ...], idx: np.ndarray,
                          negate: bool = False) -> None:
    g = c.gates[gate_index]
    ref = g.angle
    if ref.kind == "fixed":
        angle = ref.value
    elif ref.kind == "param":
        angle = theta[ref.index]
    else:
        raise ValueError("feature angle cannot be bound without x")
    if negate:
        angle = -angle
    if g.kind == "rz":
        _apply_rz(amps, g.qubits[0], angle, idx)
    else:
        _apply_rzz(amps, g.qubits[0], g.qubits[1], angle, idx)


def expectation_zz(s: StateVector, i: int, j: int) -> float:
    """<Z_i Z_j> = sum_x p(x) (-1)^(x_i + x_j)."""
    if i == j:
        raise ValueError("indices must differ")
    idx = np.arange(1 << s.n)
    sign = 1.0 - 2.0 * (_bit(idx, i) ^ _bit(idx, j))
    return float(np.sum(np.abs(s.amplitudes) ** 2 * sign))


def expectation_gamma(s: StateVector, pairs: str = "unordered") -> float:
    """Sum of <Z_i Z_j> over qubit pairs.

    pairs="unordered" sums i < j once; "ordered" counts both (i, j) and
    (j, i), doubling the unordered value.
    """
    if pairs not in ("unordered", "ordered"):
        raise ValueError("pairs must be 'unordered' or 'ordered'")
    total = sum(expectation_zz(s, i, j)
                for i in range(s.n) for j in range(i + 1, s.n))
    return 2.0 * total if pairs == "ordered" else total


def parameter_shift_grad(c: Circuit, theta: Sequence[float], x: float | None,
                         target: int | str,
                         cap: int = DEFAULT_QUBIT_CAP) -> np.ndarray:
    """Exact gradient of p(target) w.r.t. every trainable angle via
    half-turn shifts: dp/dt_j = (p(t_j + pi/2) - p(t_j - pi/2)) / 2.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.empty(theta.shape[0])
    for j in range(theta.shape[0]):
        shifted = theta.copy()
        shifted[j] += math.pi / 2
        p_plus = probability(simulate(bind(c, shifted, x), cap=cap), target)
        shifted[j] -= math.pi
        p_minus = probability(simulate(bind(c, shifted, x), cap=cap), target)
        grad[j] = 0.5 * (p_plus - p_minus)
    return grad


# ---------------------------------------------------------------------------
# Binary probability-table dump (little-endian float64, preceded by n)


def write_probability_table(path, table: ProbabilityTable) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", table.n))
        fh.write(np.asarray(table.probs, dtype="<f8").tobytes())


def read_probability_table(path) -> ProbabilityTable:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<I", fh.read(4))
        probs = np.frombuffer(fh.read(), dtype="<f8").copy()
    if probs.shape[0] != 1 << n:
        raise ValueError("truncated probability table")
    return ProbabilityTable(n, probs)
