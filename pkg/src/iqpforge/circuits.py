"""Circuit intermediate representation for IQP-family models.

Circuits are ordered gate programs over n qubits built from Hadamard
layers and diagonal Z-basis rotations (Rz, Rzz). Angles are symbolic
until bound: trainable parameters, feature-map slots, or fixed values.

Conventions (pinned, asserted across the test suite):
  * little-endian bit order: qubit 0 is the least significant bit;
  * Rz(t) acts as exp(-i t/2) on |0> and exp(+i t/2) on |1>;
  * Rzz(t) acts as exp(-i t/2 * s), s = product of the Z eigenvalues.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1


class CircuitFamily:
    """Benchmark circuit families."""

    HADAMARD = "hadamard"
    PRODUCT = "product"
    IQP = "iqp"
    IQP_1D_CHAIN = "iqp_1d_chain"
    EXTENDED_IQP = "extended_iqp"

    ALL = (HADAMARD, PRODUCT, IQP, IQP_1D_CHAIN, EXTENDED_IQP)


class OddCycleError(ValueError):
    """Raised when a connectivity graph admits no 2-coloring."""

    def __init__(self, cycle: list[int]):
        self.cycle = cycle
        super().__init__(f"graph contains an odd cycle: {cycle}")


class NotBipartiteError(ValueError):
    pass


@dataclass(frozen=True)
class AngleRef:
    """Symbolic angle slot: fixed radians, trainable index, or feature slot.

    Feature slots carry the 1-indexed exponent i of the phase feature map,
    meaning the bound angle is 2*pi*x / 2**i.
    """

    kind: str
    value: float = 0.0
    index: int = -1

    @staticmethod
    def fixed(value: float) -> "AngleRef":
        return AngleRef("fixed", value=float(value))

    @staticmethod
    def param(index: int) -> "AngleRef":
        if index < 0:
            raise ValueError("param index must be >= 0")
        return AngleRef("param", index=index)

    @staticmethod
    def feature(exponent: int) -> "AngleRef":
        if exponent < 1:
            raise ValueError("feature exponent is 1-indexed")
        return AngleRef("feature", index=exponent)


@dataclass(frozen=True)
class Gate:
    """One program element: an all-qubit H layer or a diagonal rotation."""

    kind: str  # "h_layer" | "rz" | "rzz"
    qubits: tuple[int, ...] = ()
    angle: AngleRef | None = None

    def __post_init__(self):
        if self.kind == "h_layer":
            if self.qubits or self.angle is not None:
                raise ValueError("h_layer takes no qubits or angle")
        elif self.kind == "rz":
            if len(self.qubits) != 1 or self.angle is None:
                raise ValueError("rz takes one qubit and an angle")
        elif self.kind == "rzz":
            if len(self.qubits) != 2 or self.angle is None:
                raise ValueError("rzz takes two qubits and an angle")
            if self.qubits[0] == self.qubits[1]:
                raise ValueError("rzz qubits must be distinct")
        else:
            raise ValueError(f"unknown gate kind {self.kind!r}")


@dataclass(frozen=True)
class Circuit:
    """Immutable gate program. Gates apply first-to-last."""

    n: int
    gates: tuple[Gate, ...]
    family: str | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one qubit")
        for g in self.gates:
            for q in g.qubits:
                if not 0 <= q < self.n:
                    raise ValueError(f"qubit {q} out of range for n={self.n}")
        indices = sorted(g.angle.index for g in self.gates
                         if g.angle is not None and g.angle.kind == "param")
        if indices and indices != list(range(indices[-1] + 1)):
            raise ValueError("param indices must form a contiguous 0-based range")

    @property
    def param_count(self) -> int:
        idx = [g.angle.index for g in self.gates
               if g.angle is not None and g.angle.kind == "param"]
        return max(idx) + 1 if idx else 0

    @property
    def has_features(self) -> bool:
        return any(g.angle is not None and g.angle.kind == "feature"
                   for g in self.gates)

    def h_layer_positions(self) -> list[int]:
        return [i for i, g in enumerate(self.gates) if g.kind == "h_layer"]

    def is_iqp_form(self) -> bool:
        """Two H layers, first and last, only diagonal gates between."""
        pos = self.h_layer_positions()
        return (len(pos) == 2 and pos[0] == 0 and pos[1] == len(self.gates) - 1
                and len(self.gates) >= 2)

    def is_extended_iqp_form(self) -> bool:
        """Three H layers: first, last, one interior; diagonals between."""
        pos = self.h_layer_positions()
        return (len(pos) == 3 and pos[0] == 0 and pos[2] == len(self.gates) - 1
                and 0 < pos[1] < len(self.gates) - 1)

    def diagonal_layers(self) -> list[list[int]]:
        """Indices of the diagonal gates between consecutive H layers."""
        pos = self.h_layer_positions()
        if not (self.is_iqp_form() or self.is_extended_iqp_form()):
            raise ValueError("circuit is not in (extended-)IQP form")
        layers = []
        for lo, hi in zip(pos[:-1], pos[1:]):
            layers.append(list(range(lo + 1, hi)))
        if len(layers) == 1:
            layers.append([])  # plain IQP: empty second diagonal layer
        return layers


@dataclass(frozen=True)
class BoundCircuit:
    """Circuit with every angle resolved to a numeric value in radians.

    `angles[k]` is the bound angle of gate k (None for H layers).
    """

    circuit: Circuit
    angles: tuple[float | None, ...]
    theta: tuple[float, ...] = ()
    x: float | None = None

    @property
    def n(self) -> int:
        return self.circuit.n


@dataclass(frozen=True)
class ConnectivityGraph:
    """Undirected graph of qubits touched by two-qubit rotations."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        for u, v in self.edges:
            if u >= v:
                raise ValueError("edges must be stored as (low, high)")
            if not 0 <= u < self.n or not 0 <= v < self.n:
                raise ValueError("edge endpoint out of range")

    def neighbors(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {q: [] for q in range(self.n)}
        for u, v in sorted(self.edges):
            adj[u].append(v)
            adj[v].append(u)
        return adj


@dataclass(frozen=True)
class Bipartition:
    A: frozenset[int]
    B: frozenset[int]

    def side_of(self, q: int) -> str:
        return "A" if q in self.A else "B"


def connectivity_graph(c: Circuit | BoundCircuit) -> ConnectivityGraph:
    """Edge set: every qubit pair coupled by an Rzz anywhere in the program."""
    circ = c.circuit if isinstance(c, BoundCircuit) else c
    edges = set()
    for g in circ.gates:
        if g.kind == "rzz":
            u, v = sorted(g.qubits)
            edges.add((u, v))
    return ConnectivityGraph(circ.n, frozenset(edges))


def check_bipartite(g: ConnectivityGraph) -> Bipartition:
    """Two-color the graph by BFS from the lowest-index node of each
    component; isolated and first-visited nodes go to side A.

    Raises OddCycleError with a witness cycle if no coloring exists.
    """
    color = [-1] * g.n
    parent = [-1] * g.n
    adj = g.neighbors()
    for start in range(g.n):
        if color[start] != -1:
            continue
        color[start] = 0
        queue = [start]
        while queue:
            u = queue.pop(0)
            for v in adj[u]:
                if color[v] == -1:
                    color[v] = 1 - color[u]
                    parent[v] = u
                    queue.append(v)
                elif color[v] == color[u]:
                    raise OddCycleError(_witness_cycle(u, v, parent))
    A = frozenset(q for q in range(g.n) if color[q] == 0)
    B = frozenset(q for q in range(g.n) if color[q] == 1)
    return Bipartition(A, B)


def _witness_cycle(u: int, v: int, parent: list[int]) -> list[int]:
    """Odd cycle through edge (u, v) given BFS parent pointers."""
    path_u, path_v = [u], [v]
    seen = {u: 0}
    w = u
    while parent[w] != -1:
        w = parent[w]
        path_u.append(w)
        seen[w] = len(path_u) - 1
    w = v
    while w not in seen:
        w = parent[w]
        path_v.append(w)
    # path_u up to the meeting point, then path_v reversed
    cut = seen[path_v[-1]]
    return path_u[:cut + 1] + path_v[-2::-1]


def phase_feature_map(n: int, x: float) -> list[float]:
    """Per-qubit feature angles 2*pi*x / 2**i for i = 1..n."""
    return [2.0 * math.pi * x / 2.0 ** i for i in range(1, n + 1)]


def bind(c: Circuit, theta: Sequence[float], x: float | None = None) -> BoundCircuit:
    """Resolve every symbolic angle to a numeric value."""
    theta = tuple(float(t) for t in theta)
    if len(theta) != c.param_count:
        raise ValueError(f"expected {c.param_count} params, got {len(theta)}")
    if c.has_features and x is None:
        raise ValueError("circuit has feature slots; x is required")
    if not c.has_features and x is not None:
        raise ValueError("circuit has no feature slots; x must be None")
    angles: list[float | None] = []
    for g in c.gates:
        if g.angle is None:
            angles.append(None)
        elif g.angle.kind == "fixed":
            angles.append(g.angle.value)
        elif g.angle.kind == "param":
            angles.append(theta[g.angle.index])
        else:
            angles.append(2.0 * math.pi * x / 2.0 ** g.angle.index)
    return BoundCircuit(c, tuple(angles), theta=theta, x=x)


def default_bipartition(n: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    half = (n + 1) // 2
    return tuple(range(half)), tuple(range(half, n))


def build_family(family: str, n: int, *,
                 bipartition: tuple[Iterable[int], Iterable[int]] | None = None,
                 feature_qubits: int = 0) -> Circuit:
    """Construct one of the five benchmark families with trainable angles.

    feature_qubits > 0 prepends per-qubit feature-map rotations on qubits
    0..feature_qubits-1 ahead of the first diagonal layer (IQP and
    extended-IQP only).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if feature_qubits and family not in (CircuitFamily.IQP, CircuitFamily.EXTENDED_IQP):
        raise ValueError("feature map only supported on IQP/extended-IQP")
    if feature_qubits > n:
        raise ValueError("feature_qubits exceeds n")

    gates: list[Gate] = [Gate("h_layer")]
    counter = 0

    def rz(q: int) -> Gate:
        nonlocal counter
        g = Gate("rz", (q,), AngleRef.param(counter))
        counter += 1
        return g

    def rzz(u: int, v: int) -> Gate:
        nonlocal counter
        g = Gate("rzz", (u, v), AngleRef.param(counter))
        counter += 1
        return g

    def feature_gates() -> list[Gate]:
        return [Gate("rz", (q,), AngleRef.feature(q + 1))
                for q in range(feature_qubits)]

    if family == CircuitFamily.HADAMARD:
        pass
    elif family == CircuitFamily.PRODUCT:
        gates += [rz(q) for q in range(n)]
    elif family == CircuitFamily.IQP:
        gates += feature_gates()
        gates += [rz(q) for q in range(n)]
        gates += [rzz(i, j) for i in range(n) for j in range(i + 1, n)]
        gates.append(Gate("h_layer"))
    elif family == CircuitFamily.IQP_1D_CHAIN:
        gates += [rz(q) for q in range(n)]
        gates += [rzz(i, i + 1) for i in range(n - 1)]
        gates.append(Gate("h_layer"))
    elif family == CircuitFamily.EXTENDED_IQP:
        if n < 2:
            raise ValueError("extended-IQP needs n >= 2")
        if bipartition is None:
            A, B = default_bipartition(n)
        else:
            A, B = tuple(sorted(bipartition[0])), tuple(sorted(bipartition[1]))
            if sorted(A + B) != list(range(n)) or set(A) & set(B):
                raise ValueError("bipartition must partition {0..n-1}")
        for layer in range(2):
            if layer == 0:
                gates += feature_gates()
            gates += [rz(q) for q in range(n)]
            gates += [rzz(a, b) for a in A for b in B]
            gates.append(Gate("h_layer"))
    else:
        raise ValueError(f"unknown family {family!r}")

    return Circuit(n, tuple(gates), family=family)


def random_ensemble_instance(family: str, n: int,
                             rng: np.random.Generator | int | None) -> BoundCircuit:
    """Random benchmark instance: each rotation angle is k*pi/8 with k
    drawn uniformly from {0..7}.
    """
    from .rng import as_rng

    if family not in (CircuitFamily.IQP, CircuitFamily.EXTENDED_IQP):
        raise ValueError("random ensemble defined for IQP/extended-IQP only")
    r = as_rng(rng)
    circuit = build_family(family, n)
    theta = r.integers(0, 8, size=circuit.param_count) * (math.pi / 8.0)
    return bind(circuit, theta)


# ---------------------------------------------------------------------------
# JSON serialization


def _angle_to_json(a: AngleRef | None):
    if a is None:
        return None
    if a.kind == "fixed":
        return {"kind": "fixed", "value": repr(a.value)}
    return {"kind": a.kind, "index": a.index}


def _angle_from_json(obj) -> AngleRef | None:
    if obj is None:
        return None
    kind = obj["kind"]
    if kind == "fixed":
        return AngleRef.fixed(float(obj["value"]))
    if kind == "param":
        return AngleRef.param(int(obj["index"]))
    if kind == "feature":
        return AngleRef.feature(int(obj["index"]))
    raise ValueError(f"unknown angle kind {kind!r}")


def circuit_to_json(c: Circuit) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "n": c.n,
        "family": c.family,
        "params": c.param_count,
        "gates": [
            {"kind": g.kind, "qubits": list(g.qubits),
             "angle": _angle_to_json(g.angle)}
            for g in c.gates
        ],
    }
    return json.dumps(doc, indent=2)


def circuit_from_json(text: str) -> Circuit:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError("unsupported circuit schema version")
    gates = tuple(
        Gate(g["kind"], tuple(g["qubits"]), _angle_from_json(g["angle"]))
        for g in doc["gates"]
    )
    c = Circuit(int(doc["n"]), gates, family=doc.get("family"))
    if c.param_count != int(doc["params"]):
        raise ValueError("param count mismatch in circuit document")
    return c
