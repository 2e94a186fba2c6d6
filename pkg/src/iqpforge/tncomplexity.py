"""Tensor-network contraction-cost analysis.

Builds a tensor network from a circuit (rank-1 state caps, rank-2 H/Rz,
rank-4 Rzz), finds a contraction order with a greedy minimum-resulting-
rank heuristic, and reports the largest intermediate tensor rank as a
time-complexity proxy. Small networks can also be contracted numerically
to validate plans against the dense oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circuits import BoundCircuit, Circuit

_H_MATRIX = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)


@dataclass
class TensorNetwork:
    """Tensors as ordered index-label tuples; every label has dimension 2
    and appears on at most two tensors (open labels appear once)."""

    tensors: dict[int, tuple[str, ...]]
    data: dict[int, np.ndarray] | None = None

    def check(self) -> None:
        seen: dict[str, int] = {}
        for labels in self.tensors.values():
            for lab in labels:
                seen[lab] = seen.get(lab, 0) + 1
        if any(count > 2 for count in seen.values()):
            raise ValueError("index label appears on more than two tensors")

    def open_labels(self) -> set[str]:
        seen: dict[str, int] = {}
        for labels in self.tensors.values():
            for lab in labels:
                seen[lab] = seen.get(lab, 0) + 1
        return {lab for lab, count in seen.items() if count == 1}


@dataclass
class ContractionPlan:
    steps: list[tuple[int, int, int]]  # (id_a, id_b, new_id)
    max_rank: int
    est_log2_cost: int  # peak log2 element count of any single merge


def _rz_tensor(angle: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])


def _rzz_tensor(angle: float) -> np.ndarray:
    t = np.zeros((2, 2, 2, 2), dtype=complex)
    for a in range(2):
        for b in range(2):
            sign = 1.0 if a == b else -1.0
            t[a, b, a, b] = np.exp(-0.5j * angle * sign)
    return t


def circuit_to_network(c: Circuit | BoundCircuit, closed: bool = True) -> TensorNetwork:
    """One tensor per gate application plus |0> caps (and <0| caps when
    closed). Unbound circuits yield structure only (no numeric data)."""
    circuit = c.circuit if isinstance(c, BoundCircuit) else c
    angles = c.angles if isinstance(c, BoundCircuit) else None
    n = circuit.n

    tensors: dict[int, tuple[str, ...]] = {}
    data: dict[int, np.ndarray] = {}
    next_id = 0
    counter = 0
    wire = {}

    def fresh(q: int) -> str:
        nonlocal counter
        counter += 1
        return f"q{q}.{counter}"

    def add(labels: tuple[str, ...], arr: np.ndarray | None) -> None:
        nonlocal next_id
        tensors[next_id] = labels
        if arr is not None:
            data[next_id] = arr
        next_id += 1

    for q in range(n):
        wire[q] = fresh(q)
        add((wire[q],), np.array([1.0, 0.0], dtype=complex))

    for gi, g in enumerate(circuit.gates):
        angle = angles[gi] if angles is not None else None
        if g.kind == "h_layer":
            for q in range(n):
                new = fresh(q)
                add((new, wire[q]), _H_MATRIX.astype(complex))
                wire[q] = new
        elif g.kind == "rz":
            (q,) = g.qubits
            new = fresh(q)
            add((new, wire[q]), _rz_tensor(angle) if angle is not None else None)
            wire[q] = new
        else:
            u, v = g.qubits
            new_u, new_v = fresh(u), fresh(v)
            add((new_u, new_v, wire[u], wire[v]),
                _rzz_tensor(angle) if angle is not None else None)
            wire[u], wire[v] = new_u, new_v

    if closed:
        for q in range(n):
            add((wire[q],), np.array([1.0, 0.0], dtype=complex))

    net = TensorNetwork(tensors, data if angles is not None else None)
    net.check()
    return net


def greedy_plan(net: TensorNetwork) -> ContractionPlan:
    """Repeatedly merge the tensor pair minimizing the resulting rank.

    Ties break on smaller combined input rank, then on the smaller id
    pair, so plans are deterministic. Disconnected remainders are merged
    last in id order (outer products).
    """
    live: dict[int, frozenset[str]] = {
        tid: frozenset(labels) for tid, labels in net.tensors.items()}
    next_id = max(live) + 1 if live else 0
    steps: list[tuple[int, int, int]] = []
    max_rank = max((len(s) for s in live.values()), default=0)
    peak_cost = max_rank

    def label_map():
        owners: dict[str, list[int]] = {}
        for tid, s in live.items():
            for lab in s:
                owners.setdefault(lab, []).append(tid)
        return owners

    while len(live) > 1:
        owners = label_map()
        best = None
        for lab, tids in owners.items():
            if len(tids) != 2:
                continue
            a, b = sorted(tids)
            s_a, s_b = live[a], live[b]
            result = len(s_a ^ s_b)
            key = (result, len(s_a) + len(s_b), a, b)
            if best is None or key < best:
                best = key
        if best is None:
            # no shared labels anywhere: outer-product the two lowest ids
            a, b = sorted(live)[:2]
        else:
            a, b = best[2], best[3]
        s_a, s_b = live[a], live[b]
        merged = s_a ^ s_b
        peak_cost = max(peak_cost, len(s_a | s_b))
        max_rank = max(max_rank, len(merged))
        del live[a], live[b]
        live[next_id] = merged
        steps.append((a, b, next_id))
        next_id += 1

    return ContractionPlan(steps, max_rank, peak_cost)


def contract(net: TensorNetwork, plan: ContractionPlan | None = None,
             rank_cap: int = 26) -> np.ndarray:
    """Numerically execute a plan on a network with data; returns the final
    tensor with its free labels sorted lexicographically."""
    if net.data is None:
        raise ValueError("network carries no numeric data")
    if plan is None:
        plan = greedy_plan(net)
    if plan.max_rank > rank_cap:
        raise ValueError(f"plan max rank {plan.max_rank} exceeds cap {rank_cap}")

    hold: dict[int, tuple[np.ndarray, tuple[str, ...]]] = {
        tid: (net.data[tid], net.tensors[tid]) for tid in net.tensors}
    for a, b, new in plan.steps:
        arr_a, lab_a = hold.pop(a)
        arr_b, lab_b = hold.pop(b)
        out_labels = tuple(sorted(set(lab_a) ^ set(lab_b)))
        # local subscript map per merge (einsum allows at most 52 axes)
        ids: dict[str, int] = {}
        subs = lambda labels: [ids.setdefault(lab, len(ids)) for lab in labels]
        arr = np.einsum(arr_a, subs(lab_a), arr_b, subs(lab_b),
                        subs(out_labels))
        hold[new] = (arr, out_labels)
    (result, _), = hold.values()
    return result


@dataclass
class ComplexityRow:
    family: str
    n: int
    max_rank: int
    est_log2_cost: int


def complexity_sweep(families: Sequence[str], ns: Sequence[int],
                     closed: bool = True) -> list[ComplexityRow]:
    """Plan-search sweep (no numeric contraction): one row per cell."""
    from .circuits import build_family

    rows = []
    for family in families:
        for n in ns:
            try:
                circuit = build_family(family, n)
            except ValueError:
                continue
            plan = greedy_plan(circuit_to_network(circuit, closed=closed))
            rows.append(ComplexityRow(family, n, plan.max_rank,
                                      plan.est_log2_cost))
    return rows
