"""Monte-Carlo estimation of extended-IQP output amplitudes and gradients.

The three-layer circuit H U2 H U1 H applied to |0...0> has zero-string
amplitude Phi = <0|H U2 H U1 H|0> (the forrelation of the two diagonal
layers). When the Rzz connectivity graph is bipartite over (A, B), the
latent states

    |alpha> = (H_A (x) I_B) U1 H |0>        (A-side Hadamarded)
    |beta>  = (H_B (x) I_A) U2^dag H |0>    (B-side Hadamarded)

have closed-form per-qubit factorized amplitudes, Phi = <beta|alpha> =
sum_y P(y) R(y) with P(y) = |<y|alpha>|^2 and R(y) = <beta|y>/<alpha|y>,
and P(y) admits exact ancestral sampling: the B-register marginal is
uniform and each A bit is an independent Bernoulli given y_B. A single
sample set drives the estimate of Phi, of |Phi|^2, and of the full
analytic gradient (no re-sampling per parameter).

Everything here costs O(n) arithmetic per sample, independent of 2^n.
"""

from __future__ import annotations

import math
import typing
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .circuits import (BoundCircuit, Circuit, Gate, NotBipartiteError,
                       OddCycleError, check_bipartite, connectivity_graph)
from .rng import as_rng

_SQRT2 = math.sqrt(2.0)
CHUNK_SAMPLES = 1 << 16
LOG_FORM_THRESHOLD = 40
_FACTOR_FLOOR = 1e-140
_DEGENERATE_TOL = 1e-12


class DegenerateSampleError(RuntimeError):
    """A sampled y has vanishing proposal probability (indicates a bug)."""


class _RatioParts(typing.NamedTuple):
    ratio: np.ndarray
    sigma_a: np.ndarray
    e_phi: np.ndarray
    f_alpha: np.ndarray
    sigma_b: np.ndarray
    e_psi: np.ndarray
    f_beta: np.ndarray
    c_beta: np.ndarray
    inv_den: np.ndarray


def m_for_precision(eps: float) -> int:
    """Default sample count for additive precision eps at 2-sigma coverage."""
    if not 0 < eps < 1:
        raise ValueError("eps must be in (0,1)")
    return int(math.ceil(4.0 / eps ** 2))


# ---------------------------------------------------------------------------
# Phase polynomials


@dataclass(frozen=True)
class PhasePolynomial:
    """Action of a diagonal Rz/Rzz layer: exp(i f(z)) on basis state |z>,
    f(z) = const + sum_i linear[i] z_i + sum_{i<j} quad[i,j] z_i z_j.

    `quad` is stored as a full symmetric matrix with zero diagonal;
    entry [i, j] is the single coefficient of the z_i z_j monomial.
    """

    n: int
    const: float
    linear: np.ndarray  # (n,)
    quad: np.ndarray    # (n, n) symmetric, zero diagonal

    def evaluate(self, z: int | np.ndarray) -> float | np.ndarray:
        """f(z) for an integer basis index or an (..., n) bit array."""
        if isinstance(z, (int, np.integer)):
            bits = np.array([(int(z) >> q) & 1 for q in range(self.n)], dtype=float)
        else:
            bits = np.asarray(z, dtype=float)
        lin = bits @ self.linear
        quad = 0.5 * np.einsum("...i,ij,...j->...", bits, self.quad, bits)
        return self.const + lin + quad

    def negated(self) -> "PhasePolynomial":
        return PhasePolynomial(self.n, -self.const, -self.linear, -self.quad)

    def with_z_absorbed(self, mask_bits: np.ndarray) -> "PhasePolynomial":
        """Absorb a Z gate on every qubit where mask_bits is 1 by adding pi
        to the matching linear coefficient (H X = Z H identity).
        """
        return PhasePolynomial(self.n, self.const,
                               self.linear + math.pi * np.asarray(mask_bits, float),
                               self.quad)


def phase_polynomial(diagonal: Iterable[tuple[str, tuple[int, ...], float]],
                     n: int) -> PhasePolynomial:
    """Fold a sequence of bound ("rz"|"rzz", qubits, angle) gates into a
    phase polynomial under the pinned rotation conventions.
    """
    const = 0.0
    linear = np.zeros(n)
    quad = np.zeros((n, n))
    for kind, qubits, angle in diagonal:
        if kind == "rz":
            (q,) = qubits
            const += -angle / 2.0
            linear[q] += angle
        elif kind == "rzz":
            u, v = qubits
            const += -angle / 2.0
            linear[u] += angle
            linear[v] += angle
            quad[u, v] += -2.0 * angle
            quad[v, u] += -2.0 * angle
        else:
            raise ValueError(f"non-diagonal gate {kind!r}")
    return PhasePolynomial(n, const, linear, quad)


def bound_diagonal_layer(c: BoundCircuit, gate_indices: Sequence[int]):
    return [(c.circuit.gates[i].kind, c.circuit.gates[i].qubits, c.angles[i])
            for i in gate_indices]


@dataclass(frozen=True)
class _PolyDerivs:
    """Derivatives of a layer's polynomial coefficients w.r.t. theta."""

    dconst: np.ndarray  # (P,)
    dlinear: np.ndarray  # (P, n)
    dquad: np.ndarray   # (P, n, n)


def _layer_poly_with_derivs(c: Circuit, gate_indices: Sequence[int],
                            theta: np.ndarray, x: float | None,
                            n_params: int) -> tuple[PhasePolynomial, _PolyDerivs]:
    n = c.n
    triples = []
    dconst = np.zeros(n_params)
    dlinear = np.zeros((n_params, n))
    dquad = np.zeros((n_params, n, n))
    for gi in gate_indices:
        g = c.gates[gi]
        ref = g.angle
        if ref.kind == "fixed":
            angle = ref.value
        elif ref.kind == "param":
            angle = theta[ref.index]
            p = ref.index
            dconst[p] += -0.5
            if g.kind == "rz":
                dlinear[p, g.qubits[0]] += 1.0
            else:
                u, v = g.qubits
                dlinear[p, u] += 1.0
                dlinear[p, v] += 1.0
                dquad[p, u, v] += -2.0
                dquad[p, v, u] += -2.0
        else:
            if x is None:
                raise ValueError("feature angle requires x")
            angle = 2.0 * math.pi * x / 2.0 ** ref.index
        triples.append((g.kind, g.qubits, angle))
    return phase_polynomial(triples, n), _PolyDerivs(dconst, dlinear, dquad)


# ---------------------------------------------------------------------------
# Latent states and results


@dataclass(frozen=True)
class LatentState:
    """One of the two bipartite half-transformed states.

    which="alpha": (H_A (x) I_B) U1 H |0>, poly is U1's polynomial.
    which="beta":  (H_B (x) I_A) U2^dag H |0>, poly is U2's polynomial
    (the conjugation is handled inside the amplitude formulas).
    """

    which: str
    n: int
    a_idx: np.ndarray  # sorted A-side qubit indices
    b_idx: np.ndarray  # sorted B-side qubit indices
    poly: PhasePolynomial


@dataclass(frozen=True)
class EstimatorResult:
    mean: complex | float
    stderr: float
    m: int
    seed: int | None = None
    stderr_re: float = 0.0
    stderr_im: float = 0.0


def _split_bits(y: np.ndarray, a_idx: np.ndarray, b_idx: np.ndarray):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return y[:, a_idx], y[:, b_idx]


def alpha_amplitude(ls: LatentState, y: Sequence[int] | np.ndarray) -> complex:
    """<y|alpha> in O(n) arithmetic."""
    if ls.which != "alpha":
        raise ValueError("latent state is not alpha")
    y_a, y_b = _split_bits(y, ls.a_idx, ls.b_idx)
    amps = _alpha_amps(ls.poly, ls.a_idx, ls.b_idx, y_a, y_b)[0]
    return complex(amps[0] * 2.0 ** (-ls.n / 2.0))


def beta_amplitude(ls: LatentState, y: Sequence[int] | np.ndarray) -> complex:
    """<beta|y> in O(n) arithmetic."""
    if ls.which != "beta":
        raise ValueError("latent state is not beta")
    y_a, y_b = _split_bits(y, ls.a_idx, ls.b_idx)
    amps = _beta_amps(ls.poly, ls.a_idx, ls.b_idx, y_a, y_b)[0]
    return complex(amps[0] * 2.0 ** (-ls.n / 2.0))


def _alpha_amps(poly: PhasePolynomial, a_idx, b_idx, y_a, y_b):
    """Reduced amplitudes (2^(n/2) <y|alpha>) and the per-A-qubit phases.

    With y_B fixed the layer phase is affine in z_A, so the Hadamard sum
    over the A register factorizes qubit by qubit.
    """
    phi = poly.linear[a_idx][None, :] + y_b @ poly.quad[np.ix_(b_idx, a_idx)]
    const = poly.const + y_b @ poly.linear[b_idx]
    sigma = 1.0 - 2.0 * y_a
    factors = (1.0 + sigma * np.exp(1j * phi)) / _SQRT2
    amps = np.exp(1j * const) * factors.prod(axis=1)
    return amps, phi, factors


def _beta_amps(poly: PhasePolynomial, a_idx, b_idx, y_a, y_b):
    """Reduced amplitudes (2^(n/2) <beta|y>) and the per-B-qubit phases.

    <beta|y> conjugates U2^dag back to +poly, giving the mirror-image
    factorization over the B register with the A bits fixed.
    """
    psi = poly.linear[b_idx][None, :] + y_a @ poly.quad[np.ix_(a_idx, b_idx)]
    const = poly.const + y_a @ poly.linear[a_idx]
    sigma = 1.0 - 2.0 * y_b
    factors = (1.0 + sigma * np.exp(1j * psi)) / _SQRT2
    amps = np.exp(1j * const) * factors.prod(axis=1)
    return amps, psi, factors


# ---------------------------------------------------------------------------
# Engine


class ForrelationEngine:
    """Bipartite factorization of one bound extended-IQP instance.

    Construction extracts the two diagonal-layer polynomials, checks
    bipartiteness of the Rzz graph, and (optionally) the per-parameter
    derivatives of every polynomial coefficient. All estimation entry
    points then share the sampling core.
    """

    def __init__(self, c: Circuit, theta: Sequence[float], x: float | None = None,
                 *, z_mask: int = 0, with_derivs: bool = False,
                 log_form_threshold: int = LOG_FORM_THRESHOLD):
        if not (c.is_extended_iqp_form() or c.is_iqp_form()):
            raise ValueError("engine requires (extended-)IQP form")
        theta = np.asarray(theta, dtype=float)
        if theta.shape[0] != c.param_count:
            raise ValueError("theta length mismatch")
        try:
            part = check_bipartite(connectivity_graph(c))
        except OddCycleError as exc:
            raise NotBipartiteError(str(exc)) from exc
        self.circuit = c
        self.n = c.n
        self.theta = theta
        self.x = x
        self.a_idx = np.array(sorted(part.A), dtype=int)
        self.b_idx = np.array(sorted(part.B), dtype=int)
        self.use_log_form = c.n > log_form_threshold

        layer1, layer2 = c.diagonal_layers()
        P = c.param_count
        self.f1, self.d1 = _layer_poly_with_derivs(c, layer1, theta, x, P)
        self.f2, self.d2 = _layer_poly_with_derivs(c, layer2, theta, x, P)
        if z_mask:
            mask_bits = np.array([(z_mask >> q) & 1 for q in range(c.n)], float)
            self.f2 = self.f2.with_z_absorbed(mask_bits)
        self.with_derivs = with_derivs

        self.alpha = LatentState("alpha", c.n, self.a_idx, self.b_idx, self.f1)
        self.beta = LatentState("beta", c.n, self.a_idx, self.b_idx, self.f2)

    # -- sampling core ----------------------------------------------------

    def _draw_chunk(self, rng: np.random.Generator, mc: int):
        """Exact ancestral draw of mc samples from P(y) = |<y|alpha>|^2."""
        n_a, n_b = self.a_idx.size, self.b_idx.size
        y_b = rng.integers(0, 2, size=(mc, n_b)).astype(float)
        phi = (self.f1.linear[self.a_idx][None, :]
               + y_b @ self.f1.quad[np.ix_(self.b_idx, self.a_idx)])
        p_one = 0.5 * (1.0 - np.cos(phi))
        y_a = (rng.random((mc, n_a)) < p_one).astype(float)
        return y_a, y_b, phi

    def sample_p(self, m: int, rng) -> np.ndarray:
        """m exact samples of y, returned as an (m, n) 0/1 array."""
        r = as_rng(rng)
        out = np.empty((m, self.n), dtype=np.uint8)
        done = 0
        while done < m:
            mc = min(CHUNK_SAMPLES, m - done)
            y_a, y_b, _ = self._draw_chunk(r, mc)
            out[done:done + mc, self.a_idx] = y_a.astype(np.uint8)
            out[done:done + mc, self.b_idx] = y_b.astype(np.uint8)
            done += mc
        return out

    def _ratio(self, y_a, y_b, phi):
        """R(y) plus the intermediates needed by the gradient pass.

        The beta factors can vanish exactly (R(y) = 0 is a legitimate
        value); the returned parts keep enough structure for the gradient
        pass to take the correct product-rule limit at such samples.
        """
        sigma_a = 1.0 - 2.0 * y_a
        e_phi = np.exp(1j * phi)
        f_alpha = (1.0 + sigma_a * e_phi) / _SQRT2
        c_alpha = self.f1.const + y_b @ self.f1.linear[self.b_idx]

        psi = (self.f2.linear[self.b_idx][None, :]
               + y_a @ self.f2.quad[np.ix_(self.a_idx, self.b_idx)])
        sigma_b = 1.0 - 2.0 * y_b
        e_psi = np.exp(1j * psi)
        f_beta = (1.0 + sigma_b * e_psi) / _SQRT2
        c_beta = self.f2.const + y_a @ self.f2.linear[self.a_idx]

        if np.min(np.abs(f_alpha), initial=1.0) < _FACTOR_FLOOR:
            raise DegenerateSampleError("sampled y with vanishing P(y)")

        inv_den = 1.0 / np.conj(np.exp(1j * c_alpha) * f_alpha.prod(axis=1))
        if self.use_log_form:
            with np.errstate(divide="ignore"):
                log_mag = np.log(np.abs(f_beta)).sum(axis=1)
            phase = np.angle(f_beta).sum(axis=1)
            num = np.where(np.isneginf(log_mag), 0.0,
                           np.exp(log_mag + 1j * (phase + c_beta)))
        else:
            num = np.exp(1j * c_beta) * f_beta.prod(axis=1)
        ratio = num * inv_den
        return _RatioParts(ratio, sigma_a, e_phi, f_alpha, sigma_b, e_psi,
                           f_beta, c_beta, inv_den)

    # -- estimators -------------------------------------------------------

    def estimate_forrelation(self, m: int, rng) -> EstimatorResult:
        seed = rng if isinstance(rng, (int, np.integer)) else None
        r = as_rng(rng)
        tot = 0.0 + 0.0j
        tot_re2 = 0.0
        tot_im2 = 0.0
        done = 0
        while done < m:
            mc = min(CHUNK_SAMPLES, m - done)
            y_a, y_b, phi = self._draw_chunk(r, mc)
            ratio = self._ratio(y_a, y_b, phi).ratio
            tot += ratio.sum()
            tot_re2 += float(np.sum(ratio.real ** 2))
            tot_im2 += float(np.sum(ratio.imag ** 2))
            done += mc
        mean = tot / m
        var_re = max(tot_re2 / m - mean.real ** 2, 0.0)
        var_im = max(tot_im2 / m - mean.imag ** 2, 0.0)
        se_re = math.sqrt(var_re / m)
        se_im = math.sqrt(var_im / m)
        return EstimatorResult(complex(mean), math.hypot(se_re, se_im), m,
                               seed=seed, stderr_re=se_re, stderr_im=se_im)

    def estimate_p_zero(self, m: int, rng) -> EstimatorResult:
        """Bias-corrected |Phi|^2 estimate, clamped to [0, 1]."""
        phi_hat = self.estimate_forrelation(m, rng)
        return _p_from_phi(phi_hat)

    def grad_forrelation(self, m: int, rng):
        """(Phi estimate, per-parameter dPhi estimates, their stderrs).

        One sample set drives every component: the integrand for theta_j is
        dlogP(y)/dtheta_j * R(y) + dR(y)/dtheta_j, with the partial
        derivatives of the per-qubit phases read off the polynomial
        coefficient derivatives. Per-sample integrands for all parameters
        are assembled from the sparse coefficient derivatives, so the cost
        is O(gates) per sample, not O(P * n).
        """
        seed = rng if isinstance(rng, (int, np.integer)) else None
        r = as_rng(rng)
        n_params = self.circuit.param_count
        a_idx, b_idx = self.a_idx, self.b_idx

        # sparse views of the coefficient derivatives
        entries = _gradient_entries(self.d1, self.d2, a_idx, b_idx)

        tot_phi = 0.0 + 0.0j
        tot_phi_re2 = 0.0
        tot_phi_im2 = 0.0
        tot_t = np.zeros(n_params, dtype=complex)
        tot_t_re2 = np.zeros(n_params)
        tot_t_im2 = np.zeros(n_params)

        block = max(1024, min(CHUNK_SAMPLES, 4_000_000 // max(n_params, 1)))
        done = 0
        while done < m:
            mc = min(CHUNK_SAMPLES, m - done)
            y_a, y_b, phi = self._draw_chunk(r, mc)
            for lo in range(0, mc, block):
                hi = min(lo + block, mc)
                ya, yb, ph = y_a[lo:hi], y_b[lo:hi], phi[lo:hi]
                parts = self._ratio(ya, yb, ph)
                ratio = parts.ratio
                # dlogP/dphi_a and the two log-derivative factor families
                s = (-parts.sigma_a * np.sin(ph)
                     / (1.0 + parts.sigma_a * np.cos(ph)))
                g = 1j * parts.sigma_a * parts.e_phi / (_SQRT2 * parts.f_alpha)
                sa = ratio[:, None] * (s - np.conj(g))  # weight of dphi_a
                self._alpha_flip_correction(parts, ph, g, sa)
                sb = _beta_weights(parts)               # weight of dpsi_b
                sc = 1j * ratio                         # weight of dconst

                t = np.zeros((n_params, hi - lo), dtype=complex)
                _assemble_integrands(t, entries,
                                     np.ascontiguousarray(sa.T),
                                     np.ascontiguousarray(sb.T), sc,
                                     np.ascontiguousarray(ya.T),
                                     np.ascontiguousarray(yb.T))
                tot_t += t.sum(axis=1)
                tot_t_re2 += np.sum(t.real ** 2, axis=1)
                tot_t_im2 += np.sum(t.imag ** 2, axis=1)
                tot_phi += ratio.sum()
                tot_phi_re2 += float(np.sum(ratio.real ** 2))
                tot_phi_im2 += float(np.sum(ratio.imag ** 2))
            done += mc

        phi_mean = tot_phi / m
        se_re = math.sqrt(max(tot_phi_re2 / m - phi_mean.real ** 2, 0.0) / m)
        se_im = math.sqrt(max(tot_phi_im2 / m - phi_mean.imag ** 2, 0.0) / m)
        phi_res = EstimatorResult(complex(phi_mean), math.hypot(se_re, se_im),
                                  m, seed=seed, stderr_re=se_re, stderr_im=se_im)
        grad = tot_t / m
        var_re = np.maximum(tot_t_re2 / m - grad.real ** 2, 0.0)
        var_im = np.maximum(tot_t_im2 / m - grad.imag ** 2, 0.0)
        grad_se = np.sqrt((var_re + var_im) / m)
        return phi_res, grad, grad_se

    def _alpha_flip_correction(self, parts: _RatioParts, ph, g, sa) -> None:
        """Fold the never-sampled bitstrings into the dphi_a weights.

        When a per-A-qubit phase sits at a multiple of pi (common for
        ensemble angles on the pi/8 grid), one branch of that bit has
        sampling probability ~0 while the derivative of the alpha
        amplitude on that branch does not vanish. The gradient mass
        living on those bitstrings is added back exactly: each sampled
        row contributes, per degenerate position, the closed-form term
        obtained by flipping that bit.
        """
        deg = np.abs(np.cos(ph)) > 1.0 - 2.0 * _DEGENERATE_TOL
        if not deg.any():
            return
        q2 = self.f2.quad[np.ix_(self.a_idx, self.b_idx)]
        lin2_a = self.f2.linear[self.a_idx]
        for k in np.nonzero(deg.any(axis=0))[0]:
            rows = np.nonzero(deg[:, k])[0]
            shift = parts.sigma_a[rows, k]  # y_a0 -> 1 - y_a0
            e_psi = parts.e_psi[rows] * np.exp(1j * shift[:, None] * q2[k])
            f_beta = (1.0 + parts.sigma_b[rows] * e_psi) / _SQRT2
            c_beta = parts.c_beta[rows] + shift * lin2_a[k]
            if self.use_log_form:
                with np.errstate(divide="ignore"):
                    log_mag = np.log(np.abs(f_beta)).sum(axis=1)
                phase = np.angle(f_beta).sum(axis=1)
                beta_flip = np.where(np.isneginf(log_mag), 0.0,
                                     np.exp(log_mag + 1j * (phase + c_beta)))
            else:
                beta_flip = np.exp(1j * c_beta) * f_beta.prod(axis=1)
            sa[rows, k] -= g[rows, k] * parts.inv_den[rows] * beta_flip

    def grad_p(self, m: int, rng):
        """(p estimate, dp/dtheta, stderr of each dp component)."""
        phi_res, dphi, dphi_se = self.grad_forrelation(m, rng)
        p_res = _p_from_phi(phi_res)
        phi = phi_res.mean
        dp = 2.0 * np.real(np.conj(phi) * dphi)
        dp_se = 2.0 * np.sqrt(abs(phi) ** 2 * dphi_se ** 2
                              + np.abs(dphi) ** 2 * phi_res.stderr ** 2)
        return p_res, dp, dp_se


def _beta_weights(parts: _RatioParts) -> np.ndarray:
    """Per-sample weight of dpsi_b in the gradient integrand: R times the
    log-derivative of the b-th beta factor.

    Beta factors may be exactly zero (then R = 0); the product-rule limit
    is taken explicitly: with a single vanishing factor the weight at that
    position is the derivative of that factor times the product of the
    others, and with two or more vanishing factors every weight is zero.
    """
    dfull = _SQRT2 * parts.f_beta
    zero = dfull == 0
    dvec = 1j * parts.sigma_b * parts.e_psi  # d(sqrt2 f_b)/dpsi_b
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(zero, 0.0, dvec / np.where(zero, 1.0, dfull))
    sb = parts.ratio[:, None] * h
    n_zero = zero.sum(axis=1)
    rows = np.nonzero(n_zero == 1)[0]
    if rows.size:
        cols = np.argmax(zero[rows], axis=1)
        fb = parts.f_beta[rows].copy()
        fb[np.arange(rows.size), cols] = 1.0
        prod_rest = np.exp(1j * parts.c_beta[rows]) * fb.prod(axis=1)
        df = dvec[rows, cols] / _SQRT2
        sb[rows, cols] = prod_rest * df * parts.inv_den[rows]
    return sb


def _p_from_phi(phi_hat: EstimatorResult) -> EstimatorResult:
    raw = abs(phi_hat.mean) ** 2
    corrected = raw - (phi_hat.stderr_re ** 2 + phi_hat.stderr_im ** 2)
    p = min(max(corrected, 0.0), 1.0)
    se = 2.0 * abs(phi_hat.mean) * phi_hat.stderr
    return EstimatorResult(p, se, phi_hat.m, seed=phi_hat.seed)


def _gradient_entries(d1: _PolyDerivs, d2: _PolyDerivs, a_idx, b_idx):
    """Nonzero coefficient derivatives, grouped by which per-sample weight
    they multiply. Each group is (param index array, position array(s),
    value array) ready for vectorized accumulation.
    """
    pos_a = {int(q): k for k, q in enumerate(a_idx)}
    pos_b = {int(q): k for k, q in enumerate(b_idx)}

    def nz1(mat, pos):
        cols = np.array(sorted(pos), dtype=int).reshape(-1)
        sub = mat[:, cols]
        j, k = np.nonzero(sub)
        return j, k, sub[j, k]

    def nz2(tens, pos_r, pos_c):
        rows = np.array(sorted(pos_r), dtype=int)
        cols = np.array(sorted(pos_c), dtype=int)
        sub = tens[np.ix_(np.arange(tens.shape[0]), rows, cols)]
        j, a, b = np.nonzero(sub)
        return j, a, b, sub[j, a, b]

    dconst = d1.dconst + d2.dconst
    j_const = np.nonzero(dconst)[0]
    return {
        # dphi_a terms: linear A coefficients and A-B quadratics of layer 1
        "phi_lin": nz1(d1.dlinear, pos_a),
        "phi_quad": nz2(d1.dquad, pos_a, pos_b),
        # dpsi_b terms: linear B coefficients and B-A quadratics of layer 2
        "psi_lin": nz1(d2.dlinear, pos_b),
        "psi_quad": nz2(d2.dquad, pos_b, pos_a),
        # dconst terms: layer constants plus the cross-register linears
        "const": (j_const, dconst[j_const]),
        "calpha_lin": nz1(d1.dlinear, pos_b),
        "cbeta_lin": nz1(d2.dlinear, pos_a),
    }


def _assemble_integrands(t, entries, sa, sb, sc, y_a, y_b):
    """Accumulate the per-sample gradient integrands for all parameters.

    All arrays are transposed (parameters/qubits lead, samples trail) so
    every accumulation runs over a contiguous sample axis.
    """
    j, k, v = entries["phi_lin"]
    for jj, kk, vv in zip(j, k, v):
        t[jj] += vv * sa[kk]
    j, a, b, v = entries["phi_quad"]
    for jj, aa, bb, vv in zip(j, a, b, v):
        t[jj] += vv * sa[aa] * y_b[bb]
    j, k, v = entries["psi_lin"]
    for jj, kk, vv in zip(j, k, v):
        t[jj] += vv * sb[kk]
    j, b, a, v = entries["psi_quad"]
    for jj, bb, aa, vv in zip(j, b, a, v):
        t[jj] += vv * sb[bb] * y_a[aa]
    j, v = entries["const"]
    for jj, vv in zip(j, v):
        t[jj] += vv * sc
    j, k, v = entries["calpha_lin"]
    for jj, kk, vv in zip(j, k, v):
        t[jj] += vv * sc * y_b[kk]
    j, k, v = entries["cbeta_lin"]
    for jj, kk, vv in zip(j, k, v):
        t[jj] += vv * sc * y_a[kk]


# ---------------------------------------------------------------------------
# Module-level convenience entry points


def build_engine(c: Circuit, theta, x=None, **kwargs) -> ForrelationEngine:
    return ForrelationEngine(c, theta, x, **kwargs)


def estimate_forrelation(c: Circuit, theta, x, m: int, rng) -> EstimatorResult:
    return ForrelationEngine(c, theta, x).estimate_forrelation(m, rng)


def estimate_p_zero(c: Circuit, theta, x, m: int, rng) -> EstimatorResult:
    return ForrelationEngine(c, theta, x).estimate_p_zero(m, rng)


def estimate_p_bitstring(c: Circuit, theta, x_out: int | str, m: int, rng,
                         x: float | None = None) -> EstimatorResult:
    """|<x_out|Psi>|^2 via Z-gate absorption: each output bit set to 1 adds
    pi to the matching linear coefficient of the outer layer.
    """
    if isinstance(x_out, str):
        x_out = int(x_out, 2)
    eng = ForrelationEngine(c, theta, x, z_mask=int(x_out))
    return eng.estimate_p_zero(m, rng)


def grad_forrelation(c: Circuit, theta, x, m: int, rng):
    return ForrelationEngine(c, theta, x).grad_forrelation(m, rng)


def grad_p(c: Circuit, theta, x, m: int, rng):
    return ForrelationEngine(c, theta, x).grad_p(m, rng)


def sample_p(c: Circuit, theta, x, m: int, rng) -> np.ndarray:
    return ForrelationEngine(c, theta, x).sample_p(m, rng)


# ---------------------------------------------------------------------------
# Two-body expectations


def _pair_matrix(f2: PhasePolynomial, i: int, j: int) -> np.ndarray:
    """Dense 4x4 matrix of the two-qubit reduction of U2^dag X_i X_j U2,
    in the (z_i, z_j) basis ordered 00, 01, 10, 11 (z_i the fast bit).
    """
    a_i, a_j, b_ij = f2.linear[i], f2.linear[j], f2.quad[i, j]
    diag = np.array([np.exp(1j * (a_i * ci + a_j * cj + b_ij * ci * cj))
                     for cj in (0, 1) for ci in (0, 1)])
    xx = np.zeros((4, 4))
    for k in range(4):
        xx[k ^ 3, k] = 1.0
    d = np.diag(diag)
    return d.conj().T @ xx @ d


def _cross_phases(f2: PhasePolynomial, i: int, j: int, c: int, d: int) -> np.ndarray:
    """Residual diagonal phase slopes on the remaining qubits produced by
    conjugating the bit flips on (i, j) through the outer layer's
    couplings: lambda_k = b_ik (2c-1) + b_jk (2d-1), zeroed at i, j.
    """
    lam = f2.quad[i, :] * (2 * c - 1) + f2.quad[j, :] * (2 * d - 1)
    lam = lam.copy()
    lam[[i, j]] = 0.0
    return lam


def _insertion_estimate(eng: ForrelationEngine, i: int, j: int,
                        abit: int, bbit: int, c: int, d: int,
                        lam: np.ndarray, m: int, rng) -> tuple[complex, float]:
    """MC estimate of <psi1| P_bra exp(i lam . z) P_ket |psi1> where psi1 is
    the post-first-Hadamard-sandwich state of layer 1, P_ket fixes bits
    (i, j) = (c, d) and P_bra fixes them to (abit, bbit).

    Both B-registers of bra and ket are drawn uniformly; every other qubit
    contributes a closed-form factor, so each sample costs O(n).
    """
    r = as_rng(rng)
    f1 = eng.f1
    a_idx, b_idx = eng.a_idx, eng.b_idx
    n_b = b_idx.size
    b_pos = {int(q): k for k, q in enumerate(b_idx)}

    tot = 0.0 + 0.0j
    tot_abs2 = 0.0
    done = 0
    while done < m:
        mc = min(CHUNK_SAMPLES, m - done)
        u = r.integers(0, 2, size=(mc, n_b)).astype(float)
        v = r.integers(0, 2, size=(mc, n_b)).astype(float)
        vals = np.exp(1j * ((u - v) @ f1.linear[b_idx])) * 2.0 ** (-eng.n)
        for k in a_idx:
            phi_u = f1.linear[k] + u @ f1.quad[b_idx, k]
            phi_v = f1.linear[k] + v @ f1.quad[b_idx, k]
            if k == i or k == j:
                ket = c if k == i else d
                bra = abit if k == i else bbit
                vals *= ((1.0 + (-1.0) ** bra * np.exp(-1j * phi_v)) / _SQRT2
                         * (1.0 + (-1.0) ** ket * np.exp(1j * phi_u)) / _SQRT2)
            else:
                acc = 0.0
                for w in (0, 1):
                    acc = acc + (np.exp(1j * lam[k] * w)
                                 * (1.0 + (-1.0) ** w * np.exp(-1j * phi_v)) / _SQRT2
                                 * (1.0 + (-1.0) ** w * np.exp(1j * phi_u)) / _SQRT2)
                vals *= acc
        for k in b_idx:
            kk = b_pos[int(k)]
            if k == i or k == j:
                ket = c if k == i else d
                bra = abit if k == i else bbit
                vals *= (-1.0) ** (ket * u[:, kk] + bra * v[:, kk])
            else:
                vals *= 1.0 + (-1.0) ** (u[:, kk] + v[:, kk]) * np.exp(1j * lam[k])
        vals *= 2.0 ** n_b
        tot += vals.sum()
        tot_abs2 += float(np.sum(np.abs(vals) ** 2))
        done += mc
    mean = tot / m
    var = max(tot_abs2 / m - abs(mean) ** 2, 0.0)
    return complex(mean), math.sqrt(var / m)


def estimate_zz_expectation(c: Circuit, theta, i: int, j: int, m: int, rng,
                            x: float | None = None) -> EstimatorResult:
    """<Z_i Z_j> of the circuit output, assembled as a 16-term sum of exact
    2-qubit matrix elements times MC insertion overlaps (m samples each).

    The matrix elements vanish except on the four anti-diagonal bit
    assignments; zero-weight terms are skipped without changing the value.
    """
    if i == j:
        raise ValueError("indices must differ")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    eng = ForrelationEngine(c, theta, x)
    pair = _pair_matrix(eng.f2, i, j)
    r = as_rng(rng)
    streams = np.random.SeedSequence(
        entropy=r.integers(0, 2 ** 63)).spawn(16)
    total = 0.0 + 0.0j
    var = 0.0
    term = 0
    for abit in (0, 1):
        for bbit in (0, 1):
            for cbit in (0, 1):
                for dbit in (0, 1):
                    weight = pair[abit + 2 * bbit, cbit + 2 * dbit]
                    stream = streams[term]
                    term += 1
                    if abs(weight) < 1e-14:
                        continue
                    lam = _cross_phases(eng.f2, i, j, cbit, dbit)
                    val, se = _insertion_estimate(
                        eng, i, j, abit, bbit, cbit, dbit, lam, m,
                        np.random.default_rng(stream))
                    total += weight * val
                    var += abs(weight) ** 2 * se ** 2
    return EstimatorResult(float(total.real), math.sqrt(var), m, seed=seed)


def estimate_gamma(c: Circuit, theta, m: int, rng,
                   pairs: str = "unordered", x: float | None = None) -> EstimatorResult:
    """Sum of <Z_i Z_j> over qubit pairs (unordered i<j, or ordered = 2x)."""
    if pairs not in ("unordered", "ordered"):
        raise ValueError("pairs must be 'unordered' or 'ordered'")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    r = as_rng(rng)
    total = 0.0
    var = 0.0
    for i in range(c.n):
        for j in range(i + 1, c.n):
            res = estimate_zz_expectation(
                c, theta, i, j, m, np.random.default_rng(r.integers(0, 2 ** 63)),
                x=x)
            total += res.mean
            var += res.stderr ** 2
    scale = 2.0 if pairs == "ordered" else 1.0
    return EstimatorResult(scale * total, scale * math.sqrt(var), m, seed=seed)
