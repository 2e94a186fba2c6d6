"""Training loops for explicit quantum generative models.

Two model flavors share one optimizer loop:

  * feature-map models: the trainable circuit carries a per-qubit phase
    feature map of a real input x, and the model density is the
    probability of the all-zeros outcome (dual to sampling the companion
    circuit, see statevector.dqgm_sampling_distribution);
  * Born machines: the model density is the output-bitstring probability
    of a fixed circuit, evaluated per target bitstring.

Gradients come from either the dense oracle (parameter shift) or the
Monte-Carlo engine (analytic resample-free partials), selected in config.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from .circuits import Circuit, CircuitFamily, bind, build_family
from .forrelation import ForrelationEngine
from .rng import as_rng, derive_rng
from .statevector import (DEFAULT_QUBIT_CAP, CapacityError, full_distribution,
                          probability, simulate)

CONFIG_SCHEMA_VERSION = 1


class TrainingDivergence(RuntimeError):
    """Loss exploded past the divergence guard."""


# ---------------------------------------------------------------------------
# Targets and losses


@dataclass(frozen=True)
class TargetDistribution:
    grid: np.ndarray    # ordered x values (or integer outcomes)
    p: np.ndarray       # probability weight per grid point

    def __post_init__(self):
        if self.grid.shape != self.p.shape:
            raise ValueError("grid/probability shape mismatch")
        if self.grid.size == 0:
            raise ValueError("empty grid")
        if np.any(self.p < 0):
            raise ValueError("negative target probability")
        if float(self.p.sum()) > 1.0 + 1e-9:
            raise ValueError("target mass exceeds 1")

    def scaled(self, mass: float) -> "TargetDistribution":
        """Rescale so the total mass equals `mass` (sub-normalized targets
        are permitted when the grid covers only part of the domain)."""
        out = object.__new__(TargetDistribution)
        object.__setattr__(out, "grid", self.grid)
        object.__setattr__(out, "p", self.p * (mass / float(self.p.sum())))
        return out


def gaussian_target(grid: Sequence[float], mean: float, std: float) -> TargetDistribution:
    """Discretized Gaussian, renormalized to total mass 1 over the grid."""
    if std <= 0:
        raise ValueError("std must be positive")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    w = np.exp(-0.5 * ((grid - mean) / std) ** 2)
    return TargetDistribution(grid, w / w.sum())


def mse_loss(p_model: np.ndarray, target: TargetDistribution) -> float:
    p_model = np.asarray(p_model, dtype=float)
    if p_model.shape != target.p.shape:
        raise ValueError("model table does not match target grid")
    return float(np.sum((p_model - target.p) ** 2))


@dataclass(frozen=True)
class GaussianMixtureKernel:
    """Mixture-of-Gaussians kernel over scalar sample values."""

    bandwidths: tuple[float, ...] = (0.25, 4.0, 64.0)

    def matrix(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        d2 = (np.asarray(x, float)[:, None] - np.asarray(y, float)[None, :]) ** 2
        out = np.zeros_like(d2)
        for s in self.bandwidths:
            out += np.exp(-d2 / (2.0 * s))
        return out / len(self.bandwidths)


def mmd_loss(model_samples: Sequence[float], target_samples: Sequence[float],
             kernel: GaussianMixtureKernel | None = None) -> float:
    """Unbiased U-statistic estimate of the squared maximum mean
    discrepancy between the two sample sets."""
    xs = np.asarray(model_samples, dtype=float)
    ys = np.asarray(target_samples, dtype=float)
    if xs.size == 0 or ys.size == 0:
        raise ValueError("sample sets must be non-empty")
    k = kernel or GaussianMixtureKernel()
    kxx = k.matrix(xs, xs)
    kyy = k.matrix(ys, ys)
    kxy = k.matrix(xs, ys)
    m, n = xs.size, ys.size
    term_x = (kxx.sum() - np.trace(kxx)) / (m * max(m - 1, 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * max(n - 1, 1))
    return float(term_x + term_y - 2.0 * kxy.mean())


# ---------------------------------------------------------------------------
# Fast oracle evaluation of the zero-outcome probability over a grid


def _wht_normalized(mat: np.ndarray, n: int) -> np.ndarray:
    """Walsh-Hadamard transform along axis 0 of a (2^n, k) array."""
    h = 1
    size = mat.shape[0]
    while h < size:
        for lo in range(0, size, 2 * h):
            a = mat[lo:lo + h].copy()
            b = mat[lo + h:lo + 2 * h]
            mat[lo:lo + h] = a + b
            mat[lo + h:lo + 2 * h] = a - b
        h *= 2
    return mat * 2.0 ** (-n / 2.0)


def _feature_weights(c: Circuit) -> np.ndarray:
    """Per-basis-state slope of the feature phase: f_feat(z; x) = x * w[z]."""
    n = c.n
    z = np.arange(1 << n)
    w = np.zeros(1 << n)
    for g in c.gates:
        if g.angle is not None and g.angle.kind == "feature":
            q = g.qubits[0]
            rate = 2.0 * math.pi / 2.0 ** g.angle.index
            w += rate * (((z >> q) & 1) - 0.5)
    return w


def _layer_phase_vectors(c: Circuit, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense phase tables f1t(z) (trainable/fixed part) and f2(z)."""
    from .forrelation import _layer_poly_with_derivs

    layer1, layer2 = c.diagonal_layers()
    layer1 = [gi for gi in layer1 if c.gates[gi].angle.kind != "feature"]
    p1, _ = _layer_poly_with_derivs(c, layer1, theta, None, c.param_count)
    p2, _ = _layer_poly_with_derivs(c, layer2, theta, None, c.param_count)
    n = c.n
    z = np.arange(1 << n)
    bits = ((z[:, None] >> np.arange(n)) & 1).astype(float)
    f1 = p1.evaluate(bits)
    f2 = p2.evaluate(bits)
    return np.asarray(f1), np.asarray(f2)


def zero_probability_batch(c: Circuit, theta: Sequence[float],
                           xs: Sequence[float],
                           cap: int = DEFAULT_QUBIT_CAP) -> np.ndarray:
    """p(all-zeros outcome; x) for every x, via three Hadamard transforms
    and two phase multiplications, batched over the grid."""
    n = c.n
    if n > cap:
        raise CapacityError(f"n={n} exceeds dense cap {cap}")
    theta = np.asarray(theta, dtype=float)
    xs = np.asarray(xs, dtype=float)
    f1, f2 = _layer_phase_vectors(c, theta)
    w = _feature_weights(c)
    # state after H then the inner diagonal layer, for all x at once
    mat = np.exp(1j * (f1[:, None] + w[:, None] * xs[None, :]))
    mat *= 2.0 ** (-n / 2.0)
    mat = _wht_normalized(mat, n)
    mat *= np.exp(1j * f2)[:, None]
    amp0 = mat.sum(axis=0) * 2.0 ** (-n / 2.0)
    return np.abs(amp0) ** 2


def zero_probability_shift_grads(c: Circuit, theta: Sequence[float],
                                 xs: Sequence[float],
                                 cap: int = DEFAULT_QUBIT_CAP) -> np.ndarray:
    """Exact (P, len(xs)) gradient array via half-turn parameter shifts."""
    theta = np.asarray(theta, dtype=float)
    grads = np.empty((theta.shape[0], len(xs)))
    for j in range(theta.shape[0]):
        shifted = theta.copy()
        shifted[j] += math.pi / 2
        hi = zero_probability_batch(c, shifted, xs, cap=cap)
        shifted[j] -= math.pi
        lo = zero_probability_batch(c, shifted, xs, cap=cap)
        grads[j] = 0.5 * (hi - lo)
    return grads


# ---------------------------------------------------------------------------
# Config and checkpoints


@dataclass
class TrainConfig:
    n: int
    n_active: int | None = None
    steps: int = 100
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: str = "mse"              # "mse" | "mmd"
    backend: str = "oracle"        # "oracle" | "forrelation"
    m: int = 100_000               # MC samples per (grid point, step)
    seed: int = 0
    grid_kind: str = "integers"    # "integers" | "linspace"
    grid_points: int | None = None
    grid_span: float | None = None
    target_mean: float | None = None
    target_std: float | None = None
    target_mass: float | None = None
    init: str = "auto"             # "auto" | "random_small" | "identity_padding"
    init_scale: float = 0.1
    oracle_cap: int = DEFAULT_QUBIT_CAP

    def __post_init__(self):
        if self.n_active is None:
            self.n_active = self.n
        if not 1 <= self.n_active <= self.n:
            raise ValueError("need 1 <= n_active <= n")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.loss not in ("mse", "mmd"):
            raise ValueError("loss must be 'mse' or 'mmd'")
        if self.backend not in ("oracle", "forrelation"):
            raise ValueError("backend must be 'oracle' or 'forrelation'")
        if self.loss == "mmd" and self.backend != "oracle":
            raise ValueError("mmd loss requires the oracle backend")
        if self.grid_kind not in ("integers", "linspace"):
            raise ValueError("grid_kind must be 'integers' or 'linspace'")

    def grid(self) -> np.ndarray:
        domain = 2.0 ** self.n_active
        if self.grid_kind == "integers":
            return np.arange(int(domain), dtype=float)
        points = self.grid_points or int(domain)
        span = self.grid_span if self.grid_span is not None else domain
        return np.arange(points, dtype=float) * (span / points)

    def resolved_target_mass(self) -> float:
        if self.target_mass is not None:
            return self.target_mass
        return len(self.grid()) / 2.0 ** self.n_active

    def target(self) -> TargetDistribution:
        grid = self.grid()
        mean = self.target_mean if self.target_mean is not None \
            else float(grid.mean())
        std = self.target_std if self.target_std is not None \
            else float(2.0 ** self.n_active) / 8.0
        return gaussian_target(grid, mean, std).scaled(self.resolved_target_mass())

    def digest(self) -> str:
        doc = {"schema_version": CONFIG_SCHEMA_VERSION, **asdict(self)}
        return hashlib.sha256(
            json.dumps(doc, sort_keys=True).encode()).hexdigest()


_CONFIG_FIELDS = {f for f in TrainConfig.__dataclass_fields__}


def config_from_dict(doc: dict) -> TrainConfig:
    """Parse a config document, rejecting unknown fields (fail-closed)."""
    doc = dict(doc)
    version = doc.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ValueError(f"unsupported config schema version {version}")
    unknown = set(doc) - _CONFIG_FIELDS
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    if "n" not in doc:
        raise ValueError("config requires 'n'")
    return TrainConfig(**doc)


@dataclass
class Checkpoint:
    theta: np.ndarray
    step: int
    loss_history: list[float]
    config: TrainConfig
    adam_m: np.ndarray
    adam_v: np.ndarray

    @property
    def config_digest(self) -> str:
        return self.config.digest()

    def rng_state_digest(self) -> str:
        return hashlib.sha256(
            f"{self.config.seed}:{self.step}".encode()).hexdigest()

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": CONFIG_SCHEMA_VERSION,
            "config": {"schema_version": CONFIG_SCHEMA_VERSION,
                       **asdict(self.config)},
            "step": self.step,
            "theta": [repr(float(t)) for t in self.theta],
            "adam_m": [repr(float(t)) for t in self.adam_m],
            "adam_v": [repr(float(t)) for t in self.adam_v],
            "loss_history": [repr(float(v)) for v in self.loss_history],
            "config_digest": self.config_digest,
            "rng_state_digest": self.rng_state_digest(),
        }, indent=2)

    @staticmethod
    def from_json(text: str) -> "Checkpoint":
        doc = json.loads(text)
        if doc.get("schema_version") != CONFIG_SCHEMA_VERSION:
            raise ValueError("unsupported checkpoint schema version")
        config = config_from_dict(doc["config"])
        ckpt = Checkpoint(
            theta=np.array([float(t) for t in doc["theta"]]),
            step=int(doc["step"]),
            loss_history=[float(v) for v in doc["loss_history"]],
            config=config,
            adam_m=np.array([float(t) for t in doc["adam_m"]]),
            adam_v=np.array([float(t) for t in doc["adam_v"]]),
        )
        if doc["config_digest"] != ckpt.config_digest:
            raise ValueError("checkpoint config digest mismatch")
        return ckpt


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(ckpt.to_json())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        return Checkpoint.from_json(fh.read())


# ---------------------------------------------------------------------------
# Initialization


def model_circuit(config: TrainConfig) -> Circuit:
    """Feature-mapped extended-IQP circuit matching the config register."""
    return build_family(CircuitFamily.EXTENDED_IQP, config.n,
                        feature_qubits=config.n_active)


def identity_padding_init(circuit: Circuit, n_active: int, rng,
                          scale: float = 0.1) -> np.ndarray:
    """Initial angles confining mass to the active sub-register.

    Couplers touching a padded qubit start at 0; single-qubit angles on
    padded qubits start at pi/2 so each padded line maps |0> to |0> with
    certainty (its zero-outcome probability is (1 + sin t1 sin t2)/2);
    active-qubit angles start small and random.
    """
    if n_active > circuit.n:
        raise ValueError("n_active exceeds circuit width")
    r = as_rng(rng)
    theta = np.empty(circuit.param_count)
    for g in circuit.gates:
        if g.angle is None or g.angle.kind != "param":
            continue
        padded = any(q >= n_active for q in g.qubits)
        if padded:
            theta[g.angle.index] = 0.0 if g.kind == "rzz" else math.pi / 2.0
        else:
            theta[g.angle.index] = r.uniform(-scale, scale)
    return theta


def random_small_init(circuit: Circuit, rng, scale: float = 0.1) -> np.ndarray:
    r = as_rng(rng)
    return r.uniform(-scale, scale, size=circuit.param_count)


def initial_theta(config: TrainConfig, circuit: Circuit) -> np.ndarray:
    rng = derive_rng(config.seed, "trainer", "init")
    mode = config.init
    if mode == "auto":
        mode = "identity_padding" if config.n_active < config.n else "random_small"
    if mode == "identity_padding":
        return identity_padding_init(circuit, config.n_active, rng,
                                     scale=config.init_scale)
    if mode == "random_small":
        return random_small_init(circuit, rng, scale=config.init_scale)
    raise ValueError(f"unknown init mode {config.init!r}")


# ---------------------------------------------------------------------------
# Loss/gradient evaluation


def _model_table_oracle(config: TrainConfig, circuit: Circuit,
                        theta: np.ndarray, grid: np.ndarray):
    p = zero_probability_batch(circuit, theta, grid, cap=config.oracle_cap)
    grads = zero_probability_shift_grads(circuit, theta, grid,
                                         cap=config.oracle_cap)
    return p, grads


def _model_table_mc(config: TrainConfig, circuit: Circuit, theta: np.ndarray,
                    grid: np.ndarray, step: int):
    p = np.empty(len(grid))
    grads = np.empty((circuit.param_count, len(grid)))
    for k, x in enumerate(grid):
        eng = ForrelationEngine(circuit, theta, float(x))
        rng = derive_rng(config.seed, "trainer", "mc", step, k)
        p_res, dp, _ = eng.grad_p(config.m, rng)
        p[k] = p_res.mean
        grads[:, k] = dp
    return p, grads


def loss_gradient(config: TrainConfig, circuit: Circuit, theta: np.ndarray,
                  target: TargetDistribution | None = None, step: int = 0,
                  table_fn: Callable | None = None):
    """(loss, dloss/dtheta, model table) for the config's loss and backend.

    The MC backend draws one sample set per (grid point, step) and reuses
    it across every theta component.
    """
    theta = np.asarray(theta, dtype=float)
    target = target if target is not None else config.target()
    grid = target.grid
    if table_fn is not None:
        p, grads = table_fn(config, circuit, theta, grid, step)
    elif config.backend == "oracle":
        p, grads = _model_table_oracle(config, circuit, theta, grid)
    else:
        p, grads = _model_table_mc(config, circuit, theta, grid, step)
    residual = p - target.p
    if config.loss == "mse":
        loss = float(np.sum(residual ** 2))
        grad = 2.0 * grads @ residual
    else:
        kernel = GaussianMixtureKernel()
        kmat = kernel.matrix(grid, grid)
        loss = float(residual @ kmat @ residual)
        grad = 2.0 * grads @ (kmat @ residual)
    return loss, grad, p


# ---------------------------------------------------------------------------
# Optimizer loop


@dataclass
class _AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int

    def step(self, theta: np.ndarray, grad: np.ndarray,
             config: TrainConfig) -> np.ndarray:
        self.t += 1
        self.m = config.beta1 * self.m + (1 - config.beta1) * grad
        self.v = config.beta2 * self.v + (1 - config.beta2) * grad ** 2
        m_hat = self.m / (1 - config.beta1 ** self.t)
        v_hat = self.v / (1 - config.beta2 ** self.t)
        return theta - config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def _run_loop(config: TrainConfig, circuit: Circuit,
              target: TargetDistribution, theta: np.ndarray,
              start_step: int, loss_history: list[float],
              adam: _AdamState, log_rows: list | None,
              table_fn: Callable | None = None) -> Checkpoint:
    """Shared optimizer loop.

    loss_history[k] is the loss at the theta entering step k (entry 0 is
    the initial loss); the final entry is evaluated after the last update,
    so its length is always steps + 1. Each step costs one gradient pass:
    the pre-update loss of step k+1 doubles as the post-update loss of
    step k.
    """
    import time

    for step in range(start_step, config.steps):
        t0 = time.perf_counter()
        loss, grad, _ = loss_gradient(config, circuit, theta, target,
                                      step=step, table_fn=table_fn)
        if len(loss_history) == step:
            loss_history.append(loss)
        guard = max(loss_history[0], 1e-300)
        if loss > 1e3 * guard:
            raise TrainingDivergence(
                f"loss {loss:.3e} exceeds 1000x initial {guard:.3e} "
                f"at step {step}")
        theta = adam.step(theta, grad, config)
        if log_rows is not None:
            log_rows.append((step, loss, float(np.linalg.norm(grad)),
                             (time.perf_counter() - t0) * 1e3))
    if len(loss_history) == config.steps:
        final_loss, _, _ = _evaluate_only(config, circuit, theta, target,
                                          config.steps, table_fn)
        loss_history.append(final_loss)
    return Checkpoint(theta=theta, step=config.steps,
                      loss_history=loss_history, config=config,
                      adam_m=adam.m, adam_v=adam.v)


def _evaluate_only(config, circuit, theta, target, step, table_fn):
    """Loss at theta without a gradient pass (oracle) or with the step's
    shared stream (MC backend)."""
    grid = target.grid
    if table_fn is not None:
        p, _ = table_fn(config, circuit, theta, grid, step)
    elif config.backend == "oracle":
        p = zero_probability_batch(circuit, theta, grid, cap=config.oracle_cap)
    else:
        p = np.empty(len(grid))
        for k, x in enumerate(grid):
            eng = ForrelationEngine(circuit, theta, float(x))
            rng = derive_rng(config.seed, "trainer", "mc-eval", step, k)
            p[k] = eng.estimate_p_zero(config.m, rng).mean
    residual = p - target.p
    if config.loss == "mse":
        return float(np.sum(residual ** 2)), None, p
    kernel = GaussianMixtureKernel()
    kmat = kernel.matrix(grid, grid)
    return float(residual @ kmat @ residual), None, p


def train_dqgm(config: TrainConfig, circuit: Circuit | None = None,
               resume: Checkpoint | None = None,
               log_rows: list | None = None) -> Checkpoint:
    """Optimize the feature-map model against the config's target density.

    Returns the final checkpoint; loss_history holds the initial loss plus
    one entry per completed step.
    """
    circuit = circuit if circuit is not None else model_circuit(config)
    target = config.target()
    if resume is not None:
        if resume.config_digest != config.digest():
            raise ValueError("resume checkpoint does not match config")
        theta = resume.theta.copy()
        loss_history = list(resume.loss_history)
        start = resume.step
        adam = _AdamState(resume.adam_m.copy(), resume.adam_v.copy(), start)
    else:
        theta = initial_theta(config, circuit)
        loss_history = []
        start = 0
        adam = _AdamState(np.zeros_like(theta), np.zeros_like(theta), 0)
    return _run_loop(config, circuit, target, theta, start, loss_history,
                     adam, log_rows)


def train_qcbm(config: TrainConfig, circuit: Circuit,
               target: TargetDistribution,
               log_rows: list | None = None) -> Checkpoint:
    """Optimize a Born machine against per-bitstring target probabilities.

    `target.grid` holds integer outcome indices; probabilities may be
    sub-normalized when the grid covers part of the outcome space.
    """
    outcomes = target.grid.astype(int)

    def table_fn(cfg, circ, theta, grid, step):
        if cfg.backend == "oracle":
            state = simulate(bind(circ, theta), cap=cfg.oracle_cap)
            table = full_distribution(state).probs
            p = table[outcomes]
            grads = np.empty((circ.param_count, len(outcomes)))
            for j in range(circ.param_count):
                shifted = np.asarray(theta, float).copy()
                shifted[j] += math.pi / 2
                hi = full_distribution(
                    simulate(bind(circ, shifted), cap=cfg.oracle_cap)).probs
                shifted[j] -= math.pi
                lo = full_distribution(
                    simulate(bind(circ, shifted), cap=cfg.oracle_cap)).probs
                grads[j] = 0.5 * (hi[outcomes] - lo[outcomes])
            return p, grads
        p = np.empty(len(outcomes))
        grads = np.empty((circ.param_count, len(outcomes)))
        for k, out in enumerate(outcomes):
            eng = ForrelationEngine(circ, theta, None, z_mask=int(out))
            rng = derive_rng(cfg.seed, "trainer", "qcbm", step, k)
            p_res, dp, _ = eng.grad_p(cfg.m, rng)
            p[k] = p_res.mean
            grads[:, k] = dp
        return p, grads

    theta = initial_theta(config, circuit)
    adam = _AdamState(np.zeros_like(theta), np.zeros_like(theta), 0)
    return _run_loop(config, circuit, target, theta, 0, [], adam,
                     log_rows, table_fn=table_fn)
