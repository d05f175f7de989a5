"""
Interacting-particle simulation module - Euler-Maruyama for mean-field SDEs

E X_t in the drift and diffusion is replaced by the ensemble mean (and, for
the pitchfork model, E X_t^2 by the ensemble second raw moment). Every
reduction goes through numerics.stable_sum, and every Gaussian increment
comes from a Philox stream keyed by (seed, step) with the particle chunk in
the counter, so runs are bitwise reproducible.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

import config
from errors import SimulationDivergedError
from moment_dynamics import CoefficientSystem, MomentState, propagate_moments
from numerics import stable_sum_chunks
from pitchfork import PitchforkParams, ReducedState, integrate_reduced

logger = logging.getLogger(__name__)

LINEAR = "linear"
PITCHFORK = "pitchfork"

CHUNK_SIZE = config.SIMULATION["chunk_size"]

# step index reserved for the initial-condition stream
_INIT_STREAM = 2 ** 64 - 1


@dataclass(frozen=True)
class ModelSpec:
    """
    Either a linear system (coeffs) or the scalar pitchfork model

        dX = (alpha X + beta E X - X E X^2) dt + X dW
    """
    kind: str
    coeffs: Optional[CoefficientSystem] = None
    alpha: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind == LINEAR:
            if self.coeffs is None:
                raise ValueError("linear model needs a CoefficientSystem")
        elif self.kind == PITCHFORK:
            if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
                raise ValueError("pitchfork parameters must be finite")
        else:
            raise ValueError(f"unknown model kind '{self.kind}'")

    @classmethod
    def linear(cls, coeffs: CoefficientSystem) -> "ModelSpec":
        return cls(kind=LINEAR, coeffs=coeffs)

    @classmethod
    def pitchfork(cls, alpha: float, beta: float = 1.0) -> "ModelSpec":
        return cls(kind=PITCHFORK, alpha=alpha, beta=beta)

    @property
    def d(self) -> int:
        return self.coeffs.d if self.kind == LINEAR else 1


@dataclass(frozen=True)
class Ensemble:
    d: int
    particles: np.ndarray
    time: float
    seed: int

    def __post_init__(self):
        X = np.asarray(self.particles, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"particles must have shape (N, {self.d}), got {X.shape}")
        if X.shape[0] < 2:
            raise ValueError("an ensemble needs at least 2 particles")
        if not np.all(np.isfinite(X)):
            raise ValueError("ensemble has non-finite particles")
        object.__setattr__(self, "particles", X)

    @property
    def N(self) -> int:
        return int(self.particles.shape[0])


@dataclass(frozen=True)
class MomentEstimate:
    """Ensemble moments with standard errors of the mean and of S."""
    state: MomentState
    se_mean: np.ndarray
    se_secmom: np.ndarray


@dataclass(frozen=True)
class TrajectoryRecord:
    time: float
    estimate: MomentEstimate


@dataclass
class Trajectory:
    records: List[TrajectoryRecord] = field(default_factory=list)
    final: Optional[Ensemble] = None

    @property
    def times(self) -> List[float]:
        return [rec.time for rec in self.records]


def particle_normals(seed: int, step_index: int, chunk_index: int, size: int) -> np.ndarray:
    """
    Standard normal draws for one particle chunk at one step.

    Philox key = (seed << 64) | step_index; the chunk index sits in the third
    counter word, so streams never overlap and any chunk can be drawn alone.
    """
    if not 0 <= seed < 2 ** 64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = (int(seed) << 64) | int(step_index)
    bit_generator = np.random.Philox(key=key, counter=[0, 0, int(chunk_index), 0])
    return np.random.Generator(bit_generator).standard_normal(size)


def _chunks(N: int, chunk_size: int) -> List[Tuple[int, int]]:
    return [(lo, min(lo + chunk_size, N)) for lo in range(0, N, chunk_size)]


def _column_sum(values: np.ndarray, chunk_size: int) -> float:
    return stable_sum_chunks([values[lo:hi] for lo, hi in _chunks(values.shape[0], chunk_size)])


def init_particles(init: MomentState, N: int, seed: int,
                   chunk_size: int = CHUNK_SIZE) -> np.ndarray:
    """Gaussian particles with mean m and covariance S - m m^T."""
    d = init.d
    cov = init.covariance
    cov = 0.5 * (cov + cov.T)
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        values, vectors = np.linalg.eigh(cov)
        factor = vectors * np.sqrt(np.clip(values, 0.0, None))
    Z = np.concatenate([
        particle_normals(seed, _INIT_STREAM, c, (hi - lo) * d).reshape(hi - lo, d)
        for c, (lo, hi) in enumerate(_chunks(N, chunk_size))
    ])
    return init.m[None, :] + Z @ factor.T


def estimate_moments(ens: Ensemble, chunk_size: int = CHUNK_SIZE) -> MomentEstimate:
    """
    Ensemble mean and second raw moment matrix with standard errors
    (ensemble standard deviation of each averaged quantity over sqrt(N)).
    """
    X = ens.particles
    N = ens.N
    d = ens.d
    m = np.array([_column_sum(X[:, i], chunk_size) / N for i in range(d)])
    S = np.zeros((d, d))
    fourth = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            prod = X[:, i] * X[:, j]
            S[i, j] = S[j, i] = _column_sum(prod, chunk_size) / N
            fourth[i, j] = fourth[j, i] = _column_sum(prod * prod, chunk_size) / N
    var_mean = np.clip(np.diag(S) - m * m, 0.0, None)
    var_secmom = np.clip(fourth - S * S, 0.0, None)
    state = MomentState(m, S, psd_tol=config.PSD_TOLERANCES["propagate"])
    return MomentEstimate(state=state, se_mean=np.sqrt(var_mean / N), se_secmom=np.sqrt(var_secmom / N))


def _drift_diffusion(model: ModelSpec, t: float, X: np.ndarray,
                     chunk_size: int) -> Tuple[np.ndarray, np.ndarray]:
    N = X.shape[0]
    if model.kind == LINEAR:
        A, B, C, D = model.coeffs.matrices_at(t)
        mean = np.array([_column_sum(X[:, i], chunk_size) / N for i in range(X.shape[1])])
        drift = X @ A.T + (B @ mean)[None, :]
        diffusion = X @ C.T + (D @ mean)[None, :]
        return drift, diffusion
    x = X[:, 0]
    mean = _column_sum(x, chunk_size) / N
    secmom = _column_sum(x * x, chunk_size) / N
    drift = model.alpha * x + model.beta * mean - x * secmom
    return drift[:, None], X


def simulate_ensemble(model: ModelSpec, init: Union[MomentState, np.ndarray], s: float, t: float,
                      dt: float = config.SIMULATION["dt"], N: int = config.SIMULATION["N"],
                      seed: int = 0, record_every: int = config.SIMULATION["record_every"],
                      chunk_size: int = CHUNK_SIZE,
                      blowup: float = config.SIMULATION["blowup"]) -> Trajectory:
    """
    Euler-Maruyama with the ensemble standing in for the law of X_t.

    The grid has ceil((t - s) / dt) uniform steps ending exactly at t. Moments
    are recorded at s, every `record_every` steps and at t.

    Args:
        model: Linear or pitchfork model
        init: MomentState (Gaussian draw) or explicit (N, d) particle array
        s, t: Start and end time, t >= s
        dt: Step size, <= 1e-2
        N: Particle count, >= 100 (ignored when particles are given)
        seed: Unsigned 64-bit seed

    Raises:
        SimulationDivergedError: a particle left |x| <= blowup
    """
    if not 0.0 < dt <= 1e-2:
        raise ValueError(f"dt must lie in (0, 1e-2], got {dt}")
    if t < s:
        raise ValueError(f"simulate_ensemble needs t >= s, got s={s}, t={t}")
    if isinstance(init, MomentState):
        if N < 100:
            raise ValueError(f"N must be >= 100, got {N}")
        if init.d != model.d:
            raise ValueError(f"initial state dimension {init.d} does not match model dimension {model.d}")
        X = init_particles(init, N, seed, chunk_size)
    else:
        X = np.array(init, dtype=float).reshape(len(init), -1)
        if X.shape[1] != model.d:
            raise ValueError(f"particles must have {model.d} columns, got {X.shape[1]}")
        N = X.shape[0]

    n_steps = int(math.ceil((t - s) / dt - 1e-9)) if t > s else 0
    h = (t - s) / n_steps if n_steps else 0.0
    sqrt_h = math.sqrt(h)
    chunks = _chunks(N, chunk_size)
    logger.info("[simulate] %s model, N=%d, %d steps of %.3g, seed=%d", model.kind, N, n_steps, h, seed)

    trajectory = Trajectory()
    ens = Ensemble(model.d, X, s, seed)
    trajectory.records.append(TrajectoryRecord(s, estimate_moments(ens, chunk_size)))

    for step in range(n_steps):
        time = s + step * h
        drift, diffusion = _drift_diffusion(model, time, X, chunk_size)
        dW = sqrt_h * np.concatenate([particle_normals(seed, step, c, hi - lo)
                                      for c, (lo, hi) in enumerate(chunks)])
        X = X + h * drift + diffusion * dW[:, None]
        now = t if step == n_steps - 1 else s + (step + 1) * h
        if not np.all(np.isfinite(X)) or float(np.max(np.abs(X))) > blowup:
            raise SimulationDivergedError(step + 1, now)
        if (step + 1) % record_every == 0 or step == n_steps - 1:
            ens = Ensemble(model.d, X, now, seed)
            trajectory.records.append(TrajectoryRecord(now, estimate_moments(ens, chunk_size)))

    trajectory.final = Ensemble(model.d, X, t, seed)
    return trajectory


@dataclass(frozen=True)
class ComparisonReport:
    mc: MomentEstimate
    ode: MomentState
    z_mean: np.ndarray
    z_secmom: np.ndarray
    trajectory: Trajectory

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.z_mean)), np.max(np.abs(self.z_secmom))))


def z_scores(mc: np.ndarray, ode: np.ndarray, se: np.ndarray) -> np.ndarray:
    """(mc - ode) / se, with 0 where both the difference and se vanish."""
    diff = np.asarray(mc, dtype=float) - np.asarray(ode, dtype=float)
    se = np.asarray(se, dtype=float)
    out = np.zeros_like(diff)
    nonzero = se > 0.0
    out[nonzero] = diff[nonzero] / se[nonzero]
    out[~nonzero & (diff != 0.0)] = np.copysign(np.inf, diff[~nonzero & (diff != 0.0)])
    return out


def ode_reference(model: ModelSpec, init: MomentState, s: float, t: float) -> MomentState:
    """Deterministic moments at t: the lifted ODE or the reduced pitchfork system."""
    return ode_reference_path(model, init, s, [t])[0]


def ode_reference_path(model: ModelSpec, init: MomentState, s: float,
                       times: List[float]) -> List[MomentState]:
    """Deterministic moments at each (nondecreasing, >= s) time of `times`."""
    if model.kind == LINEAR:
        path = []
        state, now = init, s
        for time in times:
            state = propagate_moments(model.coeffs, now, time, state)
            now = time
            path.append(state)
        return path
    params = PitchforkParams(model.alpha, model.beta)
    start = ReducedState(float(init.m[0]), float(init.S[0, 0]))
    states = integrate_reduced(params, start, s, max(times), t_eval=times)
    return [MomentState([z.x], [[z.y]], psd_tol=config.PSD_TOLERANCES["propagate"]) for z in states]


def compare_with_moments(model: ModelSpec, init: MomentState, s: float, t: float,
                         dt: float = config.SIMULATION["dt"], N: int = config.SIMULATION["N"],
                         seed: int = 0, record_every: int = config.SIMULATION["record_every"]) -> ComparisonReport:
    """
    Run the particle system and the moment ODE from the same initial moments
    and report componentwise z-scores (mc - ode) / standard_error at t.
    """
    trajectory = simulate_ensemble(model, init, s, t, dt, N, seed, record_every)
    mc = trajectory.records[-1].estimate
    ode = ode_reference(model, init, s, t)
    report = ComparisonReport(
        mc=mc,
        ode=ode,
        z_mean=z_scores(mc.state.m, ode.m, mc.se_mean),
        z_secmom=z_scores(mc.state.S, ode.S, mc.se_secmom),
        trajectory=trajectory,
    )
    logger.info("[simulate] max |z| = %.3f", report.max_abs_z)
    return report
