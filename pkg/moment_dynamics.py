"""
Moment dynamics module - Moment states, the d(d+1)-dimensional lifted linear
ODE and moment propagation for linear mean-field SDEs

    dX = (A(t) X + B(t) E X) dt + (C(t) X + D(t) E X) dW

Index pairs are 0-based here: index_map(2) == [(0, 0), (0, 1), (1, 1)].
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import InadmissibleStateError
from numerics import OdeProblem, as_matrix, integrate_adaptive

logger = logging.getLogger(__name__)

Matrices = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


def _psd_floor(M: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def _magnitude(*arrays) -> float:
    return max([1.0] + [float(np.max(np.abs(a))) for a in arrays if np.size(a)])


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    """Constant coefficient matrices in force from `start` on."""
    start: float
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def matrices(self) -> Matrices:
        return self.A, self.B, self.C, self.D


@dataclass(frozen=True)
class CoefficientSystem:
    """
    Piecewise-constant coefficients of a linear mean-field SDE.

    A single segment starting at -inf is an autonomous system. Every entry of
    every matrix must be bounded by bound_m in absolute value.
    """
    d: int
    schedule: Tuple[Segment, ...]
    bound_m: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"state dimension must be >= 1, got {self.d}")
        if not self.schedule:
            raise ValueError("schedule needs at least one segment")
        if not (self.bound_m >= 0.0 and math.isfinite(self.bound_m)):
            raise ValueError(f"bound_m must be a finite nonnegative number, got {self.bound_m}")

        checked = []
        previous = None
        for seg in self.schedule:
            if previous is not None and not seg.start > previous:
                raise ValueError(
                    f"segment start times must be strictly increasing ({seg.start} after {previous})"
                )
            previous = seg.start
            mats = {}
            for name, values in zip("ABCD", seg.matrices()):
                M = as_matrix(values, name, rows=self.d, cols=self.d)
                worst = float(np.max(np.abs(M)))
                if worst > self.bound_m:
                    raise ValueError(
                        f"entry of {name} with |value|={worst!r} exceeds bound_m={self.bound_m!r}"
                    )
                mats[name] = M
            checked.append(Segment(float(seg.start), **mats))
        object.__setattr__(self, "schedule", tuple(checked))

    @classmethod
    def autonomous(cls, A, B, C, D, bound_m: Optional[float] = None) -> "CoefficientSystem":
        """Single-segment system; bound_m defaults to the largest |entry|."""
        mats = [np.array(M, dtype=float) for M in (A, B, C, D)]
        d = mats[0].shape[0] if mats[0].ndim == 2 else 0
        if bound_m is None:
            bound_m = max(float(np.max(np.abs(M))) if M.size else 0.0 for M in mats)
        return cls(d=d, schedule=(Segment(-math.inf, *mats),), bound_m=bound_m)

    @classmethod
    def scalar(cls, alpha: float, beta: float, c: float = 1.0, dd: float = 0.0) -> "CoefficientSystem":
        """d = 1 system dZ = (alpha Z + beta E Z) dt + (c Z + dd E Z) dW."""
        return cls.autonomous([[alpha]], [[beta]], [[c]], [[dd]])

    @property
    def is_autonomous(self) -> bool:
        return len(self.schedule) == 1

    def segment_at(self, t: float) -> Segment:
        if t < self.schedule[0].start:
            raise ValueError(f"time {t} precedes the schedule start {self.schedule[0].start}")
        current = self.schedule[0]
        for seg in self.schedule[1:]:
            if seg.start <= t:
                current = seg
            else:
                break
        return current

    def matrices_at(self, t: float) -> Matrices:
        return self.segment_at(t).matrices()

    def breakpoints(self, s: float, t: float) -> List[float]:
        """Segment switching times strictly inside (s, t)."""
        return [seg.start for seg in self.schedule[1:] if s < seg.start < t]

    def shifted(self, c: float) -> "CoefficientSystem":
        """Same system with A replaced by A + c I."""
        eye = np.eye(self.d)
        segments = tuple(
            Segment(seg.start, seg.A + c * eye, seg.B, seg.C, seg.D) for seg in self.schedule
        )
        bound = max(self.bound_m, max(float(np.max(np.abs(seg.A))) for seg in segments))
        return CoefficientSystem(d=self.d, schedule=segments, bound_m=bound)


@dataclass(frozen=True)
class FunctionCoefficients:
    """
    Coefficients given by a callback t -> (A, B, C, D).

    Library-only; run files always describe piecewise-constant schedules.
    """
    d: int
    provider: Callable[[float], Matrices]
    bound_m: float

    def matrices_at(self, t: float) -> Matrices:
        return tuple(as_matrix(M, name, rows=self.d, cols=self.d)
                     for name, M in zip("ABCD", self.provider(t)))

    def breakpoints(self, s: float, t: float) -> List[float]:
        return []


def lift_growth_bound(d: int, bound_m: float) -> float:
    """2 d m + 2 d^2 m^2: bound on the growth rate of any lifted solution."""
    return 2.0 * d * bound_m + 2.0 * d * d * bound_m * bound_m


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentState:
    """
    First moments m = E X and second moments S = E X X^T of a random vector.

    S must be symmetric, positive semidefinite, and S - m m^T must be positive
    semidefinite (all within psd_tol, relative to the state's magnitude).
    """
    m: np.ndarray
    S: np.ndarray
    psd_tol: float = field(default=config.PSD_TOLERANCES["validate"], repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(-1)
        S = np.array(self.S, dtype=float)
        if S.ndim == 0:
            S = S.reshape(1, 1)
        d = m.shape[0]
        if d < 1 or S.shape != (d, d):
            raise InadmissibleStateError(f"S has shape {S.shape}, expected ({d}, {d})")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(S))):
            raise InadmissibleStateError("moment state has non-finite entries")

        scale = _magnitude(S, m)
        if np.max(np.abs(S - S.T)) > 1e-12 * scale:
            raise InadmissibleStateError("second-moment matrix S is not symmetric")
        floor = self.psd_tol * scale
        if _psd_floor(S) < floor:
            raise InadmissibleStateError("second-moment matrix S is not positive semidefinite")
        if _psd_floor(S - np.outer(m, m)) < floor:
            raise InadmissibleStateError("covariance S - m m^T is not positive semidefinite")

        m.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "S", S)

    @property
    def d(self) -> int:
        return int(self.m.shape[0])

    @property
    def covariance(self) -> np.ndarray:
        return self.S - np.outer(self.m, self.m)


@dataclass(frozen=True)
class LiftedOperator:
    """Blocks of the lifted generator acting on stacked (u, v); L_uv is zero."""
    d: int
    L_uu: np.ndarray
    L_vu: np.ndarray
    L_vv: np.ndarray

    @property
    def dimension(self) -> int:
        return self.d * (self.d + 1)

    def full(self) -> np.ndarray:
        k = self.L_uu.shape[0]
        return np.block([[self.L_uu, np.zeros((k, k))], [self.L_vu, self.L_vv]])

    def apply(self, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.L_uu @ u, self.L_vu @ u + self.L_vv @ v


# ---------------------------------------------------------------------------
# Lift
# ---------------------------------------------------------------------------

def index_map(d: int) -> List[Tuple[int, int]]:
    """Row-major upper-triangular pairs (i, j), i <= j, 0-based."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    return [(i, j) for i in range(d) for j in range(i, d)]


def upper(M: np.ndarray) -> np.ndarray:
    """Upper-triangular entries of a square matrix in index_map order."""
    rows, cols = np.triu_indices(M.shape[0])
    return np.asarray(M)[rows, cols].copy()


def symmetric(w: np.ndarray, d: int) -> np.ndarray:
    """Inverse of `upper` for symmetric matrices."""
    M = np.zeros((d, d))
    rows, cols = np.triu_indices(d)
    M[rows, cols] = w
    M[cols, rows] = w
    return M


def _first_moment_flow(K: np.ndarray, U: np.ndarray) -> np.ndarray:
    return K @ U + U @ K.T


def _second_moment_flow(A, B, C, D, U: np.ndarray, V: np.ndarray) -> np.ndarray:
    return (A @ V + V @ A.T + C @ V @ C.T
            + B @ U + U @ B.T + C @ U @ D.T + D @ U @ C.T + D @ U @ D.T)


def build_lift(coeffs, t: float) -> LiftedOperator:
    """
    Assemble the lifted generator at time t.

    Column k of each block is the image of the k-th symmetric basis matrix
    (e_i e_j^T + e_j e_i^T for i < j, e_i e_i^T for i == j), read back on the
    upper triangle, so off-diagonal pairs carry both (i, j) and (j, i) terms.
    """
    A, B, C, D = coeffs.matrices_at(t)
    d = coeffs.d
    pairs = index_map(d)
    k = len(pairs)
    zero = np.zeros((d, d))
    L_uu = np.zeros((k, k))
    L_vu = np.zeros((k, k))
    L_vv = np.zeros((k, k))
    for col, (i, j) in enumerate(pairs):
        E = np.zeros((d, d))
        E[i, j] = 1.0
        E[j, i] = 1.0
        L_uu[:, col] = upper(_first_moment_flow(A + B, E))
        L_vu[:, col] = upper(_second_moment_flow(A, B, C, D, E, zero))
        L_vv[:, col] = upper(_second_moment_flow(A, B, C, D, zero, E))
    return LiftedOperator(d=d, L_uu=L_uu, L_vu=L_vu, L_vv=L_vv)


def moment_rhs(coeffs, t: float, state: MomentState) -> Tuple[np.ndarray, np.ndarray]:
    """
    Right-hand side of the first/second moment equations.

    Returns:
        (dm, dS) with dm = (A + B) m and
        dS = A S + S A^T + C S C^T + B mm^T + mm^T B^T + C mm^T D^T + D mm^T C^T + D mm^T D^T
    """
    A, B, C, D = coeffs.matrices_at(t)
    mm = np.outer(state.m, state.m)
    dm = (A + B) @ state.m
    dS = _second_moment_flow(A, B, C, D, mm, state.S)
    return dm, 0.5 * (dS + dS.T)


def _intervals(coeffs, s: float, t: float) -> List[Tuple[float, float]]:
    cuts = [s] + coeffs.breakpoints(s, t) + [t]
    return list(zip(cuts[:-1], cuts[1:]))


def propagate_moments(coeffs, s: float, t: float, initial: MomentState,
                      rel_tol: float = config.TOLERANCES["rel_tol"],
                      abs_tol: float = config.TOLERANCES["abs_tol"]) -> MomentState:
    """
    Propagate (m, S) from time s to time t with the adaptive integrator.

    Schedules are integrated segment by segment so every switching time is
    hit exactly. The returned S is symmetrized.

    Raises:
        IntegrationDivergedError: from the integrator
        InadmissibleStateError: if drift pushes the state out of the cone
    """
    if t < s:
        raise ValueError(f"propagate_moments needs t >= s, got s={s}, t={t}")
    if initial.d != coeffs.d:
        raise ValueError(f"state dimension {initial.d} does not match system dimension {coeffs.d}")
    d = coeffs.d
    if t == s:
        return initial

    def rhs_for(fixed: Optional[Matrices]) -> Callable[[float, np.ndarray], np.ndarray]:
        def rhs(time: float, y: np.ndarray) -> np.ndarray:
            A, B, C, D = fixed if fixed is not None else coeffs.matrices_at(time)
            m = y[:d]
            S = y[d:].reshape(d, d)
            mm = np.outer(m, m)
            return np.concatenate([(A + B) @ m, _second_moment_flow(A, B, C, D, mm, S).ravel()])
        return rhs

    y = np.concatenate([initial.m, initial.S.ravel()])
    for a, b in _intervals(coeffs, s, t):
        # a segment's matrices hold on [a, b]; the stage at b must not see the next one
        fixed = coeffs.matrices_at(a) if isinstance(coeffs, CoefficientSystem) else None
        y = integrate_adaptive(OdeProblem(d + d * d, rhs_for(fixed), a, b, y), rel_tol, abs_tol)
    S = y[d:].reshape(d, d)
    return MomentState(y[:d], 0.5 * (S + S.T), psd_tol=config.PSD_TOLERANCES["propagate"])


def propagate_lifted(coeffs, s: float, t: float, Y: np.ndarray,
                     rel_tol: float = config.TOLERANCES["rel_tol"],
                     abs_tol: float = config.TOLERANCES["abs_tol"]) -> np.ndarray:
    """
    Propagate lifted vectors (columns of Y, shape (d(d+1), k)) through the
    linear lifted ODE. No cone check is made: the lift is linear on all of
    R^{d(d+1)}.
    """
    Y = np.array(Y, dtype=float)
    single = Y.ndim == 1
    if single:
        Y = Y[:, None]
    n = coeffs.d * (coeffs.d + 1)
    if Y.shape[0] != n:
        raise ValueError(f"lifted vectors must have length {n}, got {Y.shape[0]}")
    if t < s:
        raise ValueError(f"propagate_lifted needs t >= s, got s={s}, t={t}")
    k = Y.shape[1]
    y = Y.ravel()
    for a, b in _intervals(coeffs, s, t):
        if b == a:
            continue
        if isinstance(coeffs, CoefficientSystem):
            L = build_lift(coeffs, a).full()
            rhs = lambda time, z, L=L: (L @ z.reshape(n, k)).ravel()
        else:
            rhs = lambda time, z: (build_lift(coeffs, time).full() @ z.reshape(n, k)).ravel()
        y = integrate_adaptive(OdeProblem(n * k, rhs, a, b, y), rel_tol, abs_tol)
    out = y.reshape(n, k)
    return out[:, 0] if single else out


# ---------------------------------------------------------------------------
# Norms, sampling and the admissible cone
# ---------------------------------------------------------------------------

def ms_norm(state: MomentState) -> float:
    """Mean-square norm sqrt(E|X|^2) = sqrt(trace S)."""
    trace = float(np.trace(state.S))
    if trace < -1e-10:
        raise InadmissibleStateError(f"trace of S is negative ({trace!r})")
    return math.sqrt(max(trace, 0.0))


def sample_admissible(d: int, seed: int, scale: float = 1.0) -> MomentState:
    """
    Random admissible state (m, m m^T + G G^T), deterministic per seed.

    m and G have independent standard normal entries times `scale`.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    rng = np.random.default_rng(seed)
    m = rng.standard_normal(d) * scale
    G = rng.standard_normal((d, d)) * scale
    return MomentState(m, np.outer(m, m) + G @ G.T)


def is_admissible(u, v, d: int, tol: float = 1e-10) -> bool:
    """
    Cone membership in lifted coordinates.

    True iff U (from u) is PSD of rank <= 1, V (from v) is PSD and V - U is
    PSD, all within tol relative to the magnitude of (u, v).
    """
    U = symmetric(np.asarray(u, dtype=float), d)
    V = symmetric(np.asarray(v, dtype=float), d)
    slack = tol * _magnitude(U, V)
    eig_u = np.linalg.eigvalsh(U)
    if eig_u[0] < -slack:
        return False
    if d > 1 and eig_u[-2] > slack:
        return False
    return _psd_floor(V) >= -slack and _psd_floor(V - U) >= -slack


def to_lifted(state: MomentState) -> np.ndarray:
    """Stacked lifted vector [u; v] with u = upper(m m^T) and v = upper(S)."""
    return np.concatenate([upper(np.outer(state.m, state.m)), upper(state.S)])


def from_lifted(w, d: int, reference_mean: Optional[Sequence[float]] = None) -> MomentState:
    """
    Recover a MomentState from a lifted vector on the cone.

    u only determines m up to sign; the sign is aligned with reference_mean
    when given, otherwise the largest |component| of m is made positive.
    """
    w = np.asarray(w, dtype=float)
    k = d * (d + 1) // 2
    if w.shape[0] != 2 * k:
        raise ValueError(f"lifted vector must have length {2 * k}, got {w.shape[0]}")
    U = symmetric(w[:k], d)
    V = symmetric(w[k:], d)
    values, vectors = np.linalg.eigh(U)
    m = math.sqrt(max(values[-1], 0.0)) * vectors[:, -1]
    if reference_mean is not None:
        flip = float(np.dot(m, np.asarray(reference_mean, dtype=float))) < 0.0
    else:
        flip = m[int(np.argmax(np.abs(m)))] < 0.0
    if flip:
        m = -m
    return MomentState(m, V, psd_tol=config.PSD_TOLERANCES["propagate"])


def gronwall_envelope(coeffs, s: float, t: float, trace_s: float) -> Tuple[float, float]:
    """
    Bounds on trace S(t) given trace S(s):
    (1/d) e^{-2 Gamma (t-s)} trace_s <= trace S(t) <= d e^{2 Gamma (t-s)} trace_s.
    """
    gamma = lift_growth_bound(coeffs.d, coeffs.bound_m)
    growth = math.exp(2.0 * gamma * (t - s))
    return trace_s / (coeffs.d * growth), coeffs.d * growth * trace_s
