"""
Spectrum module - Mean-square dichotomy spectrum estimates

Two estimators:
  - eigen-lift: eigenvalues of the lifted generator of an autonomous system,
    halved, kept only when their invariant subspace meets the admissible cone
  - finite-time: achieved mean-square growth rates of sampled initial states
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import IntegrationDivergedError, NumericalError
from moment_dynamics import (
    CoefficientSystem,
    LiftedOperator,
    MomentState,
    build_lift,
    index_map,
    is_admissible,
    lift_growth_bound,
    propagate_lifted,
    sample_admissible,
    symmetric,
    to_lifted,
)
from numerics import EigenCluster, EigenDecomposition, eigen_decompose

logger = logging.getLogger(__name__)

EIGEN_LIFT = "eigen-lift"
FINITE_TIME = "finite-time"
ANALYTIC = "analytic"

# projections below proj_tol * ABSENT_FACTOR count as exactly zero
ABSENT_FACTOR = 1e-4


class ConeVerdict(str, Enum):
    RETAINED = "retained"
    REJECTED = "rejected"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class SpectralCandidate:
    """One eigenvalue cluster of the lift and what the cone filter made of it."""
    point: float
    eigenvalues: Tuple[complex, ...]
    multiplicity: int
    verdict: ConeVerdict


@dataclass(frozen=True)
class SpectrumEstimate:
    """
    Disjoint sorted closed intervals plus the stable dimension on every
    resolvent gap (both unbounded gaps included).
    """
    intervals: List[Tuple[float, float]]
    method: str
    stable_dims: List[int]
    gamma_bound: Optional[float]
    multiplicities: List[int] = field(default_factory=list)
    verdicts: List[Optional[ConeVerdict]] = field(default_factory=list)
    details: List[SpectralCandidate] = field(default_factory=list)
    uncertainty: float = 0.0

    def __post_init__(self):
        for (lo, hi) in self.intervals:
            if not lo <= hi:
                raise ValueError(f"interval [{lo}, {hi}] is empty")
        for (_, hi), (lo, _) in zip(self.intervals, self.intervals[1:]):
            if not hi < lo:
                raise ValueError("intervals must be sorted and pairwise disjoint")
        if len(self.stable_dims) != len(self.intervals) + 1:
            raise ValueError("need one stable dimension per resolvent gap")
        if any(a > b for a, b in zip(self.stable_dims, self.stable_dims[1:])):
            raise ValueError(f"stable dimensions must be nondecreasing: {self.stable_dims}")

    @property
    def points(self) -> List[float]:
        return [0.5 * (lo + hi) for lo, hi in self.intervals]

    @property
    def inconclusive(self) -> bool:
        return any(v is ConeVerdict.INCONCLUSIVE for v in self.verdicts)


@dataclass(frozen=True)
class RateSample:
    """
    rate is the whole-horizon growth rate; tail_rate the settled rate over
    the second half of the horizon (None when not measured).
    """
    seed: int
    horizon: float
    rate: float
    kind: str = "random"
    tail_rate: Optional[float] = None

    @property
    def settled(self) -> float:
        return self.rate if self.tail_rate is None else self.tail_rate


def gamma_bound(coeffs) -> float:
    """Enclosure radius 2 d m + 2 d^2 m^2; (-inf, -Gamma) and (Gamma, inf) lie in the resolvent."""
    return lift_growth_bound(coeffs.d, coeffs.bound_m)


# ---------------------------------------------------------------------------
# Cone filter
# ---------------------------------------------------------------------------

def _split(w: np.ndarray, d: int) -> Tuple[np.ndarray, np.ndarray]:
    k = d * (d + 1) // 2
    return w[:k], w[k:]


def _cone_violation(w: np.ndarray, d: int) -> float:
    """How far a lifted vector is from the admissible cone (0 means inside)."""
    u, v = _split(w / max(np.linalg.norm(w), 1e-300), d)
    U = symmetric(u, d)
    V = symmetric(v, d)
    eig_u = np.linalg.eigvalsh(U)
    worst = max(0.0, -eig_u[0], -np.linalg.eigvalsh(V)[0], -np.linalg.eigvalsh(V - U)[0])
    if d > 1:
        worst = max(worst, eig_u[-2])
    return float(worst)


@lru_cache(maxsize=8)
def _cone_samples(d: int, count: int, seed: int) -> np.ndarray:
    """Seeded admissible lifted points, columns of a (d(d+1), count + 2d + 2) array."""
    eye = np.eye(d)
    ones = np.ones(d)
    columns = []
    for i in range(d):
        e = eye[i]
        columns.append(to_lifted(MomentState(np.zeros(d), np.outer(e, e))))
        columns.append(to_lifted(MomentState(e, np.outer(e, e))))
    columns.append(to_lifted(MomentState(np.zeros(d), eye)))
    columns.append(to_lifted(MomentState(ones, np.outer(ones, ones))))

    # mixes of mean-dominated, variance-dominated and rank-deficient states
    rng = np.random.default_rng(seed)
    weights = rng.choice(np.array([0.0, 1e-3, 1.0]), size=(count, 2))
    weights[(weights[:, 0] == 0.0) & (weights[:, 1] == 0.0), 1] = 1.0
    ranks = rng.integers(1, d + 1, size=count)
    m = rng.standard_normal((count, d)) * weights[:, :1]
    G = rng.standard_normal((count, d, d)) * weights[:, 1, None, None]
    G = np.where(np.arange(d)[None, None, :] < ranks[:, None, None], G, 0.0)
    U = np.einsum("ki,kj->kij", m, m)
    V = U + np.einsum("kir,kjr->kij", G, G)
    rows, cols = np.triu_indices(d)
    drawn = np.hstack([U[:, rows, cols], V[:, rows, cols]])

    X = np.hstack([np.array(columns).T, drawn.T])
    X.setflags(write=False)
    return X


def _leading_clusters(decomposition: EigenDecomposition, X: np.ndarray, proj_tol: float) -> set:
    """
    Clusters that lead the spectral expansion of some column of X.

    A projection above proj_tol (relative) is present, one below
    proj_tol * ABSENT_FACTOR is absent; a column whose first non-absent
    cluster (by real part, descending) is only in between is skipped.
    """
    clusters = decomposition.clusters
    W = np.hstack([c.basis for c in clusters])
    coords = np.linalg.solve(W, X)
    scale = np.linalg.norm(X, axis=0)
    rel = np.zeros((len(clusters), X.shape[1]))
    offset = 0
    for idx, c in enumerate(clusters):
        k = c.multiplicity
        part = c.basis @ coords[offset:offset + k, :]
        rel[idx] = np.linalg.norm(part, axis=0) / scale
        offset += k
    leading = set()
    order = sorted(range(len(clusters)), key=lambda i: -clusters[i].real_part)
    for col in range(X.shape[1]):
        for idx in order:
            if rel[idx, col] > proj_tol:
                leading.add(idx)
                break
            if rel[idx, col] > proj_tol * ABSENT_FACTOR:
                break
    return leading


def _search_subspace(basis: np.ndarray, d: int, seed: int, tries: int = 256) -> Tuple[bool, float]:
    """Look for an admissible point in span(basis). Returns (found, smallest violation)."""
    rng = np.random.default_rng(seed)
    k = basis.shape[1]
    candidates = [basis[:, j] for j in range(k)]
    candidates += [basis @ rng.standard_normal(k) for _ in range(tries if k > 1 else 0)]
    best = math.inf
    for w in candidates:
        for sign in (1.0, -1.0):
            x = sign * w / np.linalg.norm(w)
            u, v = _split(x, d)
            if is_admissible(u, v, d, tol=1e-9):
                return True, 0.0
            best = min(best, _cone_violation(x, d))
    return False, best


def cone_filter(op: LiftedOperator, cluster: EigenCluster, d: int,
                decomposition: Optional[EigenDecomposition] = None,
                proj_tol: float = config.SPECTRUM["proj_tol"],
                samples: int = config.SPECTRUM["cone_samples"],
                seed: int = config.SPECTRUM["cone_seed"]) -> ConeVerdict:
    """
    Decide whether an eigenvalue cluster of the lift is reached by genuine
    moment pairs.

    d = 1 is exact: a one-dimensional direction (u, v) is retained iff, up to
    sign, u >= 0 and v >= u. A two-dimensional cluster is all of R^2 and is
    retained.

    For d >= 2 the cluster is retained when it leads the spectral expansion
    of some sampled admissible point (its rate is then achieved by that
    point), or when an admissible point lies inside its subspace. It is
    rejected when every sampled point of the subspace is clearly outside the
    cone, and inconclusive otherwise.
    """
    if d == 1:
        if cluster.multiplicity >= 2:
            return ConeVerdict.RETAINED
        u, v = cluster.basis[:, 0]
        for sign in (1.0, -1.0):
            su, sv = sign * u, sign * v
            if su >= -1e-9 and sv >= su - 1e-9:
                return ConeVerdict.RETAINED
        return ConeVerdict.REJECTED

    if decomposition is None:
        decomposition = eigen_decompose(op.full())
    position = _cluster_position(decomposition, cluster)
    X = _cone_samples(d, samples, seed)
    if position in _leading_clusters(decomposition, X, proj_tol):
        return ConeVerdict.RETAINED

    found, violation = _search_subspace(cluster.basis, d, seed + 1)
    if found:
        return ConeVerdict.RETAINED
    if violation > 1e-6:
        return ConeVerdict.REJECTED
    return ConeVerdict.INCONCLUSIVE


def _cluster_position(decomposition: EigenDecomposition, cluster: EigenCluster) -> int:
    for idx, c in enumerate(decomposition.clusters):
        if c is cluster:
            return idx
    for idx, c in enumerate(decomposition.clusters):
        if c.multiplicity == cluster.multiplicity and np.allclose(c.eigenvalues, cluster.eigenvalues):
            return idx
    raise ValueError("cluster does not belong to the decomposition")


# ---------------------------------------------------------------------------
# Eigen-lift estimator
# ---------------------------------------------------------------------------

def autonomous_spectrum(coeffs: CoefficientSystem,
                        merge_tol: float = config.SPECTRUM["merge_tol"],
                        proj_tol: float = config.SPECTRUM["proj_tol"],
                        cone_samples: int = config.SPECTRUM["cone_samples"],
                        cone_seed: int = config.SPECTRUM["cone_seed"]) -> SpectrumEstimate:
    """
    Eigen-lift spectrum of an autonomous system.

    Every eigenvalue cluster of the lifted generator with real part lam gives
    the candidate point lam / 2. Retained and inconclusive candidates are
    merged into intervals when closer than merge_tol; inconclusive ones stay
    flagged in `verdicts` and `details`.

    stable_dims[g] counts every lifted direction, retained or rejected, whose
    point lies strictly below interval g; the last entry is the full lift
    dimension d(d+1).
    """
    if not coeffs.is_autonomous:
        raise ValueError(
            f"autonomous_spectrum needs a single-segment system, got {len(coeffs.schedule)} "
            "segments; use the finite-time method"
        )
    d = coeffs.d
    op = build_lift(coeffs, 0.0)
    decomposition = eigen_decompose(op.full())
    logger.info("[spectrum] lift dimension %d, %d clusters, residual %.2e",
                op.dimension, len(decomposition.clusters), decomposition.residual)

    candidates = []
    for cluster in decomposition.clusters:
        verdict = cone_filter(op, cluster, d, decomposition=decomposition, proj_tol=proj_tol,
                              samples=cone_samples, seed=cone_seed)
        candidates.append(SpectralCandidate(
            point=0.5 * cluster.real_part,
            eigenvalues=tuple(complex(z) for z in cluster.eigenvalues),
            multiplicity=cluster.multiplicity,
            verdict=verdict,
        ))
        if verdict is ConeVerdict.INCONCLUSIVE:
            logger.warning("[spectrum] cone filter inconclusive for point %.6g", 0.5 * cluster.real_part)

    kept = sorted((c for c in candidates if c.verdict is not ConeVerdict.REJECTED), key=lambda c: c.point)
    intervals: List[List[float]] = []
    multiplicities: List[int] = []
    verdicts: List[ConeVerdict] = []
    for c in kept:
        if intervals and c.point - intervals[-1][1] < merge_tol:
            intervals[-1][1] = max(intervals[-1][1], c.point)
            multiplicities[-1] += c.multiplicity
            if c.verdict is ConeVerdict.INCONCLUSIVE:
                verdicts[-1] = ConeVerdict.INCONCLUSIVE
        else:
            intervals.append([c.point, c.point])
            multiplicities.append(c.multiplicity)
            verdicts.append(c.verdict)

    stable_dims = [sum(c.multiplicity for c in candidates if c.point < lo) for lo, _ in intervals]
    stable_dims.append(op.dimension)

    return SpectrumEstimate(
        intervals=[(lo, hi) for lo, hi in intervals],
        method=EIGEN_LIFT,
        stable_dims=stable_dims,
        gamma_bound=gamma_bound(coeffs),
        multiplicities=multiplicities,
        verdicts=verdicts,
        details=candidates,
        uncertainty=0.0,
    )


# ---------------------------------------------------------------------------
# Finite-time estimator
# ---------------------------------------------------------------------------

def _with_mean_floor(state: MomentState, floor: float = 1.0) -> MomentState:
    """
    Same covariance, mean stretched to norm >= floor. Random samples with a
    near-zero mean would otherwise report rates between the mean and variance
    modes for many windows.
    """
    norm = float(np.linalg.norm(state.m))
    if norm >= floor or norm == 0.0:
        return state
    m = state.m * (floor / norm)
    return MomentState(m, np.outer(m, m) + state.covariance)


def _initial_samples(d: int, n_samples: int, seed: int) -> List[Tuple[int, str, MomentState]]:
    eye = np.eye(d)
    structured = []
    for i in range(d):
        e = eye[i]
        structured.append((seed, "pure-variance", MomentState(np.zeros(d), np.outer(e, e))))
        structured.append((seed, "deterministic", MomentState(e, np.outer(e, e))))
    drawn = [(seed + k, "random", _with_mean_floor(sample_admissible(d, seed + k))) for k in range(n_samples)]
    return structured + drawn


def finite_time_exponents(coeffs, T: float = config.FINITE_TIME["horizon"],
                          n_samples: int = config.FINITE_TIME["n_samples"],
                          seed: int = 0, s: Optional[float] = None,
                          renormalize_every: float = config.FINITE_TIME["renormalize_every"],
                          rel_tol: float = config.FINITE_TIME["rel_tol"],
                          abs_tol: float = config.FINITE_TIME["abs_tol"]) -> List[RateSample]:
    """
    Finite-time mean-square exponents (1 / 2T) ln(trace S(T) / trace S(0)).

    All samples are propagated together through the lifted ODE; every
    `renormalize_every` time units each column is rescaled to unit trace and
    the log growth accumulated, so long horizons never overflow.

    Each sample also gets a tail rate: half the least-squares slope of
    ln trace S over the second half of the horizon, after the sample has
    lined up with its dominant mode. It drops the ln(trace S(0)) offset and
    most of the subdominant drift that bias the whole-horizon rate.

    Args:
        coeffs: Coefficient system (schedules allowed)
        T: Horizon, >= 10
        n_samples: Random admissible samples, >= 16 (structured ones come on top)
        seed: Base seed; random sample k uses seed + k
        s: Start time (defaults to the schedule start, or 0 if that is -inf)

    Returns:
        RateSample list: structured samples first, then random ones in seed order
    """
    if T < 10.0:
        raise ValueError(f"horizon T must be >= 10, got {T}")
    if n_samples < 16:
        raise ValueError(f"n_samples must be >= 16, got {n_samples}")
    if s is None:
        first = coeffs.schedule[0].start if hasattr(coeffs, "schedule") else 0.0
        s = first if math.isfinite(first) else 0.0

    d = coeffs.d
    k = d * (d + 1) // 2
    diag = [k + idx for idx, (i, j) in enumerate(index_map(d)) if i == j]
    samples = _initial_samples(d, n_samples, seed)
    Y = np.array([to_lifted(state) for _, _, state in samples]).T

    traces = Y[diag, :].sum(axis=0)
    if np.any(traces <= 0.0):
        raise NumericalError("finite-time sample with zero second moment")
    Y = Y / traces
    log_growth = np.zeros(Y.shape[1])
    times = [s]
    history = [log_growth.copy()]

    t = s
    end = s + T
    n_windows = int(math.ceil(T / renormalize_every - 1e-12))
    for w in range(n_windows):
        t_next = end if w == n_windows - 1 else s + (w + 1) * renormalize_every
        try:
            Y = propagate_lifted(coeffs, t, t_next, Y, rel_tol, abs_tol)
        except IntegrationDivergedError as exc:
            raise IntegrationDivergedError(
                exc.time, f"finite-time propagation diverged at t={exc.time!r} (samples seeded from {seed})"
            ) from exc
        traces = Y[diag, :].sum(axis=0)
        if np.any(traces <= 0.0):
            raise NumericalError(f"mean-square norm collapsed to zero at t={t_next!r}")
        log_growth += np.log(traces)
        Y = Y / traces
        t = t_next
        times.append(t)
        history.append(log_growth.copy())

    rates = log_growth / (2.0 * T)
    tail = _tail_rates(np.array(times), np.array(history), s + 0.5 * T)
    logger.debug("[spectrum] finite-time rates in [%.4f, %.4f], tail rates in [%.4f, %.4f]",
                 rates.min(), rates.max(), tail.min(), tail.max())
    return [RateSample(seed=sd, horizon=T, rate=float(r), kind=kind, tail_rate=float(tr))
            for (sd, kind, _), r, tr in zip(samples, rates, tail)]


def _tail_rates(times: np.ndarray, history: np.ndarray, from_time: float) -> np.ndarray:
    """Half the least-squares slope of each history column over the window ends from `from_time` on."""
    first = max(int(np.searchsorted(times, from_time, side="right")) - 1, 0)
    first = min(first, len(times) - 2)
    tt = times[first:] - times[first:].mean()
    yy = history[first:] - history[first:].mean(axis=0)
    return (tt @ yy) / (2.0 * float(tt @ tt))


def finite_time_spectrum(samples: Sequence[RateSample],
                         cluster_width: float = config.FINITE_TIME["cluster_width"],
                         gamma: Optional[float] = None) -> SpectrumEstimate:
    """
    Cluster achieved rates (single linkage, distance cluster_width) into
    intervals [min, max]. A sample's settled tail rate is used when it was
    measured, the whole-horizon rate otherwise.

    stable_dims[g] counts samples strictly below interval g (below the gap
    midpoint under it); the last entry is the sample count. They are
    reported, not certified.
    """
    if not samples:
        raise ValueError("finite_time_spectrum needs at least one sample")
    horizons = {sample.horizon for sample in samples}
    if len(horizons) != 1:
        raise ValueError(f"samples must share one horizon, got {sorted(horizons)}")

    rates = sorted(sample.settled for sample in samples)
    groups: List[List[float]] = [[rates[0]]]
    for r in rates[1:]:
        if r - groups[-1][-1] <= cluster_width:
            groups[-1].append(r)
        else:
            groups.append([r])

    intervals = [(g[0], g[-1]) for g in groups]
    stable_dims = [0]
    for (_, hi), (lo, _) in zip(intervals, intervals[1:]):
        mid = 0.5 * (hi + lo)
        stable_dims.append(sum(1 for r in rates if r < mid))
    stable_dims.append(len(rates))

    return SpectrumEstimate(
        intervals=intervals,
        method=FINITE_TIME,
        stable_dims=stable_dims,
        gamma_bound=gamma,
        multiplicities=[len(g) for g in groups],
        verdicts=[None] * len(groups),
        uncertainty=cluster_width,
    )


def resolvent_check(coeffs, gamma: float, estimate: SpectrumEstimate) -> bool:
    """True iff gamma lies outside every interval inflated by the method's uncertainty."""
    if abs(gamma) > gamma_bound(coeffs):
        return True
    pad = estimate.uncertainty
    return not any(lo - pad <= gamma <= hi + pad for lo, hi in estimate.intervals)
