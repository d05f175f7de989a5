"""
Pitchfork module - Closed forms and attractor experiments for the scalar models

    dZ = (alpha Z + beta E Z) dt + Z dW                  (linear)
    dX = (alpha X + beta E X - X E X^2) dt + X dW        (pitchfork, beta = 1)

Attractor experiments run on the reduced moment system for x = E X, y = E X^2:

    x' = x (alpha + beta - y)
    y' = (2 alpha + 1) y + 2 beta x^2 - 2 y^2
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

import config
from errors import InadmissibleStateError, IntegrationDivergedError
from numerics import OdeProblem, integrate_adaptive_dense
from spectrum import ANALYTIC, SpectrumEstimate

logger = logging.getLogger(__name__)

# |2 beta - 1| below this switches to the linear-in-time closed form
RESONANCE_TOL = 1e-8


class Branch(str, Enum):
    TRIVIAL = "trivial"
    POSITIVE = "positive-branch"
    NEGATIVE = "negative-branch"
    MEAN_ZERO = "mean-zero"
    NONE = "none"


@dataclass(frozen=True)
class PitchforkParams:
    alpha: float
    beta: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError(f"alpha and beta must be finite, got {self.alpha}, {self.beta}")

    def require_unit_beta(self, what: str) -> None:
        if self.beta != 1.0:
            raise ValueError(f"{what} is only defined for beta = 1, got beta={self.beta}")


@dataclass(frozen=True)
class ReducedState:
    """(x, y) = (E X, E X^2); admissible means y >= x^2."""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InadmissibleStateError(f"reduced state ({self.x}, {self.y}) is not finite")
        if self.y < self.x * self.x - 1e-9 * max(1.0, abs(self.y)):
            raise InadmissibleStateError(f"reduced state violates x^2 <= y: x={self.x!r}, y={self.y!r}")

    @property
    def ms_norm(self) -> float:
        return math.sqrt(max(self.y, 0.0))

    def distance(self, other: Union["ReducedState", "SteadyState"]) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class SteadyState:
    """Equilibrium of the reduced system, valid when it is a genuine moment pair."""
    x: float
    y: float
    valid: bool
    branch: Branch

    @property
    def state(self) -> ReducedState:
        return ReducedState(self.x, self.y)


@dataclass(frozen=True)
class PullbackRun:
    t: float
    start_times: List[float]
    limits: List[ReducedState]
    converged_to: Branch
    distances: List[float] = field(default_factory=list)
    monotone: bool = True

    def __post_init__(self):
        if any(a <= b for a, b in zip(self.start_times, self.start_times[1:])):
            raise ValueError("start times must be strictly decreasing")

    @property
    def limit(self) -> ReducedState:
        return self.limits[-1]


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    classification: Branch
    limit: ReducedState

    @property
    def ms_norm(self) -> float:
        return self.limit.ms_norm


# ---------------------------------------------------------------------------
# Closed forms for the linear model
# ---------------------------------------------------------------------------

def _mean_growth_integral(beta: float, tau: float) -> float:
    """Integral of e^{(2 beta - 1) u} over [0, tau]."""
    rate = 2.0 * beta - 1.0
    if abs(rate) < RESONANCE_TOL:
        return tau
    return math.expm1(rate * tau) / rate


def analytic_ms_norm_sq(params: PitchforkParams, s: float, t: float,
                        norm_sq_Z: float, mean_Z: float) -> float:
    """
    Exact ||Phi(t, s) Z||_ms^2 for the linear model:

        e^{(2 alpha + 1) tau} (||Z||^2 + 2 beta (E Z)^2 int_0^tau e^{(2 beta - 1) u} du)

    Args:
        params: alpha, beta
        s, t: Start and end time, t >= s
        norm_sq_Z: E Z^2
        mean_Z: E Z, with mean_Z^2 <= norm_sq_Z

    Returns:
        E Z_t^2
    """
    if t < s:
        raise ValueError(f"analytic_ms_norm_sq needs t >= s, got s={s}, t={t}")
    if mean_Z * mean_Z > norm_sq_Z * (1.0 + 1e-12) + 1e-300:
        raise InadmissibleStateError(f"(E Z)^2 = {mean_Z * mean_Z!r} exceeds E Z^2 = {norm_sq_Z!r}")
    tau = t - s
    if tau == 0.0:
        return norm_sq_Z
    inner = norm_sq_Z + 2.0 * params.beta * mean_Z * mean_Z * _mean_growth_integral(params.beta, tau)
    return math.exp((2.0 * params.alpha + 1.0) * tau) * inner


def ms_norm_bounds(params: PitchforkParams, tau: float) -> Tuple[float, float]:
    """
    Infimum and supremum of ||Phi(s + tau, s) Z||_ms^2 over admissible Z with
    ||Z||_ms = 1. Both are attained: at E Z = 0 and at deterministic Z.
    """
    base = math.exp((2.0 * params.alpha + 1.0) * tau)
    deterministic = base * (1.0 + 2.0 * params.beta * _mean_growth_integral(params.beta, tau))
    return min(base, deterministic), max(base, deterministic)


def analytic_spectrum(params: PitchforkParams) -> SpectrumEstimate:
    """
    {alpha + 1/2} and, when beta > 1/2, {alpha + beta}, as point intervals.

    Stable dimensions follow the eigen-lift convention: lifted directions
    strictly below each interval, the mean direction (rate alpha + beta)
    included when it is filtered out.
    """
    a, b = params.alpha, params.beta
    m = max(abs(a), abs(b), 1.0)
    gamma = 2.0 * m + 2.0 * m * m
    if b > 0.5:
        points, stable_dims, multiplicities = [a + 0.5, a + b], [0, 1, 2], [1, 1]
    elif b == 0.5:
        points, stable_dims, multiplicities = [a + 0.5], [0, 2], [2]
    else:
        points, stable_dims, multiplicities = [a + 0.5], [1, 2], [1]
    return SpectrumEstimate(
        intervals=[(p, p) for p in points],
        method=ANALYTIC,
        stable_dims=stable_dims,
        gamma_bound=gamma,
        multiplicities=multiplicities,
        verdicts=[None] * len(points),
    )


@dataclass(frozen=True)
class DichotomyCheck:
    gamma: float
    epsilon: float
    K: float
    holds: bool


def dichotomy_split_check(params: PitchforkParams, gamma: float,
                          horizons: Sequence[float] = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0)) -> DichotomyCheck:
    """
    Check the exponential dichotomy at growth rate gamma given by the splitting
    into mean-zero states (stable) and deterministic states (unstable).

    With eps half the distance from gamma to the spectrum, the fitted K is the
    worst of ||Phi Z||^2 / e^{2 (gamma - eps) tau} on the stable side and
    e^{2 (gamma + eps) tau} / ||Phi Z||^2 on the unstable side; the check
    holds when gamma sits strictly inside the spectral gap and
    K <= 1 + 2 beta / (2 beta - 1).
    """
    a, b = params.alpha, params.beta
    low, high = a + 0.5, a + b
    if not (b > 0.5 and low < gamma < high):
        return DichotomyCheck(gamma=gamma, epsilon=0.0, K=math.inf, holds=False)
    eps = 0.5 * min(gamma - low, high - gamma)
    K = 1.0
    for tau in horizons:
        stable = analytic_ms_norm_sq(params, 0.0, tau, 1.0, 0.0)
        unstable = analytic_ms_norm_sq(params, 0.0, tau, 1.0, 1.0)
        K = max(K, stable / math.exp(2.0 * (gamma - eps) * tau),
                math.exp(2.0 * (gamma + eps) * tau) / unstable)
    bound = 1.0 + 2.0 * b / (2.0 * b - 1.0)
    return DichotomyCheck(gamma=gamma, epsilon=eps, K=K, holds=K <= bound)


# ---------------------------------------------------------------------------
# Reduced moment system
# ---------------------------------------------------------------------------

def reduced_rhs(params: PitchforkParams, state: ReducedState) -> Tuple[float, float]:
    x, y = state.x, state.y
    a, b = params.alpha, params.beta
    return x * (a + b - y), (2.0 * a + 1.0) * y + 2.0 * b * x * x - 2.0 * y * y


def steady_states(params: PitchforkParams) -> List[SteadyState]:
    """
    Equilibria (0, 0); (+-sqrt((alpha+1)/2), alpha+1), valid for alpha > -1;
    (0, alpha + 1/2), valid for alpha >= -1/2.
    """
    params.require_unit_beta("steady_states")
    a = params.alpha
    x_branch = math.sqrt(max((a + 1.0) / 2.0, 0.0))
    return [
        SteadyState(0.0, 0.0, True, Branch.TRIVIAL),
        SteadyState(x_branch, a + 1.0, a > -1.0, Branch.POSITIVE),
        SteadyState(-x_branch, a + 1.0, a > -1.0, Branch.NEGATIVE),
        SteadyState(0.0, a + 0.5, a >= -0.5, Branch.MEAN_ZERO),
    ]


def absorbing_data(params: PitchforkParams, R: float) -> Tuple[float, float]:
    """
    Radius sqrt(|alpha| + 2) of the absorbing ball and the pullback time
    ln(R^2 / (|alpha| + 2)) after which an R-bounded family is inside it.
    """
    params.require_unit_beta("absorbing_data")
    if not R > 0.0:
        raise ValueError(f"R must be positive, got {R}")
    level = abs(params.alpha) + 2.0
    absorb_time = math.log(R * R / level) if R * R > level else 0.0
    return math.sqrt(level), absorb_time


def comparison_solution(params: PitchforkParams, y0: float, tau: float) -> float:
    """
    Solution at time tau of y' = (2 alpha + 3) y - 2 y^2, y(0) = y0, which
    dominates E X^2 of the pitchfork model (x^2 <= y).
    """
    r = 2.0 * params.alpha + 3.0
    g = tau if r == 0.0 else math.expm1(r * tau) / r
    return y0 * math.exp(r * tau) / (1.0 + 2.0 * y0 * g)


def trivial_decay_bound(params: PitchforkParams, R: float, tau: float) -> float:
    """Bound e^{(2a+1) tau} R^2 + 2 e^{(a+1) tau} tau R^2 on E X^2 for alpha < -1."""
    a = params.alpha
    R2 = R * R
    return math.exp((2.0 * a + 1.0) * tau) * R2 + 2.0 * math.exp((a + 1.0) * tau) * tau * R2


def integrate_reduced(params: PitchforkParams, init: ReducedState, s: float, t: float,
                      t_eval: Optional[Sequence[float]] = None,
                      rel_tol: float = config.PULLBACK["rel_tol"],
                      abs_tol: float = config.PULLBACK["abs_tol"]) -> List[ReducedState]:
    """
    Integrate the reduced system from s to t.

    Returns:
        ReducedState at every time of t_eval (sorted), or just at t
    """
    def rhs(_time: float, z: np.ndarray) -> np.ndarray:
        x, y = z
        a, b = params.alpha, params.beta
        return np.array([x * (a + b - y), (2.0 * a + 1.0) * y + 2.0 * b * x * x - 2.0 * y * y])

    times = [t] if t_eval is None else list(t_eval)
    problem = OdeProblem(2, rhs, s, t, np.array([init.x, init.y]))
    states = integrate_adaptive_dense(problem, times, rel_tol, abs_tol)
    return [ReducedState(float(x), float(y)) for x, y in states]


def classify(params: PitchforkParams, state: ReducedState,
             classify_tol: float = config.PULLBACK["classify_tol"]) -> Branch:
    """Nearest valid steady state within classify_tol, or Branch.NONE."""
    best = None
    for steady in steady_states(params):
        if steady.valid and state.distance(steady) <= classify_tol:
            if best is None or state.distance(steady) < state.distance(best):
                best = steady
    return best.branch if best is not None else Branch.NONE


def pullback_run(params: PitchforkParams,
                 init_provider: Union[ReducedState, Callable[[float], ReducedState]],
                 t: float, start_times: Sequence[float],
                 classify_tol: float = config.PULLBACK["classify_tol"],
                 rel_tol: float = config.PULLBACK["rel_tol"],
                 abs_tol: float = config.PULLBACK["abs_tol"]) -> PullbackRun:
    """
    Integrate the reduced system from every start time s to the fixed end
    time t and classify the deepest limit.

    Args:
        params: alpha with beta = 1
        init_provider: A ReducedState (constant family) or a map s -> ReducedState
        t: End time
        start_times: Strictly decreasing, all <= t

    Returns:
        PullbackRun; `monotone` says whether the distance of successive
        limits to the classified steady state (or to the deepest limit) never
        increases
    """
    params.require_unit_beta("pullback_run")
    start_times = [float(s) for s in start_times]
    if not start_times:
        raise ValueError("pullback_run needs at least one start time")
    if any(s > t for s in start_times):
        raise ValueError(f"start times must not exceed t={t}")
    provider = init_provider if callable(init_provider) else (lambda _s: init_provider)

    limits = []
    for s in start_times:
        try:
            limits.append(integrate_reduced(params, provider(s), s, t, rel_tol=rel_tol, abs_tol=abs_tol)[-1])
        except IntegrationDivergedError as exc:
            raise IntegrationDivergedError(exc.time, f"reduced system diverged at t={exc.time!r} from s={s!r}") from exc

    branch = classify(params, limits[-1], classify_tol)
    target = limits[-1]
    for steady in steady_states(params):
        if steady.valid and steady.branch is branch:
            target = steady
    distances = [lim.distance(target) for lim in limits]
    monotone = all(b <= a + 1e-12 for a, b in zip(distances, distances[1:]))
    logger.info("[pullback] alpha=%g depth=%g -> %s (x=%.7f, y=%.7f)",
                params.alpha, t - start_times[-1], branch.value, limits[-1].x, limits[-1].y)
    return PullbackRun(t=t, start_times=start_times, limits=limits, converged_to=branch,
                       distances=distances, monotone=monotone)


def bifurcation_sweep(alpha_grid: Sequence[float], init: ReducedState,
                      pullback_depth: float = config.PULLBACK["depth"], t: float = 0.0,
                      classify_tol: float = config.PULLBACK["classify_tol"]) -> List[SweepRow]:
    """One pullback run of the given depth per alpha, rows in grid order."""
    if pullback_depth < 40.0:
        raise ValueError(f"pullback_depth must be >= 40, got {pullback_depth}")
    rows = []
    for alpha in alpha_grid:
        params = PitchforkParams(float(alpha), 1.0)
        run = pullback_run(params, init, t, [t - pullback_depth], classify_tol)
        rows.append(SweepRow(alpha=float(alpha), classification=run.converged_to, limit=run.limit))
    return rows
