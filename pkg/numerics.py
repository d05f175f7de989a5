"""
Numerics module - Dense linear algebra, ODE integration and exact summation
shared by every other module.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

import config
from errors import EigensolverFailedError, IntegrationDivergedError, StiffnessError

logger = logging.getLogger(__name__)

Rhs = Callable[[float, np.ndarray], np.ndarray]


def as_matrix(values, name: str = "matrix", rows: Optional[int] = None,
              cols: Optional[int] = None) -> np.ndarray:
    """
    Validate and freeze a dense real matrix.

    Args:
        values: Nested sequence or array of real numbers (row-major)
        name: Name used in error messages (e.g. "B")
        rows: Required row count, if any
        cols: Required column count, if any

    Returns:
        Read-only float64 array of shape (rows, cols)
    """
    M = np.array(values, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {M.shape}")
    if (rows is not None and M.shape[0] != rows) or (cols is not None and M.shape[1] != cols):
        raise ValueError(
            f"dimension mismatch: {name} is {M.shape[0]}x{M.shape[1]}, "
            f"expected {rows}x{cols}"
        )
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    M.setflags(write=False)
    return M


# ---------------------------------------------------------------------------
# ODE integration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OdeProblem:
    """Initial value problem y' = rhs(t, y), y(t0) = y0, solved up to t1."""
    dimension: int
    rhs: Rhs
    t0: float
    t1: float
    y0: np.ndarray

    def __post_init__(self):
        y0 = np.array(self.y0, dtype=float).reshape(-1)
        if y0.shape[0] != self.dimension:
            raise ValueError(f"y0 has length {y0.shape[0]}, expected {self.dimension}")
        if not self.t1 >= self.t0:
            raise ValueError(f"t1={self.t1} precedes t0={self.t0}")
        object.__setattr__(self, "y0", y0)

    def evaluate(self, t: float, y: np.ndarray) -> np.ndarray:
        dy = np.asarray(self.rhs(t, y), dtype=float).reshape(-1)
        if dy.shape[0] != self.dimension:
            raise ValueError(f"rhs returned length {dy.shape[0]}, expected {self.dimension}")
        return dy


def _check_finite(y: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(y)):
        raise IntegrationDivergedError(t)


def _rk4_step(problem: OdeProblem, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = problem.evaluate(t, y)
    k2 = problem.evaluate(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = problem.evaluate(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = problem.evaluate(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_fixed(problem: OdeProblem, step: float) -> np.ndarray:
    """
    Classical RK4 on a uniform grid from t0 to t1.

    The last step is shortened so the grid lands exactly on t1.

    Args:
        problem: The initial value problem
        step: Uniform step size (must not exceed t1 - t0 unless t1 == t0)

    Returns:
        State at t1
    """
    y = problem.y0.copy()
    span = problem.t1 - problem.t0
    if span == 0.0:
        return y
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step}")
    if step > span:
        raise ValueError(f"step {step} exceeds the integration span {span}")

    n_full = int(math.floor(span / step))
    t = problem.t0
    for k in range(n_full):
        y = _rk4_step(problem, t, y, step)
        t = problem.t0 + (k + 1) * step
        _check_finite(y, t)

    rest = problem.t1 - t
    if rest > 1e-12 * step:
        y = _rk4_step(problem, t, y, rest)
        _check_finite(y, problem.t1)
    return y


# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

# PI step control
_SAFETY = 0.9
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_FAC_MIN = 0.2
_FAC_MAX = 10.0


def _initial_step(problem: OdeProblem, y0: np.ndarray, f0: np.ndarray,
                  rel_tol: float, abs_tol: float, span: float) -> float:
    scale = abs_tol + rel_tol * np.abs(y0)
    d0 = math.sqrt(float(np.mean((y0 / scale) ** 2)))
    d1 = math.sqrt(float(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = problem.evaluate(problem.t0 + h0, y0 + h0 * f0)
    d2 = math.sqrt(float(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, span)


def _reached(stop: float, t: float) -> bool:
    return stop <= t + 1e-12 * max(1.0, abs(stop))


def _dopri_states(problem: OdeProblem, rel_tol: float, abs_tol: float,
                  stops: Sequence[float]) -> List[np.ndarray]:
    if not (0.0 < rel_tol < 1.0 and 0.0 < abs_tol < 1.0):
        raise ValueError(f"tolerances must lie in (0, 1), got rel_tol={rel_tol}, abs_tol={abs_tol}")

    t = problem.t0
    y = problem.y0.copy()
    span = problem.t1 - problem.t0
    out: List[np.ndarray] = []
    pending = [s for s in stops]
    while pending and _reached(pending[0], t):
        out.append(y.copy())
        pending.pop(0)
    if not pending:
        return out

    h_min = 1e-14 * span
    k1 = problem.evaluate(t, y)
    h = _initial_step(problem, y, k1, rel_tol, abs_tol, span)
    err_old = 1e-4
    last_rejected = False

    while pending:
        target = pending[0]
        if h < h_min:
            raise StiffnessError(t, h)
        h_full = h
        landing = t + h >= target - 1e-12 * max(1.0, abs(target))
        if landing:
            h = target - t

        k = [k1]
        for stage in range(1, 7):
            incr = sum(a * kj for a, kj in zip(_DP_A[stage], k) if a != 0.0)
            k.append(problem.evaluate(t + _DP_C[stage] * h, y + h * incr))
        y_new = y + h * sum(b * kj for b, kj in zip(_DP_A[6], k[:6]) if b != 0.0)
        if not np.all(np.isfinite(y_new)):
            raise IntegrationDivergedError(t + h)

        err_vec = h * sum(e * kj for e, kj in zip(_DP_E, k) if e != 0.0)
        scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale))

        fac11 = err ** _EXPO if err > 0.0 else 0.0
        if err <= 1.0:
            fac = fac11 / err_old ** _BETA
            fac = max(1.0 / _FAC_MAX, min(1.0 / _FAC_MIN, fac / _SAFETY))
            h_next = h / fac
            if last_rejected:
                h_next = min(h_next, h)
            err_old = max(err, 1e-4)
            last_rejected = False

            t = target if landing else t + h
            y = y_new
            k1 = k[6]
            if landing:
                # repeated or nearly equal stops are served from the same state
                while pending and _reached(pending[0], t):
                    out.append(y.copy())
                    pending.pop(0)
                if pending:
                    h_next = max(h_next, h_full)
            h = h_next
        else:
            h = h / min(1.0 / _FAC_MIN, fac11 / _SAFETY)
            last_rejected = True
    return out


def integrate_adaptive(problem: OdeProblem, rel_tol: float = config.TOLERANCES["rel_tol"],
                       abs_tol: float = config.TOLERANCES["abs_tol"]) -> np.ndarray:
    """
    Dormand-Prince 4(5) integration with PI step-size control.

    Local error per accepted step satisfies |e_i| <= abs_tol + rel_tol * |y_i|
    componentwise. Deterministic for identical inputs.

    Args:
        problem: The initial value problem
        rel_tol: Relative tolerance in (0, 1)
        abs_tol: Absolute tolerance in (0, 1)

    Returns:
        State at t1
    """
    return _dopri_states(problem, rel_tol, abs_tol, [problem.t1])[-1]


def integrate_adaptive_dense(problem: OdeProblem, t_eval: Sequence[float],
                             rel_tol: float = config.TOLERANCES["rel_tol"],
                             abs_tol: float = config.TOLERANCES["abs_tol"]) -> np.ndarray:
    """
    Adaptive integration that lands exactly on each requested output time.

    Returns:
        Array of shape (len(t_eval), dimension), rows ordered as sorted t_eval
    """
    stops = sorted(float(s) for s in t_eval)
    if stops and (stops[0] < problem.t0 or stops[-1] > problem.t1):
        raise ValueError("t_eval must lie inside [t0, t1]")
    return np.array(_dopri_states(problem, rel_tol, abs_tol, stops))


# ---------------------------------------------------------------------------
# Eigenvalues
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenCluster:
    """Eigenvalues merged within cluster_tol (conjugates included) and a real
    orthonormal basis of their invariant subspace."""
    eigenvalues: np.ndarray
    basis: np.ndarray
    residual: float

    @property
    def multiplicity(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def real_part(self) -> float:
        return float(np.mean(self.eigenvalues.real))


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    clusters: List[EigenCluster]
    residual: float


def hessenberg(M) -> np.ndarray:
    """
    Householder reduction to upper Hessenberg form (orthogonally similar to M).
    """
    H = np.array(M, dtype=float)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1:, k].copy()
        norm_x = float(np.linalg.norm(x))
        if norm_x == 0.0:
            continue
        alpha = -norm_x if x[0] >= 0.0 else norm_x
        v = x
        v[0] -= alpha
        norm_v = float(np.linalg.norm(v))
        if norm_v == 0.0:
            continue
        v /= norm_v
        H[k + 1:, :] -= 2.0 * np.outer(v, v @ H[k + 1:, :])
        H[:, k + 1:] -= 2.0 * np.outer(H[:, k + 1:] @ v, v)
        H[k + 2:, k] = 0.0
    return H


_QR_MAX_ITS = 60


def _hessenberg_qr_eigenvalues(H: np.ndarray) -> np.ndarray:
    """Francis double-shift QR on an upper Hessenberg matrix (eigenvalues only)."""
    a = H.tolist()
    n = len(a)
    wr = [0.0] * n
    wi = [0.0] * n
    anorm = sum(abs(a[i][j]) for i in range(n) for j in range(max(i - 1, 0), n))
    nn = n - 1
    t = 0.0
    x = y = z = w = p = q = r = s = 0.0
    while nn >= 0:
        its = 0
        while True:
            # look for a single small subdiagonal element
            l = nn
            while l >= 1:
                s = abs(a[l - 1][l - 1]) + abs(a[l][l])
                if s == 0.0:
                    s = anorm
                if abs(a[l][l - 1]) + s == s:
                    a[l][l - 1] = 0.0
                    break
                l -= 1
            x = a[nn][nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1][nn - 1]
            w = a[nn][nn - 1] * a[nn - 1][nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + (z if p >= 0.0 else -z)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn] = z
                    wi[nn - 1] = -z
                nn -= 2
                break

            if its == _QR_MAX_ITS:
                raise EigensolverFailedError(
                    f"QR iteration did not converge after {_QR_MAX_ITS} iterations (n={n})"
                )
            if its > 0 and its % 10 == 0:
                # exceptional shift
                t += x
                for i in range(nn + 1):
                    a[i][i] -= x
                s = abs(a[nn][nn - 1]) + abs(a[nn - 1][nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1

            # form the shift and look for two consecutive small subdiagonals
            m = nn - 2
            while m >= l:
                z = a[m][m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1]
                q = a[m + 1][m + 1] - z - r - s
                r = a[m + 2][m + 1]
                s = abs(p) + abs(q) + abs(r)
                if s != 0.0:
                    p /= s
                    q /= s
                    r /= s
                if m == l:
                    break
                u = abs(a[m][m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1][m - 1]) + abs(z) + abs(a[m + 1][m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i][i - 2] = 0.0
                if i != m + 2:
                    a[i][i - 3] = 0.0

            # double QR sweep on rows l..nn, columns m..nn
            for k in range(m, nn):
                if k != m:
                    p = a[k][k - 1]
                    q = a[k + 1][k - 1]
                    r = a[k + 2][k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.sqrt(p * p + q * q + r * r)
                if p < 0.0:
                    s = -s
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k][k - 1] = -a[k][k - 1]
                else:
                    a[k][k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k][j] + q * a[k + 1][j]
                    if k != nn - 1:
                        p += r * a[k + 2][j]
                        a[k + 2][j] -= p * z
                    a[k + 1][j] -= p * y
                    a[k][j] -= p * x
                for i in range(l, min(nn, k + 3) + 1):
                    p = x * a[i][k] + y * a[i][k + 1]
                    if k != nn - 1:
                        p += z * a[i][k + 2]
                        a[i][k + 2] -= p * r
                    a[i][k + 1] -= p * q
                    a[i][k] -= p
    values = np.array(wr) + 1j * np.array(wi)
    order = sorted(range(n), key=lambda i: (values[i].real, values[i].imag))
    return values[order]


def _group_eigenvalues(values: np.ndarray, cluster_tol: float) -> List[List[int]]:
    """Single-linkage groups; an eigenvalue is linked to its conjugate partner too."""
    n = values.shape[0]
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            gap = min(abs(values[i] - values[j]), abs(values[i] - np.conj(values[j])))
            if gap <= cluster_tol:
                parent[find(j)] = find(i)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: (values[g[0]].real, values[g[0]].imag))


def _merge_defective(values: np.ndarray, groups: List[List[int]], noise: float, cap: float) -> List[List[int]]:
    """
    Join runs of neighbouring groups whose spread around their centroid is
    within min(noise^(1/k), cap), k the size of the run: the scatter a
    defective eigenvalue of multiplicity k picks up from backward error noise.
    Conjugates are folded onto the upper half plane first.
    """
    folded = np.column_stack([values.real, np.abs(values.imag)])
    merged: List[List[int]] = []
    i = 0
    while i < len(groups):
        last = i
        for j in range(len(groups) - 1, i, -1):
            idx = [k for g in groups[i:j + 1] for k in g]
            pts = folded[idx]
            spread = float(np.max(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
            if spread <= min(noise ** (1.0 / len(idx)), cap):
                last = j
                break
        merged.append([k for g in groups[i:last + 1] for k in g])
        i = last + 1
    return merged


def _cluster_basis(M: np.ndarray, eigenvalues: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    scale = 1.0 + float(np.max(np.abs(M)))
    P = np.eye(n, dtype=complex)
    for lam in eigenvalues:
        P = P @ ((M - lam * np.eye(n)) / scale)
    _, _, vh = np.linalg.svd(P.real)
    k = eigenvalues.shape[0]
    basis = vh[n - k:, :].T
    return np.ascontiguousarray(basis)


def eigen_decompose(M, cluster_tol: Optional[float] = None) -> EigenDecomposition:
    """
    Eigenvalues and clustered real invariant subspaces of a square matrix.

    Eigenvalues come from Householder Hessenberg reduction followed by
    Francis double-shift QR. Eigenvalues within cluster_tol of each other
    (or of each other's conjugate) share one cluster and one real basis.
    Neighbouring clusters whose spread matches the rounding scatter of a
    defective eigenvalue are joined as well, so a Jordan block reports one
    cluster with its exact mean.

    Args:
        M: Square matrix, dimension <= 64
        cluster_tol: Merge distance; default 1e-7 * (1 + spectral radius)

    Returns:
        EigenDecomposition with clusters ordered by real part
    """
    A = np.array(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"eigen_decompose needs a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n > config.SPECTRUM["max_dimension"]:
        raise ValueError(f"matrix dimension {n} exceeds the cap {config.SPECTRUM['max_dimension']}")

    values = _hessenberg_qr_eigenvalues(hessenberg(A))
    radius = float(np.max(np.abs(values))) if n else 0.0
    if cluster_tol is None:
        cluster_tol = config.SPECTRUM["cluster_rel_tol"] * (1.0 + radius)

    groups = _group_eigenvalues(values, cluster_tol)
    noise = config.SPECTRUM["defect_slack"] * n * np.finfo(float).eps * max(float(np.linalg.norm(A)), 1.0)
    groups = _merge_defective(values, groups, noise, config.SPECTRUM["defect_cap"] * (1.0 + radius))

    clusters = []
    for group in groups:
        lams = values[group]
        V = _cluster_basis(A, lams)
        Lam = V.T @ A @ V
        residual = float(np.linalg.norm(A @ V - V @ Lam, 2))
        clusters.append(EigenCluster(eigenvalues=lams, basis=V, residual=residual))
    worst = max((c.residual for c in clusters), default=0.0)
    logger.debug("[eigen] n=%d clusters=%d residual=%.2e", n, len(clusters), worst)
    return EigenDecomposition(eigenvalues=values, clusters=clusters, residual=worst)


# ---------------------------------------------------------------------------
# Summation
# ---------------------------------------------------------------------------

def stable_sum(values) -> float:
    """
    Exactly rounded sum (Shewchuk partials, i.e. error-free transformations).

    The result is the correctly rounded exact sum, so it does not depend on
    ordering or on how callers chunk their data.
    """
    flat = np.asarray(values, dtype=float).ravel()
    if flat.size == 0:
        return 0.0
    return math.fsum(flat.tolist())


def stable_sum_chunks(chunks: Sequence) -> float:
    """
    Combine chunked data in the given chunk order.

    Bitwise identical to stable_sum over the concatenation.
    """
    partials: List[float] = []
    for chunk in chunks:
        partials.extend(np.asarray(chunk, dtype=float).ravel().tolist())
    return math.fsum(partials)
