"""
Test moment states, the lifted generator and moment propagation
"""
import math
import sys

import numpy as np
from numpy.testing import assert_allclose

from errors import InadmissibleStateError
from moment_dynamics import (
    CoefficientSystem,
    FunctionCoefficients,
    MomentState,
    Segment,
    build_lift,
    from_lifted,
    gronwall_envelope,
    index_map,
    is_admissible,
    lift_growth_bound,
    moment_rhs,
    ms_norm,
    propagate_lifted,
    propagate_moments,
    sample_admissible,
    to_lifted,
    upper,
)

SECOND_MOMENT_AT_ONE = 2 * math.e ** 2 - math.e     # alpha=0, beta=1, m=S=1, t-s=1


def _banner(title):
    print("\n" + "="*70)
    print(f"  {title}")
    print("="*70)


def _random_system(seed, d, m=1.0):
    rng = np.random.default_rng(seed)
    A, B, C, D = (rng.uniform(-m, m, size=(d, d)) for _ in range(4))
    return CoefficientSystem.autonomous(A, B, C, D, bound_m=m)


def _componentwise_rhs(A, B, C, D, m, S):
    """Moment equations written out index by index."""
    d = len(m)
    dm = np.array([sum((A[i, k] + B[i, k]) * m[k] for k in range(d)) for i in range(d)])
    dS = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            total = 0.0
            for k in range(d):
                total += A[i, k] * S[k, j] + S[i, k] * A[j, k]
                total += B[i, k] * m[k] * m[j] + m[i] * m[k] * B[j, k]
                for l in range(d):
                    total += C[i, k] * S[k, l] * C[j, l]
                    total += C[i, k] * m[k] * m[l] * D[j, l]
                    total += D[i, k] * m[k] * m[l] * C[j, l]
                    total += D[i, k] * m[k] * m[l] * D[j, l]
            dS[i, j] = total
    return dm, dS


def test_index_map():
    _banner("INDEX MAP")
    assert index_map(1) == [(0, 0)]
    assert index_map(2) == [(0, 0), (0, 1), (1, 1)]
    assert len(index_map(3)) == 6
    print("✓ row-major upper-triangular pairs")


def test_moment_state_validation():
    _banner("MOMENT STATE VALIDATION")
    MomentState([1.0], [[1.0]])
    MomentState([0.0, 0.0], np.eye(2))
    bad = [
        ([1.0], [[0.5]]),                       # (E X)^2 > E X^2
        ([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]),  # S indefinite
        ([0.0, 0.0], [[1.0, 0.1], [0.0, 1.0]]),  # not symmetric
        ([0.0], [[float("nan")]]),
    ]
    for m, S in bad:
        try:
            MomentState(m, S)
        except InadmissibleStateError as e:
            print(f"  rejected: {e}")
        else:
            raise AssertionError(f"accepted inadmissible state m={m}, S={S}")


def test_scalar_lift():
    _banner("SCALAR LIFT")
    for alpha, beta in [(0.0, 1.0), (-1.0, 2.0), (0.3, -0.5)]:
        op = build_lift(CoefficientSystem.scalar(alpha, beta), 0.0)
        assert_allclose(op.L_uu, [[2 * (alpha + beta)]])
        assert_allclose(op.L_vu, [[2 * beta]])
        assert_allclose(op.L_vv, [[2 * alpha + 1]])
        assert op.dimension == 2
    zero = build_lift(CoefficientSystem.scalar(0.0, 0.0, c=0.0), 0.0)
    assert not np.any(zero.full())


def test_moment_rhs():
    _banner("MOMENT RIGHT-HAND SIDE")
    for alpha, beta in [(0.0, 1.0), (-0.75, 1.0), (1.0, -0.5)]:
        dm, dS = moment_rhs(CoefficientSystem.scalar(alpha, beta), 0.0, MomentState([1.0], [[1.0]]))
        assert abs(dm[0] - (alpha + beta)) < 1e-15
        assert abs(dS[0, 0] - (2 * alpha + 1 + 2 * beta)) < 1e-15

    coeffs = _random_system(5, 2)
    dm, dS = moment_rhs(coeffs, 0.0, MomentState([0.0, 0.0], np.zeros((2, 2))))
    assert not np.any(dm) and not np.any(dS)

    for seed in range(5):
        coeffs = _random_system(seed, 2)
        state = sample_admissible(2, seed + 100)
        dm, dS = moment_rhs(coeffs, 0.0, state)
        ref_dm, ref_dS = _componentwise_rhs(*coeffs.matrices_at(0.0), state.m, state.S)
        assert_allclose(dm, ref_dm, atol=1e-12)
        assert_allclose(dS, ref_dS, atol=1e-12)

        # the lift reproduces the same derivative on (u, v)
        op = build_lift(coeffs, 0.0)
        k = 3
        w = to_lifted(state)
        du, dv = op.apply(w[:k], w[k:])
        dU = np.outer(ref_dm, state.m) + np.outer(state.m, ref_dm)
        assert_allclose(du, upper(dU), atol=1e-12)
        assert_allclose(dv, upper(ref_dS), atol=1e-12)
    print("✓ lift and moment equations match the index-by-index oracle")


def test_propagate_closed_form():
    _banner("PROPAGATION VS CLOSED FORM")
    init = MomentState([1.0], [[1.0]])
    out = propagate_moments(CoefficientSystem.scalar(0.0, 1.0), 0.0, 1.0, init)
    print(f"  E X_1^2 = {out.S[0, 0]:.8f} (closed form {SECOND_MOMENT_AT_ONE:.8f})")
    assert abs(out.S[0, 0] - SECOND_MOMENT_AT_ONE) < 1e-6
    assert abs(out.m[0] - math.e) < 1e-8

    out = propagate_moments(CoefficientSystem.scalar(0.0, 0.0), 0.0, 1.0, MomentState([0.0], [[1.0]]))
    assert abs(out.S[0, 0] - math.e) < 1e-8

    same = propagate_moments(CoefficientSystem.scalar(0.0, 1.0), 2.0, 2.0, init)
    assert same is init
    assert abs(ms_norm(MomentState([1.0], [[12.05983]])) - 3.47273) < 1e-5


def test_cocycle_and_linearity():
    _banner("COCYCLE AND LINEARITY")
    for seed in range(4):
        coeffs = _random_system(seed, 2, m=0.5)
        init = sample_admissible(2, 1000 + seed)
        rng = np.random.default_rng(seed)
        s, r, t = sorted(rng.uniform(0.0, 2.0, size=3))
        direct = propagate_moments(coeffs, s, t, init)
        chained = propagate_moments(coeffs, r, t, propagate_moments(coeffs, s, r, init))
        scale = max(1.0, float(np.max(np.abs(direct.S))))
        assert_allclose(chained.S, direct.S, atol=1e-8 * scale)
        assert_allclose(chained.m, direct.m, atol=1e-8 * scale)

        w1 = to_lifted(sample_admissible(2, 2000 + seed))
        w2 = to_lifted(sample_admissible(2, 3000 + seed))
        combo = propagate_lifted(coeffs, 0.0, 1.0, 2.0 * w1 - 0.5 * w2)
        parts = propagate_lifted(coeffs, 0.0, 1.0, np.column_stack([w1, w2]))
        assert_allclose(combo, 2.0 * parts[:, 0] - 0.5 * parts[:, 1], rtol=1e-8, atol=1e-8)
    print("✓ propagate(s->t) == propagate(r->t) o propagate(s->r)")


def test_lifted_matches_moments():
    _banner("LIFTED VS DIRECT PROPAGATION")
    coeffs = _random_system(21, 2, m=0.5)
    init = sample_admissible(2, 77)
    direct = propagate_moments(coeffs, 0.0, 1.5, init)
    lifted = from_lifted(propagate_lifted(coeffs, 0.0, 1.5, to_lifted(init)), 2,
                         reference_mean=direct.m)
    assert_allclose(lifted.S, direct.S, rtol=1e-7, atol=1e-9)
    assert_allclose(lifted.m, direct.m, rtol=1e-6, atol=1e-8)


def test_schedule_switching():
    """
    A two-segment schedule equals two autonomous runs glued at the switch.
    """
    _banner("PIECEWISE-CONSTANT SCHEDULE")
    first = CoefficientSystem.scalar(-0.5, 0.2)
    second = CoefficientSystem.scalar(0.1, 0.8)
    a1, b1, c1, d1 = first.matrices_at(0.0)
    a2, b2, c2, d2 = second.matrices_at(0.0)
    sched = CoefficientSystem(d=1, schedule=(Segment(0.0, a1, b1, c1, d1), Segment(1.0, a2, b2, c2, d2)),
                              bound_m=1.0)
    assert not sched.is_autonomous
    assert sched.breakpoints(0.0, 2.0) == [1.0]
    init = MomentState([0.5], [[1.0]])
    glued = propagate_moments(second, 1.0, 2.0, propagate_moments(first, 0.0, 1.0, init))
    direct = propagate_moments(sched, 0.0, 2.0, init)
    assert_allclose(direct.S, glued.S, rtol=1e-9)
    try:
        sched.segment_at(-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("time before the schedule start was accepted")

    # a callback system reproduces the autonomous one
    fn = FunctionCoefficients(d=1, provider=lambda t: (a1, b1, c1, d1), bound_m=1.0)
    assert_allclose(propagate_moments(fn, 0.0, 1.0, init).S,
                    propagate_moments(first, 0.0, 1.0, init).S, rtol=1e-9)


def test_growth_bound_and_envelope():
    _banner("GROWTH BOUND AND GRONWALL ENVELOPE")
    assert lift_growth_bound(1, 1.0) == 4.0
    assert lift_growth_bound(2, 0.5) == 4.0
    assert lift_growth_bound(3, 0.0) == 0.0
    for seed in range(6):
        d = 1 + seed % 3
        coeffs = _random_system(seed, d, m=0.5)
        init = sample_admissible(d, seed)
        out = propagate_moments(coeffs, 0.0, 1.0, init)
        lo, hi = gronwall_envelope(coeffs, 0.0, 1.0, float(np.trace(init.S)))
        assert lo <= np.trace(out.S) <= hi
    print("✓ trace S(t) inside the envelope")


def test_sampling_and_cone():
    _banner("ADMISSIBLE SAMPLING AND CONE")
    zero = sample_admissible(2, 1, scale=0.0)
    assert not np.any(zero.m) and not np.any(zero.S)
    for seed in range(10):
        state = sample_admissible(1, seed)
        assert state.S[0, 0] - state.m[0] ** 2 >= 0.0
    state = sample_admissible(3, 42)
    assert np.linalg.eigvalsh(state.covariance)[0] >= -1e-10
    assert_allclose(sample_admissible(3, 42).S, state.S)
    # entries of m are standard normal times scale
    assert_allclose(sample_admissible(2, 7, scale=0.5).m, 0.5 * np.random.default_rng(7).standard_normal(2))

    assert is_admissible([1.0], [1.0], 1)
    assert not is_admissible([1.0], [0.0], 1)
    assert is_admissible([0.0], [1.0], 1)
    w = to_lifted(state)
    assert is_admissible(w[:6], w[6:], 3)
    assert not is_admissible(-w[:6], w[6:], 3)


def test_cone_preservation():
    """Moments of a real process stay admissible over long horizons."""
    _banner("CONE PRESERVATION OVER t-s = 20")
    for seed in range(6):
        d = 2 + seed % 2
        coeffs = _random_system(40 + seed, d, m=0.5)
        final = propagate_moments(coeffs, 0.0, 20.0, sample_admissible(d, 500 + seed))
        floor = -1e-8 * max(1.0, float(np.trace(final.S)))
        lowest = np.linalg.eigvalsh(final.S)[0], np.linalg.eigvalsh(final.covariance)[0]
        print(f"  d={d} seed {40 + seed}: trace S {np.trace(final.S):.3e}, smallest eigenvalues {lowest}")
        assert lowest[0] >= floor and lowest[1] >= floor
    print("✓ S and S - m m^T stay positive semidefinite")


def run_all_tests():
    tests = [
        ("Index map", test_index_map),
        ("Moment state validation", test_moment_state_validation),
        ("Scalar lift", test_scalar_lift),
        ("Moment rhs", test_moment_rhs),
        ("Closed-form propagation", test_propagate_closed_form),
        ("Cocycle and linearity", test_cocycle_and_linearity),
        ("Lifted vs direct", test_lifted_matches_moments),
        ("Schedule switching", test_schedule_switching),
        ("Growth bound", test_growth_bound_and_envelope),
        ("Sampling and cone", test_sampling_and_cone),
        ("Cone preservation", test_cone_preservation),
    ]
    results = []
    for name, test in tests:
        try:
            test()
            results.append((name, True))
        except Exception as e:
            print(f"✗ {name} FAILED: {e}")
            results.append((name, False))

    print("\n" + "="*70)
    for name, passed in results:
        print(f"{name:<30} {'✓ PASSED' if passed else '✗ FAILED'}")
    print("="*70 + "\n")
    return 0 if all(p for _, p in results) else 1


if __name__ == "__main__":
    sys.exit(run_all_tests())
