"""
Test the scalar closed forms, the reduced moment system and the pullback /
bifurcation experiments
"""
import math
import sys

import numpy as np

from errors import InadmissibleStateError
from moment_dynamics import CoefficientSystem, MomentState, propagate_moments
from pitchfork import (
    Branch,
    PitchforkParams,
    ReducedState,
    absorbing_data,
    analytic_ms_norm_sq,
    analytic_spectrum,
    bifurcation_sweep,
    classify,
    comparison_solution,
    dichotomy_split_check,
    integrate_reduced,
    ms_norm_bounds,
    pullback_run,
    reduced_rhs,
    steady_states,
    trivial_decay_bound,
)
from spectrum import autonomous_spectrum

POSITIVE_STEADY = (math.sqrt(0.125), 0.25)     # alpha = -0.75


def _banner(title):
    print("\n" + "="*70)
    print(f"  {title}")
    print("="*70)


def test_analytic_norm():
    _banner("CLOSED-FORM PROPAGATOR NORM")
    p = PitchforkParams(0.0, 1.0)
    assert abs(analytic_ms_norm_sq(p, 0.0, 1.0, 1.0, 1.0) - (2 * math.e ** 2 - math.e)) < 1e-9
    assert abs(analytic_ms_norm_sq(PitchforkParams(-0.3, 2.0), 1.0, 3.0, 2.0, 0.0) - math.exp(0.4 * 2) * 2.0) < 1e-12
    assert analytic_ms_norm_sq(p, 2.0, 2.0, 5.0, 1.0) == 5.0

    # beta = 1/2: the mean contribution grows linearly in time
    half = PitchforkParams(0.0, 0.5)
    assert abs(analytic_ms_norm_sq(half, 0.0, 2.0, 1.0, 1.0) - math.exp(2.0) * 3.0) < 1e-9

    for bad in ((p, 1.0, 0.0, 1.0, 0.0),):
        try:
            analytic_ms_norm_sq(*bad)
        except ValueError:
            pass
        else:
            raise AssertionError("t < s was accepted")
    try:
        analytic_ms_norm_sq(p, 0.0, 1.0, 1.0, 2.0)
    except InadmissibleStateError:
        pass
    else:
        raise AssertionError("(E Z)^2 > E Z^2 was accepted")


def test_analytic_matches_moment_ode():
    """
    The closed form agrees with integrating the linear moment equations.
    """
    _banner("CLOSED FORM VS MOMENT ODE")
    grid = [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0]
    worst = 0.0
    for alpha in grid:
        for beta in grid:
            p = PitchforkParams(alpha, beta)
            coeffs = CoefficientSystem.scalar(alpha, beta)
            for tau in (0.5, 1.0, 2.0):
                for mean in (0.0, 1.0):
                    exact = analytic_ms_norm_sq(p, 0.0, tau, 1.0, mean)
                    out = propagate_moments(coeffs, 0.0, tau, MomentState([mean], [[1.0]]))
                    rel = abs(out.S[0, 0] - exact) / exact
                    worst = max(worst, rel)
                    assert rel <= 1e-6, (alpha, beta, tau, mean, rel)
                    if beta >= 0.0:
                        assert exact >= math.exp((2 * alpha + 1) * tau) * (1.0 - 1e-12)
    print(f"  worst relative difference {worst:.2e}")


def test_analytic_spectrum():
    _banner("CLOSED-FORM SPECTRUM")
    cases = [
        ((0.0, 1.0), [0.5, 1.0], [0, 1, 2]),
        ((0.0, 0.5), [0.5], [0, 2]),
        ((-1.0, -3.0), [-0.5], [1, 2]),
        ((-1.0, 2.0), [-0.5, 1.0], [0, 1, 2]),
    ]
    for (alpha, beta), expected, dims in cases:
        est = analytic_spectrum(PitchforkParams(alpha, beta))
        assert est.points == expected, (alpha, beta, est.points)
        assert est.stable_dims == dims, (alpha, beta, est.stable_dims)

        # same counts as the eigen-lift of the scalar system
        lifted = autonomous_spectrum(CoefficientSystem.scalar(alpha, beta))
        assert lifted.stable_dims == dims
    assert analytic_spectrum(PitchforkParams(-1.0, -3.0)).gamma_bound == 24.0


def test_norm_bounds_and_dichotomy():
    _banner("NORM BOUNDS AND DICHOTOMY SPLIT")
    p = PitchforkParams(0.0, 1.0)
    lo, hi = ms_norm_bounds(p, 1.0)
    assert abs(lo - math.e) < 1e-12
    assert abs(hi - (2 * math.e ** 2 - math.e)) < 1e-9
    lo, hi = ms_norm_bounds(PitchforkParams(0.0, -1.0), 1.0)
    assert abs(hi - math.e) < 1e-15 and lo < hi

    check = dichotomy_split_check(p, 0.75)
    print(f"  gamma=0.75: eps={check.epsilon}, K={check.K:.4f}, holds={check.holds}")
    assert check.holds and check.epsilon == 0.125
    assert not dichotomy_split_check(p, 0.5).holds
    assert not dichotomy_split_check(PitchforkParams(0.0, 0.5), 0.5).holds


def test_reduced_rhs_and_steady_states():
    _banner("REDUCED SYSTEM AND STEADY STATES")
    assert reduced_rhs(PitchforkParams(-0.3), ReducedState(0.0, 0.0)) == (0.0, 0.0)
    p = PitchforkParams(-0.75)
    for x in (POSITIVE_STEADY[0], -POSITIVE_STEADY[0]):
        dx, dy = reduced_rhs(p, ReducedState(x, POSITIVE_STEADY[1]))
        assert abs(dx) < 1e-7 and abs(dy) < 1e-7
    dx, dy = reduced_rhs(PitchforkParams(0.0), ReducedState(0.0, 0.5))
    assert dx == 0.0 and dy == 0.0

    valid = {a: [s.branch for s in steady_states(PitchforkParams(a)) if s.valid] for a in (-2.0, -0.75, 0.0)}
    assert valid[-2.0] == [Branch.TRIVIAL]
    assert valid[-0.75] == [Branch.TRIVIAL, Branch.POSITIVE, Branch.NEGATIVE]
    assert valid[0.0] == [Branch.TRIVIAL, Branch.POSITIVE, Branch.NEGATIVE, Branch.MEAN_ZERO]

    states = steady_states(PitchforkParams(-0.75))
    assert abs(states[1].x - 0.3535534) < 1e-7 and states[1].y == 0.25
    assert states[3].y == -0.25 and not states[3].valid
    for alpha in (-2.0, -0.75, -0.25, 0.0, 1.5):
        params = PitchforkParams(alpha)
        for steady in steady_states(params):
            if steady.valid:
                dx, dy = reduced_rhs(params, steady.state)
                assert max(abs(dx), abs(dy)) <= 1e-12

    try:
        steady_states(PitchforkParams(0.0, 0.5))
    except ValueError:
        pass
    else:
        raise AssertionError("beta != 1 was accepted")
    try:
        ReducedState(1.0, 0.5)
    except InadmissibleStateError:
        pass
    else:
        raise AssertionError("x^2 > y was accepted")


def test_absorbing_family():
    _banner("ABSORBING FAMILY")
    radius, T = absorbing_data(PitchforkParams(-0.75), 10.0)
    print(f"  alpha=-0.75, R=10: radius {radius:.6f}, absorb time {T:.6f}")
    assert abs(radius - 1.658312) < 1e-6 and abs(T - 3.593569) < 1e-6
    radius, T = absorbing_data(PitchforkParams(0.0), 2.0)
    assert abs(radius - math.sqrt(2)) < 1e-12 and abs(T - math.log(2)) < 1e-12
    assert absorbing_data(PitchforkParams(2.0), 2.0)[1] == 0.0
    assert absorbing_data(PitchforkParams(-0.75), 1.0)[1] == 0.0

    # every family member of ms-norm 10 stays in the ball after the absorb time
    for alpha in (-2.0, -0.75, 0.5):
        params = PitchforkParams(alpha)
        level = abs(alpha) + 2.0
        _, T = absorbing_data(params, 10.0)
        rng = np.random.default_rng(7)
        times = list(np.linspace(T, T + 10.0, 21))
        for x in rng.uniform(-10.0, 10.0, size=50):
            path = integrate_reduced(params, ReducedState(float(x), 100.0), 0.0, T + 10.0, t_eval=times)
            assert max(state.y for state in path) <= level + 1e-6


def test_comparison_and_decay_bounds():
    _banner("COMPARISON AND DECAY BOUNDS")
    for alpha in (-2.0, -1.5, -0.75, 0.0):
        params = PitchforkParams(alpha)
        taus = [0.5, 1.0, 2.0, 5.0, 10.0]
        path = integrate_reduced(params, ReducedState(1.0, 1.0), 0.0, 10.0, t_eval=taus)
        for tau, state in zip(taus, path):
            assert state.y <= comparison_solution(params, 1.0, tau) + 1e-9
            if alpha < -1.0:
                assert state.y <= trivial_decay_bound(params, 1.0, tau) + 1e-9

    bound = trivial_decay_bound(PitchforkParams(-1.5), 1.0, 40.0)
    print(f"  alpha=-1.5, depth 40: ms-norm bound {math.sqrt(bound):.2e}")
    assert math.sqrt(bound) < 4.1e-4
    assert comparison_solution(PitchforkParams(-1.5), 0.0, 3.0) == 0.0


def test_sign_invariance():
    _banner("SIGN OF THE MEAN IS PRESERVED")
    params = PitchforkParams(-0.75)
    times = list(np.linspace(0.0, 20.0, 41))
    assert all(s.x > 0 for s in integrate_reduced(params, ReducedState(0.1, 0.5), 0.0, 20.0, t_eval=times))
    assert all(s.x < 0 for s in integrate_reduced(params, ReducedState(-0.1, 0.5), 0.0, 20.0, t_eval=times))
    assert all(s.x == 0.0 for s in integrate_reduced(params, ReducedState(0.0, 0.5), 0.0, 20.0, t_eval=times))

    # the nontrivial steady moments are invariant
    for sign in (1.0, -1.0):
        start = ReducedState(sign * POSITIVE_STEADY[0], POSITIVE_STEADY[1])
        path = integrate_reduced(params, start, 0.0, 20.0, t_eval=times)
        assert max(s.distance(start) for s in path) < 1e-12


def test_classify():
    _banner("CLASSIFICATION")
    params = PitchforkParams(-0.75)
    assert classify(params, ReducedState(0.0, 0.0)) is Branch.TRIVIAL
    assert classify(params, ReducedState(POSITIVE_STEADY[0] + 5e-5, 0.25)) is Branch.POSITIVE
    assert classify(params, ReducedState(-POSITIVE_STEADY[0], 0.25)) is Branch.NEGATIVE
    assert classify(params, ReducedState(0.1, 0.1)) is Branch.NONE
    # (0, -0.25) is not a moment pair, so nothing classifies as mean-zero here
    assert classify(params, ReducedState(0.0, 1e-5)) is Branch.TRIVIAL
    assert classify(PitchforkParams(0.0), ReducedState(0.0, 0.5)) is Branch.MEAN_ZERO


def test_pullback_trivial():
    _banner("PULLBACK: TRIVIAL ATTRACTOR")
    run = pullback_run(PitchforkParams(-1.5), ReducedState(1.0, 1.0), 0.0, [-10.0, -20.0, -40.0])
    print(f"  limit ({run.limit.x:.2e}, {run.limit.y:.2e}), distances {run.distances}")
    assert run.converged_to is Branch.TRIVIAL
    assert math.hypot(run.limit.x, run.limit.y) < 5e-4
    assert run.monotone
    assert len(run.limits) == 3


def test_pullback_nontrivial():
    _banner("PULLBACK: NONTRIVIAL ATTRACTOR")
    params = PitchforkParams(-0.75)
    run = pullback_run(params, ReducedState(0.1, 0.5), 0.0, [-10.0, -20.0, -40.0, -60.0])
    print(f"  limit ({run.limit.x:.7f}, {run.limit.y:.7f})")
    assert run.converged_to is Branch.POSITIVE
    assert abs(run.limit.x - 0.3535534) < 1e-6 and abs(run.limit.y - 0.25) < 1e-6
    assert run.distances[-1] <= run.distances[0]

    # a family depending on the start time
    run = pullback_run(params, lambda s: ReducedState(-1.0, 1.0 + 0.01 * abs(s)), 0.0, [-20.0, -40.0])
    assert run.converged_to is Branch.NEGATIVE

    for bad in ([], [1.0], [-10.0, -5.0]):
        try:
            pullback_run(params, ReducedState(0.1, 0.5), 0.0, bad)
        except ValueError:
            pass
        else:
            raise AssertionError(f"start times {bad} were accepted")
    try:
        pullback_run(PitchforkParams(-0.75, 0.5), ReducedState(0.1, 0.5), 0.0, [-40.0])
    except ValueError:
        pass
    else:
        raise AssertionError("beta != 1 was accepted")


def test_bifurcation_sweep():
    _banner("BIFURCATION SWEEP")
    grid = [-2.0, -1.5, -0.75, -0.6, 0.0]
    rows = bifurcation_sweep(grid, ReducedState(1.0, 1.0), pullback_depth=40.0)
    for row in rows:
        print(f"  alpha={row.alpha:+.2f}: {row.classification.value:<16} ms-norm {row.ms_norm:.6f}")
    assert [r.alpha for r in rows] == grid
    assert [r.classification for r in rows] == [Branch.TRIVIAL, Branch.TRIVIAL, Branch.POSITIVE,
                                                Branch.POSITIVE, Branch.POSITIVE]
    assert abs(rows[2].limit.x - 0.3535534) < 1e-6 and abs(rows[2].limit.y - 0.25) < 1e-6
    assert abs(rows[2].ms_norm - 0.5) < 1e-6

    negative = bifurcation_sweep([-0.75], ReducedState(-1.0, 1.0))
    assert negative[0].classification is Branch.NEGATIVE
    try:
        bifurcation_sweep([-0.75], ReducedState(1.0, 1.0), pullback_depth=20.0)
    except ValueError:
        pass
    else:
        raise AssertionError("depth < 40 was accepted")


def run_all_tests():
    tests = [
        ("Analytic norm", test_analytic_norm),
        ("Analytic vs moment ODE", test_analytic_matches_moment_ode),
        ("Analytic spectrum", test_analytic_spectrum),
        ("Norm bounds / dichotomy", test_norm_bounds_and_dichotomy),
        ("Steady states", test_reduced_rhs_and_steady_states),
        ("Absorbing family", test_absorbing_family),
        ("Comparison / decay", test_comparison_and_decay_bounds),
        ("Sign invariance", test_sign_invariance),
        ("Classify", test_classify),
        ("Pullback trivial", test_pullback_trivial),
        ("Pullback nontrivial", test_pullback_nontrivial),
        ("Bifurcation sweep", test_bifurcation_sweep),
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
