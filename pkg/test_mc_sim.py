"""
Test the interacting-particle simulation against the moment equations
"""
import math
import sys

import numpy as np
from numpy.testing import assert_allclose

from errors import SimulationDivergedError
from mc_sim import (
    Ensemble,
    ModelSpec,
    compare_with_moments,
    estimate_moments,
    init_particles,
    ode_reference,
    particle_normals,
    simulate_ensemble,
    z_scores,
)
from moment_dynamics import CoefficientSystem, MomentState, ms_norm


def _banner(title):
    print("\n" + "="*70)
    print(f"  {title}")
    print("="*70)


def test_counter_based_streams():
    _banner("COUNTER-BASED NORMAL STREAMS")
    a = particle_normals(7, 3, 0, 4096)
    b = particle_normals(7, 3, 0, 4096)
    assert a.shape == (4096,)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, particle_normals(7, 3, 1, 4096))
    assert not np.array_equal(a, particle_normals(7, 4, 0, 4096))
    assert not np.array_equal(a, particle_normals(8, 3, 0, 4096))
    # a prefix of a chunk is the same draw regardless of the requested size
    assert np.array_equal(particle_normals(7, 3, 0, 100), a[:100])
    try:
        particle_normals(-1, 0, 0, 10)
    except ValueError:
        pass
    else:
        raise AssertionError("negative seed was accepted")


def test_estimate_moments():
    _banner("ENSEMBLE MOMENTS")
    c = np.array([0.5, -2.0])
    est = estimate_moments(Ensemble(2, np.tile(c, (50, 1)), 0.0, 0))
    assert_allclose(est.state.m, c)
    assert_allclose(est.state.S, np.outer(c, c))
    assert not np.any(est.se_mean) and not np.any(est.se_secmom)

    est = estimate_moments(Ensemble(1, np.array([[1.0], [-1.0]]), 0.0, 0))
    assert est.state.m[0] == 0.0 and est.state.S[0, 0] == 1.0

    N = 100_000
    X = init_particles(MomentState([0.0], [[1.0]]), N, seed=2024)
    est = estimate_moments(Ensemble(1, X, 0.0, 2024))
    print(f"  N={N}: mean {est.state.m[0]:+.5f}, second moment {est.state.S[0, 0]:.5f}")
    assert abs(est.state.m[0]) < 3 / math.sqrt(N)
    assert abs(est.state.S[0, 0] - 1.0) < 3 * math.sqrt(2) / math.sqrt(N)


def test_init_particles_degenerate():
    """
    Zero covariance falls back to the eigen factor: every particle sits at m.
    """
    _banner("DEGENERATE INITIAL LAW")
    X = init_particles(MomentState([1.0, 2.0], [[1.0, 2.0], [2.0, 4.0]]), 300, seed=1)
    assert_allclose(X, np.tile([1.0, 2.0], (300, 1)), atol=1e-12)


def test_zero_model_is_constant():
    _banner("ZERO MODEL")
    zero = CoefficientSystem.autonomous(*(np.zeros((2, 2)) for _ in range(4)))
    init = MomentState([0.3, -0.1], [[1.0, 0.2], [0.2, 0.5]])
    traj = simulate_ensemble(ModelSpec.linear(zero), init, 0.0, 0.1, dt=1e-2, N=500, seed=9, record_every=3)
    assert np.array_equal(traj.final.particles, init_particles(init, 500, 9))
    assert_allclose(traj.times, [0.0, 0.03, 0.06, 0.09, 0.1], atol=1e-12)
    first, last = traj.records[0].estimate, traj.records[-1].estimate
    assert np.array_equal(first.state.S, last.state.S)


def test_reproducible():
    _banner("BITWISE REPRODUCIBILITY")
    model = ModelSpec.pitchfork(-0.75)
    init = MomentState([1.0], [[1.0]])
    a = simulate_ensemble(model, init, 0.0, 0.2, dt=1e-3, N=5000, seed=42, record_every=50)
    b = simulate_ensemble(model, init, 0.0, 0.2, dt=1e-3, N=5000, seed=42, record_every=50)
    c = simulate_ensemble(model, init, 0.0, 0.2, dt=1e-3, N=5000, seed=43, record_every=50)
    assert np.array_equal(a.final.particles, b.final.particles)
    assert [r.estimate.state.S[0, 0] for r in a.records] == [r.estimate.state.S[0, 0] for r in b.records]
    assert not np.array_equal(a.final.particles, c.final.particles)


def test_linear_against_closed_form():
    """
    beta = 0: E X_t^2 = e^{(2 alpha + 1) t} E X_0^2.
    """
    _banner("LINEAR MODEL VS e")
    coeffs = CoefficientSystem.scalar(0.0, 0.0)
    traj = simulate_ensemble(ModelSpec.linear(coeffs), MomentState([0.0], [[1.0]]), 0.0, 1.0,
                             dt=1e-3, N=100_000, seed=5)
    est = traj.records[-1].estimate
    z = (est.state.S[0, 0] - math.e) / est.se_secmom[0, 0]
    print(f"  E X_1^2 = {est.state.S[0, 0]:.5f} +- {est.se_secmom[0, 0]:.5f}, z = {z:+.2f}")
    assert abs(z) <= 4.0


def test_compare_linear():
    _banner("PARTICLES VS MOMENT ODE (LINEAR)")
    model = ModelSpec.linear(CoefficientSystem.scalar(0.0, 1.0))
    report = compare_with_moments(model, MomentState([1.0], [[1.0]]), 0.0, 1.0, dt=1e-3, N=100_000, seed=11)
    print(f"  ODE second moment {report.ode.S[0, 0]:.5f}, max |z| {report.max_abs_z:.2f}")
    assert abs(report.ode.S[0, 0] - (2 * math.e ** 2 - math.e)) < 1e-6
    assert report.max_abs_z <= 4.0


def test_compare_pitchfork():
    _banner("PARTICLES VS REDUCED ODE (PITCHFORK)")
    init = MomentState([1.0], [[1.0]])
    report = compare_with_moments(ModelSpec.pitchfork(-1.5), init, 0.0, 5.0, dt=1e-3, N=20_000, seed=3,
                                  record_every=1000)
    mc, ode = report.mc.state, report.ode
    print(f"  E X_5^2: particles {mc.S[0, 0]:.5f}, ODE {ode.S[0, 0]:.5f}; max |z| {report.max_abs_z:.2f}")
    assert mc.S[0, 0] < 0.05 and ode.S[0, 0] < 0.05
    assert ms_norm(ode) < 0.1
    assert report.max_abs_z <= 4.0

    # started on the positive steady state the ensemble stays there
    steady = MomentState([0.354], [[0.25]])
    report = compare_with_moments(ModelSpec.pitchfork(-0.75), steady, 0.0, 5.0, dt=1e-3, N=20_000, seed=8,
                                  record_every=1000)
    assert abs(report.ode.m[0] - 0.354) < 1e-3 and abs(report.ode.S[0, 0] - 0.25) < 1e-3
    assert report.max_abs_z <= 4.0


def test_z_scores():
    _banner("Z-SCORES")
    z = z_scores([1.0, 2.0, 3.0], [1.0, 1.0, 2.0], [0.0, 0.5, 0.0])
    assert z[0] == 0.0 and z[1] == 2.0 and z[2] == math.inf
    zero = ModelSpec.linear(CoefficientSystem.scalar(0.0, 0.0, c=0.0))
    report = compare_with_moments(zero, MomentState([1.0], [[1.0]]), 0.0, 0.05, dt=1e-2, N=200, seed=0)
    assert report.max_abs_z == 0.0
    assert_allclose(ode_reference(zero, MomentState([1.0], [[2.0]]), 0.0, 1.0).S, [[2.0]])


def test_divergence_and_arguments():
    _banner("DIVERGENCE AND ARGUMENT CHECKS")
    explosive = ModelSpec.linear(CoefficientSystem.scalar(50.0, 0.0, c=0.0))
    try:
        simulate_ensemble(explosive, MomentState([1.0], [[1.0]]), 0.0, 1.0, dt=1e-2, N=100)
    except SimulationDivergedError as e:
        print(f"  {e}")
        assert 0 < e.step_index <= 100
    else:
        raise AssertionError("blow-up went unnoticed")

    model = ModelSpec.pitchfork(-1.0)
    init = MomentState([1.0], [[1.0]])
    for kwargs in ({"dt": 0.05}, {"N": 10}):
        try:
            simulate_ensemble(model, init, 0.0, 1.0, **kwargs)
        except ValueError:
            pass
        else:
            raise AssertionError(f"{kwargs} was accepted")


def run_all_tests():
    tests = [
        ("Counter-based streams", test_counter_based_streams),
        ("Ensemble moments", test_estimate_moments),
        ("Degenerate initial law", test_init_particles_degenerate),
        ("Zero model", test_zero_model_is_constant),
        ("Reproducibility", test_reproducible),
        ("Linear vs closed form", test_linear_against_closed_form),
        ("Compare linear", test_compare_linear),
        ("Compare pitchfork", test_compare_pitchfork),
        ("Z-scores", test_z_scores),
        ("Divergence", test_divergence_and_arguments),
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
