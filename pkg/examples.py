"""
Example usage demonstrations for msrds
"""
import math

from mc_sim import ModelSpec, compare_with_moments
from moment_dynamics import CoefficientSystem, MomentState, propagate_moments
from pitchfork import (
    PitchforkParams,
    ReducedState,
    absorbing_data,
    analytic_ms_norm_sq,
    bifurcation_sweep,
    pullback_run,
)
from spectrum import autonomous_spectrum, finite_time_exponents, finite_time_spectrum, resolvent_check


def example_scalar_spectrum():
    """Eigen-lift spectrum of dZ = (alpha Z + beta E Z) dt + Z dW"""
    print("\n=== EXAMPLE 1: Scalar Spectrum ===\n")

    for beta in (0.0, 0.5, 1.0):
        est = autonomous_spectrum(CoefficientSystem.scalar(0.0, beta))
        print(f"beta={beta}: intervals {est.intervals}")
        for cand in est.details:
            print(f"   point {cand.point:+.4f}  multiplicity {cand.multiplicity}  {cand.verdict.value}")


def example_finite_time():
    """Finite-time growth rates cluster onto the same spectrum"""
    print("\n=== EXAMPLE 2: Finite-Time Estimate ===\n")

    coeffs = CoefficientSystem.scalar(0.0, 1.0)
    samples = finite_time_exponents(coeffs, T=50.0, n_samples=32)
    est = finite_time_spectrum(samples)
    print(f"Clusters: {[(round(lo, 4), round(hi, 4)) for lo, hi in est.intervals]}")
    print(f"Gap at 0.75 in the resolvent set: {resolvent_check(coeffs, 0.75, est)}")


def example_moments():
    """Moment ODE against the closed form"""
    print("\n=== EXAMPLE 3: Moment Propagation ===\n")

    out = propagate_moments(CoefficientSystem.scalar(0.0, 1.0), 0.0, 1.0, MomentState([1.0], [[1.0]]))
    exact = analytic_ms_norm_sq(PitchforkParams(0.0, 1.0), 0.0, 1.0, 1.0, 1.0)
    print(f"E X_1^2 from the ODE:    {out.S[0, 0]:.8f}")
    print(f"E X_1^2 closed form:     {exact:.8f}  (2e^2 - e = {2 * math.e ** 2 - math.e:.8f})")


def example_particles():
    """Interacting particles against the moment equations"""
    print("\n=== EXAMPLE 4: Particle Cross-Check ===\n")

    model = ModelSpec.pitchfork(-0.75)
    report = compare_with_moments(model, MomentState([1.0], [[1.0]]), 0.0, 2.0, N=20_000, seed=1)
    print(f"Particles: E X = {report.mc.state.m[0]:.5f}, E X^2 = {report.mc.state.S[0, 0]:.5f}")
    print(f"Moments:   E X = {report.ode.m[0]:.5f}, E X^2 = {report.ode.S[0, 0]:.5f}")
    print(f"Largest |z|: {report.max_abs_z:.2f}")


def example_attractors():
    """Pullback limits and the bifurcation in alpha"""
    print("\n=== EXAMPLE 5: Pullback Attractors ===\n")

    params = PitchforkParams(-0.75)
    radius, T = absorbing_data(params, 10.0)
    print(f"Absorbing ball radius {radius:.6f}, reached after {T:.6f} time units from ms-norm 10")

    run = pullback_run(params, ReducedState(0.1, 0.5), 0.0, [-10.0, -20.0, -40.0, -60.0])
    for s, lim in zip(run.start_times, run.limits):
        print(f"   s={s:>6.1f}: ({lim.x:.7f}, {lim.y:.7f})")
    print(f"Converged to: {run.converged_to.value}")

    print("\nSweep:")
    for row in bifurcation_sweep([-1.5, -1.25, -0.9, -0.75, -0.6], ReducedState(1.0, 1.0)):
        print(f"   alpha={row.alpha:+.2f}  {row.classification.value:<16} ms-norm {row.ms_norm:.6f}")


if __name__ == "__main__":
    # Run all examples
    example_scalar_spectrum()

    # Uncomment to run other examples:
    # example_finite_time()
    # example_moments()
    # example_particles()
    # example_attractors()
