"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary of all
criteria is printed at the end of the session.
"""

import time

import numpy as np
import pytest
from scipy.optimize import brentq

from wavefront.dynamics import (MODIFIED, STANDARD, IntegratorConfig, PhasePoint, integrate,
                                phase_integral)
from wavefront.field import MOMENTUM, parse_field
from wavefront.front import (GridAxis, Hypersurface, deviation_functions, first_integral,
                             init_front, normal_covector, perturb_nu, pfaff_residual,
                             propagate_front, solve_nu, variation_vectors)
from wavefront.legendre import ExplicitHamiltonian, hamiltonian_value
from wavefront.riemann import (ExpressionForce, GeneratedForce, SphericalHamiltonian,
                               additional_normality_residual, force_general, force_spherical,
                               sample_points, weak_normality_residual)
from wavefront.scenario import builtin_names, load_scenario

FRONT_SCENARIOS = {
    "a": "eikonal_c1_plane",
    "b": "anisotropic_circle",
    "c": "quartic_circle",
    "d": "spherical_circle",
}
RESIDUAL_SCENARIOS = ["euclid_W_quadratic", "conformal_W_quartic", "euclid_W_quartic"]
EDGE_FACTOR = 10.0


def run_front(sc, front=None):
    front = front if front is not None else init_front(sc.hamiltonian, sc.surface, sc.nu_seed, sc.level)
    return front, propagate_front(sc.hamiltonian, front, sc.surface, sc.t_end, sc.integrator,
                                  sc.stencil_order)


@pytest.fixture(scope="module")
def front_runs():
    out = {}
    start = time.perf_counter()
    for key, name in FRONT_SCENARIOS.items():
        sc = load_scenario(name)
        front, hist = run_front(sc)
        out[key] = (sc, front, hist)
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def perturbed_run(front_runs):
    sc, front, _ = front_runs[0]["c"]
    pfront, sel = perturb_nu(sc.hamiltonian, front, sc.surface, 1.1, 0.25, "step")
    _, hist = run_front(sc, pfront)
    return sc, sel, hist


@pytest.fixture(scope="module")
def eikonal_two():
    sc = load_scenario("eikonal_c2_plane")
    front, hist = run_front(sc)
    # standard and modified rays from a spread of front nodes
    rays = []
    for idx in [(0, 0), (10, 50), (32, 32), (63, 7)]:
        q0 = PhasePoint(front.x[idx], front.p[idx])
        rays.append((integrate(sc.hamiltonian, q0, STANDARD, 4.0 * sc.t_end, sc.integrator),
                     integrate(sc.hamiltonian, q0, MODIFIED, sc.t_end, sc.integrator)))
    return sc, front, hist, rays


def test_criterion_1_normal_shift_certification(front_runs, criterion):
    runs, elapsed = front_runs
    worst = {}
    for key, (sc, _, hist) in runs.items():
        assert min(sc.surface.shape) >= 64
        assert sc.integrator.abs_tol == sc.integrator.rel_tol == 1e-10
        assert hist.t[-1] == 1.0
        worst[key] = hist.trace.max_abs_phi(edge_factor=EDGE_FACTOR)
    ok = all(v <= 1e-6 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"({k}) max|phi| {v:.2e}" for k, v in worst.items())
    criterion(1, ok, f"{detail}; runtime {elapsed:.1f} s (tol 1e-6, < 60 s)")
    assert ok


def test_criterion_2_omega_phidot_conservation(perturbed_run, criterion):
    sc, sel, hist = perturbed_run
    assert sc.name == "quartic_circle"
    # one quadrant of the circle
    assert sel.sum() == sc.surface.shape[0] // 4
    drift, scale = hist.trace.omega_phidot_drift(sel)
    grown = hist.trace.max_abs_phi()
    ok = drift <= 1e-6 and grown > 1e-3 and scale > 0
    criterion(2, ok, f"relative drift of Omega*phidot {drift:.2e} (tol 1e-6), "
                     f"max|phi| {grown:.2e} (> 1e-3)")
    assert ok


def test_criterion_3_analytic_eikonal_front(eikonal_two, criterion):
    sc, front, hist, rays = eikonal_two
    z_err = float(np.max(np.abs(hist.final.x[..., 2] - 2.0 * hist.final.t)))
    xy_err = float(np.max(np.abs(hist.final.x[..., :2] - sc.surface.parameters())))
    omega = float(front.omega.flat[0])
    phase_err = 0.0
    reparam_err = 0.0
    for std, mod in rays:
        phase_err = max(phase_err, float(np.max(np.abs(phase_integral(std) - std.t * omega))))
        phase = phase_integral(std)
        for s in np.linspace(0.05, 1.0, 20):
            assert phase[-1] > s
            t_s = brentq(lambda t: std.dense_phase(t) - s, 0.0, std.t[-1], xtol=1e-15)
            xs, _ = std.dense(t_s)
            xm, _ = mod.dense(s)
            reparam_err = max(reparam_err, float(np.max(np.abs(xs - xm))))
    ok = hist.final.t == 1.0 and max(z_err, xy_err) <= 1e-6 and phase_err <= 1e-6 and reparam_err <= 1e-6
    criterion(3, ok, f"front error {max(z_err, xy_err):.2e}, |phase - t*Omega| {phase_err:.2e}, "
                     f"reparametrization {reparam_err:.2e} (tol 1e-6)")
    assert ok


def test_criterion_4_energy_conservation(front_runs, perturbed_run, eikonal_two, criterion):
    drifts = {k: float(np.max(h.H_drift)) for k, (_, _, h) in front_runs[0].items()}
    drifts["perturbed c"] = float(np.max(perturbed_run[2].H_drift))
    _, _, hist, rays = eikonal_two
    drifts["eikonal c=2 front"] = float(np.max(hist.H_drift))
    drifts["eikonal c=2 rays"] = max(max(s.max_H_drift, m.max_H_drift) for s, m in rays)
    worst = max(drifts, key=drifts.get)
    ok = all(v <= 1e-8 for v in drifts.values())
    criterion(4, ok, f"max |H(t)-H(0)| {drifts[worst]:.2e} ({worst}) over {len(drifts)} runs (tol 1e-8)")
    assert ok


def _lagrangian_scenarios():
    return [n for n in builtin_names() if load_scenario(n).lagrangian is not None]


def test_criterion_5_legendre_round_trip(criterion):
    names = _lagrangian_scenarios()
    assert len(names) >= 2
    rt_worst = cons_worst = 0.0
    for name in names:
        sc = load_scenario(name)
        m = sc.lagrangian
        rng = np.random.default_rng(2024)
        x = rng.uniform(-2, 2, (1000, sc.n))
        d = rng.normal(size=(1000, sc.n))
        v = d / np.linalg.norm(d, axis=1, keepdims=True) * rng.uniform(0.5, 2, (1000, 1))
        p = m.momentum(x, v)
        rt_worst = max(rt_worst, float(np.max(np.abs(m.velocity(x, p) - v))))
        h = np.sum(p * v, axis=1) - m.L.value(x, v)
        cons_worst = max(cons_worst, float(np.max(np.abs(h - hamiltonian_value(m, x, p)))))
    ok = rt_worst <= 1e-10 and cons_worst <= 1e-9
    criterion(5, ok, f"{len(names)} Lagrangians x 1000 samples: round trip {rt_worst:.2e} (tol 1e-10), "
                     f"|h - H o lambda| {cons_worst:.2e} (tol 1e-9)")
    assert ok


def test_criterion_6_normality_residuals(criterion):
    worst = 0.0
    negative = np.inf
    equality = 0.0
    for name in RESIDUAL_SCENARIOS:
        sc = load_scenario(name)
        rm = sc.riemann
        assert sc.n == 3 and rm.force is None
        x, u = sample_points(rm.metric, 100, np.random.default_rng(rm.seed))
        F = GeneratedForce(rm.spherical, rm.metric)
        for r in weak_normality_residual(F, rm.metric, x, u) + additional_normality_residual(F, rm.metric, x, u):
            worst = max(worst, float(np.max(np.abs(r))))
        neg = ExpressionForce.from_sources(["1", "0", "0"])
        n1, _ = weak_normality_residual(neg, rm.metric, x, u)
        negative = min(negative, float(np.max(np.linalg.norm(n1, axis=-1))))
        h0 = SphericalHamiltonian.from_sources(rm.spherical.W.expr.source, 3, "0")
        diff = force_spherical(rm.spherical, rm.metric, x, u) - force_general(h0, rm.metric, x, u)
        equality = max(equality, float(np.max(np.abs(diff))))
    ok = worst <= 1e-5 and negative > 1e-2 and equality <= 1e-15
    criterion(6, ok, f"generated-force residual {worst:.2e} (tol 1e-5), negative control {negative:.2e} "
                     f"(> 1e-2), h=0 equality {equality:.1e} (tol 1e-15)")
    assert ok


def test_criterion_7_first_integral_and_pfaff(criterion):
    fi_worst = pf_worst = 0.0
    random_c = None
    for key, name in FRONT_SCENARIOS.items():
        sc = load_scenario(name)
        sigma = sc.surface
        y = sigma.parameters()
        nu = solve_nu(sc.hamiltonian, sigma.embed(y), normal_covector(sigma, y), sc.nu_seed, sc.level)
        fi_worst = max(fi_worst, float(np.max(np.abs(first_integral(sc.hamiltonian, sigma, nu) - sc.level))))
        pf_worst = max(pf_worst, float(np.max(np.abs(pfaff_residual(sc.hamiltonian, sigma, nu,
                                                                    sc.stencil_order)))))
        if key == "c":
            rng = np.random.default_rng(0)
            rough = nu * (1 + 0.1 * rng.uniform(-1, 1, nu.shape))
            random_c = float(np.max(np.abs(pfaff_residual(sc.hamiltonian, sigma, rough))))
    ok = fi_worst <= 1e-12 and pf_worst <= 1e-5 and random_c > 1e-2
    criterion(7, ok, f"|H(x, nu n) - level| {fi_worst:.2e} (tol 1e-12), Pfaff residual {pf_worst:.2e} "
                     f"(tol 1e-5), random nu on (c) {random_c:.2e} (> 1e-2)")
    assert ok


def _initial_stencil_error(count):
    # central chords of a conic are parallel to the midpoint tangent, so
    # p . tau_fd vanishes identically; the tangent itself carries the error
    sigma = Hypersurface.from_sources(["2*cos(y1)", "sin(y1)"],
                                      [GridAxis(0, 2 * np.pi, count, "periodic")])
    y = sigma.parameters()
    t = y[..., 0]
    tau = variation_vectors(sigma.embed(y), sigma.axes)[..., 0]
    exact = np.stack([-2 * np.sin(t), np.cos(t)], axis=-1)
    p = np.stack([np.cos(t), 2 * np.sin(t)], axis=-1)
    assert np.max(np.abs(deviation_functions(p, tau[..., None]))) <= 1e-13
    return float(np.max(np.abs(tau - exact)))


def _rk4_endpoint_error(step):
    hm = ExplicitHamiltonian(parse_field("(p1^2 + x1^2)/2", 1, MOMENTUM))
    traj = integrate(hm, PhasePoint([1.0], [0.0]), STANDARD, 2.0, IntegratorConfig(method="rk4", step=step))
    return float(np.hypot(traj.x[-1, 0] - np.cos(2.0), traj.p[-1, 0] + np.sin(2.0)))


def test_criterion_8_convergence(criterion):
    grid_ratio = _initial_stencil_error(64) / _initial_stencil_error(128)
    rk4_ratio = _rk4_endpoint_error(0.1) / _rk4_endpoint_error(0.05)
    ok = grid_ratio >= 3.5 and 12 <= rk4_ratio <= 20
    criterion(8, ok, f"grid doubling ratio {grid_ratio:.2f} (>= 3.5), RK4 halving ratio {rk4_ratio:.2f} "
                     f"(in [12, 20])")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
