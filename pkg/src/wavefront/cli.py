"""Command line entry point: run a scenario and write CSV data plus a report.

    wavefront <simulate|check-normality|residuals|legendre|pfaff>
              --scenario PATH --out DIR [--grid-scale K] [--tol-scale K] [--figures]

Exit codes: 0 all checks pass, 2 a tolerance check failed, 3 model error
(Omega <= 0, Legendre inversion failure, no root), 4 input error.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ModelError, WavefrontError
from .front import (edge_mask, first_integral, init_front, normal_covector, perturb_nu,
                    pfaff_residual, propagate_front, solve_nu)
from .legendre import hamiltonian_value
from .riemann import (ExpressionForce, GeneratedForce, SphericalHamiltonian,
                      additional_normality_residual, force_general, force_spherical, sample_points,
                      weak_normality_residual)
from .scenario import load_scenario

EXIT_PASS, EXIT_TOLERANCE, EXIT_MODEL, EXIT_INPUT = 0, 2, 3, 4
COMMANDS = ("simulate", "check-normality", "residuals", "legendre", "pfaff")
FMT = "%.17g"


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    kind: str = "max"  # "max": value <= tolerance, "min": value > tolerance

    @property
    def passed(self):
        if not np.isfinite(self.value):
            return False
        return self.value <= self.tolerance if self.kind == "max" else self.value > self.tolerance

    def as_dict(self):
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance,
                "kind": self.kind, "pass": self.passed}


@dataclass
class RunReport:
    scenario: str
    command: str
    metrics: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def max_abs_phi(self):
        return self.metrics.get("max_abs_phi")

    @property
    def max_H_drift(self):
        return self.metrics.get("max_H_drift")

    @property
    def max_omega_phidot_drift(self):
        return self.metrics.get("max_omega_phidot_drift")

    def check(self, name, value, tolerance, kind="max"):
        self.checks.append(Check(name, float(value), float(tolerance), kind))

    def as_dict(self):
        return {"scenario": self.scenario, "command": self.command, "pass": self.passed,
                "metrics": self.metrics, "checks": [c.as_dict() for c in self.checks],
                "files": self.files}


def thread_cap():
    """Parse WAVEFRONT_THREADS; the engine is vectorized and runs on one thread."""
    raw = os.environ.get("WAVEFRONT_THREADS")
    if raw is None or raw == "":
        return None
    try:
        val = int(raw)
    except ValueError:
        raise InputError(f"WAVEFRONT_THREADS must be a positive integer, got {raw!r}") from None
    if val < 1:
        raise InputError(f"WAVEFRONT_THREADS must be a positive integer, got {raw!r}")
    return val


def _save(out, name, header, rows, report):
    path = Path(out) / name
    np.savetxt(path, rows, fmt=FMT, delimiter=",", header=",".join(header), comments="")
    report.files.append(name)
    return path


def _node_index(shape):
    return np.stack(np.meshgrid(*[np.arange(c) for c in shape], indexing="ij"), axis=-1)


def fronts_table(history, n):
    shape = history.states[0].x.shape[:-1]
    idx = _node_index(shape).reshape(-1, len(shape))
    rows = []
    for st in history.states:
        rows.append(np.column_stack([np.full(len(idx), st.t), idx, st.x.reshape(-1, n), st.p.reshape(-1, n),
                                     st.H.reshape(-1), st.omega.reshape(-1)]))
    header = (["t"] + [f"j{k + 1}" for k in range(len(shape))] + [f"x{i + 1}" for i in range(n)]
              + [f"p{i + 1}" for i in range(n)] + ["H", "Omega"])
    return header, np.vstack(rows)


def deviations_table(history):
    tr = history.trace
    shape = tr.phi.shape[1:-1]
    m = tr.phi.shape[-1]
    idx = _node_index(shape).reshape(-1, len(shape))
    rows = []
    for k, t in enumerate(tr.t):
        phi = tr.phi[k].reshape(-1, m)
        rate = tr.phidot[k].reshape(-1, m)
        om = tr.omega[k].reshape(-1)
        for i in range(m):
            rows.append(np.column_stack([np.full(len(idx), t), idx, np.full(len(idx), i + 1),
                                         phi[:, i], rate[:, i], om * rate[:, i]]))
    header = ["t"] + [f"j{k + 1}" for k in range(len(shape))] + ["i", "phi_i", "phidot_i", "omega_phidot_i"]
    return header, np.vstack(rows)


def diagnostics_table(history, front):
    """One row per node: nu, H drift, extreme |phi| and the Omega range."""
    tr = history.trace
    shape = tr.phi.shape[1:-1]
    idx = _node_index(shape).reshape(-1, len(shape))
    T = len(tr.t)
    phi = np.max(np.abs(tr.phi).reshape(T, -1, tr.phi.shape[-1]), axis=(0, 2))
    om = tr.omega.reshape(T, -1)
    header = (["j" + str(k + 1) for k in range(len(shape))]
              + ["nu", "H_drift", "max_abs_phi", "omega_min", "omega_max"])
    rows = np.column_stack([idx, np.broadcast_to(front.nu, shape).reshape(-1), history.H_drift.reshape(-1),
                            phi, om.min(axis=0), om.max(axis=0)])
    return header, rows


def _analytic_error(sc, history):
    y = sc.surface.parameters()
    fns = [e.compile() for e in sc.analytic_front]
    worst = 0.0
    for st in history.states:
        env = {f"y{i + 1}": y[..., i] for i in range(sc.n - 1)}
        env["t"] = st.t
        exact = np.stack([np.broadcast_to(np.asarray(f(env), dtype=float), y.shape[:-1]) for f in fns], axis=-1)
        worst = max(worst, float(np.max(np.abs(st.x - exact))))
    return worst


def _front_run(sc, report, out, prefix=""):
    sc.require("hamiltonian", "surface", "nu_seed", "t_end")
    hm = sc.hamiltonian
    front = init_front(hm, sc.surface, sc.nu_seed, sc.level)
    hist = propagate_front(hm, front, sc.surface, sc.t_end, sc.integrator, sc.stencil_order)
    tol = sc.tolerances
    m = report.metrics
    m[prefix + "max_abs_phi"] = hist.trace.max_abs_phi()
    m[prefix + "max_abs_phi_edge_weighted"] = hist.trace.max_abs_phi(edge_factor=10.0)
    m[prefix + "max_H_drift"] = float(np.max(hist.H_drift))
    m[prefix + "first_integral"] = float(np.max(np.abs(front.H - sc.level)))
    q = hist.trace.omega_phidot
    m[prefix + "max_omega_phidot_abs_drift"] = float(np.max(np.abs(q - q[0])))
    m[prefix + "steps"] = len(hist.t) - 1
    m["nodes"] = int(np.prod(sc.surface.shape))
    m["stencil_order"] = sc.stencil_order
    m["t_end"] = sc.t_end
    report.check(prefix + "max_abs_phi", m[prefix + "max_abs_phi_edge_weighted"], tol["phi"])
    report.check(prefix + "max_H_drift", m[prefix + "max_H_drift"], tol["H_drift"] * max(1.0, sc.t_end))
    report.check(prefix + "first_integral", m[prefix + "first_integral"], tol["first_integral"])
    if sc.analytic_front is not None:
        m[prefix + "max_front_error"] = _analytic_error(sc, hist)
        report.check(prefix + "max_front_error", m[prefix + "max_front_error"], tol["front"])
    if sc.outputs.get("fronts", True):
        _save(out, prefix + "fronts.csv", *fronts_table(hist, sc.n), report)
    if sc.outputs.get("deviations", True):
        _save(out, prefix + "deviations.csv", *deviations_table(hist), report)
    if sc.outputs.get("diagnostics", True):
        _save(out, prefix + "diagnostics.csv", *diagnostics_table(hist, front), report)
    return front, hist


def cmd_simulate(sc, out, report):
    front, hist = _front_run(sc, report, out)
    return {"history": hist}


def cmd_check_normality(sc, out, report):
    front, hist = _front_run(sc, report, out)
    hm = sc.hamiltonian
    pert = sc.perturbation
    pfront, sel = perturb_nu(hm, front, sc.surface, pert["factor"], pert["fraction"],
                              pert["profile"])
    phist = propagate_front(hm, pfront, sc.surface, sc.t_end, sc.integrator, sc.stencil_order)
    drift, scale = phist.trace.omega_phidot_drift(sel)
    m = report.metrics
    m["perturbed_nodes"] = int(np.count_nonzero(sel))
    m["perturbation_factor"] = pert["factor"]
    m["perturbation_profile"] = pert["profile"]
    m["perturbed_max_abs_phi"] = phist.trace.max_abs_phi()
    m["max_omega_phidot_drift"] = drift
    m["omega_phidot_scale"] = scale
    m["perturbed_max_H_drift"] = float(np.max(phist.H_drift))
    tol = sc.tolerances
    report.check("omega_phidot_drift", drift, tol["omega_phidot"])
    report.check("perturbation_active", m["perturbed_max_abs_phi"], tol["perturbation_active"], "min")
    report.check("perturbed_max_H_drift", m["perturbed_max_H_drift"], tol["H_drift"] * max(1.0, sc.t_end))
    if sc.outputs.get("deviations", True):
        _save(out, "deviations_perturbed.csv", *deviations_table(phist), report)
    return {"history": hist, "perturbed": phist, "selection": sel}


def cmd_residuals(sc, out, report):
    sc.require("riemann")
    rm = sc.riemann
    g = rm.metric
    rng = np.random.default_rng(rm.seed)
    x, u = sample_points(g, rm.samples, rng)
    F = rm.force if rm.force is not None else GeneratedForce(rm.spherical, g)
    r1, r2 = weak_normality_residual(F, g, x, u)
    weak = np.maximum(np.max(np.abs(r1), axis=-1), np.max(np.abs(r2), axis=-1))
    cols = [np.arange(len(x)), x, u, np.linalg.norm(r1, axis=-1), np.linalg.norm(r2, axis=-1)]
    header = (["sample"] + [f"x{i + 1}" for i in range(sc.n)] + [f"u{i + 1}" for i in range(sc.n)]
              + ["weak1", "weak2"])
    m = report.metrics
    tol = sc.tolerances
    m["samples"] = len(x)
    m["max_weak_residual"] = float(np.max(weak))
    report.check("max_weak_residual", m["max_weak_residual"], tol["residual"])
    if sc.n >= 3:
        A, B = additional_normality_residual(F, g, x, u)
        add = np.maximum(np.max(np.abs(A), axis=(-1, -2)), np.max(np.abs(B), axis=(-1, -2)))
        m["max_additional_residual"] = float(np.max(add))
        report.check("max_additional_residual", m["max_additional_residual"], tol["residual"])
        cols += [np.max(np.abs(A), axis=(-1, -2)), np.max(np.abs(B), axis=(-1, -2))]
        header += ["additional_antisym", "additional_trace"]
    neg = ExpressionForce.from_sources(["1"] + ["0"] * (sc.n - 1))
    n1, _ = weak_normality_residual(neg, g, x, u)
    m["negative_control_weak_residual"] = float(np.max(np.linalg.norm(n1, axis=-1)))
    report.check("negative_control", m["negative_control_weak_residual"], tol["residual_negative"], "min")
    if rm.force is None:
        h0 = SphericalHamiltonian.from_sources(rm.spherical.W.expr.source, sc.n, "0")
        diff = np.max(np.abs(force_spherical(rm.spherical, g, x, u) - force_general(h0, g, x, u)))
        m["spherical_vs_general_h0"] = float(diff)
        report.check("spherical_equals_general_h0", diff, tol["spherical_equality"])
    _save(out, "residuals.csv", header, np.column_stack(cols), report)
    return {}


def cmd_legendre(sc, out, report):
    sc.require("hamiltonian")
    rng = np.random.default_rng(sc.samples["seed"])
    count, box, n = sc.samples["count"], sc.samples["box"], sc.n
    x = rng.uniform(-box, box, size=(count, n))
    d = rng.normal(size=(count, n))
    w = d / np.linalg.norm(d, axis=-1, keepdims=True) * rng.uniform(0.5, 2.0, size=(count, 1))
    m = report.metrics
    tol = sc.tolerances
    if sc.lagrangian is not None:
        lm = sc.lagrangian
        lm.require_positive(x, w)
        p = lm.momentum(x, w)
        back = lm.velocity(x, p)
        rt = np.max(np.abs(back - w), axis=-1)
        H = hamiltonian_value(lm, x, p)
        cons = np.abs(np.sum(p * w, axis=-1) - lm.L.value(x, w) - H)
        om = np.abs(sc.hamiltonian.evaluate(x, p).omega - lm.omega(x, w))
        header = [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)] + ["roundtrip", "consistency", "omega"]
    else:
        hm = sc.hamiltonian
        ev = hm.evaluate(x, w)
        v = ev.dp
        back = hm.momentum(x, v, seed=w)
        rt = np.max(np.abs(back - w), axis=-1)
        Lv = np.sum(back * v, axis=-1) - hm.value(x, back)
        cons = np.abs(np.sum(w * v, axis=-1) - ev.value - Lv)
        om = np.abs(ev.omega - np.sum(v * w, axis=-1))
        header = [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)] + ["roundtrip", "consistency", "omega"]
    m["samples"] = count
    m["max_roundtrip_error"] = float(np.max(rt))
    m["max_consistency_error"] = float(np.max(cons))
    m["max_omega_mismatch"] = float(np.max(om))
    report.check("roundtrip", m["max_roundtrip_error"], tol["legendre_roundtrip"])
    report.check("consistency", m["max_consistency_error"], tol["legendre_consistency"])
    report.check("omega_representations", m["max_omega_mismatch"], tol["legendre_consistency"])
    _save(out, "legendre.csv", header, np.column_stack([x, w, rt, cons, om]), report)
    return {}


def cmd_pfaff(sc, out, report):
    sc.require("hamiltonian", "surface", "nu_seed")
    hm = sc.hamiltonian
    sigma = sc.surface
    y = sigma.parameters()
    x = sigma.embed(y)
    nvec = normal_covector(sigma, y)
    nu = solve_nu(hm, x, nvec, sc.nu_seed, sc.level)
    fi = first_integral(hm, sigma, nu) - sc.level
    res = pfaff_residual(hm, sigma, nu, sc.stencil_order)
    edges = edge_mask(sigma.axes, sc.stencil_order)
    weighted = np.abs(res) * np.where(edges, 0.1, 1.0)[..., None]
    rng = np.random.default_rng(sc.samples["seed"])
    nu_rand = nu * (1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=nu.shape))
    neg = pfaff_residual(hm, sigma, nu_rand, sc.stencil_order)
    m = report.metrics
    tol = sc.tolerances
    m["nodes"] = int(np.prod(sigma.shape))
    m["max_first_integral"] = float(np.max(np.abs(fi)))
    m["max_pfaff_residual"] = float(np.max(np.abs(res)))
    m["max_pfaff_residual_edge_weighted"] = float(np.max(weighted))
    m["random_nu_pfaff_residual"] = float(np.max(np.abs(neg)))
    report.check("first_integral", m["max_first_integral"], tol["first_integral"])
    report.check("pfaff_residual", m["max_pfaff_residual_edge_weighted"], tol["pfaff"])
    report.check("random_nu_negative_control", m["random_nu_pfaff_residual"], tol["pfaff_negative"], "min")
    idx = _node_index(sigma.shape).reshape(-1, len(sigma.shape))
    k = sigma.n - 1
    header = ([f"j{i + 1}" for i in range(k)] + [f"y{i + 1}" for i in range(k)] + ["nu", "H_minus_level"]
              + [f"residual_{i + 1}" for i in range(k)])
    rows = np.column_stack([idx, y.reshape(-1, k), nu.reshape(-1), fi.reshape(-1), res.reshape(-1, k)])
    _save(out, "pfaff.csv", header, rows, report)
    return {}


HANDLERS = {
    "simulate": cmd_simulate,
    "check-normality": cmd_check_normality,
    "residuals": cmd_residuals,
    "legendre": cmd_legendre,
    "pfaff": cmd_pfaff,
}


def run(command, scenario, out_dir, grid_scale=1.0, tol_scale=1.0, figures=False):
    """Run one subcommand; returns the report (files are written to ``out_dir``)."""
    if command not in HANDLERS:
        raise InputError(f"unknown command {command!r}")
    if not (grid_scale > 0 and tol_scale > 0):
        raise InputError("--grid-scale and --tol-scale must be positive")
    sc = scenario if not isinstance(scenario, (str, Path)) else load_scenario(scenario)
    sc = sc.scaled(grid_scale, tol_scale)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(sc.name, command)
    threads = thread_cap()
    if threads is not None:
        report.metrics["threads_requested"] = threads
    extra = HANDLERS[command](sc, out, report)
    if figures:
        from .plotting import render
        report.files.extend(render(command, sc, report, extra, out))
    (out / "report.json").write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    report.files.append("report.json")
    return report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def build_parser():
    p = _Parser(prog="wavefront", description="Wave front and normal shift experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, help="scenario JSON file or built-in scenario name")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--grid-scale", type=float, default=1.0, help="multiply grid node counts")
    p.add_argument("--tol-scale", type=float, default=1.0, help="multiply every tolerance")
    p.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        report = run(args.command, args.scenario, args.out, args.grid_scale, args.tol_scale, args.figures)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ModelError as exc:
        print(f"model error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_MODEL
    except WavefrontError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    for c in report.checks:
        op = "<=" if c.kind == "max" else ">"
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.3e} {op} {c.tolerance:.1e}")
    return EXIT_PASS if report.passed else EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
