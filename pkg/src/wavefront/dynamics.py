"""Standard and modified Hamilton flows and their numerical integration.

The modified flow divides both Hamilton equations by
``Omega = sum_i p_i dH/dp_i``.  With that parametrization the phase
``phi = int Omega dt`` of the standard flow advances at unit rate, which is
what makes it the flow of wave fronts.

Integration is batched: a whole family of trajectories is advanced as one
system with a common step sequence, so every member is sampled at the same
parameter values.  That is what the front module needs for differences
across the family, and it makes each run bitwise reproducible.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, OmegaNonpositive, StepLimitExceeded

STANDARD = "standard"
MODIFIED = "modified"

# Fehlberg 4(5) tableau
_C = np.array([0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2])
_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8.0, 3680 / 513, -845 / 4104],
    [-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_B4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])
_B5 = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])
_E = _B5 - _B4


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rkf45"
    step: Optional[float] = None
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_steps: int = 200_000
    omega_eps: float = 1e-12

    def __post_init__(self):
        if self.method not in ("rk4", "rkf45"):
            raise InputError(f"unknown integration method {self.method!r}")
        if self.method == "rk4" and not (self.step and self.step > 0):
            raise InputError("rk4 needs a positive step")
        if self.step is not None and not self.step > 0:
            raise InputError("step must be positive")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise InputError("tolerances must be positive")


@dataclass
class PhasePoint:
    x: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p))):
            raise InputError("phase point has non-finite components")


def standard_rhs(hm, q):
    ev = hm.evaluate(q.x, q.p)
    return ev.dp, -ev.dx


def modified_rhs(hm, q, omega_eps=1e-12):
    ev = hm.evaluate(q.x, q.p)
    om = np.asarray(ev.omega)
    if np.any(~(om > omega_eps)):
        raise OmegaNonpositive(f"Omega = {om!r} is not positive; modified flow undefined", t=q.t)
    return ev.dp / om[..., None], -ev.dx / om[..., None]


@dataclass
class BatchSolution:
    """Samples of a trajectory family: arrays indexed (sample, member, ...)."""

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    dx: np.ndarray
    dp: np.ndarray
    H: np.ndarray
    omega: np.ndarray
    phase: np.ndarray
    flow: str
    failed: Optional[np.ndarray] = None

    @property
    def H_drift(self):
        return np.max(np.abs(self.H - self.H[0]), axis=0)


class _Rhs:
    """Right-hand side over the packed state ``[x, p, phase]`` of each member."""

    def __init__(self, hm, n, flow, omega_eps, mask_failures):
        self.hm = hm
        self.n = n
        self.flow = flow
        self.omega_eps = omega_eps
        self.mask_failures = mask_failures
        self.seed = None
        self.failed = None

    def __call__(self, t, y):
        n = self.n
        x = y[:, :n]
        p = y[:, n:2 * n]
        ev = self.hm.evaluate(x, p, self.seed)
        if ev.v is not None:
            self.seed = ev.v
        om = np.asarray(ev.omega, dtype=float)
        out = np.empty_like(y)
        if self.flow == STANDARD:
            out[:, :n] = ev.dp
            out[:, n:2 * n] = -ev.dx
            out[:, 2 * n] = om
        else:
            bad = ~(om > self.omega_eps)
            if self.failed is not None:
                bad |= self.failed
            if np.any(bad):
                if not self.mask_failures:
                    nodes = np.flatnonzero(bad)
                    raise OmegaNonpositive(
                        f"Omega <= {self.omega_eps:g} at t={t:.6g} for member(s) {nodes[:10].tolist()}",
                        t=t, nodes=nodes)
                self.failed = bad if self.failed is None else (self.failed | bad)
            safe = np.where(bad, 1.0, om)
            out[:, :n] = ev.dp / safe[:, None]
            out[:, n:2 * n] = -ev.dx / safe[:, None]
            out[:, 2 * n] = 1.0
            if np.any(bad):
                out[bad] = 0.0
        if not np.all(np.isfinite(out)):
            raise OmegaNonpositive(f"non-finite right-hand side at t={t:.6g}", t=t)
        return out, np.asarray(ev.value, dtype=float), om


def integrate_batch(hm, x0, p0, flow, t_end, cfg=None, mask_failures=False):
    """Integrate a family of trajectories with a shared step sequence."""
    cfg = cfg or IntegratorConfig()
    if flow not in (STANDARD, MODIFIED):
        raise InputError(f"unknown flow {flow!r}")
    if not t_end > 0:
        raise InputError("t_end must be positive")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    n = x0.shape[-1]
    y = np.concatenate([x0, p0, np.zeros((len(x0), 1))], axis=1)
    rhs = _Rhs(hm, n, flow, cfg.omega_eps, mask_failures)

    f, Hv, om = rhs(0.0, y)
    ts, ys, fs, Hs, oms = [0.0], [y], [f], [Hv], [om]
    t = 0.0

    if cfg.method == "rk4":
        nsteps = max(1, int(math.ceil(t_end / cfg.step - 1e-9)))
        if nsteps > cfg.max_steps:
            raise StepLimitExceeded(f"{nsteps} RK4 steps exceed max_steps={cfg.max_steps}")
        h = t_end / nsteps
        for i in range(nsteps):
            k1 = f
            k2 = rhs(t + h / 2, y + h / 2 * k1)[0]
            k3 = rhs(t + h / 2, y + h / 2 * k2)[0]
            k4 = rhs(t + h, y + h * k3)[0]
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t_end if i == nsteps - 1 else (i + 1) * h
            f, Hv, om = rhs(t, y)
            ts.append(t); ys.append(y); fs.append(f); Hs.append(Hv); oms.append(om)
    else:
        h = cfg.step or min(t_end, 0.01 * t_end)
        steps = 0
        while t < t_end:
            if steps >= cfg.max_steps:
                raise StepLimitExceeded(f"RKF45 exceeded {cfg.max_steps} steps at t={t:.6g}")
            last = t + h >= t_end * (1 - 1e-14)
            if last:
                h = t_end - t
            ks = [f]
            for s in range(1, 6):
                yi = y + h * sum(a * k for a, k in zip(_A[s], ks))
                ks.append(rhs(t + _C[s] * h, yi)[0])
            y4 = y + h * sum(b * k for b, k in zip(_B4, ks) if b)
            err = h * sum(e * k for e, k in zip(_E, ks) if e)
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y4))
            enorm = float(np.max(np.abs(err) / scale))
            steps += 1
            if enorm <= 1.0:
                t = t_end if last else t + h
                y = y4
                f, Hv, om = rhs(t, y)
                ts.append(t); ys.append(y); fs.append(f); Hs.append(Hv); oms.append(om)
            fac = 5.0 if enorm == 0.0 else min(5.0, max(0.2, 0.9 * enorm ** -0.2))
            h = h * fac

    Y = np.stack(ys)
    F = np.stack(fs)
    return BatchSolution(
        t=np.array(ts), x=Y[:, :, :n], p=Y[:, :, n:2 * n], dx=F[:, :, :n], dp=F[:, :, n:2 * n],
        H=np.stack(Hs), omega=np.stack(oms), phase=Y[:, :, 2 * n], flow=flow, failed=rhs.failed)


@dataclass
class Trajectory:
    """One trajectory sampled at the integrator's accepted steps."""

    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    dx: np.ndarray
    dp: np.ndarray
    H: np.ndarray
    omega: np.ndarray
    phase: np.ndarray
    flow: str
    samples: list = field(default_factory=list, repr=False)

    @property
    def max_H_drift(self):
        return float(np.max(np.abs(self.H - self.H[0])))

    def dense(self, tq):
        """Cubic Hermite interpolation of (x, p) at parameter values ``tq``."""
        state = np.concatenate([self.x, self.p], axis=1)
        deriv = np.concatenate([self.dx, self.dp], axis=1)
        out = hermite(self.t, state, deriv, tq)
        n = self.x.shape[1]
        return out[..., :n], out[..., n:]

    def dense_phase(self, tq):
        return hermite(self.t, self.phase[:, None], self.omega[:, None]
                       if self.flow == STANDARD else np.ones((len(self.t), 1)), tq)[..., 0]


def hermite(ts, ys, dys, tq):
    """Piecewise cubic Hermite interpolant through samples with derivatives."""
    tq = np.asarray(tq, dtype=float)
    k = np.clip(np.searchsorted(ts, tq, side="right") - 1, 0, len(ts) - 2)
    h = ts[k + 1] - ts[k]
    s = ((tq - ts[k]) / h)[..., None]
    h = h[..., None]
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * ys[k] + h10 * h * dys[k] + h01 * ys[k + 1] + h11 * h * dys[k + 1]


def integrate(hm, q0, flow, t_end, cfg=None):
    """Integrate a single trajectory from ``q0`` for parameter length ``t_end``."""
    sol = integrate_batch(hm, q0.x[None], q0.p[None], flow, t_end, cfg)
    t = sol.t + q0.t
    traj = Trajectory(
        t=t, x=sol.x[:, 0], p=sol.p[:, 0], dx=sol.dx[:, 0], dp=sol.dp[:, 0],
        H=sol.H[:, 0], omega=sol.omega[:, 0], phase=sol.phase[:, 0], flow=flow)
    traj.samples = [PhasePoint(x, p, ti) for x, p, ti in zip(traj.x, traj.p, t)]
    return traj


def phase_integral(traj):
    """Accumulated phase int_0^t Omega dt along a standard-flow trajectory.

    The phase is carried as an extra state component by the integrator, so
    it is accurate to the same order as the trajectory itself.
    """
    if traj.flow != STANDARD:
        raise InputError("phase integral is defined along standard-flow trajectories")
    return traj.phase.copy()
