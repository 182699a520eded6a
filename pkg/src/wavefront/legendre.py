"""Legendre map between velocities and momenta, and the Omega denominator.

The forward map is the fiber gradient ``p = dL/dv``.  The inverse has no
closed form for a general Lagrangian and is computed by damped Newton
iteration on ``dL/dv(x, v) = p``; its Jacobian is ``2*mu`` where ``mu`` is
the half-Hessian returned by :meth:`ExtendedScalarField.fiber_hessian`.

A Hamiltonian is either given directly as a momentum-representation field
(:class:`ExplicitHamiltonian`) or derived from a Lagrangian
(:class:`LegendreHamiltonian`).  Both expose :meth:`evaluate`, which returns
the value, both gradients and Omega at a batch of phase points.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import InputError, NoConvergence, NotPositive, SingularHessian, WavefrontError
from .field import MOMENTUM, VELOCITY, ExtendedScalarField


@dataclass(frozen=True)
class NewtonConfig:
    max_iter: int = 50
    tol: float = 1e-12
    damping: float = 0.5
    max_halvings: int = 20

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError("Newton tolerance must be positive")


class HamiltonianEval(NamedTuple):
    value: np.ndarray
    dp: np.ndarray  # dH/dp
    dx: np.ndarray  # dH/dx
    omega: np.ndarray
    v: Optional[np.ndarray] = None  # velocity, when a Legendre inversion was done


def _is_positive(mats):
    try:
        np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        return False
    return True


def newton_invert(second, target, seed, cfg, what="Legendre map"):
    """Solve ``G(w) = target`` for a batch of points.

    ``second(w, idx)`` returns ``(G(w), dG/dw)`` for the flattened batch
    entries ``idx``.  Each point carries its own backtracking factor and
    converged points are frozen.  Returns ``(w, iterations)``.
    """
    target = np.asarray(target, dtype=float)
    w = np.array(np.broadcast_to(seed, target.shape), dtype=float)
    batch = target.shape[:-1]
    w = w.reshape(-1, target.shape[-1])
    tgt = target.reshape(-1, target.shape[-1])
    scale = np.maximum(1.0, np.max(np.abs(tgt), axis=-1))
    tol = cfg.tol * scale

    g, jac = second(w, np.arange(len(w)))
    r = tgt - g
    rn = np.max(np.abs(r), axis=-1)
    active = ~(rn <= tol)
    it = 0
    while np.any(active):
        if it >= cfg.max_iter:
            raise NoConvergence(
                f"{what}: Newton did not converge in {cfg.max_iter} iterations "
                f"(worst residual {np.max(rn[active]):.3e})")
        it += 1
        idx = np.flatnonzero(active)
        try:
            step = np.linalg.solve(jac[idx], r[idx][..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise SingularHessian(f"{what}: singular Jacobian during Newton iteration") from None
        if not np.all(np.isfinite(step)):
            raise SingularHessian(f"{what}: non-finite Newton step")
        alpha = np.ones(len(idx))
        pending = np.arange(len(idx))
        for _ in range(cfg.max_halvings + 1):
            trial = w[idx[pending]] + alpha[pending, None] * step[pending]
            with np.errstate(all="ignore"):
                try:
                    gt, jt = second(trial, idx[pending])
                except WavefrontError:
                    gt = np.full_like(trial, np.nan)
                    jt = np.full(trial.shape + trial.shape[-1:], np.nan)
            rt = tgt[idx[pending]] - gt
            rtn = np.max(np.abs(rt), axis=-1)
            ok = np.isfinite(rtn) & (rtn < rn[idx[pending]])
            sel = idx[pending[ok]]
            w[sel] = trial[ok]
            r[sel] = rt[ok]
            rn[sel] = rtn[ok]
            jac[sel] = jt[ok]
            pending = pending[~ok]
            if len(pending) == 0:
                break
            alpha[pending] *= cfg.damping
        if len(pending):
            raise NoConvergence(f"{what}: backtracking failed to reduce the residual")
        active = ~(rn <= tol)
    return w.reshape(batch + target.shape[-1:]), it


class LagrangianModel:
    """Lagrangian in velocity representation with its Legendre map."""

    def __init__(self, L: ExtendedScalarField, newton=None, check_positive=True):
        if L.representation != VELOCITY:
            raise InputError("a Lagrangian must be in velocity representation")
        self.L = L
        self.n = L.n
        self.newton = newton or NewtonConfig()
        self.check_positive = check_positive

    def momentum(self, x, v):
        return self.L.fiber_gradient(x, v)

    def _second(self, x):
        def second(v, idx):
            xx = x[idx]
            if self.L.diff.mode == "ad":
                j = self.L.jet(xx, v, "w", 2)
                g = np.moveaxis(j.d, 0, -1)
                h = np.moveaxis(np.moveaxis(j.h, 0, -1), 0, -1)
                return g, 0.5 * (h + np.swapaxes(h, -1, -2))
            return self.L.fiber_gradient(xx, v), self.L.fiber_second(xx, v)
        return second

    def require_positive(self, x, v):
        """Raise NotPositive unless 2*mu is positive definite at every point."""
        mats = self.L.fiber_second(x, v)
        if not _is_positive(mats):
            raise NotPositive("fiber Hessian of the Lagrangian is not positive definite")

    def velocity(self, x, p, seed=None, check_positive=None, return_iterations=False):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        seed = p if seed is None else np.asarray(seed, dtype=float)
        check = self.check_positive if check_positive is None else check_positive
        xb = np.broadcast_to(x, np.broadcast_shapes(x.shape, p.shape)).reshape(-1, self.n)
        if check:
            self.require_positive(xb, np.broadcast_to(seed, p.shape).reshape(-1, self.n))
        try:
            v, it = newton_invert(self._second(xb), p, seed, self.newton)
        except (NoConvergence, SingularHessian):
            if check:
                self.require_positive(xb, np.broadcast_to(seed, p.shape).reshape(-1, self.n))
            raise
        return (v, it) if return_iterations else v

    def omega(self, x, v):
        v = np.asarray(v, dtype=float)
        return np.sum(v * self.L.fiber_gradient(x, v), axis=-1)


class ExplicitHamiltonian:
    """Hamiltonian given directly as a momentum-representation field."""

    def __init__(self, H: ExtendedScalarField, newton=None):
        if H.representation != MOMENTUM:
            raise InputError("a Hamiltonian must be in momentum representation")
        self.H = H
        self.n = H.n
        self.newton = newton or NewtonConfig()

    def evaluate(self, x, p, seed=None):
        val, dx, dp = self.H.value_and_gradients(x, p)
        omega = np.sum(np.asarray(p) * dp, axis=-1)
        return HamiltonianEval(val, dp, dx, omega, None)

    def value(self, x, p):
        return self.H.value(x, p)

    def momentum(self, x, v, seed=None):
        """Solve dH/dp(x, p) = v for p."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        xb = np.broadcast_to(x, np.broadcast_shapes(x.shape, v.shape)).reshape(-1, self.n)

        def second(p, idx):
            return self.H.fiber_gradient(xb[idx], p), self.H.fiber_second(xb[idx], p)

        seed = v if seed is None else seed
        p, _ = newton_invert(second, v, seed, self.newton, "inverse Legendre map of H")
        return p


class LegendreHamiltonian:
    """Hamiltonian H = h o lambda^-1 derived from a Lagrangian.

    Gradients use the duality identities dH/dp = v and dH/dx = -dL/dx at
    the inverted velocity, so no derivative passes through the Newton solve.
    """

    def __init__(self, model: LagrangianModel):
        self.model = model
        self.n = model.n

    def evaluate(self, x, p, seed=None):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        v = self.model.velocity(x, p, seed, check_positive=False)
        xb = np.broadcast_to(x, v.shape)
        Lv, Lx, _ = self.model.L.value_and_gradients(xb, v)
        value = np.sum(p * v, axis=-1) - Lv
        omega = np.sum(p * v, axis=-1)
        return HamiltonianEval(value, v, -Lx, omega, v)

    def value(self, x, p, seed=None):
        return self.evaluate(x, p, seed).value


# module-level operations ----------------------------------------------------

def momentum_of(m, x, v):
    return m.momentum(x, v)


def velocity_of(m, x, p, v0=None):
    return m.velocity(x, p, v0)


def hamiltonian_value(m, x, p, seed=None):
    """H(x, p) = p.v* - L(x, v*) with v* the inverse Legendre image of p."""
    v = m.velocity(x, p, seed)
    return np.sum(np.asarray(p) * v, axis=-1) - m.L.value(np.broadcast_to(x, v.shape), v)


def lagrangian_value(hm, x, v, seed=None):
    """L(x, v) = p*.v - H(x, p*) with p* solving dH/dp(x, p*) = v."""
    if isinstance(hm, LegendreHamiltonian):
        return hm.model.L.value(x, v)
    p = hm.momentum(x, v, seed)
    return np.sum(p * np.asarray(v), axis=-1) - hm.H.value(np.broadcast_to(x, p.shape), p)


def omega_v(m, x, v):
    return m.omega(x, v)


def omega_p(hm, x, p):
    return hm.evaluate(x, p).omega
