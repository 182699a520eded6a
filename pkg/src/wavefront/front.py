"""Hypersurfaces, normal-shift initial data and front propagation.

A front is a structured grid of phase points.  Each node starts on the
hypersurface with momentum ``p = nu * n``, where ``n`` is a normal covector
and ``nu`` puts ``p`` on a level set of ``H``.  Nodes then move under the
modified flow.  Variation vectors ``tau_i = dx/dy^i`` are recovered by finite
differences across the grid, and the deviation functions ``phi_i = p.tau_i``
measure how far the family is from a normal shift.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.optimize import brentq

from . import expr as E
from .dynamics import MODIFIED, IntegratorConfig, integrate_batch
from .errors import (InputError, InsufficientGrid, ModelError, NoRoot, OmegaNonpositive,
                     RankDeficient)
from .jet import Jet, as_jet

OPEN = "open"
PERIODIC = "periodic"


@dataclass(frozen=True)
class GridAxis:
    min: float
    max: float
    count: int
    topology: str = OPEN

    def __post_init__(self):
        if self.topology not in (OPEN, PERIODIC):
            raise InputError(f"unknown grid topology {self.topology!r}")
        if not self.max > self.min:
            raise InputError("grid axis needs max > min")
        if self.count < 3:
            raise InsufficientGrid(f"grid axis has {self.count} nodes; at least 3 are needed")

    @property
    def spacing(self):
        span = self.max - self.min
        return span / self.count if self.topology == PERIODIC else span / (self.count - 1)

    @property
    def nodes(self):
        return self.min + self.spacing * np.arange(self.count)

    def scaled(self, k):
        return GridAxis(self.min, self.max, int(round(self.count * k)), self.topology)


def parameter_alphabet(n, scalars=()):
    return E.Alphabet({"y": n - 1}, scalars=scalars)


class Hypersurface:
    """Parametric hypersurface ``y -> x(y)`` sampled on a tensor grid."""

    def __init__(self, maps, axes, orientation=1):
        self.maps = list(maps)
        self.n = len(self.maps)
        self.axes = list(axes)
        if self.n < 2:
            raise InputError("a hypersurface needs n >= 2")
        if len(self.axes) != self.n - 1:
            raise InputError(f"{self.n - 1} grid axes expected, got {len(self.axes)}")
        if orientation not in (1, -1):
            raise InputError("orientation must be +1 or -1")
        self.orientation = orientation
        self._fns = [m.compile() for m in self.maps]
        self._check_periodic()

    @classmethod
    def from_sources(cls, sources, axes, orientation=1):
        alphabet = parameter_alphabet(len(sources))
        return cls([E.parse(s, alphabet) for s in sources], axes, orientation)

    def with_axes(self, axes):
        return Hypersurface(self.maps, axes, self.orientation)

    @property
    def shape(self):
        return tuple(a.count for a in self.axes)

    def parameters(self):
        """Grid of parameter points, shape ``shape + (n-1,)``."""
        mesh = np.meshgrid(*[a.nodes for a in self.axes], indexing="ij")
        return np.stack(mesh, axis=-1)

    def _env(self, ys):
        return {f"y{i + 1}": ys[i] for i in range(self.n - 1)}

    def embed(self, y):
        y = np.asarray(y, dtype=float)
        env = self._env([y[..., i] for i in range(self.n - 1)])
        return np.stack([np.broadcast_to(np.asarray(f(env), dtype=float), y.shape[:-1])
                         for f in self._fns], axis=-1)

    def jacobian(self, y):
        """Matrix ``dx/dy`` of shape ``(..., n, n-1)``, by forward differentiation."""
        y = np.asarray(y, dtype=float)
        shape = y.shape[:-1]
        seeds = Jet.seed([y[..., i] for i in range(self.n - 1)], 1)
        rows = [as_jet(f(self._env(seeds)), self.n - 1, shape).d for f in self._fns]
        return np.moveaxis(np.stack(rows, axis=0), (0, 1), (-2, -1))

    def _check_periodic(self):
        for k, axis in enumerate(self.axes):
            if axis.topology != PERIODIC:
                continue
            y = self.parameters()
            lo = y.copy()
            hi = y.copy()
            lo[..., k] = axis.min
            hi[..., k] = axis.max
            gap = np.max(np.abs(self.embed(lo) - self.embed(hi)))
            if gap > 1e-12:
                raise InputError(f"periodic axis y{k + 1}: map values at the ends differ by {gap:.3e}")


def tangent_frame(sigma, y):
    """Columns of the Jacobian ``dx/dy``; raises RankDeficient if degenerate."""
    frame = sigma.jacobian(y)
    _check_rank(frame)
    return frame


def _check_rank(frame):
    sv = np.linalg.svd(frame, compute_uv=False)
    bad = sv[..., -1] <= 1e-10 * np.maximum(sv[..., 0], 1e-300)
    if np.any(bad):
        where = np.argwhere(np.atleast_1d(bad))[0].tolist()
        raise RankDeficient(f"tangent frame has rank < n-1 at grid node {where}")


def normal_from_frame(frame, orientation=1):
    """Unit covector annihilating the frame columns.

    The sign makes ``det[n; tau_1; ...; tau_{n-1}]`` agree with
    ``orientation``, which is continuous along the surface (an outward
    normal on a counter-clockwise circle, ``+e_z`` on the ``(y1, y2, 0)``
    plane).
    """
    frame = np.asarray(frame, dtype=float)
    n = frame.shape[-2]
    q, _ = np.linalg.qr(frame, mode="complete")
    nv = q[..., :, n - 1]
    square = np.concatenate([nv[..., :, None], frame], axis=-1)
    sign = np.sign(np.linalg.det(square))
    sign = np.where(sign == 0, 1.0, sign)
    nv = nv * (orientation * sign)[..., None]
    return nv / np.linalg.norm(nv, axis=-1, keepdims=True)


def normal_covector(sigma, y):
    return normal_from_frame(tangent_frame(sigma, y), sigma.orientation)


# nu ---------------------------------------------------------------------------

def solve_nu(hm, x, n, seed, level=0.0, tol=1e-12, max_iter=100):
    """Scale factors ``nu`` with ``H(x, nu*n) = level``, same sign as ``seed``.

    Works on batches.  A sign-preserving Newton iteration handles the typical
    node; nodes where it stalls fall back to a bracket scan over
    ``|nu| = |seed| * 2^k`` up to ``1e6 |seed|`` followed by Brent's method.
    """
    x = np.asarray(x, dtype=float)
    n = np.asarray(n, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], n.shape[:-1])
    x = np.broadcast_to(x, batch + x.shape[-1:]).reshape(-1, x.shape[-1])
    n = np.broadcast_to(n, batch + n.shape[-1:]).reshape(-1, n.shape[-1])
    seed = float(seed)
    if seed == 0.0 or not np.isfinite(seed):
        raise InputError("nu seed must be finite and nonzero")
    sgn = np.sign(seed)

    nu = np.full(len(x), seed)
    done = np.zeros(len(x), dtype=bool)
    v_seed = None
    for _ in range(max_iter):
        idx = np.flatnonzero(~done)
        if len(idx) == 0:
            break
        try:
            ev = hm.evaluate(x[idx], nu[idx, None] * n[idx],
                             None if v_seed is None else v_seed[idx])
        except ModelError:
            break
        if ev.v is not None:
            if v_seed is None:
                v_seed = np.zeros_like(x)
            v_seed[idx] = ev.v
        f = ev.value - level
        fp = np.sum(ev.dp * n[idx], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            new = nu[idx] - f / fp
        bad = ~np.isfinite(new) | (np.sign(new) != sgn)
        new = np.where(bad, nu[idx] * np.where(f * fp * sgn > 0, 0.5, 2.0), new)
        # a point inside the tolerance still takes its Newton step, which
        # lands it at rounding level; it stops once the step is negligible
        small = np.abs(f) <= tol
        stalled = np.abs(new - nu[idx]) <= 4 * np.finfo(float).eps * np.abs(nu[idx])
        done[idx[small & (stalled | (np.abs(f) <= 1e-3 * tol))]] = True
        upd = ~stalled & ~(np.abs(f) <= 1e-3 * tol)
        nu[idx[upd]] = new[upd]
    for i in np.flatnonzero(~done):
        nu[i] = _bracketed_nu(hm, x[i], n[i], seed, level, tol)
    return nu.reshape(batch) if batch else float(nu[0])


def _bracketed_nu(hm, x, n, seed, level, tol):
    def f(nu):
        try:
            return float(hm.evaluate(x[None], (nu * n)[None]).value[0]) - level
        except ModelError:
            return np.nan

    grid = seed * 2.0 ** np.arange(-30, 21)
    grid = grid[np.abs(grid) <= 1e6 * abs(seed)]
    vals = np.array([f(g) for g in grid])
    start = int(np.argmin(np.abs(grid - seed)))
    order = sorted(range(len(grid) - 1), key=lambda k: abs(k - start))
    for k in order:
        a, b = vals[k], vals[k + 1]
        if np.isfinite(a) and np.isfinite(b) and a * b <= 0:
            if a == 0:
                return grid[k]
            if b == 0:
                return grid[k + 1]
            root = brentq(f, grid[k], grid[k + 1], xtol=1e-15, rtol=4e-16, maxiter=200)
            if abs(f(root)) <= max(tol, 1e-12):
                return root
            return root
    raise NoRoot(f"H(x, nu*n) = {level:g} has no root with the sign of the seed at x={x.tolist()}")


# grid differences ---------------------------------------------------------------

_CENTRAL = {2: ([-1, 1], [-0.5, 0.5]), 4: ([-2, -1, 1, 2], [1 / 12, -8 / 12, 8 / 12, -1 / 12])}
# one-sided rows for the first nodes of an open axis: (node, offsets, weights)
_EDGE = {
    2: [[-1.5, 2.0, -0.5]],
    4: [[-25 / 12, 4.0, -3.0, 4 / 3, -1 / 4],
        [-1 / 4, -5 / 6, 3 / 2, -1 / 2, 1 / 12]],
}


def edge_width(order):
    return len(_EDGE[order])


def grid_derivative(values, axis, grid_axis, order=2):
    """Derivative along grid ``axis`` of an array shaped ``grid + components``.

    Central differences in the interior, one-sided stencils of the same order
    at open edges, wrap-around on periodic axes.
    """
    if order not in _CENTRAL:
        raise InputError(f"stencil order must be 2 or 4, got {order}")
    values = np.asarray(values, dtype=float)
    m = values.shape[axis]
    need = order + 1
    if m < need:
        raise InsufficientGrid(f"{m} nodes along axis {axis}; order-{order} stencil needs {need}")
    h = grid_axis.spacing
    offsets, weights = _CENTRAL[order]
    v = np.moveaxis(values, axis, 0)
    if grid_axis.topology == PERIODIC:
        out = sum(w * np.roll(v, -o, axis=0) for o, w in zip(offsets, weights))
        return np.moveaxis(out / h, 0, axis)
    out = np.zeros_like(v)
    e = edge_width(order)
    for o, w in zip(offsets, weights):
        out[e:m - e] += w * v[e + o:m - e + o]
    for k, row in enumerate(_EDGE[order]):
        out[k] = sum(w * v[j] for j, w in enumerate(row))
        out[m - 1 - k] = -sum(w * v[m - 1 - j] for j, w in enumerate(row))
    return np.moveaxis(out / h, 0, axis)


def edge_mask(axes, order=2):
    """True at nodes whose stencil is one-sided along some open axis."""
    mask = np.zeros(tuple(a.count for a in axes), dtype=bool)
    e = edge_width(order)
    for k, a in enumerate(axes):
        if a.topology == OPEN:
            idx = [slice(None)] * len(axes)
            idx[k] = np.r_[0:e, a.count - e:a.count]
            mask[tuple(idx)] = True
    return mask


def grid_gradients(values, axes, order=2):
    """Stack of derivatives along every grid axis: shape ``grid + comps + (n-1,)``."""
    return np.stack([grid_derivative(values, k, a, order) for k, a in enumerate(axes)], axis=-1)


# front states -------------------------------------------------------------------

@dataclass
class FrontState:
    """Front at one parameter value; arrays are shaped ``grid + (...)``."""

    t: float
    x: np.ndarray
    p: np.ndarray
    nu: np.ndarray
    tau: np.ndarray
    phi: np.ndarray
    phidot: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    omega: Optional[np.ndarray] = None


def init_front(hm, sigma, seed, level=0.0, normal_scale=1.0):
    """Normal-shift initial data: nodes on ``sigma`` with ``p = nu * n``."""
    y = sigma.parameters()
    x = sigma.embed(y)
    tau = tangent_frame(sigma, y)
    n = normal_from_frame(tau, sigma.orientation) * normal_scale
    try:
        nu = solve_nu(hm, x, n, seed, level)
    except NoRoot as exc:
        raise NoRoot(f"initial data: {exc}") from None
    p = nu[..., None] * n
    ev = hm.evaluate(x.reshape(-1, sigma.n), p.reshape(-1, sigma.n))
    phi = np.einsum("...s,...si->...i", p, tau)
    return FrontState(0.0, x, p, nu, tau, phi, H=ev.value.reshape(sigma.shape),
                      omega=ev.omega.reshape(sigma.shape))


def perturb_nu(hm, state, sigma, factor=1.1, fraction=0.25, profile="step"):
    """Scale ``nu`` (and ``p``) on the first ``fraction`` of the axis-1 nodes.

    ``profile='step'`` multiplies those nodes by ``factor``.  ``'smooth'``
    ramps the factor in and out with a ``sin^4`` window over the same nodes,
    so the perturbed family stays smooth enough for the grid stencils.
    Returns the perturbed state and the boolean mask of touched nodes.
    """
    count = sigma.axes[0].count
    width = max(1, int(round(fraction * count)))
    r = np.arange(count) / width
    if profile == "step":
        w1 = (r < 1).astype(float)
    elif profile == "smooth":
        w1 = np.where(r < 1, np.sin(np.pi * r) ** 4, 0.0)
    else:
        raise InputError(f"unknown perturbation profile {profile!r}")
    w = np.broadcast_to(w1.reshape((count,) + (1,) * (len(sigma.shape) - 1)), sigma.shape)
    scale = 1.0 + (factor - 1.0) * w
    sel = w > 0
    nu = state.nu * scale
    p = state.p * scale[..., None]
    ev = hm.evaluate(state.x.reshape(-1, sigma.n), p.reshape(-1, sigma.n))
    phi = np.einsum("...s,...si->...i", p, state.tau)
    return FrontState(0.0, state.x, p, nu, state.tau, phi, H=ev.value.reshape(sigma.shape),
                      omega=ev.omega.reshape(sigma.shape)), sel


def variation_vectors(x, axes, order=2):
    """Finite-difference ``tau_i = dx/dy^i`` of node positions: ``grid + (n, n-1)``."""
    return grid_gradients(x, axes, order)


def deviation_functions(p, tau):
    """``phi_i = sum_s p_s tau^s_i``."""
    return np.einsum("...s,...si->...i", p, tau)


def _rate(xdot, pdot, p, tau, axes, order):
    dp = grid_gradients(p, axes, order)
    return np.einsum("...s,...si->...i", pdot, tau) - np.einsum("...s,...si->...i", xdot, dp)


def deviation_rate(hm, x, p, axes, order=2, omega_eps=1e-12):
    """Rate of the deviation functions along the modified flow.

    ``phidot_i = -(1/Omega) dH/dp . dp/dy^i - (1/Omega) dH/dx . tau_i``
    """
    shape = x.shape[:-1]
    n = x.shape[-1]
    ev = hm.evaluate(x.reshape(-1, n), p.reshape(-1, n))
    om = ev.omega.reshape(shape)
    if np.any(~(om > omega_eps)):
        raise OmegaNonpositive("Omega is not positive on the front")
    xdot = ev.dp.reshape(shape + (n,)) / om[..., None]
    pdot = -ev.dx.reshape(shape + (n,)) / om[..., None]
    return _rate(xdot, pdot, p, variation_vectors(x, axes, order), axes, order)


@dataclass
class DeviationTrace:
    """Time series of deviation data; arrays indexed ``(time,) + grid + ...``."""

    t: np.ndarray
    phi: np.ndarray
    phidot: np.ndarray
    omega: np.ndarray
    edges: np.ndarray

    @property
    def omega_phidot(self):
        return self.omega[..., None] * self.phidot

    def max_abs_phi(self, edge_factor=1.0):
        """Largest ``|phi|``; edge nodes are divided by ``edge_factor``."""
        w = np.where(self.edges, 1.0 / edge_factor, 1.0)[..., None]
        return float(np.max(np.abs(self.phi) * w))

    def omega_phidot_drift(self, select=None):
        """Largest change of ``Omega*phidot`` along a trajectory, relative to
        the largest initial ``|Omega*phidot|`` over the selected nodes."""
        q = self.omega_phidot
        if select is not None:
            q = q[:, select]
        scale = float(np.max(np.abs(q[0])))
        if scale == 0.0:
            return 0.0, 0.0
        return float(np.max(np.abs(q - q[0]))) / scale, scale


@dataclass
class FrontHistory:
    states: List[FrontState]
    trace: DeviationTrace
    H_drift: np.ndarray
    failed: Optional[np.ndarray] = None
    nfev: int = 0

    @property
    def t(self):
        return self.trace.t

    @property
    def final(self):
        return self.states[-1]


def propagate_front(hm, front, sigma, t_end, cfg=None, order=2, on_failure="abort"):
    """Move every node along the modified flow and track the deviations.

    All nodes form one ODE system with a shared step sequence, so each output
    time holds a complete front and the grid stencils can be applied there.
    ``on_failure='mask'`` freezes nodes whose Omega degenerates instead of
    aborting.
    """
    if on_failure not in ("abort", "mask"):
        raise InputError("on_failure must be 'abort' or 'mask'")
    cfg = cfg or IntegratorConfig()
    shape = sigma.shape
    n = sigma.n
    sol = integrate_batch(hm, front.x.reshape(-1, n), front.p.reshape(-1, n), MODIFIED, t_end,
                          cfg, mask_failures=(on_failure == "mask"))
    states = []
    phis, rates, omegas = [], [], []
    for k, t in enumerate(sol.t):
        x = sol.x[k].reshape(shape + (n,))
        p = sol.p[k].reshape(shape + (n,))
        tau = variation_vectors(x, sigma.axes, order)
        phi = deviation_functions(p, tau)
        rate = _rate(sol.dx[k].reshape(shape + (n,)), sol.dp[k].reshape(shape + (n,)),
                     p, tau, sigma.axes, order)
        om = sol.omega[k].reshape(shape)
        states.append(FrontState(float(t), x, p, front.nu, tau, phi, rate,
                                 sol.H[k].reshape(shape), om))
        phis.append(phi)
        rates.append(rate)
        omegas.append(om)
    trace = DeviationTrace(sol.t, np.stack(phis), np.stack(rates), np.stack(omegas),
                           edge_mask(sigma.axes, order))
    failed = None if sol.failed is None else sol.failed.reshape(shape)
    return FrontHistory(states, trace, sol.H_drift.reshape(shape), failed)


def pfaff_residual(hm, sigma, nu, order=2):
    """Residual of the first-order system that ``nu`` obeys on the surface.

    ``dnu/dy^i = -(nu^2/Omega) dn/dy^i . dH/dp - (nu/Omega) dH/dx . tau_i``
    with ``p = nu*n``.  ``nu`` and ``n`` are differenced on the grid; ``tau``
    comes from the exact surface Jacobian.  Returns ``grid + (n-1,)``.
    """
    y = sigma.parameters()
    x = sigma.embed(y)
    tau = tangent_frame(sigma, y)
    nvec = normal_from_frame(tau, sigma.orientation)
    nu = np.asarray(nu, dtype=float)
    p = nu[..., None] * nvec
    ev = hm.evaluate(x.reshape(-1, sigma.n), p.reshape(-1, sigma.n))
    om = ev.omega.reshape(sigma.shape)
    if np.any(~(om > 1e-12)):
        raise OmegaNonpositive("Omega is not positive on the surface")
    Hp = ev.dp.reshape(x.shape)
    Hx = ev.dx.reshape(x.shape)
    dnu = grid_gradients(nu[..., None], sigma.axes, order)[..., 0, :]
    dn = grid_gradients(nvec, sigma.axes, order)
    rhs = (-(nu ** 2 / om)[..., None] * np.einsum("...si,...s->...i", dn, Hp)
           - (nu / om)[..., None] * np.einsum("...s,...si->...i", Hx, tau))
    return dnu - rhs


def first_integral(hm, sigma, nu):
    """``H(x(y), nu(y) n(y))`` at every node."""
    y = sigma.parameters()
    x = sigma.embed(y)
    nvec = normal_covector(sigma, y)
    p = np.asarray(nu, dtype=float)[..., None] * nvec
    return hm.evaluate(x.reshape(-1, sigma.n), p.reshape(-1, sigma.n)).value.reshape(sigma.shape)
