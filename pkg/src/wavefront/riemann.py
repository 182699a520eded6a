"""Riemannian metrics, covariant derivatives of extended fields, and the
normality equations for Newtonian force fields.

Extended fields here live in velocity representation: functions of a base
point ``x`` and a velocity ``u``.  Horizontal gradients combine the plain
x-derivative with a fiber correction ``-u^a Gamma^b_qa d/du^b`` and the usual
connection term for every tensor index.

The force field generator implements the general solution of the complete
normality system for a fiberwise spherical ``W(x, |u|)``:

    F_k = h(W) N_k / W' - (|u| / W') sum_i grad_i W (2 N^i N_k - delta^i_k)

and the residual evaluators measure how far a given force field is from
satisfying the weak and the additional normality equations.
"""

import numpy as np

from . import expr as E
from .errors import (DimensionTooSmall, InputError, NotPositive, OmegaNonpositive, WPrimeZero,
                     ZeroVelocity)
from .field import SPEED, ExtendedScalarField
from .jet import Jet, as_jet


class MetricField:
    """Symmetric matrix of expressions in ``x1..xn``."""

    def __init__(self, entries):
        self.entries = [list(row) for row in entries]
        self.n = len(self.entries)
        if any(len(row) != self.n for row in self.entries):
            raise InputError("metric must be a square matrix of expressions")
        for i in range(self.n):
            for j in range(i):
                if self.entries[i][j].serialize() != self.entries[j][i].serialize():
                    raise InputError(f"metric is not symmetric: g[{i + 1}][{j + 1}] != g[{j + 1}][{i + 1}]")
        self._fns = [[e.compile() for e in row] for row in self.entries]

    @classmethod
    def from_sources(cls, rows):
        n = len(rows)
        alphabet = E.Alphabet({"x": n})
        return cls([[E.parse(str(s), alphabet) for s in row] for row in rows])

    @classmethod
    def euclidean(cls, n):
        return cls.from_sources([["1" if i == j else "0" for j in range(n)] for i in range(n)])

    @classmethod
    def conformal(cls, factor, n):
        """``g = factor(x) * identity``."""
        return cls.from_sources([[factor if i == j else "0" for j in range(n)] for i in range(n)])

    def _env(self, xs):
        return {f"x{i + 1}": xs[i] for i in range(self.n)}

    def value(self, x):
        x = np.asarray(x, dtype=float)
        env = self._env([x[..., i] for i in range(self.n)])
        g = np.empty(x.shape[:-1] + (self.n, self.n))
        for i in range(self.n):
            for j in range(self.n):
                g[..., i, j] = self._fns[i][j](env)
        return g

    def value_and_derivative(self, x):
        """``(g_ij, d_m g_ij)`` with the derivative index last."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        env = self._env(Jet.seed([x[..., i] for i in range(self.n)], 1))
        g = np.empty(shape + (self.n, self.n))
        dg = np.empty(shape + (self.n, self.n, self.n))
        for i in range(self.n):
            for j in range(self.n):
                jt = as_jet(self._fns[i][j](env), self.n, shape)
                g[..., i, j] = jt.v
                dg[..., i, j, :] = np.moveaxis(jt.d, 0, -1)
        return g, dg

    def inverse(self, x):
        g = self.value(x)
        self.require_positive(g)
        return np.linalg.inv(g)

    @staticmethod
    def require_positive(g):
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            raise NotPositive("metric is not positive definite at an evaluation point") from None


def christoffel(g, x):
    """Levi-Civita symbols ``Gamma[..., k, i, j] = Gamma^k_ij``."""
    gv, dg = g.value_and_derivative(x)
    g.require_positive(gv)
    ginv = np.linalg.inv(gv)
    # lowered symbols Gamma_{m i j} = (d_i g_mj + d_j g_mi - d_m g_ij) / 2
    low = 0.5 * (np.einsum("...mji->...mij", dg) + np.einsum("...mij->...mij", dg)
                 - np.einsum("...ijm->...mij", dg))
    return np.einsum("...km,...mij->...kij", ginv, low)


def raise_lower(g, x, w, to="covector"):
    """Lower a vector (``to='covector'``) or raise a covector (``to='vector'``)."""
    w = np.asarray(w, dtype=float)
    if to == "covector":
        return np.einsum("...ij,...j->...i", g.value(x), w)
    if to == "vector":
        return np.einsum("...ij,...j->...i", g.inverse(x), w)
    raise InputError(f"unknown index target {to!r}")


def metric_norm(g, x, u):
    u = np.asarray(u, dtype=float)
    return np.sqrt(np.einsum("...i,...ij,...j->...", u, g.value(x), u))


def horizontal_gradient(value, d_x, d_fiber, gamma, fiber, indices="", representation="velocity"):
    """Horizontal gradient of an extended tensor field from its partials.

    ``value`` has shape ``batch + (n,)*r`` with index kinds given by
    ``indices`` (``'l'`` lower, ``'u'`` upper, one letter per index).
    ``d_x`` and ``d_fiber`` append the derivative index last, and so does
    the result (the gradient index ``q``).

    Velocity representation uses ``- u^a Gamma^b_qa dX/du^b``; momentum
    representation uses ``+ p_a Gamma^a_qb dX/dp_b``.
    """
    r = len(indices)
    value = np.asarray(value, dtype=float)
    batch = value.shape[:value.ndim - r]
    if representation == "velocity":
        corr = -np.einsum("...a,...bqa->...qb", fiber, gamma)
    elif representation == "momentum":
        corr = np.einsum("...a,...aqb->...qb", fiber, gamma)
    else:
        raise InputError(f"unknown representation {representation!r}")
    corr = corr.reshape(batch + (1,) * r + corr.shape[-2:])
    out = d_x + np.einsum("...qb,...b->...q", corr, d_fiber)
    gam = gamma.reshape(batch + (1,) * max(r - 1, 0) + gamma.shape[-3:])
    for k, kind in enumerate(indices):
        pos = len(batch) + k
        vk = np.moveaxis(value, pos, -1)
        if kind == "l":
            term = -np.einsum("...b,...bqj->...jq", vk, gam)
        elif kind == "u":
            term = np.einsum("...a,...iqa->...iq", vk, gam)
        else:
            raise InputError(f"index kind must be 'l' or 'u', got {kind!r}")
        out = out + np.moveaxis(term, -2, pos)
    return out


def metric_gradient(g, x):
    """Horizontal gradient of the metric tensor itself (zero for Levi-Civita)."""
    gv, dg = g.value_and_derivative(x)
    gamma = christoffel(g, x)
    n = g.n
    zero = np.zeros(gv.shape + (n,))
    fiber = np.zeros(gv.shape[:-1])
    return horizontal_gradient(gv, dg, zero, gamma, fiber, "ll")


def vertical_gradient_ext(f, x, w, g=None, raise_index=False):
    """Fiber gradient of a scalar extended field.

    In velocity representation ``df/dv^i`` carries a lower index and in
    momentum representation ``df/dp_i`` an upper one.  With ``raise_index``
    (and a metric) the index is moved to the other position.
    """
    grad = f.fiber_gradient(x, w)
    if not raise_index:
        return grad
    if g is None:
        raise InputError("changing index position needs a metric")
    to = "vector" if f.representation == "velocity" else "covector"
    return raise_lower(g, x, grad, to)


def newtonian_velocity(m, x, v, omega_eps=1e-12):
    """``u = v / Omega(x, v)``."""
    v = np.asarray(v, dtype=float)
    om = np.asarray(m.omega(x, v))
    if np.any(~(om > omega_eps)):
        raise OmegaNonpositive(f"Omega = {om!r} is not positive; Newtonian velocity undefined")
    return v / om[..., None]


class SphericalHamiltonian:
    """``W(x, |u|)`` in speed-scalar representation plus an optional ``h(w)``."""

    def __init__(self, W: ExtendedScalarField, h=None):
        if W.representation != SPEED:
            raise InputError("W must be a speed-scalar field of (x, u)")
        self.W = W
        self.n = W.n
        self.h = h
        self._h = None if h is None else h.compile()

    @classmethod
    def from_sources(cls, W, n, h=None, diff=None):
        from .field import parse_field
        hx = None if h is None else E.parse(h, E.Alphabet(scalars={"w"}))
        return cls(parse_field(W, n, SPEED, diff), hx)

    def h_value(self, w):
        if self._h is None:
            return None
        return np.broadcast_to(np.asarray(self._h({"w": w}), dtype=float), np.shape(w))


def _frame(g, x, u):
    """Metric quantities shared by the force generator and the residuals."""
    gv, dg = g.value_and_derivative(x)
    g.require_positive(gv)
    u = np.asarray(u, dtype=float)
    u_low = np.einsum("...ij,...j->...i", gv, u)
    v = np.sqrt(np.einsum("...i,...i->...", u, u_low))
    if np.any(~(v > 1e-14)):
        raise ZeroVelocity("velocity vector is zero; N = u/|u| undefined")
    return gv, dg, u_low, v


def grad_W(sph, g, x, u):
    """Horizontal gradient of ``W(x, |u|_g)`` and ``W'`` at velocity ``u``."""
    gv, dg, u_low, v = _frame(g, x, u)
    gamma = christoffel(g, x)
    W, Wx, Wu = sph.W.value_and_gradients(x, v)
    Wp = Wu[..., 0]
    dnorm = np.einsum("...abq,...a,...b->...q", dg, u, u) / (2 * v[..., None])
    d_x = Wx + Wp[..., None] * dnorm
    d_u = Wp[..., None] * u_low / v[..., None]
    return horizontal_gradient(W, d_x, d_u, gamma, u), np.asarray(W), Wp, gv, v


def _force(sph, g, x, u, with_h):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    gW, W, Wp, gv, v = grad_W(sph, g, x, u)
    if np.any(np.abs(Wp) <= 1e-14):
        raise WPrimeZero("dW/du vanishes; the force formula is singular")
    N_up = u / v[..., None]
    N_low = np.einsum("...ij,...j->...i", gv, N_up)
    NgW = np.sum(N_up * gW, axis=-1)
    F = -(v / Wp)[..., None] * (2 * NgW[..., None] * N_low - gW)
    if with_h and sph.h is not None:
        F = sph.h_value(W)[..., None] * N_low / Wp[..., None] + F
    return F


def force_spherical(sph, g, x, u):
    """Force field of a fiberwise spherical ``W`` without the ``h`` term."""
    return _force(sph, g, x, u, with_h=False)


def force_general(sph, g, x, u):
    """General solution of the complete normality system, ``h`` term included."""
    return _force(sph, g, x, u, with_h=True)


# force fields -------------------------------------------------------------------

class ForceField:
    """Covariant force components ``F_k(x, u)`` with partial derivatives.

    Subclasses implement :meth:`value` and :meth:`partials`, the latter
    returning ``(F, dF/dx, dF/du)`` with the derivative index last.
    """

    n: int

    def value(self, x, u):
        raise NotImplementedError

    def partials(self, x, u):
        raise NotImplementedError


class ExpressionForce(ForceField):
    """Force components given as expressions in ``x1..xn`` and ``u1..un``."""

    def __init__(self, exprs):
        self.exprs = list(exprs)
        self.n = len(self.exprs)
        self._fns = [e.compile() for e in self.exprs]

    @classmethod
    def from_sources(cls, sources):
        n = len(sources)
        alphabet = E.Alphabet({"x": n, "u": n})
        return cls([E.parse(str(s), alphabet) for s in sources])

    def _eval(self, xs, us, shape, k, order=1):
        env = {f"x{i + 1}": xs[i] for i in range(self.n)}
        env.update({f"u{i + 1}": us[i] for i in range(self.n)})
        return [as_jet(f(env), k, shape, order) if k else f(env) for f in self._fns]

    def value(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        vals = self._eval([x[..., i] for i in range(self.n)], [u[..., i] for i in range(self.n)], shape, 0)
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in vals], axis=-1)

    def partials(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        seeds = Jet.seed([np.broadcast_to(x[..., i], shape) for i in range(self.n)]
                         + [np.broadcast_to(u[..., i], shape) for i in range(self.n)], 1)
        jets = self._eval(seeds[: self.n], seeds[self.n:], shape, 2 * self.n)
        F = np.stack([j.v for j in jets], axis=-1)
        d = np.stack([np.moveaxis(j.d, 0, -1) for j in jets], axis=-2)
        return F, d[..., : self.n], d[..., self.n:]


class GeneratedForce(ForceField):
    """Force produced by :func:`force_general`; partials by 4th-order differences."""

    def __init__(self, sph, g, step=1e-3, include_h=True):
        self.sph = sph
        self.g = g
        self.n = g.n
        self.step = step
        self.include_h = include_h

    def value(self, x, u):
        return _force(self.sph, self.g, x, u, self.include_h)

    def partials(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        F = self.value(x, u)
        return F, _fd4(lambda z: self.value(z, u), x, self.step), _fd4(lambda z: self.value(x, z), u, self.step)


def _fd4(f, z, rel):
    cols = []
    for i in range(z.shape[-1]):
        h = rel * (1.0 + np.abs(z[..., i]))
        vals = []
        for s in (-2, -1, 1, 2):
            zz = z.copy()
            zz[..., i] += s * h
            vals.append(f(zz))
        cols.append((vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h[..., None]))
    return np.stack(cols, axis=-1)


# residuals ----------------------------------------------------------------------

def _setup(F, g, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    gv, dg, u_low, v = _frame(g, x, u)
    ginv = np.linalg.inv(gv)
    gamma = christoffel(g, x)
    Fv, Fx, Fu = F.partials(x, u)
    N_up = u / v[..., None]
    N_low = u_low / v[..., None]
    n = u.shape[-1]
    # P[..., i, k] = P^i_k
    P = np.eye(n) - N_up[..., :, None] * N_low[..., None, :]
    # nabla[..., j, q] = nabla_q F_j
    nabla = horizontal_gradient(Fv, Fx, Fu, gamma, u, "l")
    return dict(F=Fv, Fu=Fu, nabla=nabla, N_up=N_up, N_low=N_low, P=P, v=v, ginv=ginv, n=n)


def projector(g, x, u):
    """``P^i_k = delta^i_k - N^i N_k`` as an array indexed ``[..., i, k]``."""
    gv, _, u_low, v = _frame(g, x, u)
    N_up = np.asarray(u, dtype=float) / v[..., None]
    N_low = u_low / v[..., None]
    return np.eye(N_up.shape[-1]) - N_up[..., :, None] * N_low[..., None, :]


def weak_normality_residual(F, g, x, u):
    """Left-hand sides of the two weak normality equations, each ``[..., k]``."""
    s = _setup(F, g, x, u)
    Fv, Fu, nabla, N_up, P, v = s["F"], s["Fu"], s["nabla"], s["N_up"], s["P"], s["v"]
    vv = v[..., None]
    # d(N^j F_j)/du^i = P^j_i F_j / v + N^j dF_j/du^i
    dNF = np.einsum("...ji,...j->...i", P, Fv) / vv + np.einsum("...j,...ji->...i", N_up, Fu)
    first = np.einsum("...i,...ik->...k", Fv / vv + dNF, P)

    # nabla_i F_j stored as nabla[..., j, i]
    sym = np.swapaxes(nabla, -1, -2) + nabla - 2 * Fv[..., :, None] * Fv[..., None, :] / vv[..., None] ** 2
    a = np.einsum("...ij,...j,...ik->...k", sym, N_up, P)
    F_up = np.einsum("...jk,...k->...j", s["ginv"], Fv)
    b_i = (np.einsum("...j,...ij->...i", F_up, Fu)
           - np.einsum("...r,...j,...rj->...", N_up, N_up, Fu)[..., None] * Fv) / vv
    second = a + np.einsum("...i,...ik->...k", b_i, P)
    return first, second


def additional_normality_residual(F, g, x, u):
    """Residuals of the two additional normality equations.

    Returns ``(A, B)``: ``A[..., e, s]`` is the antisymmetric mismatch of the
    first equation and ``B[..., e, s]`` the trace-free part of the projected
    fiber derivative of ``F^i``.
    """
    n = g.n
    if n < 3:
        raise DimensionTooSmall("the additional normality equations need n >= 3")
    s = _setup(F, g, x, u)
    Fv, Fu, nabla, N_up, P, v = s["F"], s["Fu"], s["nabla"], s["N_up"], s["P"], s["v"]
    vv = v[..., None, None]
    # M[i, j] = N^m F_i dF_j/du^m / v - nabla_i F_j
    dmF = np.einsum("...m,...jm->...j", N_up, Fu)
    M = Fv[..., :, None] * dmF[..., None, :] / vv - np.swapaxes(nabla, -1, -2)
    A = np.einsum("...ie,...js,...ij->...es", P, P, M - np.swapaxes(M, -1, -2))
    # dF^i/du^j = g^{ik} dF_k/du^j
    dFup = np.einsum("...ik,...kj->...ij", s["ginv"], Fu)
    # P^j_s dF^i/du^j P^e_i
    Bm = np.einsum("...js,...ij,...ei->...es", P, dFup, P)
    trace = np.einsum("...jm,...ij,...mi->...", P, dFup, P)
    B = Bm - trace[..., None, None] / (n - 1) * P
    return A, B


def sample_points(g, count, rng, box=1.0, speed=(0.5, 2.0)):
    """Random ``x`` in ``[-box, box]^n`` and ``u`` with metric norm in ``speed``."""
    n = g.n
    x = rng.uniform(-box, box, size=(count, n))
    d = rng.normal(size=(count, n))
    norm = metric_norm(g, x, d)
    u = d / norm[:, None] * rng.uniform(speed[0], speed[1], size=(count, 1))
    return x, u
