"""Extended scalar fields: expressions of a base point x and a fiber variable.

The fiber variable is a velocity ``v``, a momentum ``p``, or a single speed
scalar ``u``.  Every derivative the rest of the package needs (fiber
gradients, fiber Hessians, base partials) is provided here, either by
forward-mode jets or by central finite differences.

Points may be batched: ``x`` of shape ``(..., n)`` and ``w`` of shape
``(..., n)`` (or ``(...)`` for the speed scalar) evaluate a whole grid in one
call.
"""

from dataclasses import dataclass

import numpy as np

from . import expr as E
from .errors import BackendMismatch, InputError, NonFiniteDerivative
from .jet import Jet, as_jet

VELOCITY = "velocity"
MOMENTUM = "momentum"
SPEED = "speed-scalar"
_FIBER_PREFIX = {VELOCITY: "v", MOMENTUM: "p"}


@dataclass(frozen=True)
class DiffConfig:
    """Differentiation backend.

    ``fd_step`` is the relative step for first derivatives; second
    derivatives use ``fd_step2`` (a larger step keeps the rounding error of
    the second difference near 1e-8).
    """

    mode: str = "ad"
    fd_step: float = 1e-6
    fd_step2: float = 1e-4
    cross_check: bool = False

    def __post_init__(self):
        if self.mode not in ("ad", "fd"):
            raise InputError(f"unknown differentiation mode {self.mode!r}")
        if not (self.fd_step > 0 and self.fd_step2 > 0):
            raise InputError("finite-difference steps must be positive")


def alphabet_for(n, representation):
    if representation == SPEED:
        return E.Alphabet({"x": n}, scalars={"u"})
    if representation not in _FIBER_PREFIX:
        raise InputError(f"unknown representation {representation!r}")
    return E.Alphabet({"x": n, _FIBER_PREFIX[representation]: n})


def _finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteDerivative(f"non-finite {what}")
    return arr


class ExtendedScalarField:
    """Scalar function of (x, w) backed by a parsed expression."""

    def __init__(self, expression, n, representation, diff=None):
        self.expr = expression
        self.n = int(n)
        self.representation = representation
        self.diff = diff or DiffConfig()
        self._fn = expression.compile()
        self.base_names = [f"x{i}" for i in range(1, self.n + 1)]
        if representation == SPEED:
            self.fiber_names = ["u"]
        else:
            prefix = _FIBER_PREFIX[representation]
            self.fiber_names = [f"{prefix}{i}" for i in range(1, self.n + 1)]

    def __repr__(self):
        return f"ExtendedScalarField({self.expr.source!r}, n={self.n}, {self.representation})"

    def with_diff(self, diff):
        return ExtendedScalarField(self.expr, self.n, self.representation, diff)

    @property
    def m(self):
        """Fiber dimension."""
        return len(self.fiber_names)

    # low level -----------------------------------------------------------

    def _split(self, x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.representation == SPEED:
            w = w[..., None]
        if x.shape[-1] != self.n or w.shape[-1] != self.m:
            raise InputError(
                f"expected x with {self.n} and fiber with {self.m} components, "
                f"got shapes {x.shape} and {w.shape}")
        shape = np.broadcast_shapes(x.shape[:-1], w.shape[:-1])
        xs = [np.broadcast_to(x[..., i], shape) for i in range(self.n)]
        ws = [np.broadcast_to(w[..., i], shape) for i in range(self.m)]
        return xs, ws, shape

    def _call(self, xs, ws):
        env = dict(zip(self.base_names, xs))
        env.update(zip(self.fiber_names, ws))
        return self._fn(env)

    def jet(self, x, w, wrt="w", order=1):
        """Jet of the field seeded in the fiber (``w``), base (``x``) or both (``xw``)."""
        xs, ws, shape = self._split(x, w)
        if wrt == "w":
            ws = Jet.seed(ws, order)
            k = self.m
        elif wrt == "x":
            xs = Jet.seed(xs, order)
            k = self.n
        elif wrt == "xw":
            seeded = Jet.seed(xs + ws, order)
            xs, ws = seeded[: self.n], seeded[self.n:]
            k = self.n + self.m
        else:
            raise ValueError(wrt)
        return as_jet(self._call(xs, ws), k, shape, order)

    # public evaluation ---------------------------------------------------

    def value(self, x, w):
        xs, ws, shape = self._split(x, w)
        out = np.broadcast_to(np.asarray(self._call(xs, ws), dtype=float), shape)
        return out.copy() if out.ndim else float(out)

    def fiber_gradient(self, x, w):
        return self._checked("fiber_gradient", x, w)

    def base_partials(self, x, w):
        return self._checked("base_partials", x, w)

    def fiber_second(self, x, w):
        """Raw symmetric matrix of second fiber derivatives."""
        return self._checked("fiber_second", x, w)

    def fiber_hessian(self, x, w):
        """Half the second fiber derivative, the mu-matrix convention."""
        return 0.5 * self.fiber_second(x, w)

    def value_and_gradients(self, x, w):
        """(f, df/dx, df/dw) in one pass."""
        if self.diff.mode == "ad":
            j = self.jet(x, w, "xw", 1)
            d = np.moveaxis(j.d, 0, -1)
            out = (j.v, d[..., : self.n], d[..., self.n:])
        else:
            out = (np.asarray(self.value(x, w)), self._fd("base_partials", x, w),
                   self._fd("fiber_gradient", x, w))
        _finite(out[1], f"base derivative of {self.expr.source!r}")
        _finite(out[2], f"fiber derivative of {self.expr.source!r}")
        return out

    def _checked(self, kind, x, w):
        if self.diff.mode == "ad":
            out = self._ad(kind, x, w)
        else:
            out = self._fd(kind, x, w)
        _finite(out, f"{kind} of {self.expr.source!r}")
        if self.diff.cross_check:
            other = self._fd(kind, x, w) if self.diff.mode == "ad" else self._ad(kind, x, w)
            tol = 1e-4 if kind == "fiber_second" else 1e-6
            scale = max(1.0, float(np.max(np.abs(out))) if out.size else 1.0)
            if np.max(np.abs(out - other), initial=0.0) > tol * scale:
                raise BackendMismatch(f"{kind} of {self.expr.source!r}: AD and FD disagree")
        return out

    def _ad(self, kind, x, w):
        if kind == "fiber_gradient":
            return np.moveaxis(self.jet(x, w, "w", 1).d, 0, -1)
        if kind == "base_partials":
            return np.moveaxis(self.jet(x, w, "x", 1).d, 0, -1)
        if kind == "fiber_second":
            h = self.jet(x, w, "w", 2).h
            h = np.moveaxis(np.moveaxis(h, 0, -1), 0, -1)
            return 0.5 * (h + np.swapaxes(h, -1, -2))
        raise ValueError(kind)

    def _fd(self, kind, x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.representation == SPEED:
            w = w[..., None]
        wrap = (lambda ww: ww[..., 0]) if self.representation == SPEED else (lambda ww: ww)

        def f(xx, ww):
            return np.asarray(self.value(xx, wrap(ww)), dtype=float)

        if kind == "fiber_gradient":
            return _fd_grad(lambda ww: f(x, ww), w, self.diff.fd_step)
        if kind == "base_partials":
            return _fd_grad(lambda xx: f(xx, w), x, self.diff.fd_step)
        if kind == "fiber_second":
            return _fd_hess(lambda ww: f(x, ww), w, self.diff.fd_step2)
        raise ValueError(kind)


def _fd_grad(f, z, rel):
    z = np.asarray(z, dtype=float)
    cols = []
    for i in range(z.shape[-1]):
        h = rel * (1.0 + np.abs(z[..., i]))
        zp = z.copy()
        zm = z.copy()
        zp[..., i] += h
        zm[..., i] -= h
        # use the representable step
        hh = zp[..., i] - zm[..., i]
        cols.append((f(zp) - f(zm)) / hh)
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _fd_hess(f, z, rel):
    z = np.asarray(z, dtype=float)
    m = z.shape[-1]
    hs = [rel * (1.0 + np.abs(z[..., i])) for i in range(m)]

    def shifted(i, si, j=None, sj=0.0):
        zz = z.copy()
        zz[..., i] += si * hs[i]
        if j is not None:
            zz[..., j] += sj * hs[j]
        return f(zz)

    f0 = f(z)
    out = [[None] * m for _ in range(m)]
    for i in range(m):
        out[i][i] = (shifted(i, 1.0) - 2.0 * f0 + shifted(i, -1.0)) / (hs[i] * hs[i])
        for j in range(i + 1, m):
            val = (shifted(i, 1.0, j, 1.0) - shifted(i, 1.0, j, -1.0)
                   - shifted(i, -1.0, j, 1.0) + shifted(i, -1.0, j, -1.0)) / (4.0 * hs[i] * hs[j])
            out[i][j] = out[j][i] = val
    rows = [np.stack(np.broadcast_arrays(*r), axis=-1) for r in out]
    return np.stack(np.broadcast_arrays(*rows), axis=-2)


# module-level operations ------------------------------------------------------

def parse_field(source, n, representation, diff=None):
    """Parse ``source`` into an extended scalar field of dimension ``n``."""
    if int(n) < 1:
        raise InputError("dimension must be at least 1")
    expression = E.parse(source, alphabet_for(int(n), representation))
    return ExtendedScalarField(expression, n, representation, diff)


def eval_field(f, x, w):
    return f.value(x, w)


def fiber_gradient(f, x, w):
    return f.fiber_gradient(x, w)


def base_partials(f, x, w):
    return f.base_partials(x, w)


def fiber_hessian(f, x, w):
    return f.fiber_hessian(x, w)
