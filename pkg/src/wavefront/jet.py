"""Truncated multivariate Taylor polynomials for forward-mode differentiation.

A :class:`Jet` carries a value together with its gradient and (optionally)
its Hessian with respect to ``k`` seeded directions.  All three parts are
numpy arrays that broadcast over an arbitrary batch shape, so one expression
evaluation differentiates a whole grid of points at once.

With ``h=None`` the jet is an ordinary first-order dual number; with a
Hessian part it is the second-order truncated polynomial (the "nested dual"
of the two-level scheme).
"""

import numpy as np


class Jet:
    __slots__ = ("v", "d", "h")
    # keep ndarray.__add__ & co. from swallowing the jet
    __array_priority__ = 1000

    def __init__(self, v, d, h=None):
        self.v = np.asarray(v, dtype=float)
        self.d = np.asarray(d, dtype=float)
        self.h = None if h is None else np.asarray(h, dtype=float)

    @property
    def k(self):
        return self.d.shape[0]

    @classmethod
    def seed(cls, values, order=1):
        """Independent variables: one jet per entry of ``values``.

        ``values`` is a sequence of k arrays of a common batch shape.
        """
        values = [np.asarray(a, dtype=float) for a in values]
        k = len(values)
        shape = np.broadcast_shapes(*[a.shape for a in values]) if values else ()
        eye = np.eye(k).reshape((k, k) + (1,) * len(shape))
        out = []
        for i, a in enumerate(values):
            d = np.broadcast_to(eye[i], (k,) + shape).copy()
            h = np.zeros((k, k) + shape) if order >= 2 else None
            out.append(cls(np.broadcast_to(a, shape).copy(), d, h))
        return out

    def _lift(self, c):
        c = np.asarray(c, dtype=float)
        return c

    def __repr__(self):
        return f"Jet(v={self.v!r}, d={self.d!r}, h={self.h!r})"

    # arithmetic ----------------------------------------------------------

    def __neg__(self):
        return Jet(-self.v, -self.d, None if self.h is None else -self.h)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Jet):
            h = None if self.h is None or other.h is None else self.h + other.h
            return Jet(self.v + other.v, self.d + other.d, h)
        c = self._lift(other)
        v = self.v + c
        return Jet(v, np.broadcast_to(self.d, self.d.shape[:1] + v.shape),
                   None if self.h is None else np.broadcast_to(self.h, self.h.shape[:2] + v.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            v = self.v * other.v
            d = self.d * other.v + other.d * self.v
            h = None
            if self.h is not None and other.h is not None:
                cross = self.d[:, None] * other.d[None, :]
                h = self.h * other.v + other.h * self.v + cross + np.swapaxes(cross, 0, 1)
            return Jet(v, d, h)
        c = self._lift(other)
        return Jet(self.v * c, self.d * c, None if self.h is None else self.h * c)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * reciprocal(other)
        c = self._lift(other)
        return Jet(self.v / c, self.d / c, None if self.h is None else self.h / c)

    def __rtruediv__(self, other):
        return reciprocal(self) * self._lift(other)

    def __pow__(self, other):
        if isinstance(other, Jet):
            return exp(other * log(self))
        c = float(other)
        a = self.v
        if c == 0.0:
            return Jet(np.ones_like(a), np.zeros_like(self.d),
                       None if self.h is None else np.zeros_like(self.h))
        if c == 1.0:
            return self
        if c == 2.0:
            return unary(self, a * a, 2.0 * a, np.full_like(a, 2.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            f0 = a ** c
            f1 = c * a ** (c - 1.0)
            f2 = c * (c - 1.0) * a ** (c - 2.0) if self.h is not None else None
        return unary(self, f0, f1, f2)

    def __rpow__(self, other):
        c = float(other)
        return exp(self * np.log(c))


def unary(a, f0, f1, f2):
    """Chain rule for a scalar function with value f0 and derivatives f1, f2.

    Singular derivatives (inf times a zero seed) become NaN here and are
    reported by the field layer as a typed error.
    """
    with np.errstate(invalid="ignore", over="ignore"):
        d = f1 * a.d
        h = None
        if a.h is not None:
            h = f1 * a.h + f2 * (a.d[:, None] * a.d[None, :])
    return Jet(f0, d, h)


def reciprocal(a):
    v = a.v
    with np.errstate(divide="ignore", invalid="ignore"):
        r = 1.0 / v
        return unary(a, r, -r * r, 2.0 * r * r * r if a.h is not None else None)


def _mk(fn, d1, d2):
    def op(a):
        if not isinstance(a, Jet):
            return fn(a)
        v = a.v
        with np.errstate(divide="ignore", invalid="ignore"):
            f0 = fn(v)
            f1 = d1(v, f0)
            f2 = d2(v, f0) if a.h is not None else None
        return unary(a, f0, f1, f2)

    op.__name__ = fn.__name__
    return op


sin = _mk(np.sin, lambda v, f: np.cos(v), lambda v, f: -f)
cos = _mk(np.cos, lambda v, f: -np.sin(v), lambda v, f: -f)
tan = _mk(np.tan, lambda v, f: 1.0 + f * f, lambda v, f: 2.0 * f * (1.0 + f * f))
exp = _mk(np.exp, lambda v, f: f, lambda v, f: f)
log = _mk(np.log, lambda v, f: 1.0 / v, lambda v, f: -1.0 / (v * v))
sqrt = _mk(np.sqrt, lambda v, f: 0.5 / f, lambda v, f: -0.25 / (f * f * f))
absolute = _mk(np.abs, lambda v, f: np.sign(v), lambda v, f: np.zeros_like(v))
sinh = _mk(np.sinh, lambda v, f: np.cosh(v), lambda v, f: f)
cosh = _mk(np.cosh, lambda v, f: np.sinh(v), lambda v, f: f)
tanh = _mk(np.tanh, lambda v, f: 1.0 - f * f, lambda v, f: -2.0 * f * (1.0 - f * f))
atan = _mk(np.arctan, lambda v, f: 1.0 / (1.0 + v * v),
           lambda v, f: -2.0 * v / (1.0 + v * v) ** 2)


def value(a):
    """Plain value of a jet or number."""
    return a.v if isinstance(a, Jet) else np.asarray(a, dtype=float)


def as_jet(a, k, shape, order=1):
    """Promote a constant result to a jet with zero derivatives."""
    if isinstance(a, Jet):
        return a
    v = np.broadcast_to(np.asarray(a, dtype=float), shape).copy()
    h = np.zeros((k, k) + shape) if order >= 2 else None
    return Jet(v, np.zeros((k,) + shape), h)
