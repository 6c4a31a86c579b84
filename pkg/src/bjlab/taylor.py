"""Truncated Taylor arithmetic in one and two variables.

Univariate series are plain coefficient arrays ``c[k]`` (coefficient of x**k).
Bivariate series are :class:`Tps` objects holding ``c[a, b]`` for the monomial
u**a v**b with a + b <= order.
"""
from __future__ import annotations

import math

import numpy as np

# ---------------------------------------------------------------------------
# univariate helpers


def umul(a, b, order):
    return np.convolve(a[: order + 1], b[: order + 1])[: order + 1]


def urecip(a, order):
    a = np.asarray(a, dtype=float)
    out = np.zeros(order + 1)
    out[0] = 1.0 / a[0]
    for k in range(1, order + 1):
        m = min(k, len(a) - 1)
        out[k] = -np.dot(a[1 : m + 1], out[k - 1 :: -1][:m]) / a[0]
    return out


def uexp(a, order):
    """exp of a univariate series (recurrence k e_k = sum j a_j e_{k-j})."""
    a = np.zeros(order + 1) if len(a) == 0 else np.pad(np.asarray(a, float), (0, max(0, order + 1 - len(a))))[: order + 1]
    out = np.zeros(order + 1)
    out[0] = math.exp(a[0])
    for k in range(1, order + 1):
        j = np.arange(1, k + 1)
        out[k] = np.dot(j * a[1 : k + 1], out[k - 1 :: -1][:k]) / k
    return out


def ucompose(outer, inner, order):
    """outer(inner(x)) where inner has zero constant term."""
    inner = np.asarray(inner, float)[: order + 1].copy()
    inner[0] = 0.0
    res = np.zeros(order + 1)
    for k in range(min(order, len(outer) - 1), -1, -1):
        res = umul(res, inner, order)
        res[0] += outer[k]
    return res


def ushift_poly(coeffs, x0, order):
    """Taylor coefficients at x0 of the polynomial sum coeffs[k] x**k."""
    p = np.polynomial.Polynomial(coeffs)
    out = np.zeros(order + 1)
    for k in range(order + 1):
        if p.degree() < 0:
            break
        out[k] = p(x0) / math.factorial(k)
        p = p.deriv()
        if len(p.coef) == 1 and p.coef[0] == 0.0 and k < order:
            break
    return out


def urevert(a, order):
    """Series reversion: g with a(g(y)) = y for a(x) = a1 x + a2 x^2 + ...

    ``a[0]`` is ignored.
    """
    a = np.asarray(a, float)
    g = np.zeros(order + 1)
    if order == 0:
        return g
    g[1] = 1.0 / a[1]
    target = np.zeros(order + 1)
    target[1] = 1.0
    lin = a.copy()
    lin[0] = 0.0
    # Newton in series space doubles the number of correct coefficients.
    for _ in range(int(math.ceil(math.log2(order + 1))) + 2):
        r = ucompose(lin, g, order) - target
        deriv = ucompose(np.arange(1, len(lin)) * lin[1:], g, order)
        g = g - umul(r, urecip(deriv, order), order)
    return g


def sin_coeffs(c0, order):
    k = np.arange(order + 1)
    return np.sin(c0 + k * np.pi / 2) / _fact(order)


def cos_coeffs(c0, order):
    k = np.arange(order + 1)
    return np.cos(c0 + k * np.pi / 2) / _fact(order)


def _fact(order):
    return np.array([math.factorial(k) for k in range(order + 1)], dtype=float)


# ---------------------------------------------------------------------------
# bivariate truncated power series


class Tps:
    """Truncated power series in two variables (u, v) through total degree ``order``."""

    __slots__ = ("order", "c")

    def __init__(self, c, order=None):
        c = np.asarray(c, dtype=float)
        if order is None:
            order = c.shape[0] - 1
        self.order = order
        self.c = _mask(c, order)

    # construction ----------------------------------------------------------
    @classmethod
    def const(cls, value, order):
        c = np.zeros((order + 1, order + 1))
        c[0, 0] = value
        return cls(c, order)

    @classmethod
    def var(cls, which, value, order):
        c = np.zeros((order + 1, order + 1))
        c[0, 0] = value
        if order >= 1:
            c[(1, 0) if which == 0 else (0, 1)] = 1.0
        return cls(c, order)

    def copy(self):
        return Tps(self.c.copy(), self.order)

    @property
    def value(self):
        return float(self.c[0, 0])

    def partial(self, a, b):
        """Partial derivative d^{a+b}/du^a dv^b at the expansion point."""
        return float(self.c[a, b] * math.factorial(a) * math.factorial(b))

    def degree_part(self, k):
        """Coefficients (c[k,0], c[k-1,1], ..., c[0,k])."""
        return np.array([self.c[k - j, j] for j in range(k + 1)])

    def truncate(self, order):
        return Tps(self.c[: order + 1, : order + 1], order)

    # arithmetic ------------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Tps):
            if other.order != self.order:
                raise ValueError("order mismatch")
            return other
        return Tps.const(float(other), self.order)

    def __add__(self, other):
        o = self._coerce(other)
        return Tps(self.c + o.c, self.order)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Tps(self.c - o.c, self.order)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __neg__(self):
        return Tps(-self.c, self.order)

    def __mul__(self, other):
        if not isinstance(other, Tps):
            return Tps(self.c * float(other), self.order)
        return Tps(_mul2(self.c, other.c, self.order), self.order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Tps):
            return Tps(self.c / float(other), self.order)
        return self * other.recip()

    def __rtruediv__(self, other):
        return self.recip() * float(other)

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers")
        out = Tps.const(1.0, self.order)
        for _ in range(k):
            out = out * self
        return out

    # elementary functions --------------------------------------------------
    def apply(self, coeffs):
        """sum_k coeffs[k] (self - self(0))**k, coeffs being Taylor data at self(0)."""
        x = self.c.copy()
        x[0, 0] = 0.0
        n = min(self.order, len(coeffs) - 1)
        res = np.zeros_like(x)
        res[0, 0] = coeffs[n]
        for k in range(n - 1, -1, -1):
            res = _mul2(res, x, self.order)
            res[0, 0] += coeffs[k]
        return Tps(res, self.order)

    def recip(self):
        c0 = self.value
        if c0 == 0.0:
            raise ZeroDivisionError("reciprocal of series with zero constant term")
        k = np.arange(self.order + 1)
        return self.apply((-1.0) ** k / c0 ** (k + 1))

    def sqrt(self):
        c0 = self.value
        if c0 <= 0.0:
            raise ValueError("sqrt of non-positive series")
        coeffs = [math.sqrt(c0)]
        for k in range(1, self.order + 1):
            coeffs.append(coeffs[-1] * (0.5 - (k - 1)) / k / c0)
        return self.apply(np.array(coeffs))

    def sin(self):
        return self.apply(sin_coeffs(self.value, self.order))

    def cos(self):
        return self.apply(cos_coeffs(self.value, self.order))

    def exp(self):
        return self.apply(math.exp(self.value) / _fact(self.order))

    def __repr__(self):
        return f"Tps(order={self.order}, value={self.value!r})"


def _mask(c, order):
    out = np.zeros((order + 1, order + 1))
    n = min(c.shape[0], order + 1)
    m = min(c.shape[1], order + 1)
    out[:n, :m] = c[:n, :m]
    a, b = np.indices(out.shape)
    out[a + b > order] = 0.0
    return out


_TRI = {}


def _tri(order):
    t = _TRI.get(order)
    if t is None:
        a, b = np.indices((order + 1, order + 1))
        t = _TRI[order] = a + b > order
    return t


def _mul2(x, y, order):
    # pack (a, b) -> a*M + b so that a 1-d convolution is a 2-d one
    n = order + 1
    m = 2 * order + 1
    px = np.zeros((n, m))
    py = np.zeros((n, m))
    px[:, :n] = x
    py[:, :n] = y
    prod = np.convolve(px.ravel(), py.ravel())
    need = n * m
    if prod.size < need:
        prod = np.pad(prod, (0, need - prod.size))
    out = prod[:need].reshape(n, m)[:, :n].copy()
    out[_tri(order)] = 0.0
    return out


def compose2(outer_s: Tps, outer_p: Tps, inner_s: Tps, inner_p: Tps):
    """Compose two-component series: outer(inner - inner(0)).

    ``outer_*`` are expansions in (u, v) about the point ``inner(0)``.
    """
    order = outer_s.order
    du = inner_s.c.copy()
    du[0, 0] = 0.0
    dv = inner_p.c.copy()
    dv[0, 0] = 0.0
    upow = [np.zeros_like(du)]
    upow[0][0, 0] = 1.0
    vpow = [upow[0].copy()]
    for _ in range(order):
        upow.append(_mul2(upow[-1], du, order))
        vpow.append(_mul2(vpow[-1], dv, order))
    out = []
    for outer in (outer_s, outer_p):
        res = np.zeros_like(du)
        for a in range(order + 1):
            row = np.zeros_like(du)
            for b in range(order + 1 - a):
                if outer.c[a, b] != 0.0:
                    row += outer.c[a, b] * vpow[b]
            if a:
                row = _mul2(row, upow[a], order)
            res += row
        out.append(Tps(res, order))
    return out[0], out[1]
