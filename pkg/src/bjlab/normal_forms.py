"""Birkhoff normal form at a saddle and the Lazutkin near-boundary check."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .billiard import hit_angles
from .domain import TWO_PI, RadiusProfile
from .taylor import Tps, compose2

# ---------------------------------------------------------------------------
# Birkhoff normal form


def _zero_const(t: Tps) -> Tps:
    t = t.copy()
    t.c[0, 0] = 0.0
    return t


def _linear_change(Fs: Tps, Fp: Tps, P: np.ndarray):
    """Jet of P^-1 F(P z) for a linear P."""
    order = Fs.order
    xi, eta = Tps.var(0, 0.0, order), Tps.var(1, 0.0, order)
    U = P[0, 0] * xi + P[0, 1] * eta
    V = P[1, 0] * xi + P[1, 1] * eta
    Gs, Gp = compose2(Fs, Fp, U, V)
    Q = np.linalg.inv(P)
    return _zero_const(Q[0, 0] * Gs + Q[0, 1] * Gp), _zero_const(Q[1, 0] * Gs + Q[1, 1] * Gp)


def saddle_eigenbasis(A: np.ndarray):
    """(lam, P) with P = [v_u v_s], det P = 1 and A P = P diag(lam, 1/lam)."""
    w, V = np.linalg.eig(A)
    if np.iscomplexobj(w) and np.any(np.abs(w.imag) > 0):
        raise ValueError("fixed point is not hyperbolic")
    w, V = w.real, V.real
    i = int(np.argmax(np.abs(w)))
    lam = float(w[i])
    if abs(lam) <= 1.0:
        raise ValueError("fixed point is not hyperbolic")
    vu, vs = V[:, i] / np.linalg.norm(V[:, i]), V[:, 1 - i]
    vs = vs / (vu[0] * vs[1] - vu[1] * vs[0])
    return lam, np.column_stack([vu, vs])


@dataclass
class BirkhoffNormalForm:
    lam: float
    coeffs: np.ndarray  # a_k, k = 1..K, with Delta = lam + sum a_k (xi eta)^k
    inverse_coeffs: np.ndarray  # b_k for the second component, eta * (1/lam + sum b_k (xi eta)^k)
    basis: np.ndarray
    residual: float
    relative_residual: float
    order: int
    conjugacy: tuple = field(repr=False, default=())

    def delta(self, w):
        w = np.asarray(w, float)
        return self.lam + sum(a * w ** (k + 1) for k, a in enumerate(self.coeffs))

    def area_defect(self):
        """Largest coefficient of Delta(w) * (second multiplier)(w) - 1 through degree K."""
        K = self.coeffs.size
        c = np.concatenate([[self.lam], self.coeffs])
        d = np.concatenate([[1.0 / self.lam], self.inverse_coeffs])
        prod = np.convolve(c, d)[: K + 1]
        prod[0] -= 1.0
        return float(np.max(np.abs(prod)))

    def to_dict(self):
        return {
            "lambda": self.lam,
            "a": self.coeffs.tolist(),
            "b": self.inverse_coeffs.tolist(),
            "basis": self.basis.tolist(),
            "residual": self.residual,
            "relative_residual": self.relative_residual,
            "area_defect": self.area_defect(),
            "order": self.order,
        }


def birkhoff_normal_form(fmap, K: int) -> BirkhoffNormalForm:
    """Normal form T(xi, eta) = (Delta xi, eta / Delta), Delta = lam + sum_{k<=K} a_k (xi eta)^k.

    ``fmap`` needs ``jet(order)`` returning the expansion of F(base + z) - base.
    The conjugacy h = id + O(2) has no resonant terms; ``residual`` is the largest
    coefficient of G o h - h o N through degree 2K + 1.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    order = 2 * K + 1
    Fs, Fp = fmap.jet(order)
    Fs, Fp = _zero_const(Fs), _zero_const(Fp)
    A = np.array([[Fs.c[1, 0], Fs.c[0, 1]], [Fp.c[1, 0], Fp.c[0, 1]]])
    lam, P = saddle_eigenbasis(A)
    Gs, Gp = _linear_change(Fs, Fp, P)
    # linear parts are diag(lam, 1/lam) up to rounding; make them exact
    Gs.c[1, 0], Gs.c[0, 1], Gp.c[1, 0], Gp.c[0, 1] = lam, 0.0, 0.0, 1.0 / lam

    hs, hp = Tps.var(0, 0.0, order), Tps.var(1, 0.0, order)
    Ns, Np = lam * Tps.var(0, 0.0, order), Tps.var(1, 0.0, order) / lam
    for d in range(2, order + 1):
        Ls, Lp = compose2(hs, hp, Ns, Np)
        Rs_, Rp_ = compose2(Gs, Gp, hs, hp)
        Rs, Rp = Ls.c - Rs_.c, Lp.c - Rp_.c
        for a in range(d + 1):
            b = d - a
            mult = lam ** (a - b)
            if a - b == 1:
                Ns.c[a, b] = -Rs[a, b]
            else:
                hs.c[a, b] = Rs[a, b] / (lam - mult)
            if a - b == -1:
                Np.c[a, b] = -Rp[a, b]
            else:
                hp.c[a, b] = Rp[a, b] / (1.0 / lam - mult)
    Ls, Lp = compose2(hs, hp, Ns, Np)
    Rs_, Rp_ = compose2(Gs, Gp, hs, hp)
    resid = float(max(np.max(np.abs(Ls.c - Rs_.c)), np.max(np.abs(Lp.c - Rp_.c))))
    scale = max(1.0, float(np.max(np.abs(Gs.c))), float(np.max(np.abs(Gp.c))))
    a = np.array([Ns.c[k + 1, k] for k in range(1, K + 1)])
    b = np.array([Np.c[k, k + 1] for k in range(1, K + 1)])
    return BirkhoffNormalForm(lam, a, b, P, resid, resid / scale, order, (hs, hp, Ns, Np))


# ---------------------------------------------------------------------------
# Lazutkin coordinates


@dataclass
class LazutkinReport:
    y: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    exponent_r1: float
    exponent_r2: float
    fit_range: tuple

    @property
    def exponent_gap(self):
        return self.exponent_r2 - self.exponent_r1

    def to_dict(self):
        return {
            "y": self.y.tolist(),
            "r1": self.r1.tolist(),
            "r2": self.r2.tolist(),
            "exponent_r1": self.exponent_r1,
            "exponent_r2": self.exponent_r2,
            "exponent_gap": self.exponent_gap,
            "fit_range": list(self.fit_range),
        }


class LazutkinCoordinates:
    """x = int kappa^(2/3) ds / C, y = 2 kappa^(-1/3) phi / C, C = int_0^L kappa^(2/3) ds.

    With these constants the circle map is exactly (x, y) -> (x + y, y).
    """

    def __init__(self, profile: RadiusProfile, nodes: int = 48):
        self.profile = profile
        self._gx, self._gw = np.polynomial.legendre.leggauss(nodes)
        self.C = self._integral(np.array([0.0]), np.array([TWO_PI]), panels=64)[0]

    def _integral(self, a, b, panels=1):
        # int_a^b rho^(1/3) dtheta (kappa^(2/3) ds = rho^(1/3) dtheta)
        a, b = np.asarray(a, float), np.asarray(b, float)
        edges = a[:, None] + (b - a)[:, None] * np.linspace(0.0, 1.0, panels + 1)[None, :]
        lo, hi = edges[:, :-1], edges[:, 1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        th = mid[..., None] + half[..., None] * self._gx
        vals = np.cbrt(self.profile.rho(th.ravel())).reshape(th.shape)
        return np.sum(np.sum(vals * self._gw, axis=-1) * half, axis=-1)

    def y_of(self, theta, phi):
        return 2.0 * np.cbrt(self.profile.rho(theta)) * phi / self.C

    def phi_of(self, theta, y):
        return y * self.C / (2.0 * np.cbrt(self.profile.rho(theta)))

    def step(self, theta, y):
        """(dx, y') for one billiard step from (theta, y); dx is the unwrapped x increment."""
        theta = np.atleast_1d(np.asarray(theta, float))
        phi = self.phi_of(theta, np.asarray(y, float))
        th1, phi1 = hit_angles(self.profile, theta, phi)
        dx = self._integral(theta, th1) / self.C
        return dx, self.y_of(th1, phi1)


def lazutkin_check(profile: RadiusProfile, y_range=(1e-3, 1e-1), n_y: int = 13, n_x: int = 16) -> LazutkinReport:
    """Residuals r1 = x' - x - y and r2 = y' - y near the boundary, with log-log exponents.

    For each y the residual is the largest over ``n_x`` base points.
    """
    L = LazutkinCoordinates(profile)
    ys = np.geomspace(*y_range, n_y)
    theta = np.linspace(0.0, TWO_PI, n_x, endpoint=False) + 0.1
    r1, r2 = np.zeros(n_y), np.zeros(n_y)
    for i, y in enumerate(ys):
        dx, y1 = L.step(theta, np.full(n_x, y))
        r1[i] = np.max(np.abs(dx - y))
        r2[i] = np.max(np.abs(y1 - y))
    e1 = e2 = float("nan")
    if np.all(r1 > 0) and np.all(r2 > 0):
        e1 = float(np.polyfit(np.log(ys), np.log(r1), 1)[0])
        e2 = float(np.polyfit(np.log(ys), np.log(r2), 1)[0])
    return LazutkinReport(ys, r1, r2, e1, e2, tuple(y_range))
