"""Invariant manifolds of hyperbolic periodic points, splitting functions and tangencies.

A manifold branch is stored through its parameterization W with
F(W(t)) = W(mu t), mu = lambda (unstable) or 1/lambda (stable).  Near the
fixed point W is a Taylor polynomial; further out a point is obtained by
pulling the parameter into the seed interval and iterating the map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize

from .billiard import map_jet, next_hit_array
from .errors import ConditionViolation, ManifoldError
from .orbits import PeriodicOrbit
from .taylor import Tps, umul

SEED_DEFECT = 1e-10
VERTICAL_TOL = 1e-10


# ---------------------------------------------------------------------------
# maps with a hyperbolic fixed point


class SaddleMap:
    """Planar map with a fixed point ``base``; coordinates are (x, y) arrays."""

    base: np.ndarray
    period: float | None = None

    def forward(self, P):
        raise NotImplementedError

    def inverse(self, P):
        raise NotImplementedError

    def jet(self, order) -> tuple[Tps, Tps]:
        """Taylor expansion of F(base + (u, v)) - base."""
        raise NotImplementedError

    def diff(self, P, Q):
        """Q - P with the periodic coordinate wrapped."""
        d = np.asarray(Q, float) - np.asarray(P, float)
        if self.period is not None:
            d[..., 0] = (d[..., 0] + 0.5 * self.period) % self.period - 0.5 * self.period
        return d

    def wrap(self, P):
        P = np.array(P, float)
        if self.period is not None:
            P[..., 0] = P[..., 0] % self.period
        return P

    def linear_part(self):
        s, f = self.jet(1)
        return np.array([[s.c[1, 0], s.c[0, 1]], [f.c[1, 0], f.c[0, 1]]])


class LinearSaddle(SaddleMap):
    """F(z) = A z for a hyperbolic matrix A."""

    def __init__(self, A):
        self.A = np.asarray(A, float)
        self.Ainv = np.linalg.inv(self.A)
        self.base = np.zeros(2)

    def forward(self, P):
        return np.atleast_2d(np.asarray(P, float)) @ self.A.T

    def inverse(self, P):
        return np.atleast_2d(np.asarray(P, float)) @ self.Ainv.T

    def jet(self, order):
        u, v = Tps.var(0, 0.0, order), Tps.var(1, 0.0, order)
        return self.A[0, 0] * u + self.A[0, 1] * v, self.A[1, 0] * u + self.A[1, 1] * v


class PolynomialSaddle(SaddleMap):
    """F(x, y) = (lam x, (y + c x^2) / lam): area preserving with explicit inverse."""

    def __init__(self, lam: float, c: float = 0.0):
        self.lam, self.c = float(lam), float(c)
        self.base = np.zeros(2)

    def forward(self, P):
        P = np.atleast_2d(np.asarray(P, float))
        x, y = P[:, 0], P[:, 1]
        return np.stack([self.lam * x, (y + self.c * x * x) / self.lam], axis=1)

    def inverse(self, P):
        P = np.atleast_2d(np.asarray(P, float))
        x = P[:, 0] / self.lam
        return np.stack([x, self.lam * P[:, 1] - self.c * x * x], axis=1)

    def jet(self, order):
        s = Tps.var(0, 0.0, order) * self.lam
        u = Tps.var(0, 0.0, order)
        f = (Tps.var(1, 0.0, order) + u * u * self.c) * (1.0 / self.lam)
        return s, f


class BilliardReturn(SaddleMap):
    """f^q near the periodic point ``orbit.points[index]`` in (s, phi) coordinates."""

    def __init__(self, profile, orbit: PeriodicOrbit, index: int = 0):
        self.profile = profile
        self.orbit = orbit
        self.index = index
        self.q = orbit.q
        p = orbit.points[index]
        self.point = p
        self.base = np.array([p.s, p.phi])
        self.period = profile.length

    def forward(self, P):
        P = np.atleast_2d(np.asarray(P, float))
        s, f = P[:, 0] % self.period, P[:, 1]
        for _ in range(self.q):
            s, f = next_hit_array(self.profile, s, f)
        return np.stack([s, f], axis=1)

    def inverse(self, P):
        P = np.atleast_2d(np.asarray(P, float))
        s, f = P[:, 0] % self.period, math.pi - P[:, 1]
        for _ in range(self.q):
            s, f = next_hit_array(self.profile, s, f)
        return np.stack([s, math.pi - f], axis=1)

    def jet(self, order):
        j = map_jet(self.profile, self.point, order, steps=self.q)
        s, f = j.tps()
        s = s.copy()
        f = f.copy()
        s.c[0, 0] = 0.0
        f.c[0, 0] = 0.0
        return s, f


# ---------------------------------------------------------------------------
# parameterization method


def _compose_uni(F: Tps, U, V, order):
    """Univariate series of F(U(t), V(t)) for series U, V without constant term."""
    out = np.zeros(order + 1)
    n = F.order
    Upow = [np.eye(1, order + 1, 0)[0]]
    for _ in range(n):
        Upow.append(umul(Upow[-1], U, order))
    Vpow = np.eye(1, order + 1, 0)[0]
    for b in range(n + 1):
        for a in range(n + 1 - b):
            if F.c[a, b] != 0.0:
                out += F.c[a, b] * umul(Upow[a], Vpow, order)
        Vpow = umul(Vpow, V, order)
    return out


def manifold_coefficients(Fs: Tps, Fp: Tps, mu: float, vec, order: int):
    """Coefficients w_k (k = 0..order) of W with F(W(t)) = W(mu t), W'(0) = vec."""
    A = np.array([[Fs.c[1, 0], Fs.c[0, 1]], [Fp.c[1, 0], Fp.c[0, 1]]])
    W = np.zeros((2, order + 1))
    W[:, 1] = vec
    for k in range(2, order + 1):
        cs = _compose_uni(Fs, W[0], W[1], k)[k]
        cp = _compose_uni(Fp, W[0], W[1], k)[k]
        M = mu**k * np.eye(2) - A
        W[:, k] = np.linalg.solve(M, np.array([cs, cp]))
    return W


@dataclass
class ManifoldArc:
    kind: str  # "unstable" or "stable"
    sign: int
    mu: float
    lam: float
    coeffs: np.ndarray
    seed_radius: float
    local_order: int
    fmap: SaddleMap = field(repr=False)
    anchor: PeriodicOrbit | None = None
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    samples: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    arclength: np.ndarray = field(default_factory=lambda: np.zeros(0))
    chord_error: float = 0.0
    seed_defect: float = 0.0

    def local(self, t):
        t = np.asarray(t, float)
        pw = t[:, None] ** np.arange(self.coeffs.shape[1])[None, :]
        return self.fmap.base[None, :] + pw @ self.coeffs.T

    def depth(self, t):
        """Number of map iterations needed to bring parameter t into the seed interval."""
        t = np.abs(np.atleast_1d(np.asarray(t, float)))
        with np.errstate(divide="ignore"):
            k = np.where(t <= self.seed_radius, 0, np.ceil(np.log(t / self.seed_radius) / math.log(self.lam) - 1e-12))
        return k.astype(int)

    def evaluate(self, t, depth: int | None = None):
        """Points W(t) in map coordinates.

        With ``depth`` fixed every point uses the same number of iterations, so
        the result is smooth in t (the seed defect otherwise shows up as tiny
        jumps between fundamental domains).
        """
        t = np.atleast_1d(np.asarray(t, float))
        out = np.empty((t.size, 2))
        k = self.depth(t) if depth is None else np.full(t.size, int(depth))
        step = self.fmap.forward if self.kind == "unstable" else self.fmap.inverse
        for kk in np.unique(k):
            idx = np.nonzero(k == kk)[0]
            tau = t[idx] / (self.mu**kk if self.kind == "unstable" else self.mu ** (-kk))
            P = self.local(tau)
            for _ in range(kk):
                P = step(P)
            out[idx] = self.fmap.wrap(P)
        return out

    def tangent(self, t, h=None):
        t = np.atleast_1d(np.asarray(t, float))
        h = 1e-6 * np.maximum(np.abs(t), 1e-12) if h is None else h
        return self.fmap.diff(self.evaluate(t - h), self.evaluate(t + h)) / (2 * h)[..., None] if np.ndim(h) else self.fmap.diff(self.evaluate(t - h), self.evaluate(t + h)) / (2 * h)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,arclength,s,phi\n")
            for t, a, (x, y) in zip(self.t, self.arclength, self.samples):
                fh.write(f"{t:.17g},{a:.17g},{x:.17g},{y:.17g}\n")

    def to_dict(self):
        return {
            "kind": self.kind,
            "sign": self.sign,
            "lambda": self.lam,
            "seed_radius": self.seed_radius,
            "local_order": self.local_order,
            "seed_defect": self.seed_defect,
            "chord_error": self.chord_error,
            "n_samples": int(self.t.size),
        }


def _eigen(A):
    tr = np.trace(A)
    det = np.linalg.det(A)
    disc = tr * tr - 4 * det
    if disc <= 0 or abs(tr) <= 2.0 * math.sqrt(abs(det)) * (1 + 1e-12):
        raise ConditionViolation(f"fixed point not hyperbolic (trace {tr:.6g})")
    lam = 0.5 * (tr + math.copysign(math.sqrt(disc), tr))
    return lam, det / lam


def _eigvec(A, mu):
    R = A - mu * np.eye(2)
    row = R[0] if np.linalg.norm(R[0]) >= np.linalg.norm(R[1]) else R[1]
    v = np.array([-row[1], row[0]])
    v = v / np.linalg.norm(v)
    return v if v[0] > 0 or (v[0] == 0 and v[1] > 0) else -v


def local_manifold(fmap: SaddleMap, kind: str = "unstable", sign: int = 1, order: int = 3,
                   radius: float | None = None, anchor=None, defect_tol=SEED_DEFECT) -> ManifoldArc:
    """Taylor seed of a manifold branch, shrinking the seed radius until the defect is below tol."""
    if kind not in ("unstable", "stable") or sign not in (1, -1):
        raise ValueError("kind must be unstable|stable and sign +-1")
    Fs, Fp = fmap.jet(order)
    A = np.array([[Fs.c[1, 0], Fs.c[0, 1]], [Fp.c[1, 0], Fp.c[0, 1]]])
    lam_u, lam_s = _eigen(A)
    mu = lam_u if kind == "unstable" else lam_s
    v = _eigvec(A, mu)
    if fmap.period is not None and abs(v[0]) < VERTICAL_TOL:
        raise ConditionViolation("eigenvector is vertical")
    W = manifold_coefficients(Fs, Fp, mu, v, order)
    arc = ManifoldArc(kind, sign, mu, abs(lam_u), W, 0.0, order, fmap, anchor)
    r = radius if radius is not None else 0.05
    for _ in range(60):
        arc.seed_radius = r
        arc.seed_defect = seed_defect(arc)
        if arc.seed_defect < defect_tol:
            break
        r *= 0.7
    else:
        raise ManifoldError("seed defect did not reach tolerance")
    t = sign * np.linspace(0.0, r, 33)
    arc.t, arc.samples = t, fmap.wrap(arc.local(t))
    arc.arclength = _arclength(fmap, arc.samples)
    return arc


def seed_defect(arc: ManifoldArc, n=33):
    """max |F(W(t)) - W(mu t)| on the seed interval (inverse map for stable branches)."""
    r = arc.seed_radius
    lo = r / abs(arc.mu) if arc.kind == "unstable" else r * abs(arc.mu)
    t = arc.sign * np.linspace(lo, r, n) if arc.kind == "unstable" else arc.sign * np.linspace(lo, r, n)
    if arc.kind == "unstable":
        img = arc.fmap.forward(arc.local(t / arc.mu))
        ref = arc.local(t)
    else:
        img = arc.fmap.inverse(arc.local(t * arc.mu))
        ref = arc.local(t)
    return float(np.max(np.linalg.norm(arc.fmap.diff(ref, img), axis=1)))


def _arclength(fmap, P):
    if len(P) < 2:
        return np.zeros(len(P))
    d = np.linalg.norm(fmap.diff(P[:-1], P[1:]), axis=1)
    return np.concatenate([[0.0], np.cumsum(d)])


def globalize(arc: ManifoldArc, steps: int, max_points: int = 20000, tol: float = 1e-4) -> ManifoldArc:
    """Sample the branch out to parameter seed_radius * |lambda|^steps with adaptive insertion.

    ``tol`` bounds the midpoint deviation from the chord.
    """
    r = arc.seed_radius
    T = r * arc.lam**steps
    ts = list(arc.sign * np.geomspace(r * 1e-3, T, 16 * (steps + 1)))
    ts = [0.0] + ts
    P = {t: p for t, p in zip(ts, arc.evaluate(np.array(ts)))}
    worst = 0.0
    while True:
        ts.sort(key=abs)
        a = np.array(ts[:-1])
        b = np.array(ts[1:])
        mid = 0.5 * (a + b)
        Pm = arc.evaluate(mid)
        Pa = np.array([P[t] for t in a])
        Pb = np.array([P[t] for t in b])
        chord = arc.fmap.diff(Pa, Pb)
        off = arc.fmap.diff(Pa, Pm)
        cl = np.linalg.norm(chord, axis=1)
        dev = np.abs(chord[:, 0] * off[:, 1] - chord[:, 1] * off[:, 0]) / np.maximum(cl, 1e-300)
        bad = dev > tol
        worst = float(dev.max()) if dev.size else 0.0
        if not bad.any():
            break
        if len(ts) + int(bad.sum()) > max_points:
            raise ManifoldError(f"point budget {max_points} exhausted (chord error {worst:.3g})")
        for t, p in zip(mid[bad], Pm[bad]):
            ts.append(float(t))
            P[float(t)] = p
    ts.sort(key=abs)
    out = ManifoldArc(arc.kind, arc.sign, arc.mu, arc.lam, arc.coeffs, arc.seed_radius, arc.local_order, arc.fmap, arc.anchor)
    out.seed_defect = arc.seed_defect
    out.t = np.array(ts)
    out.samples = np.array([P[t] for t in ts])
    out.arclength = _arclength(arc.fmap, out.samples)
    out.chord_error = worst
    return out


def invariance_defect(arc: ManifoldArc, fmap: SaddleMap | None = None) -> float:
    """Distance of F(sample) from the arc point with parameter mu t."""
    fmap = fmap or arc.fmap
    t = arc.t[np.abs(arc.t) > 0]
    if arc.kind == "unstable":
        img = fmap.forward(arc.evaluate(t))
        ref = arc.evaluate(t * arc.mu)
    else:
        img = fmap.inverse(arc.evaluate(t))
        ref = arc.evaluate(t / arc.mu)
    return float(np.max(np.linalg.norm(fmap.diff(ref, img), axis=1)))


# ---------------------------------------------------------------------------
# splitting function


@dataclass
class Curve:
    """Parameterized planar curve used as either side of a splitting function."""

    evaluate: Callable
    diff: Callable = staticmethod(lambda P, Q: np.asarray(Q) - np.asarray(P))

    @classmethod
    def from_arc(cls, arc: ManifoldArc, window=None):
        if window is None:
            return cls(arc.evaluate, arc.fmap.diff)
        d = int(arc.depth([max(abs(window[0]), abs(window[1])) * 1.01])[0])
        return cls(lambda t: arc.evaluate(t, d), arc.fmap.diff)


def _as_curve(c, window=None):
    return Curve.from_arc(c, window) if isinstance(c, ManifoldArc) else c


@dataclass
class SplittingSamples:
    t: np.ndarray
    phi: np.ndarray
    arclength: np.ndarray
    tau: np.ndarray
    points: np.ndarray

    def to_series(self):
        return list(zip(self.t.tolist(), self.phi.tolist()))


def _speed(curve, t, h):
    return np.linalg.norm(curve.diff(curve.evaluate(t - h), curve.evaluate(t + h)), axis=1) / (2 * h)


def _scan_grid(lo, hi, n):
    """Uniform in log|tau| when the window has one sign (the parameter is exponential along the curve)."""
    lo, hi = sorted((lo, hi))
    if lo > 0:
        return np.geomspace(lo, hi, n)
    if hi < 0:
        return -np.geomspace(-hi, -lo, n)[::-1]
    return np.linspace(lo, hi, n)


def project(curve: Curve, P, tau_lo: float, tau_hi: float, n_scan=257, tol=1e-9, maxiter=40, cache=None,
            h_rel: float = 1e-5):
    """Foot point parameters and signed normal offsets of points P on ``curve``.

    The normal is the tangent rotated by +90 degrees.  ``cache`` may hold a
    precomputed (grid, points) scan of the curve.
    """
    P = np.atleast_2d(np.asarray(P, float))
    if cache is None:
        grid = _scan_grid(tau_lo, tau_hi, n_scan)
        G = curve.evaluate(grid)
    else:
        grid, G = cache
        n_scan = grid.size
    D = np.linalg.norm(curve.diff(G[None, :, :], P[:, None, :]), axis=2)
    j = np.argmin(D, axis=1)
    if np.any((j == 0) | (j == n_scan - 1)):
        raise ManifoldError("stable curve is not a local graph over the window (foot point at the edge)")
    tau = grid[j]
    span = abs(tau_hi - tau_lo)
    h = h_rel * np.maximum(np.abs(tau), 1e-3 * span)

    def g_all(tau, P, h):
        pts = curve.evaluate(np.concatenate([tau + k * h for k in (-2, -1, 0, 1, 2)])).reshape(5, -1, 2)
        T0 = curve.diff(pts[1], pts[3]) / (2 * h)[:, None]
        Tm = curve.diff(pts[0], pts[2]) / (2 * h)[:, None]
        Tp = curve.diff(pts[2], pts[4]) / (2 * h)[:, None]
        g0 = np.sum(curve.diff(pts[2], P) * T0, axis=1)
        gm = np.sum(curve.diff(pts[1], P) * Tm, axis=1)
        gp = np.sum(curve.diff(pts[3], P) * Tp, axis=1)
        return g0, (gp - gm) / (2 * h), pts[2], T0

    # tau carries amplified along-curve rounding (~1e-10 relative); Phi only feels it at second order
    active = np.ones(tau.size, bool)
    last = np.full(tau.size, np.inf)
    for _ in range(maxiter):
        idx = np.nonzero(active)[0]
        g0, dg, _, _ = g_all(tau[idx], P[idx], h[idx])
        step = g0 / dg
        tau[idx] -= step
        last[idx] = np.abs(step) / np.abs(tau[idx])
        active[idx] = last[idx] > tol
        if not active.any():
            break
    if np.any(last > 1e3 * tol):
        raise ManifoldError("foot point iteration did not converge")
    if np.any((tau < min(tau_lo, tau_hi)) | (tau > max(tau_lo, tau_hi))):
        raise ManifoldError("foot point left the stable window")
    _, _, W0, T0 = g_all(tau, P, h)
    n = np.stack([-T0[:, 1], T0[:, 0]], axis=1) / np.linalg.norm(T0, axis=1)[:, None]
    return tau, np.sum(curve.diff(W0, P) * n, axis=1)


def splitting_function(Wu, Ws, window, tau_window, n: int = 129):
    """Phi(t): signed distance of Wu(t) from Ws along the Ws normal, t uniform on ``window``."""
    cu, cs = _as_curve(Wu, window), _as_curve(Ws, tau_window)
    if n < 2:
        raise ValueError("need at least two samples")
    t = np.linspace(window[0], window[1], n)
    P = cu.evaluate(t)
    tau, phi = project(cs, P, *tau_window)
    arcl = np.concatenate([[0.0], np.cumsum(np.linalg.norm(cu.diff(P[:-1], P[1:]), axis=1))])
    return SplittingSamples(t, phi, arcl, tau, P)


def splitting_at(Wu, Ws, t, tau_window, window=None):
    cu = _as_curve(Wu, window if window is not None else (np.min(t), np.max(t)))
    cs = _as_curve(Ws, tau_window)
    return project(cs, cu.evaluate(np.atleast_1d(t)), *tau_window)[1]


def splitting_derivatives(Wu, Ws, t0, tau_window, h, order=2):
    """Derivatives of Phi in Wu arclength at parameter t0 (central differences, step h in t)."""
    cu = _as_curve(Wu, (t0 - 4 * h, t0 + 4 * h))
    speed = float(_speed(cu, np.array([t0]), h)[0])
    k = np.arange(-order - 1, order + 2)
    vals = splitting_at(Wu, Ws, t0 + k * h, tau_window, (t0 - 4 * h, t0 + 4 * h))
    out = [float(vals[order + 1])]
    # Lagrange differentiation on the symmetric stencil
    V = np.vander(k * h * speed, increasing=True)
    coef = np.linalg.solve(V, vals)
    for j in range(1, order + 1):
        out.append(float(coef[j] * math.factorial(j)))
    return out


class SplittingEvaluator:
    """Phi on a fixed pair of windows with a cached scan of the stable curve."""

    def __init__(self, Wu, Ws, window, tau_window, n_scan=513):
        self.Wu, self.Ws = Wu, Ws
        self.window, self.tau_window = tuple(window), tuple(tau_window)
        self.cu = _as_curve(Wu, window)
        self.cs = _as_curve(Ws, tau_window)
        grid = _scan_grid(*tau_window, n_scan)
        self.cache = (grid, self.cs.evaluate(grid))

    def points(self, t):
        return self.cu.evaluate(np.atleast_1d(np.asarray(t, float)))

    def __call__(self, t):
        return project(self.cs, self.points(t), *self.tau_window, cache=self.cache)[1]

    def samples(self, n=129, window=None):
        w = window or self.window
        t = np.linspace(*w, n)
        P = self.points(t)
        tau, phi = project(self.cs, P, *self.tau_window, cache=self.cache)
        arcl = np.concatenate([[0.0], np.cumsum(np.linalg.norm(self.cu.diff(P[:-1], P[1:]), axis=1))])
        return SplittingSamples(t, phi, arcl, tau, P)

    def speed(self, t, h):
        return float(_speed(self.cu, np.array([t]), h)[0])

    def derivatives(self, t0, h, order=3):
        """Phi and its first ``order`` derivatives in Wu arclength at t0."""
        k = np.arange(-order - 1, order + 2)
        vals = self(t0 + k * h)
        x = k * h * self.speed(t0, h)
        coef = np.linalg.solve(np.vander(x, increasing=True), vals)
        return [float(vals[order + 1])] + [float(coef[j] * math.factorial(j)) for j in range(1, order + 1)]

    def normal(self, t0):
        tau, _ = project(self.cs, self.points([t0]), *self.tau_window, cache=self.cache)
        h = 1e-6 * abs(self.tau_window[1] - self.tau_window[0])
        T = self.cs.diff(self.cs.evaluate([tau[0] - h]), self.cs.evaluate([tau[0] + h]))[0]
        return np.array([-T[1], T[0]]) / np.linalg.norm(T)


def local_extremum(ev: SplittingEvaluator, t_lo, t_hi, kind: str, xtol=1e-12):
    """Interior local minimum ("min") or maximum ("max") of Phi on [t_lo, t_hi]."""
    sgn = 1.0 if kind == "min" else -1.0
    res = scipy.optimize.minimize_scalar(lambda t: sgn * float(ev([t])[0]), bounds=(t_lo, t_hi),
                                         method="bounded", options={"xatol": xtol * max(abs(t_lo), abs(t_hi))})
    t = float(res.x)
    edge = min(t - t_lo, t_hi - t) < 1e-6 * (t_hi - t_lo)
    return t, sgn * float(res.fun), not edge


def sample_extrema(S: SplittingSamples):
    p = S.phi
    out = []
    for i in range(1, p.size - 1):
        if p[i] < p[i - 1] and p[i] <= p[i + 1]:
            out.append((float(S.t[i]), float(p[i]), "min"))
        elif p[i] > p[i - 1] and p[i] >= p[i + 1]:
            out.append((float(S.t[i]), float(p[i]), "max"))
    return out


@dataclass
class TangencyScan:
    params: np.ndarray
    extrema: list
    bracket: tuple | None
    mu: float | None
    record: "TangencyRecord | None"
    evaluations: int = 0

    def to_dict(self):
        return {
            "params": self.params.tolist(),
            "extrema": [[list(e) for e in ex] for ex in self.extrema],
            "bracket": list(self.bracket) if self.bracket else None,
            "mu": self.mu,
            "record": self.record.to_dict() if self.record else None,
        }


def tangency_scan(make_pair: Callable, params, window, tau_window, n: int = 97, xtol=1e-13, ftol=1e-11):
    """Search a one-parameter family for a quadratic tangency.

    ``make_pair(mu)`` returns (Wu, Ws).  A local extremum of Phi whose value
    changes sign between neighbouring parameters brackets a tangency; the
    parameter is then refined by root finding on the extremum value, so that
    Phi' = 0 holds by construction and Phi = 0 to ``ftol``.
    """
    params = np.asarray(params, float)
    extrema = []
    for mu in params:
        ev = SplittingEvaluator(*make_pair(mu), window, tau_window)
        extrema.append(sample_extrema(ev.samples(n)))
    dt = (window[1] - window[0]) / (n - 1)
    candidates = []
    for i in range(len(params) - 1):
        for ta, va, ka in extrema[i]:
            for tb, vb, kb in extrema[i + 1]:
                if ka == kb and abs(ta - tb) < 4 * dt and va * vb < 0:
                    candidates.append((params[i], params[i + 1], 0.5 * (ta + tb), ka))
    # an extremum too close to the window edge (or under-resolved) can be lost while
    # refining; the next candidate, often the same tangency one fundamental domain on, is tried
    lost = None
    for mu_a, mu_b, t_guess, kind in candidates:
        try:
            mu, ev, t = _refine_tangency(make_pair, window, tau_window, mu_a, mu_b, t_guess, kind, dt, xtol)
        except ManifoldError as exc:
            lost = exc
            continue
        h = 2e-3 * 12 * dt
        d = ev.derivatives(t, h, order=3)
        rec = TangencyRecord(
            t,
            tuple(ev.points([t])[0].tolist()),
            d[0],
            tuple(d),
            tangency_order(d),
            tuple(ev.normal(t).tolist()),
            abs(d[0]),
        )
        return TangencyScan(params, extrema, (mu_a, mu_b), float(mu), rec)
    if lost is not None:
        raise lost
    return TangencyScan(params, extrema, None, None, None)


def _refine_tangency(make_pair, window, tau_window, mu_a, mu_b, t_guess, kind, dt, xtol):
    lo, hi = max(t_guess - 6 * dt, window[0]), min(t_guess + 6 * dt, window[1])
    state = {}

    def g(mu):
        ev = SplittingEvaluator(*make_pair(mu), window, tau_window)
        t, v, interior = local_extremum(ev, lo, hi, kind, xtol)
        if not interior:
            raise ManifoldError("tangency lost: extremum reached the search edge")
        state.update(ev=ev, t=t, v=v, mu=mu)
        return v

    mu = scipy.optimize.brentq(g, mu_a, mu_b, xtol=1e-16, rtol=1e-14, maxiter=100)
    if state.get("mu") != mu:
        g(mu)
    return mu, state["ev"], state["t"]


def tangency_order(derivs, rel=1e-6):
    """Order n: derivatives 0..n negligible relative to the first significant one."""
    d = np.abs(np.asarray(derivs, float))
    scale = d.max()
    for k in range(1, d.size):
        if d[k] > rel * scale and np.all(d[:k] <= rel * scale * 1e3):
            return k - 1
    return d.size - 1


# ---------------------------------------------------------------------------
# tangency detection


@dataclass
class Crossing:
    t: float
    slope: float


@dataclass
class TangencyRecord:
    t: float
    point: tuple | None
    value: float
    derivatives: tuple
    order_estimate: int
    normal: tuple | None
    quality: float
    phi_samples: tuple = ()

    def to_dict(self):
        return {
            "t": self.t,
            "point": list(self.point) if self.point is not None else None,
            "value": self.value,
            "derivatives": list(self.derivatives),
            "order_estimate": self.order_estimate,
            "normal": list(self.normal) if self.normal is not None else None,
            "quality": self.quality,
        }


def _fit_order(t, phi, t0, max_degree=6, rel=1e-6):
    """Local polynomial fit around t0; order = smallest k with a significant t^k coefficient, minus one."""
    x = t - t0
    scale = max(np.max(np.abs(x)), 1e-300)
    V = np.vander(x / scale, max_degree + 1, increasing=True)
    if np.linalg.cond(V) > 1e12:
        from .errors import SingularSystemError

        raise SingularSystemError("tangency fit ill-conditioned")
    c, res, *_ = np.linalg.lstsq(V, phi, rcond=None)
    mag = np.abs(c)
    thr = rel * max(mag.max(), 1e-300)
    k = next((i for i in range(max_degree + 1) if mag[i] > thr), max_degree)
    quality = float(np.sqrt(res[0] / len(phi))) if res.size else 0.0
    derivs = tuple(float(c[j] * math.factorial(j) / scale**j) for j in range(max_degree + 1))
    return k - 1, derivs, quality


def detect_tangency(t, phi, tol_value=1e-8, tol_slope=1e-6, fit_halfwidth=None, min_samples=64):
    """Transverse zeros with slopes, plus a tangency record if |Phi| and |Phi'| are both small.

    Order convention: order n means Phi, ..., Phi^(n) vanish and Phi^(n+1) does not
    (a quadratic tangency has order 1).
    """
    t = np.asarray(t, float)
    phi = np.asarray(phi, float)
    if t.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples")
    dphi = np.gradient(phi, t, edge_order=2)
    crossings = []
    for i in range(t.size - 1):
        if phi[i] == 0.0 or phi[i] * phi[i + 1] < 0:
            a, b = t[i], t[i + 1]
            tz = a if phi[i] == 0.0 else a - phi[i] * (b - a) / (phi[i + 1] - phi[i])
            sl = float(np.interp(tz, t, dphi))
            crossings.append(Crossing(float(tz), sl))
    score = np.maximum(np.abs(phi) / tol_value, np.abs(dphi) / tol_slope)
    i = int(np.argmin(score))
    record = None
    if score[i] <= 1.0:
        hw = fit_halfwidth or 8 * (t[1] - t[0])
        m = np.abs(t - t[i]) <= hw
        order, derivs, q = _fit_order(t[m], phi[m], t[i])
        record = TangencyRecord(float(t[i]), None, float(phi[i]), derivs, max(order, 1), None, q, tuple(phi))
        crossings = [c for c in crossings if abs(c.t - t[i]) > hw]
    return crossings, record


def classify_model(fun, window=(-1.0, 1.0), n=257, **kw):
    t = np.linspace(*window, n)
    return detect_tangency(t, fun(t), **kw)


# ---------------------------------------------------------------------------
# homoclinic geometry for billiards


def stable_at(profile, orbit, index, sign, order=3):
    """Stable branch anchored at orbit point ``index``."""
    return local_manifold(BilliardReturn(profile, orbit, index), "stable", sign, order, anchor=orbit)


def unstable_at(profile, orbit, index, sign, order=3):
    return local_manifold(BilliardReturn(profile, orbit, index), "unstable", sign, order, anchor=orbit)


def connection_window(Wu: ManifoldArc, Ws: ManifoldArc, steps: int = 8, n: int = 800):
    """Fundamental windows of Wu and Ws around the middle of a connection.

    The middle is the first Wu sample maximising the smaller of its distances to
    the two anchors before Wu reaches the stable anchor; both manifolds are then
    only a few iterates away from their seeds.
    """
    tu = Wu.sign * np.geomspace(Wu.seed_radius, Wu.seed_radius * Wu.lam**steps, n)
    P = Wu.evaluate(tu)
    du = np.linalg.norm(Wu.fmap.diff(P, np.broadcast_to(Wu.fmap.base, P.shape)), axis=1)
    ds = np.linalg.norm(Wu.fmap.diff(P, np.broadcast_to(Ws.fmap.base, P.shape)), axis=1)
    stop = int(np.argmin(ds))
    if stop == 0 or ds[stop] > 0.5 * du.max():
        raise ManifoldError("unstable branch does not approach the stable anchor")
    i = int(np.argmax(np.minimum(du, ds)[: stop + 1]))
    t_mid = tu[i]
    ts = np.concatenate([-1.0, 1.0] * 0 + [np.geomspace(Ws.seed_radius, Ws.seed_radius * Ws.lam**steps, n)])
    ts = np.concatenate([-ts[::-1], ts])
    Q = Ws.evaluate(ts)
    dq = np.linalg.norm(Ws.fmap.diff(Q, np.broadcast_to(P[i], Q.shape)), axis=1)
    tau_mid = ts[int(np.argmin(dq))]
    if dq.min() > 0.25 * min(du[i], ds[i]):
        raise ManifoldError("stable branch does not pass near the unstable branch")
    r = math.sqrt(Wu.lam)
    win = (t_mid / r, t_mid * r)
    tw = sorted([tau_mid * Ws.lam**-0.75, tau_mid * Ws.lam**0.75])
    return win, tuple(tw)


# ---------------------------------------------------------------------------
# unfolding Jacobian


@dataclass
class SplittingFamily:
    params: np.ndarray
    gamma: np.ndarray  # rows: parameter samples, columns Gamma_j
    jacobian: np.ndarray
    genericity_det: float | None
    scaled_det: float | None

    def to_dict(self):
        return {
            "jacobian": self.jacobian.tolist(),
            "genericity_det": self.genericity_det,
            "scaled_det": self.scaled_det,
        }


def unfolding_jacobian(gamma_of: Callable, n: int, dim: int, h: float = 1e-6):
    """Central-difference Jacobian of (Gamma_0..Gamma_n) at eps = 0.

    ``gamma_of(eps)`` returns [Phi_eps(t*), Phi_eps'(t*), ...] at the tangency parameter.
    """
    base = np.asarray(gamma_of(np.zeros(dim)), float)[: n + 1]
    J = np.zeros((n + 1, dim))
    samples = [np.zeros(dim)]
    rows = [base]
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        gp = np.asarray(gamma_of(e), float)[: n + 1]
        gm = np.asarray(gamma_of(-e), float)[: n + 1]
        J[:, k] = (gp - gm) / (2 * h)
        samples += [e, -e]
        rows += [gp, gm]
    det = sdet = None
    if J.shape[0] == J.shape[1]:
        det = float(np.linalg.det(J))
        norms = np.linalg.norm(J, axis=0)
        sdet = float(np.linalg.det(J / np.where(norms > 0, norms, 1.0)))
    return SplittingFamily(np.array(samples), np.array(rows), J, det, sdet)


def cascade(coeff_of: Callable, n: int, h: float = 1e-6):
    """Diagonalise a family by back-substitution.

    ``coeff_of(eps)`` gives the Taylor coefficients (c_0..c_n) of Phi_eps at the
    tangency for eps in R^{n+1}.  Returns the combination matrix G such that the
    family eps = G e has Jacobian ~ identity, and the measured Jacobian.
    """
    fam = unfolding_jacobian(coeff_of, n, n + 1, h)
    J = fam.jacobian
    # unit-lower part removed column by column: new column k = e_k - sum g_{j,k} e_j
    G = np.linalg.inv(J)
    composed = unfolding_jacobian(lambda e: coeff_of(G @ e), n, n + 1, h)
    return G, composed


# ---------------------------------------------------------------------------
# lambda^-k scaling of a localized manifold change


@dataclass
class LiftReport:
    k: np.ndarray
    displacement: np.ndarray
    fit_from: int
    slope: float
    log_lambda: float
    amplitude: float
    ratios: np.ndarray

    @property
    def slope_rel_err(self):
        return abs(-self.slope - self.log_lambda) / self.log_lambda

    def to_dict(self):
        return {
            "k": self.k.tolist(),
            "displacement": self.displacement.tolist(),
            "fit_from": self.fit_from,
            "slope": self.slope,
            "minus_log_lambda": -self.log_lambda,
            "slope_rel_err": self.slope_rel_err,
            "amplitude": self.amplitude,
        }


def branch_displacement(Wu: ManifoldArc, Wu_pert: ManifoldArc, t: float) -> float:
    """Normal distance from Wu(t) to the perturbed branch."""
    p = Wu.evaluate([t])[0]
    lo, hi = sorted([t * 0.7, t * 1.4])
    _, off = project(Curve.from_arc(Wu_pert, (lo, hi)), p[None, :], lo, hi, n_scan=65, h_rel=1e-3)
    return abs(float(off[0]))


def verify_tangency_lift(Wu: ManifoldArc, Wu_pert: ManifoldArc, t_point: float, n_fit: int = 5,
                         noise_floor: float = 1e-14) -> LiftReport:
    """Displacement of a locally perturbed unstable branch at the preimages Wu(t / lambda^k).

    The fit of log displacement against k starts at the first preimage inside the
    seed region, where the law eps * lambda^-k is expected; ``amplitude`` is the
    fitted eps referred back to k = 0.
    """
    k0 = int(Wu.depth([t_point])[0])
    ks = np.arange(k0 + n_fit + 1)
    disp = np.array([branch_displacement(Wu, Wu_pert, t_point / Wu.mu**k) for k in ks])
    if not np.any(disp):
        return LiftReport(ks, disp, k0, 0.0, math.log(Wu.lam), 0.0, np.zeros(ks.size - 1))
    fit_k = ks[k0:]
    if np.any(disp[k0:] < noise_floor):
        raise ManifoldError("displacement below the noise floor inside the fit range")
    slope, icpt = np.polyfit(fit_k, np.log(disp[k0:]), 1)
    return LiftReport(ks, disp, k0, float(slope), math.log(Wu.lam), float(math.exp(icpt)), disp[1:] / disp[:-1])


# ---------------------------------------------------------------------------
# injectivity


@dataclass
class InjectivityVerdict:
    orbit: int
    index: int
    s: float
    nearest: float
    injective: bool


def injectivity_check(orbits, delta: float, period: float | None = 1.0, truncated: bool = True):
    """Per-point verdicts: a point is injective if no point of another orbit is within delta in s."""
    sets = [np.asarray(o, float) for o in orbits]
    verdicts = []
    for i, S in enumerate(sets):
        others = np.concatenate([T for j, T in enumerate(sets) if j != i]) if len(sets) > 1 else np.zeros(0)
        for k, s in enumerate(S):
            if others.size:
                d = np.abs(others - s)
                if period is not None:
                    d = np.minimum(d % period, period - d % period)
                near = float(d.min())
            else:
                near = float("inf")
            verdicts.append(InjectivityVerdict(i, k, float(s), near, near > delta))
    per_orbit = [sum(v.injective for v in verdicts if v.orbit == i) >= 3 for i in range(len(sets))]
    return {"points": verdicts, "orbit_ok": per_orbit, "truncated": truncated, "delta": delta}
