"""Billiard map, its differential, and truncated Taylor jets of iterates."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import taylor
from .domain import TWO_PI, RadiusProfile, theta_series_in_s
from .errors import ConvergenceError, GrazingError, JetOrderError
from .taylor import Tps

PHI_MIN = 1e-6
MAX_JET_ORDER = 8


@dataclass(frozen=True)
class PhasePoint:
    s: float
    phi: float

    def __post_init__(self):
        if not 0.0 < self.phi < math.pi:
            raise ValueError(f"phi={self.phi} outside (0, pi)")

    def reversed(self):
        return PhasePoint(self.s, math.pi - self.phi)

    def as_tuple(self):
        return (self.s, self.phi)


@dataclass(frozen=True)
class ChordData:
    l: float
    beta_in: float
    beta_out: float
    kappa_in: float
    kappa_out: float


def _check_grazing(phi, phi_min):
    phi = np.asarray(phi)
    if np.any((phi < phi_min) | (phi > math.pi - phi_min)):
        raise GrazingError(f"grazing shot: phi outside ({phi_min}, pi - {phi_min})")


def _scan_grid(n=64):
    g = np.geomspace(1e-10, 0.25, n // 2)
    return np.unique(np.concatenate([g, np.linspace(0.25, 0.75, n // 2), 1.0 - g[::-1]]))


_GRID = _scan_grid()


def hit_angles(profile: RadiusProfile, theta0, phi0, tol=1e-15, maxiter=60):
    """Tangent angle theta1 in (theta0, theta0 + 2 pi) of the next impact, and phi1."""
    theta0 = np.atleast_1d(np.asarray(theta0, float))
    phi0 = np.broadcast_to(np.asarray(phi0, float), theta0.shape).copy()
    psi = theta0 + phi0
    sp, cp = np.sin(psi), np.cos(psi)
    x0, y0 = profile.position(theta0)

    def resid(th):
        shape = th.shape
        x, y = profile.position(th.ravel())
        x = x.reshape(shape)
        y = y.reshape(shape)
        return (x - x0[:, None]) * sp[:, None] - (y - y0[:, None]) * cp[:, None]

    # F > 0 just after theta0 and < 0 just before theta0 + 2 pi; one sign change
    grid = theta0[:, None] + TWO_PI * _GRID[None, :]
    F = resid(grid)
    neg = F < 0
    first = np.argmax(neg, axis=1)
    if np.any(~neg.any(axis=1)) or np.any(first == 0):
        raise ConvergenceError("could not bracket the next impact")
    idx = np.arange(theta0.size)
    lo = grid[idx, first - 1]
    hi = grid[idx, first]
    flo = F[idx, first - 1]
    fhi = F[idx, first]
    th = lo - flo * (hi - lo) / (fhi - flo)
    for _ in range(maxiter):
        f = resid(th[:, None])[:, 0]
        pos = f > 0
        lo = np.where(pos, th, lo)
        hi = np.where(pos, hi, th)
        df = -profile.rho(th) * np.sin(th - psi)
        with np.errstate(divide="ignore", invalid="ignore"):
            new = th - f / df
        bad = ~np.isfinite(new) | (new <= lo) | (new >= hi)
        new = np.where(bad, 0.5 * (lo + hi), new)
        done = np.abs(new - th) <= tol * (1.0 + np.abs(th))
        th = new
        if np.all(done | (hi - lo <= 4 * np.spacing(hi))):
            break
    else:
        raise ConvergenceError("next impact root-finder did not converge")
    return th, th - psi


def next_hit_array(profile, s, phi, phi_min=PHI_MIN):
    s = np.atleast_1d(np.asarray(s, float))
    phi = np.atleast_1d(np.asarray(phi, float))
    _check_grazing(phi, phi_min)
    th0 = profile.theta_of_s(s)
    th1, phi1 = hit_angles(profile, th0, phi)
    s1 = np.mod(profile.s_of_theta(th1), profile.length)
    return s1, phi1


def next_hit(profile: RadiusProfile, p: PhasePoint, phi_min=PHI_MIN) -> PhasePoint:
    s1, phi1 = next_hit_array(profile, p.s, p.phi, phi_min)
    return PhasePoint(float(s1[0]), float(phi1[0]))


def billiard_inverse(profile: RadiusProfile, p: PhasePoint, phi_min=PHI_MIN) -> PhasePoint:
    return next_hit(profile, p.reversed(), phi_min).reversed()


def iterate(profile, p: PhasePoint, n: int):
    pts = [p]
    for _ in range(n):
        pts.append(next_hit(profile, pts[-1]))
    return pts


def chord_data(profile, p: PhasePoint) -> ChordData:
    _check_grazing(p.phi, PHI_MIN)
    th0 = profile.theta_of_s(p.s)
    th1, phi1 = hit_angles(profile, th0, p.phi)
    g0 = profile.position(th0)[:, 0]
    g1 = profile.position(th1)[:, 0]
    return ChordData(
        float(np.hypot(*(g1 - g0))),
        math.sin(p.phi),
        math.sin(float(phi1[0])),
        float(1.0 / profile.rho(th0)[0]),
        float(1.0 / profile.rho(th1)[0]),
    )


def differential_from_chord(c: ChordData):
    k0, k1, b0, b1, l = c.kappa_in, c.kappa_out, c.beta_in, c.beta_out, c.l
    return np.array([
        [(k0 * l - b0) / b1, l / b1],
        [(k0 * k1 * l - k0 * b1 - k1 * b0) / b1, (k1 * l - b1) / b1],
    ])


def one_step_differential(profile, p: PhasePoint):
    return differential_from_chord(chord_data(profile, p))


def differential_array(profile, s, phi, phi_min=PHI_MIN):
    """Differentials (n, 2, 2) at many phase points, plus the image angles phi1."""
    s = np.atleast_1d(np.asarray(s, float))
    phi = np.atleast_1d(np.asarray(phi, float))
    _check_grazing(phi, phi_min)
    th0 = profile.theta_of_s(s)
    th1, phi1 = hit_angles(profile, th0, phi)
    d = profile.position(th1) - profile.position(th0)
    l = np.hypot(d[0], d[1])
    k0, k1 = 1.0 / profile.rho(th0), 1.0 / profile.rho(th1)
    b0, b1 = np.sin(phi), np.sin(phi1)
    D = np.empty((s.size, 2, 2))
    D[:, 0, 0] = (k0 * l - b0) / b1
    D[:, 0, 1] = l / b1
    D[:, 1, 0] = (k0 * k1 * l - k0 * b1 - k1 * b0) / b1
    D[:, 1, 1] = (k1 * l - b1) / b1
    return D, phi1


def generating_length(profile, s0, s1):
    """Chord length and its partials (-cos phi0, cos phi1)."""
    L = profile.length
    if abs((s1 - s0) / L - round((s1 - s0) / L)) < 1e-14:
        raise ValueError("coincident boundary points")
    th = profile.theta_of_s(np.array([s0, s1]))
    g = profile.position(th)
    d = g[:, 1] - g[:, 0]
    l = float(np.hypot(*d))
    t0 = np.array([math.cos(th[0]), math.sin(th[0])])
    t1 = np.array([math.cos(th[1]), math.sin(th[1])])
    return l, -float(t0 @ d) / l, float(t1 @ d) / l


# ---------------------------------------------------------------------------
# jets


class JetMap2:
    """Taylor expansion of a planar map at ``base_in``; coeffs[i, a, b] for output i."""

    def __init__(self, order, base_in: PhasePoint, base_out: PhasePoint, coeffs):
        self.order = int(order)
        self.base_in = base_in
        self.base_out = base_out
        self.coeffs = np.asarray(coeffs, float)

    @classmethod
    def from_tps(cls, s_out: Tps, p_out: Tps, base_in, length=1.0):
        base_out = PhasePoint(s_out.value % length, p_out.value)
        c = np.stack([s_out.c, p_out.c])
        c[0, 0, 0] = base_out.s
        return cls(s_out.order, base_in, base_out, c)

    @classmethod
    def identity(cls, p: PhasePoint, order):
        s, f = Tps.var(0, p.s, order), Tps.var(1, p.phi, order)
        return cls.from_tps(s, f, p)

    def tps(self):
        return Tps(self.coeffs[0], self.order), Tps(self.coeffs[1], self.order)

    def partial(self, comp, a, b):
        """d^{a+b} (s_out, phi_out)[comp] / ds^a dphi^b."""
        return float(self.coeffs[comp, a, b] * math.factorial(a) * math.factorial(b))

    def partials(self, comp, m):
        """Order-m partials ordered by phi-exponent k = 0..m."""
        return np.array([self.partial(comp, m - k, k) for k in range(m + 1)])

    def matrix(self):
        return np.array([[self.coeffs[0, 1, 0], self.coeffs[0, 0, 1]], [self.coeffs[1, 1, 0], self.coeffs[1, 0, 1]]])

    def truncate(self, order):
        return JetMap2(order, self.base_in, self.base_out, self.coeffs[:, : order + 1, : order + 1] * _tri_mask(order))

    def to_dict(self):
        out = {"order": self.order, "base_in": self.base_in.as_tuple(), "base_out": self.base_out.as_tuple(), "s": {}, "phi": {}}
        for a in range(self.order + 1):
            for b in range(self.order + 1 - a):
                out["s"][f"{a},{b}"] = self.partial(0, a, b)
                out["phi"][f"{a},{b}"] = self.partial(1, a, b)
        return out


def _tri_mask(order):
    a, b = np.indices((order + 1, order + 1))
    return (a + b <= order).astype(float)


def _circ_close(a, b, period, tol):
    d = abs(a - b) % period
    return min(d, period - d) <= tol


def compose_jets(outer: JetMap2, inner: JetMap2, length=1.0, tol=1e-9) -> JetMap2:
    """Jet of outer o inner at inner.base_in."""
    if outer.order != inner.order:
        raise JetOrderError("jets of different order")
    if not (_circ_close(inner.base_out.s, outer.base_in.s, length, tol) and abs(inner.base_out.phi - outer.base_in.phi) <= tol):
        raise ValueError("base mismatch: inner.base_out != outer.base_in")
    os_, op_ = outer.tps()
    is_, ip_ = inner.tps()
    s, p = taylor.compose2(os_, op_, is_, ip_)
    return JetMap2(outer.order, inner.base_in, outer.base_out, np.stack([s.c, p.c]))


def reverse_jet(jet: JetMap2) -> JetMap2:
    """Conjugate by (s, phi) -> (s, pi - phi); applied to the jet of f at R(p) gives f^-1 at p."""
    n = jet.order
    sign_b = (-1.0) ** np.arange(n + 1)[None, :]
    c = jet.coeffs * sign_b[None]
    c = c.copy()
    c[1] = -c[1]
    c[1, 0, 0] += math.pi
    return JetMap2(n, jet.base_in.reversed(), jet.base_out.reversed(), c)


class _Stepper:
    """One billiard step acting on truncated power series."""

    def __init__(self, profile: RadiusProfile, order: int):
        if order > min(MAX_JET_ORDER, profile.max_order - 1):
            raise JetOrderError(f"jet order {order} exceeds maximum {MAX_JET_ORDER}")
        self.profile = profile
        self.order = order

    def _series_at(self, theta):
        return self.profile.boundary_series(theta, self.order)

    def step(self, s_in: Tps, phi_in: Tps, theta_in_base=None):
        """Return (s_out, phi_out, l, theta_out_base) as series in the input variables."""
        prof, N = self.profile, self.order
        if not PHI_MIN < phi_in.value < math.pi - PHI_MIN:
            raise GrazingError("grazing shot in jet transport")
        if theta_in_base is None:
            theta_in_base = float(prof.theta_of_s(s_in.value)[0])
        # theta(s) about the base impact, in powers of s - s_base
        xs = theta_series_in_s(prof, theta_in_base, N)
        xs[0] = theta_in_base
        th0 = s_in.apply(xs)
        ser0 = self._series_at(theta_in_base)
        x0 = th0.apply(ser0[1])
        y0 = th0.apply(ser0[2])
        psi = th0 + phi_in
        sp, cp = psi.sin(), psi.cos()
        th1_base, _ = hit_angles(prof, np.array([theta_in_base]), np.array([phi_in.value]))
        th1_base = float(th1_base[0])
        ser1 = self._series_at(th1_base)
        rho1 = prof.rho_taylor(th1_base, N)
        th1 = Tps.const(th1_base, N)
        for _ in range(N + 1):
            F = (th1.apply(ser1[1]) - x0) * sp - (th1.apply(ser1[2]) - y0) * cp
            dF = -(th1.apply(rho1)) * (th1 - psi).sin()
            th1 = th1 - F / dF
            th1.c[0, 0] = th1_base
        s1 = th1.apply(ser1[0])
        phi1 = th1 - psi
        dx = th1.apply(ser1[1]) - x0
        dy = th1.apply(ser1[2]) - y0
        l = (dx * dx + dy * dy).sqrt()
        s1.c[0, 0] = s1.value % prof.length
        return s1, phi1, l, th1_base % TWO_PI


def transport(profile: RadiusProfile, p: PhasePoint, steps: int, order: int, inputs=None):
    """Series (s_k, phi_k, l_k) for k = 0..steps along the orbit of p.

    ``inputs`` optionally replaces the identity series at impact 0.  l_k is the
    chord from impact k-1 to impact k (l_0 = 0).
    """
    st = _Stepper(profile, order)
    if inputs is None:
        s, f = Tps.var(0, p.s, order), Tps.var(1, p.phi, order)
    else:
        s, f = inputs
    out = [(s, f, Tps.const(0.0, order))]
    th = None
    for _ in range(steps):
        s, f, l, th = st.step(s, f, th)
        out.append((s, f, l))
    return out


def map_jet(profile: RadiusProfile, p: PhasePoint, order: int, steps: int = 1) -> JetMap2:
    s, f, _ = transport(profile, p, steps, order)[-1]
    return JetMap2.from_tps(s, f, p, profile.length)


def inverse_map_jet(profile, p: PhasePoint, order: int) -> JetMap2:
    return reverse_jet(map_jet(profile, p.reversed(), order))


def orbit_csv(profile, points, path):
    th = profile.theta_of_s(np.array([q.s for q in points]))
    xy = profile.position(th)
    kap = 1.0 / profile.rho(th)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "phi", "x", "y", "kappa"])
        for i, q in enumerate(points):
            w.writerow([repr(q.s), repr(q.phi), repr(float(xy[0, i])), repr(float(xy[1, i])), repr(float(kap[i]))])
