"""Periodic orbits: variational search on the total chord length, Newton refinement, monodromy."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .billiard import JetMap2, PhasePoint, generating_length, map_jet, transport
from .domain import RadiusProfile
from .errors import ConvergenceError, JetOrderError, SingularSystemError

PARABOLIC_BAND = 1e-7


@dataclass(frozen=True)
class EigenData:
    classification: str
    trace: float
    eigenvalues: tuple
    eigenvector_angles: tuple = ()
    rotation_angle: float | None = None

    @property
    def lam(self):
        return max(abs(v) for v in self.eigenvalues) if self.classification == "hyperbolic" else None


@dataclass(frozen=True)
class PeriodicOrbit:
    points: tuple
    p: int
    q: int
    residual: float
    total_length: float = float("nan")
    monodromy: JetMap2 | None = field(default=None, compare=False, repr=False)
    eigen: EigenData | None = None

    @property
    def period(self):
        return self.q

    @property
    def rotation(self):
        return self.p / self.q

    @property
    def s(self):
        return np.array([pt.s for pt in self.points])

    @property
    def phi(self):
        return np.array([pt.phi for pt in self.points])

    def to_dict(self):
        d = {
            "p": self.p,
            "q": self.q,
            "s": [pt.s for pt in self.points],
            "phi": [pt.phi for pt in self.points],
            "residual": self.residual,
            "total_length": self.total_length,
        }
        if self.eigen is not None:
            d["classification"] = self.eigen.classification
            d["trace"] = self.eigen.trace
            d["eigenvalues"] = [complex(v).real if abs(complex(v).imag) == 0 else [complex(v).real, complex(v).imag] for v in self.eigen.eigenvalues]
            d["eigenvector_angles"] = list(self.eigen.eigenvector_angles)
        return d


# ---------------------------------------------------------------------------
# length functional on cyclic configurations


def _positions(profile, s):
    th = profile.theta_of_s(s)
    return th, profile.position(th).T, 1.0 / profile.rho(th)


def length_terms(profile, s_lift):
    """Total length, gradient, and tridiagonal-cyclic Hessian for lifted coordinates."""
    q = len(s_lift)
    th, g, kap = _positions(profile, s_lift)
    nxt = np.roll(np.arange(q), -1)
    d = g[nxt] - g
    l = np.hypot(d[:, 0], d[:, 1])
    u = d / l[:, None]
    t = np.stack([np.cos(th), np.sin(th)], axis=1)
    cos_out = np.sum(t * u, axis=1)          # cos phi_i (departure)
    cos_in = np.sum(t[nxt] * u, axis=1)      # cos phi_{i+1} (arrival)
    grad = np.roll(cos_in, 1) - cos_out      # dL/ds_i
    b_out = np.sqrt(np.maximum(1 - cos_out**2, 0.0))
    b_in = np.sqrt(np.maximum(1 - cos_in**2, 0.0))
    H = np.zeros((q, q))
    for i in range(q):
        j = nxt[i]
        H[i, i] += -b_out[i] * (kap[i] * l[i] - b_out[i]) / l[i]
        H[j, j] += -b_in[i] * (kap[j] * l[i] - b_in[i]) / l[i]
        H[i, j] += b_out[i] * b_in[i] / l[i]
        H[j, i] += b_out[i] * b_in[i] / l[i]
    return float(l.sum()), grad, H


def _lift(profile, s, p):
    """Lift s so that consecutive increments are positive and wind p times."""
    L = profile.length
    s = np.asarray(s, float)
    inc = np.mod(np.diff(np.concatenate([s, [s[0]]])), L)
    lifted = s[0] + np.concatenate([[0.0], np.cumsum(inc[:-1])])
    if abs(inc.sum() - p * L) > 1e-6 * L:
        raise ConvergenceError("configuration does not wind p times")
    return lifted


def _orbit_from_config(profile, s_lift, p):
    q = len(s_lift)
    L = profile.length
    total, grad, _ = length_terms(profile, s_lift)
    th, g, _ = _positions(profile, s_lift)
    nxt = np.roll(np.arange(q), -1)
    d = g[nxt] - g
    u = d / np.hypot(d[:, 0], d[:, 1])[:, None]
    ang = np.arctan2(u[:, 1], u[:, 0])
    phi = np.mod(ang - th, 2 * math.pi)
    pts = tuple(PhasePoint(float(si % L), float(fi)) for si, fi in zip(s_lift, phi))
    return PeriodicOrbit(pts, p, q, float(np.max(np.abs(grad))), total)


def _newton(profile, x, p, tol=1e-13, maxiter=30, history=None):
    q = len(x)
    for it in range(maxiter):
        total, grad, H = length_terms(profile, x)
        r = np.max(np.abs(grad))
        if history is not None:
            history.append(r)
        if r < tol:
            return x
        # the rotation mode is absent for isolated orbits
        sv = np.linalg.svd(H, compute_uv=False)
        if sv[-1] < 1e-10 * max(sv[0], 1.0):
            raise SingularSystemError("singular Hessian: orbit is not isolated")
        x = x - np.linalg.solve(H, grad)
    total, grad, H = length_terms(profile, x)
    if np.max(np.abs(grad)) < 1e-11:
        return x
    raise ConvergenceError("Newton refinement stagnated")


def find_birkhoff_orbit(profile: RadiusProfile, p: int, q: int, seed=0.0, mode="max", refine=True) -> PeriodicOrbit:
    """Critical configuration of total chord length with rotation p/q.

    ``mode="max"`` maximizes (Birkhoff maximizer), ``mode="saddle"`` runs Newton
    directly from the equally spaced seed (finds the minimax orbit near it).
    """
    if math.gcd(p, q) != 1 or q < 2 or not 0 < p < q:
        raise ValueError("need 0 < p < q coprime, q >= 2")
    L = profile.length
    seeds = np.atleast_1d(np.asarray(seed, float))
    x = seeds[0] + p * L * np.arange(q) / q if seeds.size == 1 else _lift(profile, seeds, p)
    if mode == "max":
        for _ in range(8):
            x = _ascend(profile, x, p)
            # a critical point that is not a local max: kick along an ascent direction
            _, _, H = length_terms(profile, x)
            w, V = np.linalg.eigh(H)
            if w[-1] <= 1e-9 * max(1.0, abs(w[0])):
                break
            x = x + 1e-2 * L / q * V[:, -1]
    orbit = _orbit_from_config(profile, x, p)
    return refine_newton(profile, orbit) if refine else orbit


def _ascend(profile, x, p, gtol=1e-9, maxiter=20000):
    """Normalized gradient ascent with backtracking; keeps the cyclic order."""
    L = profile.length
    q = len(x)
    step = 0.1 * L / q
    total, grad, _ = length_terms(profile, x)
    for _ in range(maxiter):
        gn = np.max(np.abs(grad))
        if gn < gtol:
            break
        while step >= 1e-16:
            trial = x + step * grad / gn
            gaps = np.diff(np.concatenate([trial, [trial[0] + p * L]]))
            if np.all(gaps > 0):
                t_total, t_grad, _ = length_terms(profile, trial)
                if t_total >= total:
                    break
            step *= 0.5
        if step < 1e-16:
            break
        x, total, grad = trial, t_total, t_grad
        step *= 1.5
        # hand over to Newton once the Hessian is negative definite
        if gn < 1e-4 and np.all(np.linalg.eigvalsh(length_terms(profile, x)[2]) < 0):
            break
    return x


def refine_newton(profile, orbit: PeriodicOrbit, history=None) -> PeriodicOrbit:
    x = _lift(profile, orbit.s, orbit.p)
    gaps = np.diff(np.concatenate([x, [x[0] + orbit.p * profile.length]]))
    if np.min(gaps) < 1e-9:
        raise ConvergenceError("degenerate configuration: consecutive points collide")
    x = _newton(profile, x, orbit.p, history=history)
    return _orbit_from_config(profile, x, orbit.p)


def reflection_residual(profile, orbit: PeriodicOrbit):
    _, grad, _ = length_terms(profile, _lift(profile, orbit.s, orbit.p))
    return float(np.max(np.abs(grad)))


# ---------------------------------------------------------------------------
# monodromy and classification


def monodromy(profile, orbit: PeriodicOrbit, order: int = 1) -> JetMap2:
    if orbit.residual > 1e-10:
        raise ConvergenceError("orbit not refined (residual > 1e-10)")
    return map_jet(profile, orbit.points[0], order, steps=orbit.q)


def classify_matrix(A, band=PARABOLIC_BAND) -> EigenData:
    A = np.asarray(A, float)
    tr = float(np.trace(A))
    det = float(np.linalg.det(A))
    disc = tr * tr - 4.0 * det
    if abs(tr) > 2.0 + band:
        r = math.sqrt(max(disc, 0.0))
        sgn = 1.0 if tr > 0 else -1.0
        lam = (tr + sgn * r) / 2.0
        lam_inv = det / lam
        angles = tuple(eigenvector_angle(A, mu) for mu in (lam, lam_inv))
        return EigenData("hyperbolic", tr, (lam, lam_inv), angles)
    if abs(tr) < 2.0 - band:
        ang = math.acos(tr / (2.0 * math.sqrt(det)))
        ev = (complex(math.sqrt(det) * math.cos(ang), math.sqrt(det) * math.sin(ang)),)
        ev = ev + (ev[0].conjugate(),)
        return EigenData("elliptic", tr, ev, (), ang)
    return EigenData("parabolic", tr, (tr / 2.0, tr / 2.0))


def eigenvector_angle(A, mu):
    """Angle of the mu-eigenvector with the vertical (phi) axis, in (-pi/2, pi/2]."""
    a, b = A[0]
    c, d = A[1]
    v = np.array([b, mu - a]) if abs(b) >= abs(c) else np.array([mu - d, c])
    ang = math.atan2(v[0], v[1])
    if ang > math.pi / 2:
        ang -= math.pi
    elif ang <= -math.pi / 2:
        ang += math.pi
    return ang


def eigenvector(A, mu):
    a, b = A[0]
    c, d = A[1]
    v = np.array([b, mu - a]) if abs(b) >= abs(c) else np.array([mu - d, c])
    return v / np.linalg.norm(v)


def classify(profile, orbit: PeriodicOrbit, order: int = 1) -> PeriodicOrbit:
    jet = orbit.monodromy if orbit.monodromy is not None and orbit.monodromy.order >= order else monodromy(profile, orbit, order)
    return replace(orbit, monodromy=jet, eigen=classify_matrix(jet.matrix()))


# ---------------------------------------------------------------------------
# length function and absolute periodicity


@dataclass(frozen=True)
class PeriodicityReport:
    order: int
    dL_ds0: float
    dL_dphi0: float
    identity_residual_s: float
    identity_residual_phi: float
    length_partials_vanish_through: int
    telescoping_residual: float

    def to_dict(self):
        return dict(self.__dict__)


def length_series(profile, p: PhasePoint, steps: int, order: int):
    """Total chord length of the first ``steps`` chords as a series in (s0, phi0), plus the end point series."""
    tr = transport(profile, p, steps, order)
    total = tr[1][2]
    for k in range(2, steps + 1):
        total = total + tr[k][2]
    return total, tr


def jet_identity_order(jet: JetMap2, tol=1e-9, length=1.0):
    """Largest k such that the jet equals the identity through order k (-1 if not even order 0... returns -1 if order 1 differs)."""
    ident = JetMap2.identity(jet.base_in, jet.order).coeffs
    diff = jet.coeffs - ident
    d0 = diff[0, 0, 0] - length * round(diff[0, 0, 0] / length)
    if abs(d0) > tol or abs(diff[1, 0, 0]) > tol:
        return -1
    k = 0
    for m in range(1, jet.order + 1):
        a = np.arange(m + 1)
        if np.max(np.abs(diff[:, m - a, a])) > tol:
            break
        k = m
    return k if k >= 1 else -1


def check_absolute_periodicity_order(profile, orbit: PeriodicOrbit, n: int, tol=1e-9) -> PeriodicityReport:
    if n < 1:
        raise JetOrderError("need n >= 1")
    order = n + 1
    total, tr = length_series(profile, orbit.points[0], orbit.q, order)
    s_q, phi_q, _ = tr[-1]
    jet = JetMap2.from_tps(s_q, phi_q, orbit.points[0], profile.length)
    k = min(jet_identity_order(jet, tol, profile.length), n)
    cphi0 = math.cos(orbit.points[0].phi)
    cphiq = math.cos(phi_q.value)
    dLs = total.partial(1, 0)
    dLp = total.partial(0, 1)
    res_s = abs(dLs - (cphiq * s_q.partial(1, 0) - cphi0))
    res_p = abs(dLp - cphiq * s_q.partial(0, 1))
    # telescoping: chordwise sums of dl_i/ds0
    tele = sum(tr[i][2].partial(1, 0) for i in range(1, orbit.q + 1))
    tele_res = abs(tele - (cphiq * s_q.partial(1, 0) - cphi0))
    # partials of L through order k
    vanish = -1
    for m in range(1, order + 1):
        a = np.arange(m + 1)
        if np.max(np.abs(total.c[m - a, a])) > tol:
            break
        vanish = m
    return PeriodicityReport(k, dLs, dLp, res_s, res_p, vanish, tele_res)
