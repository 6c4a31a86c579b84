"""Strictly convex domains encoded by the radius of curvature rho(theta).

theta is the tangent angle of the boundary, the curve is traversed
counterclockwise starting from gamma(0) = (0, 0) with horizontal tangent, and
arc length s(theta) = int_0^theta rho.  A bump whose support covers theta = 0
is integrated from the left end of its support instead, so bumps never relabel
the boundary outside their support.  Closure of the curve is the vanishing of
the first Fourier harmonic of rho.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre

from . import taylor
from .errors import BumpError, DomainError, JetOrderError

TWO_PI = 2.0 * math.pi
MAX_ORDER = 12
_GL_X, _GL_W = legendre.leggauss(128)


# ---------------------------------------------------------------------------
# mollifier bump basis


def mollifier(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ui * ui))
    return out


def mollifier_taylor(u0, order):
    """Taylor coefficients of the mollifier at u0 (in powers of u - u0)."""
    if abs(u0) >= 1.0:
        return np.zeros(order + 1)
    q = np.array([1.0 - u0 * u0, -2.0 * u0, -1.0])
    inner = -taylor.urecip(q, order)
    inner[0] += 1.0
    return taylor.uexp(inner, order)


def basis_taylor(j, u0, order):
    """Taylor coefficients (in u) of P_j(u) m(u) at u0."""
    pcoef = legendre.leg2poly(np.eye(j + 1)[j])
    return taylor.umul(taylor.ushift_poly(pcoef, u0, order), mollifier_taylor(u0, order), order)


def basis_values(nbasis, u):
    u = np.asarray(u, dtype=float)
    m = mollifier(u)
    return np.array([legendre.legval(u, np.eye(j + 1)[j]) * m for j in range(nbasis)])


@dataclass(frozen=True)
class BumpPatch:
    """Localized change of rho supported on (center - half_width, center + half_width)."""

    center_theta: float
    half_width: float
    weights: tuple
    target_jet: tuple = ()
    s_point: float | None = None

    @property
    def nbasis(self):
        return len(self.weights)

    def delta_rho(self, theta):
        theta = np.asarray(theta, dtype=float)
        d = np.remainder(theta - self.center_theta + math.pi, TWO_PI) - math.pi
        u = d / self.half_width
        if not any(self.weights):
            return np.zeros_like(d)
        return np.tensordot(np.asarray(self.weights), basis_values(self.nbasis, u), axes=1)

    def taylor(self, theta0, order):
        d = (theta0 - self.center_theta + math.pi) % TWO_PI - math.pi
        u0 = d / self.half_width
        out = np.zeros(order + 1)
        if abs(u0) >= 1.0:
            return out
        for j, wj in enumerate(self.weights):
            if wj:
                out += wj * basis_taylor(j, u0, order)
        return out / self.half_width ** np.arange(order + 1)

    def sup_norm(self):
        u = np.linspace(-1, 1, 2001)
        return float(np.max(np.abs(np.tensordot(np.asarray(self.weights), basis_values(self.nbasis, u), axes=1)))) if self.nbasis else 0.0

    def integrals(self, r):
        """int_0^r delta_rho(t) * (1, cos t, sin t) dt for r in [0, 2*pi]."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.zeros((3, r.size))
        if not any(self.weights):
            return out
        w = self.half_width
        for shift in (-TWO_PI, 0.0, TWO_PI):
            lo = self.center_theta - w + shift
            hi = self.center_theta + w + shift
            a = max(lo, 0.0)
            b = np.minimum(hi, r)
            mask = b > a
            if not np.any(mask):
                continue
            bb = b[mask]
            half = 0.5 * (bb - a)
            t = a + half[:, None] * (_GL_X[None, :] + 1.0)
            u = (t - shift - self.center_theta) / w
            vals = np.tensordot(np.asarray(self.weights), basis_values(self.nbasis, u), axes=1)
            wts = half[:, None] * _GL_W[None, :]
            out[0, mask] += np.sum(wts * vals, axis=1)
            out[1, mask] += np.sum(wts * vals * np.cos(t), axis=1)
            out[2, mask] += np.sum(wts * vals * np.sin(t), axis=1)
        return out

    def to_dict(self):
        return {
            "center_theta": self.center_theta,
            "half_width": self.half_width,
            "weights": list(self.weights),
            "target_jet": list(self.target_jet),
            "s_point": self.s_point,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["center_theta"]),
            float(d["half_width"]),
            tuple(float(x) for x in d["weights"]),
            tuple(float(x) for x in d.get("target_jet", ())),
            d.get("s_point"),
        )


# ---------------------------------------------------------------------------
# profile


def _int_cos(m, th):
    return th if m == 0 else np.sin(m * th) / m


def _int_sin(m, th):
    return np.zeros_like(th) if m == 0 else (1.0 - np.cos(m * th)) / m


@dataclass(frozen=True)
class RadiusProfile:
    """rho(theta) = mean_radius + sum_k (a_k cos k theta + b_k sin k theta) + bumps."""

    mean_radius: float
    harmonics: tuple = ()
    bumps: tuple = ()
    resolution: int = 4096
    max_order: int = MAX_ORDER

    def __post_init__(self):
        object.__setattr__(self, "harmonics", tuple((int(k), float(a), float(b)) for k, a, b in self.harmonics))
        object.__setattr__(self, "bumps", tuple(self.bumps))

    # constructors --------------------------------------------------------
    @classmethod
    def circle(cls, length=1.0):
        return cls(length / TWO_PI)

    @classmethod
    def from_harmonics(cls, harmonics, length=1.0):
        """Unit-length profile (1 + sum a cos + b sin) / (2 pi) scaled to ``length``."""
        r0 = length / TWO_PI
        return cls(r0, tuple((k, a * r0, b * r0) for k, a, b in harmonics))

    @classmethod
    def ellipse(cls, aspect: float, length=1.0, tol=1e-16, n=1024):
        """Ellipse with axis ratio ``aspect`` (minor/major), as a truncated cosine series.

        rho(theta) = a^2 b^2 / (a^2 sin^2 theta + b^2 cos^2 theta)^(3/2); the series
        converges geometrically and is cut where coefficients drop below ``tol``.
        """
        if not 0.0 < aspect <= 1.0:
            raise DomainError("aspect must lie in (0, 1]")
        th = TWO_PI * np.arange(n) / n
        a, b = 1.0, float(aspect)
        r = (a * b) ** 2 / (a * a * np.sin(th) ** 2 + b * b * np.cos(th) ** 2) ** 1.5
        c = np.fft.rfft(r) / n
        c0 = c[0].real
        harm = tuple((k, 2.0 * c[k].real / c0, 0.0) for k in range(1, n // 2) if abs(2.0 * c[k].real / c0) > tol)
        if abs(2.0 * c[n // 2 - 1].real / c0) > tol:
            raise DomainError("ellipse series not converged; increase n")
        return cls.from_harmonics(harm, length)

    # evaluation ------------------------------------------------------------
    def rho(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full_like(theta, self.mean_radius)
        if self.harmonics:
            m, a, b = self._rho_modes
            mt = np.multiply.outer(theta, m)
            out = out + np.cos(mt) @ a + np.sin(mt) @ b
        for p in self.bumps:
            out = out + p.delta_rho(theta)
        return out

    def kappa(self, theta):
        return 1.0 / self.rho(theta)

    def rho_taylor(self, theta0, order):
        """Taylor coefficients of rho at theta0."""
        k_ = np.arange(order + 1)
        fact = np.array([math.factorial(j) for j in k_], dtype=float)
        out = np.zeros(order + 1)
        out[0] = self.mean_radius
        for k, a, b in self.harmonics:
            ph = k * theta0 + k_ * math.pi / 2
            out += (float(k) ** k_) * (a * np.cos(ph) + b * np.sin(ph)) / fact
        for p in self.bumps:
            out += p.taylor(theta0, order)
        return out

    @cached_property
    def _bump_anchor(self):
        """Offsets making a bump that straddles theta = 0 integrate from its own left end.

        Away from its support such a bump then leaves s and the position unchanged,
        exactly as a bump that does not cover the origin.
        """
        off = np.zeros(3)
        for p in self.bumps:
            lo = (p.center_theta - p.half_width) % TWO_PI
            hi = (p.center_theta + p.half_width) % TWO_PI
            if lo > hi:
                off += p.integrals(np.array([TWO_PI]))[:, 0] - p.integrals(np.array([lo]))[:, 0]
        return off

    @cached_property
    def _bump_totals(self):
        tot = np.zeros(3)
        for p in self.bumps:
            tot += p.integrals(np.array([TWO_PI]))[:, 0]
        return tot

    @cached_property
    def length(self):
        return TWO_PI * self.mean_radius + self._bump_totals[0]

    @cached_property
    def closure_defect(self):
        """(int rho cos, int rho sin) over a full turn."""
        x, y = np.diff(self._integrals(np.array([0.0, TWO_PI]))[1:], axis=1)[:, 0]
        return float(x), float(y)

    @cached_property
    def _mode_table(self):
        """Coefficients of the cos/sin integrals of each mode m in (s, x, y)."""
        K = max((k for k, _, _ in self.harmonics), default=0) + 1
        C = np.zeros((3, K + 1))
        D = np.zeros((3, K + 1))
        C[0, 0] += self.mean_radius
        C[1, 1] += self.mean_radius
        D[2, 1] += self.mean_radius
        for k, a, b in self.harmonics:
            C[0, k] += a
            D[0, k] += b
            C[1, k - 1] += 0.5 * a
            C[1, k + 1] += 0.5 * a
            D[1, k + 1] += 0.5 * b
            D[1, k - 1] += 0.5 * b
            D[2, k + 1] += 0.5 * a
            D[2, k - 1] -= 0.5 * a
            C[2, k - 1] += 0.5 * b
            C[2, k + 1] -= 0.5 * b
        m = np.arange(K + 1)
        inv = np.where(m > 0, 1.0 / np.maximum(m, 1), 0.0)
        return m, C, D, inv

    @cached_property
    def _rho_modes(self):
        K = max((k for k, _, _ in self.harmonics), default=0)
        a = np.zeros(K + 1)
        b = np.zeros(K + 1)
        for k, ak, bk in self.harmonics:
            a[k] += ak
            b[k] += bk
        return np.arange(K + 1), a, b

    def _integrals(self, theta):
        """(s, x, y) at unwrapped tangent angles theta."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        m, C, D, inv = self._mode_table
        mt = np.multiply.outer(m, theta)
        ic = np.sin(mt) * inv[:, None]
        ic[0] = theta
        isn = (1.0 - np.cos(mt)) * inv[:, None]
        out = C @ ic + D @ isn
        S, X, Y = out[0], out[1], out[2]
        if self.bumps:
            n = np.floor(theta / TWO_PI)
            r = theta - n * TWO_PI
            tot = self._bump_totals
            acc = np.repeat(self._bump_anchor[:, None], theta.size, axis=1)
            for p in self.bumps:
                acc += p.integrals(r)
            S = S + acc[0] + n * tot[0]
            X = X + acc[1] + n * tot[1]
            Y = Y + acc[2] + n * tot[2]
        return np.array([S, X, Y])

    def s_of_theta(self, theta):
        return self._integrals(theta)[0]

    def position(self, theta):
        """Boundary point with tangent angle theta; shape (2, n)."""
        return self._integrals(theta)[1:]

    def theta_of_s(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        L = self.length
        s0 = float(self.s_of_theta(0.0)[0])
        n = np.floor((s - s0) / L)
        r = s - n * L
        th = (r - s0) / L * TWO_PI
        lo = np.zeros_like(r)
        hi = np.full_like(r, TWO_PI)
        for _ in range(60):
            f = self.s_of_theta(th) - r
            lo = np.where(f < 0, th, lo)
            hi = np.where(f > 0, th, hi)
            step = f / self.rho(th)
            new = th - step
            bad = (new <= lo) | (new >= hi)
            new = np.where(bad, 0.5 * (lo + hi), new)
            if np.all(np.abs(new - th) < 1e-15 * (1.0 + np.abs(th))):
                th = new
                break
            th = new
        return th + n * TWO_PI

    def boundary_series(self, theta0, order):
        """Taylor series in x = theta - theta0 of (s, x, y) about theta0 (constant terms included)."""
        r = self.rho_taylor(theta0, order)
        c = taylor.cos_coeffs(theta0, order)
        sn = taylor.sin_coeffs(theta0, order)
        rc = taylor.umul(r, c, order)
        rs = taylor.umul(r, sn, order)
        S0, X0, Y0 = self._integrals(np.array([theta0]))[:, 0]
        ser = np.zeros((3, order + 2))
        ser[:, 0] = (S0, X0, Y0)
        k = np.arange(1, order + 2)
        ser[0, 1:] = r / k
        ser[1, 1:] = rc / k
        ser[2, 1:] = rs / k
        return ser

    # serialization -------------------------------------------------------
    def to_dict(self):
        return {
            "mean_radius": self.mean_radius,
            "harmonics": [{"k": k, "cos": a, "sin": b} for k, a, b in self.harmonics],
            "bumps": [p.to_dict() for p in self.bumps],
        }

    @classmethod
    def from_dict(cls, d):
        h = tuple((int(e["k"]), float(e.get("cos", 0.0)), float(e.get("sin", 0.0))) for e in d.get("harmonics", []))
        bumps = tuple(BumpPatch.from_dict(b) for b in d.get("bumps", []))
        kw = {}
        if "resolution" in d:
            kw["resolution"] = int(d["resolution"])
        return cls(float(d["mean_radius"]), h, bumps, **kw)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def digest(self):
        import hashlib

        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# operations


@dataclass(frozen=True)
class AdmissibilityReport:
    min_rho: float
    closure_residual: float
    length: float
    length_error: float
    positive: bool
    closed: bool
    unit_length: bool
    tolerance: float = 1e-12

    @property
    def passed(self):
        return self.positive and self.closed and self.unit_length

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["passed"] = self.passed
        return d


def _check_grid(profile):
    grid = np.linspace(0.0, TWO_PI, profile.resolution, endpoint=False)
    extra = [p.center_theta + p.half_width * np.linspace(-1, 1, 257) for p in profile.bumps]
    if extra:
        grid = np.concatenate([grid, *extra])
    return grid


def check_admissibility(profile: RadiusProfile, tol: float = 1e-12) -> AdmissibilityReport:
    min_rho = float(np.min(profile.rho(_check_grid(profile))))
    cx, cy = profile.closure_defect
    closure = math.hypot(cx, cy)
    L = profile.length
    return AdmissibilityReport(
        min_rho=min_rho,
        closure_residual=closure,
        length=L,
        length_error=abs(L - 1.0),
        positive=min_rho > 0.0,
        closed=closure <= tol,
        unit_length=abs(L - 1.0) <= tol,
        tolerance=tol,
    )


def normalize(profile: RadiusProfile) -> RadiusProfile:
    """Rescale so that the boundary has length one."""
    c = 1.0 / profile.length
    bumps = tuple(replace(p, weights=tuple(c * w for w in p.weights)) for p in profile.bumps)
    return replace(profile, mean_radius=profile.mean_radius * c,
                   harmonics=tuple((k, a * c, b * c) for k, a, b in profile.harmonics), bumps=bumps)


@dataclass(frozen=True)
class BoundaryPoint:
    s: float
    theta: float
    position: tuple
    curvature_jet: tuple = field(default_factory=tuple)

    @property
    def kappa(self):
        return self.curvature_jet[0]


def theta_series_in_s(profile, theta0, order):
    """theta(s0 + sigma) - theta0 as a series in sigma."""
    ser = profile.boundary_series(theta0, order)
    return taylor.urevert(ser[0, : order + 1], order)


def curvature_jet(profile, theta0, order):
    """Derivatives kappa, kappa', ..., kappa^(order) with respect to arc length."""
    x_of_sigma = theta_series_in_s(profile, theta0, order)
    rho_s = taylor.ucompose(profile.rho_taylor(theta0, order), x_of_sigma, order)
    kap = taylor.urecip(rho_s, order)
    return kap * np.array([math.factorial(j) for j in range(order + 1)], dtype=float)


def eval_boundary(profile: RadiusProfile, s: float, order: int = 0) -> BoundaryPoint:
    if order > profile.max_order:
        raise JetOrderError(f"order {order} exceeds maximum {profile.max_order}")
    th = float(profile.theta_of_s(s)[0])
    pos = profile.position(th)[:, 0]
    jet = curvature_jet(profile, th, order)
    return BoundaryPoint(float(s) % float(profile.length), th % TWO_PI, (float(pos[0]), float(pos[1])), tuple(float(v) for v in jet))


def _rho_jet_for_curvature(kappa_jet, order):
    """Taylor coefficients of rho in theta - theta0 realising the given kappa-derivatives in s."""
    K = np.array(kappa_jet[: order + 1], dtype=float) / np.array([math.factorial(j) for j in range(len(kappa_jet[: order + 1]))])
    K = np.pad(K, (0, order + 1 - len(K)))
    x_of_sigma = np.zeros(order + 2)
    x_of_sigma[1:] = K / np.arange(1, order + 2)
    sigma_of_x = taylor.urevert(x_of_sigma[: order + 1], order)
    return taylor.urecip(taylor.ucompose(K, sigma_of_x, order), order)


def _circ_dist(a, b, period):
    d = abs(a - b) % period
    return min(d, period - d)


def make_bump(profile: RadiusProfile, s_point: float, target_jet, half_width: float,
              exclusion=(), slack: int = 4, max_cond: float = 1e13, jet_match: str = "exact") -> BumpPatch:
    """Bump changing the s-derivatives of kappa at ``s_point`` by ``target_jet``.

    The boundary point, its arc-length coordinate and tangent at ``s_point`` are
    unchanged, and the boundary outside the support is unchanged.  With
    ``jet_match="linear"`` the rho-increment is the first-order one, so the
    curvature jet changes by ``target_jet`` only up to a quadratic remainder.
    """
    if jet_match not in ("exact", "linear"):
        raise ValueError(f"unknown jet_match {jet_match!r}")
    target = np.asarray(target_jet, dtype=float)
    m = len(target) - 1
    if m + 1 > profile.max_order:
        raise JetOrderError("target jet longer than supported order")
    th_c = float(profile.theta_of_s(s_point)[0]) % TWO_PI
    s_lo = float(profile.s_of_theta(th_c - half_width)[0])
    s_hi = float(profile.s_of_theta(th_c + half_width)[0])
    L = profile.length
    s_c = float(profile.s_of_theta(th_c)[0])
    for e in exclusion:
        if _circ_dist(e, s_c, L) < 1e-12:
            continue
        off = (e - s_lo) % L
        if off <= (s_hi - s_lo):
            raise BumpError(f"bump support [{s_lo:.6g}, {s_hi:.6g}] contains excluded point s={e:.6g}")
    if m < 0 or not np.any(target):
        return BumpPatch(th_c, half_width, tuple([0.0] * (max(m, 0) + 7 + slack)), tuple(target), float(s_point))

    old = curvature_jet(profile, th_c, m)
    rho_old = profile.rho_taylor(th_c, m)
    if jet_match == "exact":
        drho = _rho_jet_for_curvature(old + target, m) - rho_old
    else:
        h = 1e-5 * max(1.0, float(np.max(np.abs(old)))) / float(np.max(np.abs(target)))
        drho = (_rho_jet_for_curvature(old + h * target, m) - _rho_jet_for_curvature(old - h * target, m)) / (2 * h)

    nb = m + 1 + 6 + slack
    rows = []
    rhs = []
    for j in range(m + 1):
        rows.append([basis_taylor(i, 0.0, m)[j] / half_width ** j for i in range(nb)])
        rhs.append(drho[j])
    # zero moments of (1, cos, sin) on each half of the support
    for sgn in (-1.0, 1.0):
        t = 0.5 * (_GL_X + 1.0) * sgn
        theta = th_c + half_width * t
        B = basis_values(nb, t)
        wts = 0.5 * half_width * _GL_W
        for g in (np.ones_like(theta), np.cos(theta), np.sin(theta)):
            rows.append(list(B @ (wts * g)))
            rhs.append(0.0)
    A = np.array(rows)
    b = np.array(rhs)
    scale = np.max(np.abs(A), axis=1)
    As = A / scale[:, None]
    sv = np.linalg.svd(As, compute_uv=False)
    if sv[-1] == 0.0 or sv[0] / sv[-1] > max_cond:
        raise BumpError("bump linear system ill-conditioned; enlarge the basis")
    w, *_ = np.linalg.lstsq(As, b / scale, rcond=None)
    if np.max(np.abs(A @ w - b)) > 1e-9 * max(1.0, np.max(np.abs(b)) * 1e3):
        raise BumpError("bump linear system not solved to tolerance")
    return BumpPatch(th_c, float(half_width), tuple(float(x) for x in w), tuple(float(x) for x in target), float(s_point))


def apply_and_renormalize(profile: RadiusProfile, patches, freeze_orbits: bool = True) -> RadiusProfile:
    """Merge patches; renormalise length to one only when no orbit is being held fixed."""
    patches = tuple(patches)
    if not patches:
        return profile
    new = replace(profile, bumps=profile.bumps + patches)
    min_rho = float(np.min(new.rho(_check_grid(new))))
    if min_rho <= 0.0:
        raise DomainError(f"perturbed profile not strictly convex (min rho = {min_rho:.3g})")
    if not freeze_orbits:
        new = normalize(new)
    return new


def length_drift(profile: RadiusProfile) -> float:
    return profile.length - 1.0


def amplitude_bound(profile: RadiusProfile) -> float:
    """Largest bump sup-norm that cannot destroy positivity of rho."""
    return float(np.min(profile.rho(_check_grid(profile))))
