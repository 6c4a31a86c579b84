"""First-order response of billiard jets to localized curvature changes.

Conventions.  x_0, ..., x_N are consecutive impacts, D_k = df^k(x_0) and
a_k = ds_k/ds_0, b_k = ds_k/dphi_0 (first row of D_k).  Changing the n-th
arc-length derivative of the curvature at impact l by eps (lower derivatives
fixed) changes the order-(n+1) partials of f^N at x_0 by

    2 eps (D_N D_l^-1)[:, 1] a_l^i b_l^j,   i + j = n + 1,

and leaves every partial of order <= n untouched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .billiard import PhasePoint, transport
from .domain import TWO_PI, RadiusProfile, apply_and_renormalize, make_bump
from .errors import ConditionViolation, SingularSystemError
from .taylor import Tps

B_MATRIX = np.array([[0.0, 0.0], [2.0, 0.0]])
E_MATRIX = np.array([[0.0, 0.0], [1.0, 0.0]])
TWIST_TOL = 1e-8


# ---------------------------------------------------------------------------
# orbit segments


class Segment:
    """Impacts x_0..x_N and the differentials D_k = df^k(x_0)."""

    def __init__(self, profile: RadiusProfile, x0: PhasePoint, N: int, order: int = 1):
        self.profile = profile
        self.N = N
        self.order = order
        self.series = transport(profile, x0, N, order)
        self.points = [PhasePoint(s.value % profile.length, f.value) for s, f, _ in self.series]
        self.D = [np.array([[s.c[1, 0], s.c[0, 1]], [f.c[1, 0], f.c[0, 1]]]) for s, f, _ in self.series]

    @classmethod
    def from_orbit(cls, profile, orbit, N=None, order=1, start=0):
        return cls(profile, orbit.points[start], orbit.q if N is None else N, order)

    def rel(self, j, i):
        """df^{j-i}(x_i)."""
        return self.D[j] @ np.linalg.inv(self.D[i])

    def ds_dphi(self, j, i):
        return float(self.rel(j, i)[0, 1])

    def a(self, l):
        return float(self.D[l][0, 0])

    def b(self, l):
        return float(self.D[l][0, 1])

    def end_jet(self):
        return self.series[-1][0], self.series[-1][1]

    def det(self, l):
        return float(np.linalg.det(self.D[l]))


def twist_partials_check(seg: Segment, upto: int | None = None, tol=TWIST_TOL):
    """All ds_j/dphi_i for 0 <= i < j <= upto; raises if any is negligible."""
    upto = seg.N if upto is None else upto
    vals = {(i, j): seg.ds_dphi(j, i) for j in range(1, upto + 1) for i in range(j)}
    scale = max(abs(v) for v in vals.values())
    bad = [(i, j) for (i, j), v in vals.items() if abs(v) <= tol * scale]
    return vals, bad


# ---------------------------------------------------------------------------
# first-order response to a curvature kick


def predict_delta_differential(seg: Segment, k: int, eps: float, periodic: bool = True):
    """First-order change of df^N(x_0) when kappa at impact k changes by eps."""
    N = seg.N
    if not 0 <= k < N:
        raise IndexError(f"impact index {k} outside [0, {N})")
    if k == 0:
        # the departure tangent turns; for a closed orbit the final arrival does too
        out = seg.D[N] @ E_MATRIX
        if periodic:
            out = out + E_MATRIX @ seg.D[N]
        return eps * out
    return eps * seg.rel(N, k) @ B_MATRIX @ seg.D[k]


def response_rows(seg: Segment, impacts, m: int, rows):
    """Jacobian of the order-(m+1) partials listed in ``rows`` w.r.t. Delta kappa^(m) at ``impacts``.

    ``rows`` holds (component, i, j) with i + j = m + 1; component 0 is s, 1 is phi.
    """
    N = seg.N
    J = np.zeros((len(rows), len(impacts)))
    for c, l in enumerate(impacts):
        col = seg.rel(N, l)[:, 1]
        al, bl = seg.a(l), seg.b(l)
        for r, (comp, i, j) in enumerate(rows):
            J[r, c] = 2.0 * col[comp] * al**i * bl**j
    return J


def free_rows(m: int, include_pure_s: bool = True):
    """Order-m coefficients not fixed by area preservation: all of s and d^m phi/dphi0^m."""
    rows = [(0, m - k, k) for k in range(0 if include_pure_s else 1, m + 1)]
    return rows + [(1, 0, m)]


def jet_partials(s: Tps, f: Tps, rows):
    comps = (s, f)
    return np.array([comps[c].partial(i, j) for c, i, j in rows])


# ---------------------------------------------------------------------------
# bumps for an orbit


def _theta_gaps(profile, s_points):
    th = np.mod(profile.theta_of_s(np.asarray(s_points, float)), TWO_PI)
    out = []
    for i, t in enumerate(th):
        d = np.abs(np.delete(th, i) - t) % TWO_PI
        d = np.minimum(d, TWO_PI - d)
        d = d[d > 1e-9]
        out.append(float(d.min()) if d.size else math.pi)
    return out


def plan_patches(profile, seg_points, targets, max_half_width=0.35, fraction=0.45, orbit_points=None, jet_match="exact"):
    """Bumps realising curvature-jet increments ``targets`` {impact index: jet} on ``profile``."""
    pts = list(orbit_points) if orbit_points is not None else list(seg_points)
    all_s = [p.s for p in pts] + [p.s for p in seg_points]
    patches = []
    for idx, jet in targets.items():
        s0 = seg_points[idx].s
        gap = _theta_gaps(profile, [s0] + [s for s in all_s])[0]
        hw = min(max_half_width, fraction * gap)
        patches.append(make_bump(profile, s0, jet, hw, exclusion=all_s, jet_match=jet_match))
    return patches


def apply_targets(profile, seg_points, targets, orbit_points=None, **kw):
    if not targets or not any(np.any(np.asarray(j) != 0) for j in targets.values()):
        return profile, ()
    patches = plan_patches(profile, seg_points, targets, orbit_points=orbit_points, **kw)
    return apply_and_renormalize(profile, patches, freeze_orbits=True), tuple(patches)


@dataclass
class PerturbationPlan:
    order: int
    impacts: tuple
    epsilon: np.ndarray
    rows: tuple
    target: np.ndarray
    predicted_delta: np.ndarray
    applied_patches: tuple = ()
    note: str = ""

    def targets(self):
        return {l: [0.0] * self.order + [float(e)] for l, e in zip(self.impacts, self.epsilon)}

    def to_dict(self):
        return {
            "order": self.order,
            "impacts": list(self.impacts),
            "epsilon": [float(e) for e in self.epsilon],
            "rows": [list(r) for r in self.rows],
            "target": [float(t) for t in self.target],
            "predicted_delta": [float(t) for t in self.predicted_delta],
            "patches": [p.to_dict() for p in self.applied_patches],
            "note": self.note,
        }


# ---------------------------------------------------------------------------
# jet-control matrix


@dataclass
class MMatrix:
    n: int
    entries: np.ndarray
    direct_det: float
    twist_partials: dict = field(default_factory=dict)
    factor_two: float = 2.0

    def to_dict(self):
        return {
            "n": self.n,
            "entries": self.entries.tolist(),
            "direct_det": self.direct_det,
            "min_twist_partial": min(abs(v) for v in self.twist_partials.values()) if self.twist_partials else None,
        }


def assemble_M(seg: Segment, n: int, check=True) -> MMatrix:
    N = n + 3
    if seg.N < N:
        raise ValueError(f"segment has {seg.N} steps, need {N}")
    sub = seg if seg.N == N else _truncate(seg, N)
    vals, bad = twist_partials_check(sub, N)
    if check and bad:
        raise ConditionViolation(f"ds_j/dphi_i vanishes for (i, j) in {bad}")
    M = np.zeros((n + 2, n + 2))
    for l in range(1, n + 3):
        col = sub.rel(N, l)[:, 1]
        al, bl = sub.a(l), sub.b(l)
        for k in range(1, n + 2):
            M[k - 1, l - 1] = col[0] * al ** (n - (k - 1)) * bl ** (k - 1)
        M[n + 1, l - 1] = col[1] * bl**n
    lu, piv = scipy.linalg.lu_factor(M)
    det = float(np.prod(np.diag(lu)) * (-1) ** np.sum(piv != np.arange(n + 2)))
    return MMatrix(n, M, det, vals)


def _truncate(seg: Segment, N):
    out = object.__new__(Segment)
    out.profile, out.N, out.order = seg.profile, N, seg.order
    out.series, out.points, out.D = seg.series[: N + 1], seg.points[: N + 1], seg.D[: N + 1]
    return out


def det_via_reduction(M: MMatrix, seg: Segment, rtol=1e-7) -> dict:
    """Row reduction of M with a full multiplier trail and closed-form cross-checks.

    Rows 1..n+1 are c_l times degree-n monomials in (a_l, b_l).  The step
    R_k <- a_p R_k - b_p R_{k-1} (k = n+1, ..., p+1) clears column p and produces
    the factor W_pl = a_p b_l - b_p a_l = (ds_l/dphi_p) det df^p(x_0); the
    last row is then cleared by plain elimination (determinant preserving).
    """
    n = M.n
    N = n + 3
    sub = seg if seg.N == N else _truncate(seg, N)
    A = M.entries.copy()
    a = [sub.a(l) for l in range(N + 1)]
    b = [sub.b(l) for l in range(N + 1)]
    trail = []
    row_scale = np.ones(n + 2)
    status = "ok"
    for p in range(1, n + 1):
        ap, bp = a[p], b[p]
        if abs(ap) <= TWIST_TOL * max(1.0, abs(bp)):
            status = f"multiplier ds_{p}/ds_0 vanishes; reduction path invalid, LU fallback"
            break
        for k in range(n + 1, p, -1):
            A[k - 1] = ap * A[k - 1] - bp * A[k - 2]
            row_scale[k - 1] *= ap
            trail.append({"op": f"R{k} <- (ds{p}/ds0) R{k} - (ds{p}/dphi0) R{k - 1}", "scale": ap, "mult": bp})
    schur = None
    if status == "ok":
        for p in range(1, n + 2):
            if A[p - 1, p - 1] == 0.0:
                status = "zero pivot; LU fallback"
                break
            f = A[n + 1, p - 1] / A[p - 1, p - 1]
            A[n + 1] -= f * A[p - 1]
            trail.append({"op": f"R{n + 2} <- R{n + 2} - f R{p}", "scale": 1.0, "mult": float(f)})
        schur = float(A[n + 1, n + 1])
    W = lambda i, j: a[i] * b[j] - b[i] * a[j]
    closed_diag = []
    for k in range(1, n + 2):
        c_k = sub.rel(N, k)[0, 1]
        val = c_k * a[k] ** (n - k + 1)
        for p in range(1, k):
            val *= sub.ds_dphi(k, p) * sub.det(p)
        closed_diag.append(float(val))
    dets = [sub.det(l) for l in range(N + 1)]
    closed_det = dets[N] * b[N] ** n
    for i in range(1, n + 3):
        closed_det /= dets[i]
        for j in range(i + 1, n + 3):
            closed_det *= sub.ds_dphi(j, i) * dets[i]
    # closed-form pivot product, and the multiplier relating it to det M
    pivot = float(np.linalg.det(sub.rel(n + 3, n + 2)) * b[N] ** n)
    for i in range(1, n + 2):
        pivot *= sub.ds_dphi(n + 2, i)
    for j in range(2, n + 2):
        for i in range(1, j):
            pivot *= sub.ds_dphi(j, i) ** 2
    pivot_mult = 1.0
    for j in range(2, n + 2):
        for i in range(1, j):
            pivot_mult /= sub.ds_dphi(j, i)
    for i in range(1, n + 3):
        pivot_mult *= dets[i] ** (n + 2 - i) / dets[i]
    pivot_mult *= dets[n + 2]
    direct = M.direct_det
    rel = lambda x: abs(x - direct) / max(abs(direct), 1e-300)
    cert = {
        "n": n,
        "status": status,
        "direct_det": direct,
        "closed_form_det": closed_det,
        "closed_form_rel_err": rel(closed_det),
        "pivot_product": pivot,
        "pivot_multiplier": pivot_mult,
        "pivot_rel_err": rel(pivot * pivot_mult),
        "trail": trail,
        "row_scale": row_scale.tolist(),
    }
    if status == "ok":
        diag = [float(A[k, k]) for k in range(n + 1)]
        reduced = float(np.prod(diag) * schur)
        cert.update(
            reduced_diagonal=diag + [schur],
            closed_diagonal=closed_diag,
            diagonal_rel_err=max(abs(d - c) / max(abs(c), 1e-300) for d, c in zip(diag, closed_diag)),
            reduced_det=reduced,
            reduced_det_over_multipliers=reduced / float(np.prod(row_scale)),
        )
        cert["reduced_rel_err"] = rel(cert["reduced_det_over_multipliers"])
        cert["passed"] = bool(
            cert["reduced_rel_err"] < rtol and cert["closed_form_rel_err"] < rtol and cert["diagonal_rel_err"] < rtol and direct != 0.0
        )
    else:
        cert["passed"] = bool(cert["closed_form_rel_err"] < rtol and direct != 0.0)
    return cert


# ---------------------------------------------------------------------------
# independent jet control


def control_rows(n: int):
    """Coefficients steered by order-n curvature bumps at n+2 impacts.

    These are the order-n derivatives of the second column of df^N:
    d^{n+1} s_N / ds0^{n+1-k} dphi0^k (k = 1..n+1) and d^{n+1} phi_N / dphi0^{n+1}.
    """
    m = n + 1
    return [(0, m - k, k) for k in range(1, m + 1)] + [(1, 0, m)]


def solve_epsilons_for_target(seg: Segment, n: int, target) -> PerturbationPlan:
    """Curvature increments Delta kappa^(n) at impacts 1..n+2 realising ``target`` to first order.

    The Jacobian is 2 M diag(ds_l/dphi_0) with M the jet-control matrix.
    """
    target = np.asarray(target, float)
    impacts = tuple(range(1, n + 3))
    rows = control_rows(n)
    M = assemble_M(seg, n)
    if M.direct_det == 0.0:
        raise SingularSystemError("M is singular")
    sub = seg if seg.N == n + 3 else _truncate(seg, n + 3)
    J = M.factor_two * M.entries * np.array([sub.b(l) for l in impacts])[None, :]
    if not np.any(target):
        eps = np.zeros(n + 2)
    else:
        eps = np.linalg.solve(J, target)
    return PerturbationPlan(n, impacts, eps, tuple(rows), target, J @ eps)


def measure_rows(profile, x0, N, order, rows):
    s, f, _ = transport(profile, x0, N, order)[-1]
    return jet_partials(s, f, rows), (s, f)


def verify_plan(profile, seg: Segment, plan: PerturbationPlan, orbit_points=None):
    """Apply the plan and report achieved change of the targeted and lower-order coefficients."""
    N = plan.order + 3
    order = plan.order + 1
    x0 = seg.points[0]
    rows = list(plan.rows)
    lower = [(c, i, m - i) for m in range(1, order) for c in (0, 1) for i in range(m + 1)]
    base, _ = measure_rows(profile, x0, N, order, rows + lower)
    new_prof, patches = apply_targets(profile, seg.points[: N + 1], plan.targets(), orbit_points)
    after, _ = measure_rows(new_prof, x0, N, order, rows + lower)
    d = after - base
    return {
        "achieved": d[: len(rows)],
        "lower_change": d[len(rows):],
        "patches": patches,
        "profile": new_prof,
    }


# ---------------------------------------------------------------------------
# area-preservation recovery of phi partials


def recover_phi_partials(s_N: Tps, phi_N: Tps, m: int, phi0: float):
    """Order-m partials d^m phi_N / ds0^(m-k) dphi0^k, k = 0..m-1, from the free data.

    Differentiating det df^N = sin phi_0 / sin phi_N (m-1) times gives an
    upper-bidiagonal system with diagonal -ds_N/dphi_0.
    """
    if m < 1:
        raise ValueError("m >= 1")
    order = s_N.order
    if order < m:
        raise ValueError("jet order too small")
    s = s_N.truncate(m)
    f = phi_N.truncate(m).copy()
    for a in range(1, m + 1):
        f.c[a, m - a] = 0.0
    su, sv = s.partial(1, 0), s.partial(0, 1)
    if abs(sv) < 1e-14:
        raise ConditionViolation("vanishing twist ds_N/dphi_0")
    # det of the Jacobian as a series; derivatives drop one order
    ds_u, ds_v = _d(s, 0), _d(s, 1)
    df_u, df_v = _d(f, 0), _d(f, 1)
    det = ds_u * df_v - ds_v * df_u
    rhs = Tps.var(1, phi0, m - 1).sin() / f.truncate(m - 1).sin()
    R = det - rhs
    # unknown u_a = coefficient c[a, m-a], a = 1..m; equation for monomial u^a' v^b', a'+b'=m-1
    A = np.zeros((m, m))
    r = np.zeros(m)
    for ap in range(m):
        bp = m - 1 - ap
        # su * (b'+1) c[a', b'+1]  -  sv * (a'+1) c[a'+1, b']
        r[ap] = -R.c[ap, bp]
        if ap >= 1:
            A[ap, ap - 1] += su * (bp + 1)
        A[ap, ap] += -sv * (ap + 1)
    coef = np.linalg.solve(A, r)
    # coef[a-1] = c[a, m-a]; report partials ordered by phi exponent k = 0..m-1
    return np.array([coef[m - k - 1] * math.factorial(m - k) * math.factorial(k) for k in range(m)])


def _d(t: Tps, which):
    """Derivative of a series, returned one order lower."""
    n = t.order
    c = np.zeros((n, n))
    for a in range(n + 1):
        for b in range(n + 1 - a):
            if which == 0 and a >= 1:
                c[a - 1, b] = a * t.c[a, b]
            elif which == 1 and b >= 1:
                c[a, b - 1] = b * t.c[a, b]
    return Tps(c, n - 1)


# ---------------------------------------------------------------------------
# eigenvalues and eigenvector angles


def eigen_linearization(A, variant="derived"):
    """3x3 matrix mapping (eps1, eps2, eps3) = (da, db, dd) to (d omega1, d omega2, d lambda).

    variant: "derived" (first-order expansion), "alternate" (alternative Delta omega_2 row
    with (lambda^-1)^2 in the eps2 term) or "alternate_l2" (same with l_-^2).
    """
    (a, b), (c, d) = np.asarray(A, float)
    tr = a + d
    det = a * d - b * c
    lam = 0.5 * (tr + math.copysign(math.sqrt(tr * tr - 4 * det), tr))
    li = det / lam
    lp2 = b * b + (a - lam) ** 2
    lm2 = b * b + (a - li) ** 2
    g = lam * lam - 1.0
    row_l = [lam * lam / g, 0.0, lam * lam / g]
    row_w1 = [b / (lp2 * g), -(lam - a) / lp2, b * lam * lam / (lp2 * g)]
    if variant == "derived":
        row_w2 = [-b * lam * lam / (lm2 * g), -(li - a) / lm2, -b / (lm2 * g)]
    elif variant == "alternate":
        row_w2 = [-(2 * lam * lam + 1) * b / (lm2 * g), -(li - a) / li**2, -b * lam * lam / (lm2 * g)]
    elif variant == "alternate_l2":
        row_w2 = [-(2 * lam * lam + 1) * b / (lm2 * g), -(li - a) / lm2, -b * lam * lam / (lm2 * g)]
    else:
        raise ValueError(variant)
    return np.array([row_w1, row_w2, row_l]), lam


def eigen_angles(A):
    """(omega1, omega2, lambda) with V = (b, mu - a) = (cos w, sin w)."""
    (a, b), (c, d) = np.asarray(A, float)
    tr = a + d
    det = a * d - b * c
    lam = 0.5 * (tr + math.copysign(math.sqrt(tr * tr - 4 * det), tr))
    li = det / lam
    return math.atan2(lam - a, b), math.atan2(li - a, b), lam


def fourth_entry(A, eps):
    """Change of c keeping det fixed to first order: (a e3 + d e1 - c e2) / b."""
    (a, b), (c, d) = np.asarray(A, float)
    e1, e2, e3 = eps
    return (a * e3 + d * e1 - c * e2) / b


def direct_eigen_check(A, h=1e-7):
    """Central-difference Jacobian of (omega1, omega2, lambda) along (da, db, dd) with det fixed."""
    A = np.asarray(A, float)
    J = np.zeros((3, 3))
    for k, (i, j) in enumerate([(0, 0), (0, 1), (1, 1)]):
        cols = []
        for sgn in (1, -1):
            eps = np.zeros(3)
            eps[k] = sgn * h
            P = A.copy()
            P[0, 0] += eps[0]
            P[0, 1] += eps[1]
            P[1, 1] += eps[2]
            # exact det preservation
            P[1, 0] = (P[0, 0] * P[1, 1] - np.linalg.det(A)) / P[0, 1]
            cols.append(np.array(eigen_angles(P)))
        J[:, k] = (cols[0] - cols[1]) / (2 * h)
    return J


def eigen_angle_control(seg: Segment, targets, impacts=(1, 2, 3), variant="derived"):
    """Curvature increments at three impacts giving (d omega1, d omega2, d lambda) to first order."""
    A = seg.D[seg.N]
    if abs(np.trace(A)) <= 2.0:
        raise ConditionViolation("orbit is not hyperbolic")
    L, lam = eigen_linearization(A, variant)
    targets = np.asarray(targets, float)
    if abs(np.linalg.det(L)) < 1e-14 * np.max(np.abs(L)) ** 3:
        raise SingularSystemError("eigen-angle linearization singular")
    e = np.linalg.solve(L, targets) if np.any(targets) else np.zeros(3)
    rows = [(0, 1, 0), (0, 0, 1), (1, 0, 1)]
    J = np.zeros((3, 3))
    for c, l in enumerate(impacts):
        P = seg.rel(seg.N, l) @ B_MATRIX @ seg.D[l] if l > 0 else seg.D[seg.N] @ E_MATRIX + E_MATRIX @ seg.D[seg.N]
        J[:, c] = [P[0, 0], P[0, 1], P[1, 1]]
    if abs(np.linalg.det(J)) < 1e-14 * max(1.0, np.max(np.abs(J))) ** 3:
        raise SingularSystemError("three-point response singular")
    dk = np.linalg.solve(J, e) if np.any(e) else np.zeros(3)
    dA = np.array([[e[0], e[1]], [fourth_entry(A, e), e[2]]])
    return {"eps_matrix": e, "delta_kappa": dk, "impacts": tuple(impacts), "predicted_dA": dA, "lambda": lam, "linearization": L}


# ---------------------------------------------------------------------------
# compensation


def delta_df(seg: Segment, dkappa: dict, periodic=True):
    out = np.zeros((2, 2))
    for k, v in dkappa.items():
        out += predict_delta_differential(seg, k, v, periodic)
    return out


def three_point_compensation(seg: Segment, foreign: dict, indices, periodic=True):
    """Increments at three impacts reproducing the first-order Delta df^N of ``foreign``."""
    target = delta_df(seg, foreign, periodic)
    if not np.any(target):
        return np.zeros(3), {"solvability_det": None, "residual": 0.0}
    cols = [predict_delta_differential(seg, k, 1.0, periodic).ravel() for k in indices]
    J = np.array(cols).T
    n1, n2, n3 = indices
    solv = -seg.ds_dphi(n3, n2) * float(np.linalg.det(seg.rel(n1 + 1, n1))) if n1 + 1 <= seg.N else float("nan")
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] < 1e-12 * sv[0]:
        raise SingularSystemError("compensation system singular")
    x, *_ = np.linalg.lstsq(J, target.ravel(), rcond=None)
    resid = float(np.max(np.abs(J @ x - target.ravel())))
    return x, {"solvability_det": solv, "residual": resid, "target": target}


def four_point_null(seg: Segment, ks):
    """Increments at k1<k2<k3<k4 (normalised Delta kappa_k4 = 1) leaving the s-row of the
    transfer from k1 to k4 unchanged to first order; the phi-row is free.
    """
    k1, k2, k3, k4 = ks
    dsphi = lambda j, i: seg.ds_dphi(j, i)
    dss = lambda j, i: float(seg.rel(j, i)[0, 0])
    dphiphi = lambda j, i: float(seg.rel(j, i)[1, 1])
    G = np.array([
        [dsphi(k2, k1) * dsphi(k4, k2), dsphi(k3, k1) * dsphi(k4, k3)],
        [dss(k2, k1) * dsphi(k4, k2), dss(k3, k1) * dsphi(k4, k3)],
    ])
    det2 = float(np.linalg.det(G))
    if abs(det2) < 1e-14:
        raise SingularSystemError("four-point system singular")
    d1 = 1.0
    d23 = np.linalg.solve(G, np.array([0.0, -dsphi(k4, k1) * d1]))
    d4 = (dsphi(k2, k1) * dphiphi(k4, k2) * d23[0] + dsphi(k3, k1) * dphiphi(k4, k3) * d23[1]) / dsphi(k4, k1)
    inc = np.array([d1, d23[0], d23[1], d4]) / d4
    return dict(zip(ks, inc)), det2


# ---------------------------------------------------------------------------
# staged rotation


def rotation(delta):
    c, s = math.cos(delta), math.sin(delta)
    return np.array([[c, -s], [s, c]])


def perturbed_product(seg: Segment, dkappa: dict):
    """df^N(x_0) after curvature increments at interior impacts; exact since each factor is affine."""
    out = np.eye(2)
    prev = 0
    for l in sorted(dkappa):
        if not 0 < l < seg.N:
            raise IndexError("interior impacts only")
        out = (np.eye(2) + dkappa[l] * B_MATRIX) @ seg.rel(l, prev) @ out
        prev = l
    return seg.rel(seg.N, prev) @ out


def _exact_order1(seg, impacts, target, guess):
    idx = [(0, 0), (0, 1), (1, 1)]

    def F(e):
        D = perturbed_product(seg, dict(zip(impacts, e)))
        return np.array([D[i, j] - target[i, j] for i, j in idx])

    sol = scipy.optimize.root(F, guess, tol=1e-15)
    if np.max(np.abs(F(sol.x))) > 1e-12 * max(1.0, np.max(np.abs(target))):
        raise SingularSystemError("exact order-1 stage did not converge")
    return sol.x


def rotate_differential(profile, orbit, delta, n, orbit_points=None, exact_order1=True):
    """Stage 0 rotates df^q by R_delta (three entries steered, fourth follows);
    stage m = 1..n restores the free order-(m+1) coefficients of f^q.

    Returns (plans, final profile, report).
    """
    q = orbit.q
    x0 = orbit.points[0]
    pts = orbit_points or orbit.points
    if delta == 0.0:
        return [], profile, {"stages": 0}
    if q < n + 4:
        raise ValueError(f"need at least {n + 4} impacts, orbit has {q}")
    order = n + 1
    base = transport(profile, x0, q, order)[-1]
    A0 = np.array([[base[0].c[1, 0], base[0].c[0, 1]], [base[1].c[1, 0], base[1].c[0, 1]]])
    target_A = rotation(delta) @ A0
    plans = []
    prof = profile
    # stage 0
    seg = Segment(prof, x0, q, 1)
    impacts = (1, 2, 3)
    rows = [(0, 1, 0), (0, 0, 1), (1, 0, 1)]
    J = response_rows(seg, impacts, 0, rows)
    want = np.array([target_A[0, 0] - A0[0, 0], target_A[0, 1] - A0[0, 1], target_A[1, 1] - A0[1, 1]])
    eps = np.linalg.solve(J, want)
    note = "linear"
    if exact_order1:
        eps = _exact_order1(seg, impacts, target_A, eps)
        note = "exact product"
    plan = PerturbationPlan(0, impacts, eps, tuple(rows), want, J @ eps, note=note)
    prof, patches = apply_targets(prof, seg.points, plan.targets(), orbit_points=pts)
    plan.applied_patches = patches
    plans.append(plan)
    for m in range(1, n + 1):
        seg = Segment(prof, x0, q, m + 1)
        rows = free_rows(m + 1)
        impacts = tuple(range(1, m + 4))
        s_now, f_now = seg.end_jet()
        want = jet_partials(base[0], base[1], rows) - jet_partials(s_now, f_now, rows)
        J = response_rows(seg, impacts, m, rows)
        eps = np.linalg.solve(J, want)
        plan = PerturbationPlan(m, impacts, eps, tuple(rows), want, J @ eps)
        prof, patches = apply_targets(prof, seg.points, plan.targets(), orbit_points=pts)
        plan.applied_patches = patches
        plans.append(plan)
    final = transport(prof, x0, q, order)[-1]
    A1 = np.array([[final[0].c[1, 0], final[0].c[0, 1]], [final[1].c[1, 0], final[1].c[0, 1]]])
    report = {"stages": len(plans), "order1_error": float(np.max(np.abs(A1 - target_A))), "target": target_A, "achieved": A1}
    for m in range(2, order + 1):
        fr = free_rows(m)
        det_rows = [(1, m - k, k) for k in range(m)]
        report[f"order{m}_free_drift"] = float(np.max(np.abs(jet_partials(final[0], final[1], fr) - jet_partials(base[0], base[1], fr))))
        report[f"order{m}_determined_drift"] = float(np.max(np.abs(jet_partials(final[0], final[1], det_rows) - jet_partials(base[0], base[1], det_rows))))
    return plans, prof, report
