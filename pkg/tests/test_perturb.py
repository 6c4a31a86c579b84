import math

import numpy as np
import pytest

from bjlab import perturb as P
from bjlab.billiard import PhasePoint, transport
from bjlab.orbits import classify, find_birkhoff_orbit

X0 = PhasePoint(0.05, 1.0)


def _slope_errors(prof, x0, N, k, periodic, orbit_points=None, jet_match="exact"):
    seg = P.Segment(prof, x0, N)
    pred = P.predict_delta_differential(seg, k, 1.0, periodic=periodic)
    errs = []
    for eps in (1e-3, 1e-4, 1e-5):
        newp, _ = P.apply_targets(prof, seg.points, {k: [eps]}, orbit_points=orbit_points, jet_match=jet_match)
        D = P.Segment(newp, x0, N).D[N]
        errs.append(float(np.max(np.abs((D - seg.D[N]) / eps - pred))))
    return errs


def test_slope_law_linear_bump(oval):
    errs = _slope_errors(oval, PhasePoint(0.1, 1.1), 5, 2, periodic=False, jet_match="linear")
    assert errs[0] / errs[1] == pytest.approx(10, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(10, rel=0.05)


def test_slope_law_exact_bump_is_affine(oval):
    # with an exact curvature-jet match and a frozen orbit, df^N is affine in eps
    errs = _slope_errors(oval, PhasePoint(0.1, 1.1), 5, 2, periodic=False)
    assert max(errs) < 1e-6


def test_departure_impact_on_closed_orbit(oval):
    orb = find_birkhoff_orbit(oval, 1, 4)
    errs = _slope_errors(oval, orb.points[0], 4, 0, periodic=True, orbit_points=orb.points)
    assert errs[0] / errs[1] == pytest.approx(10, rel=0.05)


def test_perturbed_product_exact(oval):
    seg = P.Segment(oval, X0, 5)
    dk = {1: 3e-3, 3: -2e-3}
    pred = P.perturbed_product(seg, dk)
    newp, _ = P.apply_targets(oval, seg.points, {k: [v] for k, v in dk.items()})
    got = P.Segment(newp, X0, 5).D[5]
    assert np.max(np.abs(got - pred)) < 1e-10


@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_certificate(oval, n):
    seg = P.Segment(oval, X0, n + 3, n + 1)
    M = P.assemble_M(seg, n)
    cert = P.det_via_reduction(M, seg)
    assert cert["passed"]
    assert M.direct_det != 0.0
    assert cert["closed_form_rel_err"] < 1e-7
    assert len(cert["trail"]) > 0


def test_assemble_M_needs_long_segment(oval):
    with pytest.raises(ValueError):
        P.assemble_M(P.Segment(oval, X0, 2, 1), 1)


@pytest.mark.parametrize("n", [0, 1, 2])
def test_solve_targets_independent(oval, n):
    seg = P.Segment(oval, X0, n + 3, n + 1)
    scale = 1e-4
    for j in range(n + 2):
        t = np.zeros(n + 2)
        t[j] = scale
        plan = P.solve_epsilons_for_target(seg, n, t)
        r = P.verify_plan(oval, seg, plan)
        got = np.asarray(r["achieved"]) / scale
        e = np.zeros(n + 2)
        e[j] = 1.0
        assert np.max(np.abs(got - e)) < 0.1
        if len(r["lower_change"]):
            assert np.max(np.abs(r["lower_change"])) < 100 * scale**2


def test_zero_target_zero_plan(oval):
    seg = P.Segment(oval, X0, 4, 2)
    plan = P.solve_epsilons_for_target(seg, 1, np.zeros(3))
    assert not np.any(plan.epsilon)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_recover_phi_partials(oval3, m):
    s, f, _ = transport(oval3, X0, 4, m + 1)[-1]
    rec = P.recover_phi_partials(s, f, m, X0.phi)
    tru = np.array([f.partial(m - k, k) for k in range(m)])
    assert np.max(np.abs(rec - tru)) <= 1e-9 * max(1.0, np.max(np.abs(tru)))


def test_eigen_linearization_against_differences():
    A = np.array([[2.0, 1.0], [3.0, 2.0]])
    Jd = P.direct_eigen_check(A)
    L, lam = P.eigen_linearization(A, "derived")
    assert lam == pytest.approx(2 + math.sqrt(3), rel=1e-14)
    assert np.max(np.abs(L - Jd)) < 1e-6
    # the alternative second-angle row does not match the differences
    Lp, _ = P.eigen_linearization(A, "alternate")
    assert np.max(np.abs(Lp[1] - Jd[1])) > 1e-2
    assert np.max(np.abs(Lp[[0, 2]] - Jd[[0, 2]])) < 1e-6


def test_eigen_angle_control(oval3):
    orb = classify(oval3, find_birkhoff_orbit(oval3, 1, 4))
    assert orb.eigen.classification == "hyperbolic"
    seg = P.Segment(oval3, orb.points[0], 4)
    base = np.array(P.eigen_angles(seg.D[4]))
    want = np.array([0.0, 0.0, 1e-4])
    r = P.eigen_angle_control(seg, want)
    t = {l: [d] for l, d in zip(r["impacts"], r["delta_kappa"])}
    newp, _ = P.apply_targets(oval3, seg.points, t, orbit_points=orb.points)
    got = np.array(P.eigen_angles(P.Segment(newp, orb.points[0], 4).D[4])) - base
    assert got[2] == pytest.approx(1e-4, rel=1e-2)
    assert np.max(np.abs(got[:2])) < 1e-2 * 1e-4 * 100


def test_three_point_compensation(oval3):
    orb = find_birkhoff_orbit(oval3, 1, 6)
    seg = P.Segment(oval3, orb.points[0], 6)
    foreign = {5: 1e-4}
    x, info = P.three_point_compensation(seg, foreign, (1, 2, 3))
    assert info["residual"] < 1e-14
    net = P.delta_df(seg, foreign) - P.delta_df(seg, dict(zip((1, 2, 3), x)))
    assert np.max(np.abs(net)) < 1e-14


def test_four_point_null(oval3):
    orb = find_birkhoff_orbit(oval3, 1, 6)
    seg = P.Segment(oval3, orb.points[0], 6)
    inc, det2 = P.four_point_null(seg, (1, 2, 3, 4))
    assert det2 != 0.0
    assert inc[4] == pytest.approx(1.0)
    # first-order change of the transfer from impact 1 to impact 4 keeps its s-row
    var = sum(v * seg.rel(4, k) @ P.B_MATRIX @ seg.rel(k, 1) for k, v in inc.items())
    assert np.max(np.abs(var[0])) < 1e-12
    assert np.max(np.abs(var[1])) > 1e-3


@pytest.mark.parametrize("q", [5, 6])
def test_rotation(oval3, q):
    orb = find_birkhoff_orbit(oval3, 1, q)
    delta = 1e-3
    plans, newp, rep = P.rotate_differential(oval3, orb, delta, 1)
    assert len(plans) == 2
    assert rep["order1_error"] < 1e-5
    assert rep["order2_free_drift"] < 100 * delta**2
    assert "order2_determined_drift" in rep


def test_rotation_needs_enough_impacts(oval3):
    orb = find_birkhoff_orbit(oval3, 1, 4)
    with pytest.raises(ValueError):
        P.rotate_differential(oval3, orb, 1e-3, 1)


def test_rotation_zero_delta(oval3):
    orb = find_birkhoff_orbit(oval3, 1, 5)
    plans, prof, rep = P.rotate_differential(oval3, orb, 0.0, 1)
    assert plans == [] and prof is oval3
