import math

import numpy as np
import pytest

from bjlab.errors import ConditionViolation
from bjlab.manifolds import (
    Curve,
    LinearSaddle,
    PolynomialSaddle,
    cascade,
    classify_model,
    detect_tangency,
    globalize,
    injectivity_check,
    invariance_defect,
    local_manifold,
    splitting_function,
    unfolding_jacobian,
    unstable_at,
    verify_tangency_lift,
)
from bjlab.orbits import find_birkhoff_orbit


def test_polynomial_saddle_unstable_exact():
    lam, c = 3.0, 0.7
    F = PolynomialSaddle(lam, c)
    arc = globalize(local_manifold(F, "unstable", 1, order=4), steps=3, tol=1e-6)
    x, y = arc.samples[:, 0], arc.samples[:, 1]
    assert np.max(np.abs(y - c / (lam**3 - 1) * x * x)) < 1e-12
    assert arc.mu == pytest.approx(lam)
    assert invariance_defect(arc) < 1e-12


def test_polynomial_saddle_stable_exact():
    F = PolynomialSaddle(3.0, 0.7)
    arc = globalize(local_manifold(F, "stable", -1, order=4), steps=3, tol=1e-6)
    assert np.max(np.abs(arc.samples[:, 0])) < 1e-14
    assert np.all(arc.samples[1:, 1] < 0)


def test_round_trip_inverse():
    F = PolynomialSaddle(2.5, -1.3)
    P = np.array([[0.1, 0.2], [-0.3, 0.05]])
    assert np.allclose(F.inverse(F.forward(P)), P, atol=1e-15)


def test_local_manifold_rejects_elliptic():
    A = np.array([[math.cos(0.3), -math.sin(0.3)], [math.sin(0.3), math.cos(0.3)]])
    with pytest.raises(ConditionViolation):
        local_manifold(LinearSaddle(A), "unstable", 1)
    with pytest.raises(ValueError):
        local_manifold(PolynomialSaddle(2.0), "sideways", 1)


def test_billiard_branch_invariant(ellipse08):
    orb = find_birkhoff_orbit(ellipse08, 1, 2)
    arc = unstable_at(ellipse08, orb, 0, 1)
    assert arc.seed_defect < 1e-10
    arc = globalize(arc, steps=3)
    assert arc.chord_error <= 1e-4
    assert invariance_defect(arc) < 1e-8
    # the globalized branch leaves the seed neighbourhood
    d = np.linalg.norm(arc.fmap.diff(np.broadcast_to(arc.fmap.base, arc.samples.shape), arc.samples), axis=1)
    assert d[-1] > 5 * arc.seed_radius


def test_splitting_of_coincident_curves():
    F = PolynomialSaddle(3.0, 0.7)
    Wu = local_manifold(F, "unstable", 1, order=4)
    a = 0.7 / 26.0
    graph = Curve(lambda t: np.stack([np.asarray(t, float), a * np.asarray(t, float) ** 2], axis=1))
    S = splitting_function(Wu, graph, (0.01, 0.5), (0.0, 1.0), n=65)
    assert np.max(np.abs(S.phi)) < 1e-12


def test_model_transverse_zeros():
    a = 0.25
    cr, rec = classify_model(lambda t: t * t - a)
    assert rec is None
    assert sorted(c.t for c in cr) == pytest.approx([-0.5, 0.5], abs=1e-3)
    assert sorted(c.slope for c in cr) == pytest.approx([-1.0, 1.0], abs=1e-2)


@pytest.mark.parametrize("power,order", [(2, 1), (3, 2)])
def test_model_tangency_order(power, order):
    t = np.linspace(-1, 1, 257)
    cr, rec = detect_tangency(t, t**power, tol_slope=1e-2)
    assert rec is not None
    assert abs(rec.t) < 1e-12
    assert rec.order_estimate == order


def test_detect_tangency_needs_samples():
    with pytest.raises(ValueError):
        detect_tangency(np.linspace(0, 1, 10), np.zeros(10))


def test_unfolding_jacobian_identity():
    # Phi_e(t) = t^2 + e0 + e1 t at t* = 0: (Phi, Phi') = (e0, e1)
    fam = unfolding_jacobian(lambda e: [e[0], e[1]], 1, 2)
    assert np.allclose(fam.jacobian, np.eye(2), atol=1e-9)
    assert fam.genericity_det == pytest.approx(1.0, abs=1e-9)


def test_unfolding_jacobian_degenerate():
    fam = unfolding_jacobian(lambda e: [e[0] + e[1], 2 * (e[0] + e[1])], 1, 2)
    assert abs(fam.genericity_det) < 1e-8


def test_cascade_diagonalises():
    M = np.array([[1.0, 0.0, 0.0], [0.4, 2.0, 0.0], [-0.3, 0.5, 0.7]])
    G, comp = cascade(lambda e: M @ e, 2)
    assert np.allclose(comp.jacobian, np.eye(3), atol=1e-9)


def test_lift_linear_saddle_halving():
    A = np.diag([2.0, 0.5])
    eta = 1e-3
    P = np.array([[1.0, 0.0], [eta, 1.0]])
    Ap = P @ A @ np.linalg.inv(P)
    Wu = local_manifold(LinearSaddle(A), "unstable", 1)
    Wp = local_manifold(LinearSaddle(Ap), "unstable", 1)
    t = 4 * Wu.seed_radius
    rep = verify_tangency_lift(Wu, Wp, t)
    assert rep.slope_rel_err < 1e-6
    assert np.allclose(rep.ratios[rep.fit_from:], 0.5, rtol=1e-6)


def test_lift_zero_perturbation():
    F = LinearSaddle(np.diag([2.0, 0.5]))
    Wu = local_manifold(F, "unstable", 1)
    rep = verify_tangency_lift(Wu, Wu, 4 * Wu.seed_radius)
    assert rep.amplitude == 0.0 and rep.slope == 0.0


def test_injectivity_examples():
    a = [0.1, 0.3, 0.5, 0.7]
    b = [0.1005, 0.32, 0.52, 0.9]
    out = injectivity_check([a, b], 0.01)
    flags = {(v.orbit, v.index): v.injective for v in out["points"]}
    assert not flags[(0, 0)] and not flags[(1, 0)]
    assert flags[(0, 1)] and flags[(1, 3)]
    assert out["orbit_ok"] == [True, True]
    wrap = injectivity_check([[0.001], [0.999]], 0.01)
    assert not wrap["points"][0].injective
    assert wrap["points"][0].nearest == pytest.approx(0.002)
    assert injectivity_check([[0.001], [0.999]], 0.01, period=None)["points"][0].injective
