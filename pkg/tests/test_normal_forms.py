import math

import numpy as np
import pytest

from bjlab.domain import RadiusProfile
from bjlab.manifolds import BilliardReturn, LinearSaddle, PolynomialSaddle
from bjlab.normal_forms import (
    LazutkinCoordinates,
    birkhoff_normal_form,
    lazutkin_check,
    saddle_eigenbasis,
)
from bjlab.orbits import find_birkhoff_orbit
from bjlab.taylor import Tps


class ConjugatedNormalForm:
    """G = h o T o h^-1 with T = (D xi, eta / D), D = lam + a1 xi eta + a2 (xi eta)^2, h = (x, y + c x^2)."""

    def __init__(self, lam, a1, a2, c):
        self.lam, self.a1, self.a2, self.c = lam, a1, a2, c

    def jet(self, order):
        u, v = Tps.var(0, 0.0, order), Tps.var(1, 0.0, order)
        xi, eta = u, v - self.c * u * u
        w = xi * eta
        D = self.lam + self.a1 * w + self.a2 * w * w
        X, Y = D * xi, eta / D
        return X, Y + self.c * X * X


def test_eigenbasis_unimodular():
    A = np.array([[2.0, 1.0], [1.0, 1.0]])
    lam, P = saddle_eigenbasis(A)
    assert np.linalg.det(P) == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(np.linalg.inv(P) @ A @ P, np.diag([lam, 1 / lam]), atol=1e-14)
    with pytest.raises(ValueError):
        saddle_eigenbasis(np.array([[0.0, -1.0], [1.0, 0.0]]))


def test_recovers_known_coefficients():
    nf = birkhoff_normal_form(ConjugatedNormalForm(2.5, 0.3, -0.7, 0.4), 2)
    assert nf.lam == pytest.approx(2.5, rel=1e-14)
    assert nf.coeffs == pytest.approx([0.3, -0.7], abs=1e-12)
    assert nf.residual < 1e-12
    assert nf.area_defect() < 1e-12
    assert nf.delta(0.1) == pytest.approx(2.5 + 0.03 - 0.007, abs=1e-12)


@pytest.mark.parametrize("fmap", [LinearSaddle(np.array([[2.0, 1.0], [1.0, 1.0]])), PolynomialSaddle(3.0, 0.8)])
def test_linearizable_saddles(fmap):
    nf = birkhoff_normal_form(fmap, 3)
    assert np.max(np.abs(nf.coeffs)) < 1e-10
    assert nf.residual < 1e-10


def test_rejects_zero_order():
    with pytest.raises(ValueError):
        birkhoff_normal_form(PolynomialSaddle(2.0), 0)


def test_billiard_saddle(ellipse08):
    orb = find_birkhoff_orbit(ellipse08, 1, 2)
    fmap = BilliardReturn(ellipse08, orb, 0)
    nf1 = birkhoff_normal_form(fmap, 1)
    assert nf1.lam == pytest.approx(16.0, rel=1e-10)
    assert nf1.residual < 1e-10
    assert nf1.area_defect() < 1e-8
    nf2 = birkhoff_normal_form(fmap, 2)
    assert nf2.relative_residual < 1e-12
    # lower coefficients do not depend on the truncation order
    assert nf2.coeffs[0] == pytest.approx(nf1.coeffs[0], rel=1e-8)


def test_lazutkin_circle_exact(circle):
    L = LazutkinCoordinates(circle)
    theta = np.linspace(0, 2 * math.pi, 7, endpoint=False)
    for y in (1e-3, 1e-2, 0.2):
        dx, y1 = L.step(theta, np.full(theta.size, y))
        assert np.max(np.abs(dx - y)) < 1e-12
        assert np.max(np.abs(y1 - y)) < 1e-12


def test_lazutkin_round_trip(skew):
    L = LazutkinCoordinates(skew)
    th = np.linspace(0, 6, 5)
    assert np.allclose(L.phi_of(th, L.y_of(th, 0.3)), 0.3, atol=1e-15)


def test_lazutkin_perturbed_circle_exponents():
    prof = RadiusProfile.from_harmonics([(2, 0.02, 0.0), (3, 0.01, 0.005)])
    rep = lazutkin_check(prof)
    assert rep.exponent_r1 == pytest.approx(3.0, abs=0.1)
    assert rep.exponent_r2 == pytest.approx(4.0, abs=0.1)
    assert rep.exponent_gap >= 0.9


def test_lazutkin_residuals_shrink_with_perturbation():
    r = []
    for e in (0.02, 0.01):
        r.append(lazutkin_check(RadiusProfile.from_harmonics([(2, e, 0.0)]), n_y=5).r1.max())
    assert r[1] < 0.6 * r[0]
