import math

import numpy as np
import pytest

from bjlab.billiard import JetMap2, PhasePoint, next_hit
from bjlab.errors import JetOrderError
from bjlab.orbits import (
    check_absolute_periodicity_order,
    classify,
    classify_matrix,
    find_birkhoff_orbit,
    jet_identity_order,
    reflection_residual,
)


@pytest.mark.parametrize("q", [2, 3, 4, 8])
def test_circle_polygons(circle, q):
    orb = find_birkhoff_orbit(circle, 1, q)
    gaps = np.diff(np.concatenate([orb.s, [orb.s[0] + 1.0]])) % 1.0
    assert np.max(np.abs(gaps - 1.0 / q)) < 1e-10
    assert np.max(np.abs(orb.phi - math.pi / q)) < 1e-10
    assert orb.total_length == pytest.approx(q * math.sin(math.pi / q) / math.pi, abs=1e-10)


def test_orbit_closes(oval3):
    orb = find_birkhoff_orbit(oval3, 2, 5)
    p = orb.points[0]
    for _ in range(orb.q):
        p = next_hit(oval3, p)
    assert min(abs(p.s - orb.points[0].s), 1 - abs(p.s - orb.points[0].s)) < 1e-10
    assert abs(p.phi - orb.points[0].phi) < 1e-10
    assert reflection_residual(oval3, orb) < 1e-10


def _trace_two_mirror(chord, radius):
    # round trip between two equal mirrors: trace = 2 (2 g^2 - 1), g = 1 - chord / radius
    g = 1.0 - chord / radius
    return 2.0 * (2.0 * g * g - 1.0)


def test_ellipse_axes_traces(ellipse08):
    a, b = 1.0, 0.8
    major = classify(ellipse08, find_birkhoff_orbit(ellipse08, 1, 2))
    assert major.eigen.classification == "hyperbolic"
    assert major.eigen.trace == pytest.approx(_trace_two_mirror(2 * a, b * b / a), rel=1e-10)
    assert major.eigen.lam == pytest.approx(16.0, rel=1e-10)
    minor = classify(ellipse08, find_birkhoff_orbit(ellipse08, 1, 2, seed=0.0, mode="saddle"))
    assert minor.eigen.classification == "elliptic"
    assert minor.eigen.trace == pytest.approx(_trace_two_mirror(2 * b, a * a / b), rel=1e-10)


def test_classify_matrix():
    assert classify_matrix(np.array([[2.0, 1.0], [1.0, 1.0]])).classification == "hyperbolic"
    assert classify_matrix(np.array([[0.0, 1.0], [-1.0, 0.0]])).classification == "elliptic"
    assert classify_matrix(np.array([[1.0, 1.0], [0.0, 1.0]])).classification == "parabolic"


def test_length_identities(oval3):
    for q in (2, 3, 5):
        orb = find_birkhoff_orbit(oval3, 1, q)
        rep = check_absolute_periodicity_order(oval3, orb, 1)
        assert rep.identity_residual_s < 1e-9
        assert rep.identity_residual_phi < 1e-9
        assert rep.telescoping_residual < 1e-9


def test_periodicity_order_needs_positive_n(oval3):
    orb = find_birkhoff_orbit(oval3, 1, 3)
    with pytest.raises(JetOrderError):
        check_absolute_periodicity_order(oval3, orb, 0)


def test_identity_jet_order():
    J = JetMap2.identity(PhasePoint(0.1, 1.0), 4)
    assert jet_identity_order(J) == 4
    c = J.coeffs.copy()
    c[0, 2, 0] = 1e-3
    assert jet_identity_order(JetMap2(4, J.base_in, J.base_out, c)) == 1


def test_bad_rotation_number(oval3):
    with pytest.raises(ValueError):
        find_birkhoff_orbit(oval3, 2, 4)
