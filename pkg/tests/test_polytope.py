import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toriclab.errors import EmptyInterior, NotDelzant, OutsideDomain, Unbounded
from toriclab.polytope import (HalfPlaneModel, contains, format_polytope, guillemin_jet, guillemin_value,
                               l_values, make_polytope, parse_polytope_text, read_polytope)

from conftest import interior_points


def test_square_vertices(square):
    assert np.allclose(square.vertices, [(1, 0), (1, 1), (0, 1), (0, 0)]) or \
        {tuple(v) for v in square.vertices} == {(0, 0), (1, 0), (1, 1), (0, 1)}


def test_simplex_vertices(simplex):
    assert {tuple(np.round(v, 12)) for v in simplex.vertices} == {(0, 0), (1, 0), (0, 1)}


def test_non_delzant_rejected():
    with pytest.raises(NotDelzant):
        make_polytope([((1, 0), 0), ((0, 1), 0), ((-1, -2), -2)])


def test_clockwise_rejected():
    with pytest.raises(NotDelzant):
        make_polytope([((0, -1), -1), ((-1, 0), -1), ((0, 1), 0), ((1, 0), 0)])


def test_unbounded_and_empty():
    with pytest.raises((Unbounded, EmptyInterior)):
        make_polytope([((1, 0), 0), ((0, 1), 0), ((1, 1), 0)])
    with pytest.raises(EmptyInterior):
        make_polytope([((1, 0), 2), ((0, 1), 0), ((-1, 0), -1), ((0, -1), -1)])
    with pytest.raises(EmptyInterior):
        make_polytope([((1, 0), 0), ((0, 1), 0)])


@pytest.mark.parametrize("xi, expected", [((0.5, 0.5), (0.5, 0.5, 0.5, 0.5)), ((0.0, 0.5), (0.0, 0.5, 1.0, 0.5))])
def test_l_values_square(square, xi, expected):
    assert np.allclose(l_values(square, xi), expected)


def test_l_values_simplex(simplex):
    assert np.allclose(l_values(simplex, (1 / 3, 1 / 3)), [1 / 3] * 3)


def test_guillemin_values(square, simplex):
    assert guillemin_value(square, (0.5, 0.5)) == pytest.approx(-2 * math.log(2), abs=1e-12)
    assert guillemin_value(simplex, (1 / 3, 1 / 3)) == pytest.approx(-math.log(3), abs=1e-12)
    # l log l extends by 0 to the boundary
    assert guillemin_value(square, (0.0, 0.5)) == pytest.approx(-math.log(2), abs=1e-12)
    with pytest.raises(OutsideDomain):
        guillemin_value(square, (1.5, 0.5))


def test_guillemin_hessian_center(square):
    j = guillemin_jet(square, (0.5, 0.5))
    assert np.allclose(j.hess, np.diag([4.0, 4.0]), atol=1e-12)
    assert j.det == pytest.approx(16.0)
    with pytest.raises(OutsideDomain):
        guillemin_jet(square, (0.0, 0.5))


def test_contains(square):
    assert contains(square, (0.5, 0.5)).kind == "interior"
    loc = contains(square, (0.0, 0.5))
    assert loc.kind == "boundary"
    assert square.normals[loc.edge].tolist() == [1, 0]
    assert contains(square, (2.0, 0.0)).kind == "outside"
    assert contains(square, (0.0, 0.0)).vertex is not None


def test_guillemin_positive_definite(square, simplex, rng):
    for poly in (square, simplex):
        for p in interior_points(poly, 50, rng, margin=1e-3):
            j = guillemin_jet(poly, p, 2)
            assert j.convex
            assert np.allclose(j.hess, j.hess.T)


def test_guillemin_jets_match_finite_differences(simplex, rng):
    h = 1e-4
    poly = make_polytope([((1, 0), 0), ((1, 1), 1), ((0, 1), 0), ((-1, 0), -3), ((0, -1), -3)])
    for poly in (simplex, poly):
        pts = [p for p in interior_points(poly, 40, rng) if l_values(poly, p).min() > 0.1][:10]
        for p in pts:
            j = guillemin_jet(poly, p, 4)
            for k in range(2):
                e = np.zeros(2)
                e[k] = h
                g_fd = (guillemin_value(poly, p + e) - guillemin_value(poly, p - e)) / (2 * h)
                assert abs(g_fd - j.grad[k]) <= 1e-6 * max(1.0, abs(j.grad[k]))
                H_fd = (guillemin_jet(poly, p + e, 1).grad - guillemin_jet(poly, p - e, 1).grad) / (2 * h)
                assert np.allclose(H_fd, j.hess[k], rtol=1e-6, atol=1e-6)
                T_fd = (guillemin_jet(poly, p + e, 2).hess - guillemin_jet(poly, p - e, 2).hess) / (2 * h)
                assert np.allclose(T_fd, j.d3[k], rtol=1e-6, atol=1e-6)
                Q_fd = (guillemin_jet(poly, p + e, 3).d3 - guillemin_jet(poly, p - e, 3).d3) / (2 * h)
                # fourth derivatives are steep near the edges, so O(h²) truncation shows at 1e-6
                assert np.allclose(Q_fd, j.d4[k], rtol=1e-5, atol=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1))
def test_l_values_affine(a1, a2, b1, b2, t):
    poly = make_polytope([((1, 0), 0), ((0, 1), 0), ((-1, -1), -1)])
    p, q = np.array([a1, a2]), np.array([b1, b2])
    lhs = l_values(poly, t * p + (1 - t) * q)
    rhs = t * l_values(poly, p) + (1 - t) * l_values(poly, q)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_file_round_trip(tmp_path):
    text = "# trapezoid\n1 0 0\n0 1 0\n-1 -1 -2\n0 -1 -1\n"
    poly = parse_polytope_text(text)
    assert len(poly) == 4
    f = tmp_path / "p.txt"
    f.write_text(format_polytope(poly))
    again = read_polytope(f)
    assert again.edges == poly.edges


def test_halfplane_model_convex():
    hp = HalfPlaneModel()
    for p in [(0.01, -3.0), (1.0, 0.0), (50.0, 2.0)]:
        assert hp.potential.jet(p, 2).convex
    assert hp.potential.value((1.0, 2.0)) == pytest.approx(4.0)
