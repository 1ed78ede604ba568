import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from toriclab.affine import (
    SANDWICH_INNER, AffineMap, apply_affine, blowup_normalize, centered_mvee, check_sandwich,
    halfplane_affine, is_L_bounded, john_normalize, minimal_normalize_triple, sandwich_radii,
    section, widths,
)
from toriclab.errors import Degenerate, NotCompact
from toriclab.field import jet
from toriclab.jets import QuadraticPotential, SymbolicPotential
from toriclab.polytope import HalfPlaneModel, polygon_centroid


def random_polygon(rng, k=None):
    k = k or int(rng.integers(3, 12))
    pts = rng.normal(size=(k + 4, 2)) @ rng.normal(size=(2, 2)) + rng.normal(size=2)
    return pts


def brute_mvee_det(points):
    """det Q of the centred minimum-area ellipse, by search over unit-determinant shapes."""
    X = np.asarray(points, dtype=float)

    def scale(par):
        t, th = par
        c, s = math.cos(th), math.sin(th)
        R = np.array([[c, -s], [s, c]])
        S = R @ np.diag([math.exp(t), math.exp(-t)]) @ R.T
        return np.einsum("ij,jk,ik->i", X, S, X).max()

    grid = [(t, th) for t in np.linspace(-3, 3, 61) for th in np.linspace(0, math.pi, 60, endpoint=False)]
    best = min(grid, key=scale)
    res = minimize(scale, best, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    # Q = S / max vᵀSv has det 1/m²
    return 1.0 / res.fun ** 2


# -- AffineMap ---------------------------------------------------------------------


def test_map_json_round_trip():
    m = AffineMap([[1.3, 0.4], [-0.2, 0.8]], (0.3, -1.0), 2.5)
    back = AffineMap.from_json(m.to_json())
    assert back.distance_to(m) == 0.0


def test_compose_and_inverse(rng):
    m1 = AffineMap([[1.3, 0.4], [-0.2, 0.8]], (0.3, -1.0), 2.5)
    m2 = AffineMap([[0.5, 0.0], [0.7, 2.0]], (1.0, 2.0), 0.5)
    x = rng.normal(size=(10, 2))
    assert np.allclose(m1.compose(m2)(x), m1(m2(x)), atol=1e-13)
    assert m1.compose(m1.inverse()).distance_to(AffineMap.identity()) < 1e-13
    assert np.allclose(m1.preimage(m1(x)), x, atol=1e-13)


def test_singular_map_rejected():
    with pytest.raises(Degenerate):
        AffineMap([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(Degenerate):
        AffineMap(np.eye(2), lam=0.0)


def test_apply_affine_jets(rng):
    u = SymbolicPotential("xi1**4/12 + xi1*xi2/10 + xi2**2 + exp(xi1)", names=("xi1", "xi2"))
    m = AffineMap([[1.3, 0.4], [-0.2, 0.8]], (0.3, -1.0), 2.5)
    ut = apply_affine(u, m, slope=(0.1, -0.2), const=0.7)
    for _ in range(5):
        xi = rng.normal(size=2)
        p = m(xi)
        ju, jt = u.jet(xi, 3), ut.jet(p, 3)
        assert jt.value == pytest.approx(2.5 * ju.value + 0.1 * p[0] - 0.2 * p[1] + 0.7, abs=1e-12)
        Ai = m.Ainv
        assert np.allclose(jt.hess, 2.5 * Ai.T @ ju.hess @ Ai, atol=1e-12)


# -- John normalization ------------------------------------------------------------


def test_john_rectangle():
    T, v = john_normalize(np.array([[0, 0], [2, 0], [2, 1], [0, 1]], dtype=float))
    r = 1 / math.sqrt(2)
    assert np.allclose(T.A, np.diag([r, math.sqrt(2)]), atol=1e-9)
    assert np.allclose(T.a0, [-r, -r], atol=1e-9)
    assert check_sandwich(v)


def test_john_regular_polygon_is_identity():
    th = 2 * np.pi * np.arange(256) / 256
    v = np.stack([np.cos(th), np.sin(th)], axis=1)
    T, _ = john_normalize(v)
    assert np.allclose(T.A, np.eye(2), atol=1e-3)
    assert np.allclose(T.a0, 0, atol=1e-12)


def test_john_triangle():
    T, v = john_normalize(np.array([[0, 0], [1, 0], [0, 1]], dtype=float))
    # the centred ellipse passes through all three vertices of a triangle
    assert np.allclose(np.hypot(v[:, 0], v[:, 1]), 1.0, atol=1e-9)
    r_in, r_out = sandwich_radii(v)
    assert r_in == pytest.approx(0.5, abs=1e-9)
    assert r_out == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("k", range(4))
def test_mvee_matches_brute_force(rng, k):
    v = random_polygon(rng, 5 + k)
    from toriclab.affine import _vertices
    hull = _vertices(v)
    X = hull - polygon_centroid(hull)
    assert np.linalg.det(centered_mvee(X)) == pytest.approx(brute_mvee_det(X), rel=1e-4)


def test_sandwich_random_polygons(rng):
    for _ in range(100):
        T, v = john_normalize(random_polygon(rng))
        r_in, r_out = sandwich_radii(v)
        assert r_out <= 1 + 1e-6
        assert r_in >= SANDWICH_INNER - 1e-6


def test_john_idempotent(rng):
    _, v = john_normalize(random_polygon(rng))
    T2, v2 = john_normalize(v)
    assert T2.distance_to(AffineMap.identity()) < 1e-6


def test_degenerate_polygon():
    with pytest.raises(Degenerate):
        john_normalize(np.array([[0, 0], [1, 1], [2, 2]], dtype=float))


def test_bounded_widths_give_bounded_maps(rng):
    # polygons caught between two fixed disks need only a boundedly distorting normalization
    diamond = 0.5 * np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
    for _ in range(30):
        th = rng.uniform(0, 2 * np.pi, 8)
        extra = rng.uniform(0.5, 1.0, 8)[:, None] * np.stack([np.cos(th), np.sin(th)], axis=1)
        T, _ = john_normalize(np.vstack([diamond, extra]))
        assert is_L_bounded(T, 4.0)


def test_is_L_bounded():
    assert is_L_bounded(AffineMap.identity(), 1.0)
    assert not is_L_bounded(AffineMap(np.diag([3.0, 1.0])), 2.0)
    assert not is_L_bounded(AffineMap(np.eye(2), (3.0, 0.0)), 2.0)


def test_widths():
    assert widths(np.array([[0, 0], [2, 0], [2, 1], [0, 1]], dtype=float)) == (2.0, 1.0)
    w1, w2 = widths(np.array([[0, 0], [1, 0], [0, 1]], dtype=float))
    assert (w1, w2) == (1.0, 1.0)


# -- sections ------------------------------------------------------------------------


def test_section_of_quadratic_is_disk():
    u = QuadraticPotential(np.eye(2))
    S = section(u, (0.3, -0.2), 0.5)
    r = np.hypot(*(S.vertices - [0.3, -0.2]).T)
    assert np.allclose(r, 1.0, atol=1e-4)
    assert S.area() == pytest.approx(math.pi, rel=1e-3)
    assert S.is_convex()


def test_section_of_ellipse():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    u = QuadraticPotential(Q)
    S = section(u, (0.0, 0.0), 1.0)
    # {½ξᵀQξ ≤ 1} has area 2π/√det Q
    assert S.area() == pytest.approx(2 * math.pi / math.sqrt(np.linalg.det(Q)), rel=1e-3)


def test_section_monotone(square, rng):
    u = square.potential
    p = np.array([0.4, 0.6])
    small, big = section(u, p, 0.05), section(u, p, 0.2)
    assert all(big.contains(q, slack=1e-6) for q in small.vertices)
    assert small.area() < big.area()


def test_section_not_compact(square):
    u = square.potential
    with pytest.raises(NotCompact):
        section(u, (0.5, 0.5), 50.0)


# -- blow-up -------------------------------------------------------------------------


def test_blowup_normalizes_hessian(square):
    u = square.potential
    p = np.array([0.3, 0.7])
    ut, m = blowup_normalize(u, p, 4.0)
    j = jet(ut, np.zeros(2), 2)
    assert j.value == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(j.grad, 0.0, atol=1e-10)
    assert np.allclose(j.hess, np.eye(2), atol=1e-10)
    assert np.allclose(m(p), 0.0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 20.0))
def test_blowup_of_quadratic_is_standard(lam):
    u = QuadraticPotential(np.array([[3.0, 1.0], [1.0, 2.0]]))
    ut, _ = blowup_normalize(u, np.array([0.2, -0.1]), lam)
    xi = np.array([0.7, -0.4])
    assert ut.value(xi) == pytest.approx(0.5 * xi @ xi, abs=1e-10)


# -- half-plane normalization ---------------------------------------------------------


def test_halfplane_affine_shape():
    hp = HalfPlaneModel()
    t = halfplane_affine(hp.potential, 2.0, 1.7, 0.4, 0.3, -0.6, 1.1)
    assert np.allclose(t.map.A, np.diag([2.0, 1.7]))
    assert t.map.lam == 2.0
    x = np.array([0.2, -0.5])
    assert np.allclose(t.base_map_inverse(t.base_map(x)), x, atol=1e-14)


@pytest.fixture(scope="module")
def triple():
    return minimal_normalize_triple(HalfPlaneModel().potential, (1.0, 0.0))


def test_minimal_triple_beta(triple):
    assert triple.beta == pytest.approx(10 / math.sqrt(2), abs=1e-6)
    assert triple.s0_measure == pytest.approx(10.0, abs=1e-4)


def test_minimal_triple_normalization(triple):
    w = triple.potential
    assert np.allclose(triple.p_check, 0.0, atol=1e-9)
    assert w.value(triple.p_check) == pytest.approx(0.0, abs=1e-9)
    # the normalized potential has zero slope at the image of p∘
    assert np.allclose(w.jet(triple.p_circ, 1).grad, 0.0, atol=1e-9)
    assert triple.divisor_distance == pytest.approx(1.0, abs=1e-5)


def test_minimal_triple_shift_invariant(triple):
    # sliding p∘ along the divisor direction does not change the normalization
    other = minimal_normalize_triple(HalfPlaneModel().potential, (1.0, 0.37))
    assert other.beta == pytest.approx(triple.beta, rel=1e-6)
    assert other.s0_measure == pytest.approx(triple.s0_measure, abs=1e-4)
