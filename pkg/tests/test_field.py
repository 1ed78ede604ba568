import numpy as np
import pytest

from toriclab.domain import Box
from toriclab.errors import NotConvexHere, SpacingTooCoarse, StencilOutOfDomain
from toriclab.field import (ScalarField, SplitPotential, fd_derivative, jet, laplace_beltrami, laplace_beltrami_nd,
                            load_field, make_grid, save_field)
from toriclab.jets import QuadraticPotential, SymbolicPotential
from toriclab.polytope import guillemin_jet


def test_grid_examples(square, simplex):
    g = make_grid(square.domain, 0.25)
    assert int(g.inside.sum()) == 9
    g = make_grid(square.domain, 1 / 64)
    assert int(g.inside.sum()) == 63 * 63
    with pytest.raises(SpacingTooCoarse):
        make_grid(simplex.domain, 0.5)


def _field(fn, h=0.05, box=((-1, -1), (1, 1))):
    g = make_grid(Box(*box), h)
    return ScalarField.sample(g, fn)


def _center(f):
    g = f.grid
    return tuple(int(np.argmin(np.abs(a - 0.1))) for a in g.axes)


def test_fd_exact_on_quadratics():
    f = _field(lambda p: p[0] ** 2)
    node = _center(f)
    assert fd_derivative(f, (2, 0), node) == pytest.approx(2.0, abs=1e-9)
    f = _field(lambda p: p[0] * p[1])
    assert fd_derivative(f, (1, 1), node) == pytest.approx(1.0, abs=1e-9)


def test_fd_fourth_derivative_order_two():
    errs = []
    for h in (0.05, 0.025):
        f = _field(lambda p: p[0] ** 4 + np.sin(p[0]), h=h)
        x = f.grid.coords(*_center(f))[0]
        errs.append(abs(fd_derivative(f, (4, 0), _center(f)) - (24 + np.sin(x))))
    assert errs[0] < 1e-2
    assert errs[0] / errs[1] >= 3.5


@pytest.mark.parametrize("alpha", [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)])
def test_fd_exact_on_low_degree(alpha):
    # centred stencils of order k are exact on polynomials of degree k+1
    rng = np.random.default_rng(sum(alpha))
    c = rng.normal(size=(5, 5))
    deg = sum(alpha) + 1
    poly = lambda p: sum(c[a, b] * p[0] ** a * p[1] ** b for a in range(5) for b in range(5) if a + b <= deg)
    f = _field(poly, h=0.1)
    node = _center(f)
    x = f.grid.coords(*node)
    import sympy as sp

    s1, s2 = sp.symbols("a b")
    expr = sum(float(c[a, b]) * s1 ** a * s2 ** b for a in range(5) for b in range(5) if a + b <= deg)
    exact = float(sp.diff(expr, s1, alpha[0], s2, alpha[1]).subs({s1: x[0], s2: x[1]}))
    assert fd_derivative(f, alpha, node) == pytest.approx(exact, rel=1e-7, abs=1e-7)


def test_fd_stencil_out_of_domain():
    f = _field(lambda p: p[0] ** 2, h=0.1)
    with pytest.raises(StencilOutOfDomain):
        fd_derivative(f, (4, 0), (0, 5))


def test_jet_examples(square):
    q = QuadraticPotential(np.eye(2))
    j = jet(q, (0.3, -2.0), 3)
    assert np.allclose(j.hess, np.eye(2)) and np.allclose(j.d3, 0)
    j = jet(square.potential, (0.5, 0.5), 2)
    assert j.det == pytest.approx(16.0)
    assert np.allclose(j.hess_inv @ j.hess, np.eye(2), atol=1e-10)
    with pytest.raises(NotConvexHere):
        jet(QuadraticPotential(np.diag([1.0, -1.0])), (0, 0), 2)


def test_split_with_zero_field_matches_analytic(square):
    g = make_grid(square.domain, 1 / 32)
    zero = ScalarField(g, np.where(g.inside, 0.0, np.nan))
    u = SplitPotential(square.potential, zero)
    for p in [(0.3, 0.4), (0.5, 0.5), (0.7, 0.2)]:
        a, b = u.jet(p, 4), guillemin_jet(square, p, 4)
        for k in range(5):
            assert np.allclose(a.d(k), b.d(k), atol=1e-12, rtol=0)


def test_jet_additivity(square):
    g = make_grid(square.domain, 1 / 32)
    f1 = ScalarField.sample(g, lambda p: 0.1 * np.sin(p[0]) * p[1])
    f2 = ScalarField.sample(g, lambda p: 0.05 * p[0] ** 3)
    both = ScalarField(g, f1.values + f2.values)
    u12 = SplitPotential(square.potential, both)
    u1 = SplitPotential(square.potential, f1)
    z2 = SplitPotential(QuadraticPotential(np.zeros((2, 2))), f2)
    for p in [(0.3, 0.4), (0.55, 0.61)]:
        a, b, c = u12.jet(p, 4), u1.jet(p, 4), z2.jet(p, 4)
        for k in range(5):
            assert np.allclose(a.d(k), b.d(k) + c.d(k), atol=1e-10)


def test_fd_jets_richardson(square):
    fn = lambda p: 0.1 * np.sin(2 * p[0]) * np.cos(p[1])
    p = np.array([0.43, 0.57])
    exact = -0.4 * np.sin(2 * p[0]) * np.cos(p[1])  # ∂²/∂ξ₁²
    errs = []
    for h in (1 / 16, 1 / 32):
        g = make_grid(square.domain, h)
        u = SplitPotential(QuadraticPotential(np.eye(2)), ScalarField.sample(g, fn))
        errs.append(abs(u.jet(p, 2).hess[0, 0] - 1.0 - exact))
    assert errs[0] / errs[1] >= 3.5


def test_laplace_beltrami_examples():
    q = QuadraticPotential(np.eye(2))
    assert laplace_beltrami(q, lambda p: p[0] ** 2, (0.2, 0.3)) == pytest.approx(2.0, abs=1e-8)
    assert laplace_beltrami(q, lambda p: p[0], (0.2, 0.3)) == pytest.approx(0.0, abs=1e-8)
    q4 = QuadraticPotential(4 * np.eye(2))
    assert laplace_beltrami(q4, lambda p: p[0] ** 2, (0.2, 0.3)) == pytest.approx(0.5, abs=1e-8)


def test_laplace_beltrami_forms_agree(square):
    s = lambda p: np.sin(p[0]) * p[1] ** 2
    for power in (0.5, 1.0):
        a = laplace_beltrami(square.potential, s, (0.3, 0.6), power)
        b = laplace_beltrami_nd(square.potential, s, (0.3, 0.6), power)
        assert a == pytest.approx(b, rel=1e-5)


def test_laplace_beltrami_power_one_is_trace_form():
    f = SymbolicPotential("log(1 + exp(x1)) + log(1 + exp(x2)) + x1*x2/10")
    s = lambda p: np.exp(0.3 * p[0]) * p[1]
    x = np.array([0.2, -0.4])
    j = f.jet(x, 2)
    H = np.array([[0.09 * np.exp(0.3 * x[0]) * x[1], 0.3 * np.exp(0.3 * x[0])], [0.3 * np.exp(0.3 * x[0]), 0.0]])
    assert laplace_beltrami(f, s, x, power=1.0) == pytest.approx(float(np.sum(j.hess_inv * H)), rel=1e-6)


def test_snapshot_round_trip(tmp_path, square):
    g = make_grid(square.domain, 1 / 16, margin=2, centering="cell")
    f = ScalarField.sample(g, lambda p: np.cos(p[0]) + p[1] ** 3)
    save_field(f, tmp_path / "psi.csv", {"tag": "t"})
    header = (tmp_path / "psi.csv").read_text().splitlines()[0]
    assert header == "xi1,xi2,value"
    again = load_field(tmp_path / "psi.csv")
    assert again.grid.mask_hash() == g.mask_hash()
    ok = g.inside
    assert np.array_equal(again.values[ok], f.values[ok])
