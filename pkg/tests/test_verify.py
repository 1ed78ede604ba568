import math

import numpy as np
import pytest
import sympy as sp

from toriclab.affine import AffineMap, apply_affine
from toriclab.calabi import geodesic_shoot
from toriclab.errors import InsufficientResolution, PreconditionViolated
from toriclab.instances import SQUARE_DUAL, flat_reference, solved_halfplane_k0, square_dual
from toriclab.invariants import psi, theta
from toriclab.jets import QuadraticPotential, SymbolicPotential
from toriclab.legendre import DualPotential
from toriclab.polytope import HalfPlaneModel
from toriclab.verify import (
    check_bernstein, check_gradient_estimate, check_inequality_I, check_inequality_II,
    check_inequality_III, check_interior_psi, check_phi_inequality, check_tchebychev_bound,
    inequality_III_parameters, monitor_theorem7, monitor_theta_d2,
)


@pytest.fixture(scope="module")
def solved_k0():
    u, rep = solved_halfplane_k0(64)
    assert rep.converged
    return u


# -- real-side theorem -------------------------------------------------------------------


def test_phi_inequality_on_solved_patch(solved_k0, rng):
    pts = rng.uniform([0.6, -0.4], [1.4, 0.4], (40, 2))
    rep = check_phi_inequality(solved_k0, pts, side="u")
    assert rep.verdict == "pass"
    assert rep.skipped == 0
    assert rep.extra["max_abs_S"] < 1e-3


def test_phi_inequality_needs_small_S(square, rng):
    with pytest.raises(PreconditionViolated):
        check_phi_inequality(square.potential, rng.uniform(0.2, 0.8, (5, 2)), side="u")


def test_tchebychev_bound(square):
    path = geodesic_shoot(square.potential, (0.5, 0.5), (1.0, 0.3), 0.5)
    N = math.sqrt(max(theta(square.potential, x) for x in path.points))
    rep = check_tchebychev_bound(square.potential, path, 1.01 * N)
    assert rep.verdict == "pass"
    assert rep.extra["max_dlogT"] <= rep.extra["bound_T"]
    with pytest.raises(PreconditionViolated):
        check_tchebychev_bound(square.potential, path, 0.5 * N)


# -- complex-side inequalities ------------------------------------------------------------


def test_inequality_I_square_dual(rng):
    rep = check_inequality_I(square_dual(), rng.uniform(-2, 2, (20, 2)))
    assert rep.verdict == "pass"
    assert rep.extra["max_kappa_W_alpha"] <= 0.5


def _inequality_I_margin_oracle(kappa=1 / 8, alpha=1 / 3):
    """LHS − RHS of inequality I built symbolically from the torus-chart definitions."""
    x1, x2 = sp.symbols("x1 x2", real=True)
    X = (x1, x2)
    f = sp.sympify(SQUARE_DUAL, locals={"x1": x1, "x2": x2})
    F = sp.hessian(f, X)
    Fi = F.inv()
    d = F.det()
    W = d / 16
    V = sp.log(W)
    gV = sp.Matrix([sp.diff(V, v) for v in X])
    Psi = (gV.T * Fi * gV)[0]
    P = sp.exp(kappa * W ** alpha) * sp.sqrt(W) * Psi
    box = lambda s: sum(Fi[i, k] * sp.diff(s, X[i], X[k]) for i in range(2) for k in range(2))
    r = -sp.hessian(sp.log(d), X)
    S = (Fi * r).trace()
    M = Fi * sp.hessian(V, X)
    hessV2 = (M * M).trace()
    gS = sp.Matrix([sp.diff(S, v) for v in X])
    cross = (gS.T * Fi * gV)[0]
    Wa = W ** alpha
    margin = box(P) / P - (hessV2 / (2 * Psi) + alpha ** 2 * kappa * (1 - 2 * kappa * Wa) * Wa * Psi
                           - 2 * sp.Abs(cross) / Psi - (alpha * kappa * Wa + sp.Rational(1, 2)) * S)
    return sp.lambdify(X, margin, "math", cse=True)


def test_inequality_I_matches_symbolic_oracle(rng):
    pts = rng.uniform(-1.5, 1.5, (6, 2))
    pts = pts[np.abs(pts[:, 0] - pts[:, 1]) > 0.1]  # Ψ vanishes on the diagonal
    rep = check_inequality_I(square_dual(), pts)
    oracle = _inequality_I_margin_oracle()
    expect = np.array([oracle(*p) for p in pts])
    assert np.allclose(rep.values, expect, rtol=1e-4, atol=1e-5)


def test_inequality_II_examples(rng):
    g = flat_reference()
    pts = rng.uniform(-2, 2, (10, 2))
    assert check_inequality_II(square_dual(), g, pts).verdict == "pass"
    # f = g and f = 2g: the trace is constant and every term vanishes
    for f in (g, SymbolicPotential("x1**2 + x2**2")):
        rep = check_inequality_II(f, g, pts)
        assert rep.verdict == "pass"
        assert np.abs(rep.values).max() < 1e-6


def test_inequality_III_monitor(rng):
    pts = rng.uniform(-1, 1, (8, 2))
    rep = check_inequality_III(square_dual(), pts, N2=20.0)
    assert rep.verdict == "monitor"
    prm = inequality_III_parameters(20.0)
    assert prm["A"] == 401.0 and prm["N1"] == 100.0
    assert rep.extra["parameters"]["kappa"] == pytest.approx(1 / (4 * 20.0 ** (1 / 3)))
    with pytest.raises(PreconditionViolated):
        check_inequality_III(square_dual(), pts, N2=0.01)


# -- interior estimates -------------------------------------------------------------------


def test_interior_psi_off_centre():
    rep = check_interior_psi(square_dual(), (1.0, 0.5), 0.5)
    assert rep.verdict == "monitor"
    assert rep.extra["numerator"] > 0
    assert np.all(np.isfinite(rep.values))
    # ∇V = 0 at the centre of symmetry, so Ψ vanishes there
    assert psi(square_dual(), np.zeros(2)) == 0.0


def test_gradient_estimate_flat():
    rep = check_gradient_estimate(SymbolicPotential("(x1**2 + x2**2)/2"), (0.0, 0.0), 20.0)
    # ‖∇f‖²/(1 + f)² = t/(1 + t/2)² peaks at ½ when |x|² = 2
    assert rep.values.max() <= 0.5 + 1e-9
    assert rep.values.max() > 0.45
    with pytest.raises(PreconditionViolated):
        check_gradient_estimate(SymbolicPotential("(x1**2 + x2**2)/2 + 1"), (0.0, 0.0), 1.0)


# -- boundary-distance monitors -------------------------------------------------------------


def test_theta_d2_affine_invariant(square):
    u = square.potential
    pts = np.array([[0.3, 0.4], [0.6, 0.55]])
    m = AffineMap(np.diag([2.0, 3.0]), (0.5, -1.0), 2.5)
    base = monitor_theta_d2(u, pts, rays=8, with_K=False)
    moved = monitor_theta_d2(apply_affine(u, m, slope=(0.3, 0.1), const=2.0), m(pts), rays=8, with_K=False)
    assert np.allclose(moved.values, base.values, rtol=1e-5)
    assert base.verdict == "monitor"


def test_theorem7_needs_the_divisor():
    u = SymbolicPotential("xi1*log(xi1) + xi1**2/2 + xi2**2", names=("xi1", "xi2"), domain=HalfPlaneModel().domain)
    with pytest.raises(PreconditionViolated):
        monitor_theorem7(u, (1.0, 0.0), 0.5, 1e-3, 10.0, rays=8)


# -- Bernstein ------------------------------------------------------------------------------


def test_bernstein_quadratic_passes(rng):
    u = QuadraticPotential(np.array([[2.0, 0.3], [0.3, 1.0]]))
    rep = check_bernstein(u, rng.uniform(-1, 1, (30, 2)))
    assert rep.verdict == "pass"
    assert rep.extra["deviation"] < 1e-12


def test_bernstein_rejects_non_quadratic(square, rng):
    rep = check_bernstein(square.potential, rng.uniform(0.2, 0.8, (30, 2)))
    assert rep.verdict == "fail"


def test_bernstein_needs_points(rng):
    with pytest.raises(InsufficientResolution):
        check_bernstein(QuadraticPotential(np.eye(2)), rng.uniform(-1, 1, (5, 2)))


def test_phi_on_dual_side_agrees(solved_k0):
    # the same inequality run on the Legendre dual gives the same margins
    pts = np.array([[0.9, -0.1], [1.1, 0.2], [1.2, -0.3]])
    a = check_phi_inequality(solved_k0, pts, side="u")
    f = DualPotential(solved_k0)
    b = check_phi_inequality(f, np.array([solved_k0.jet(p, 1).grad for p in pts]), side="f")
    assert np.allclose(a.values, b.values, atol=1e-3)
