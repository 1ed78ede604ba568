"""The Abreu operator on both sides of Legendre duality and a solver for S(u) = K.

The discrete operator works on u = v + ψ over a cell-centred grid: the
Hessian of v is analytic, that of ψ is a 3-point central difference, and
S = −∂_i∂_j u^{ij} is formed by central differences of the inverse Hessian
field.  ψ is unknown on the active nodes (two node rings away from the edge
of the grid's inside mask) and the two outer rings are ghosts, either
extrapolated from the active values (exact on quadratics) or held fixed.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RectBivariateSpline

from .domain import Domain
from .errors import ConvexityLost, Diverged, StencilOutOfDomain
from .field import Grid, ScalarField, SplitPotential, erode, fd_hess, jet, make_grid
from .invariants import log_det_grad, ricci_real, scalar_curvature_f
from .jets import Potential

DEFAULT_N = 64
DEFAULT_TOL = 1e-4
MAX_HALVINGS = 20
GHOST_FIT_RADIUS = 4
# the refined re-evaluation may exceed the solver tolerance by this factor
CERTIFY_FACTOR = 4.0


# -- pointwise operators ----------------------------------------------------------


def abreu_S_u(u: Potential, xi, route: str = "jet", step: float = 1e-3) -> float:
    """S(u) = −Σ U^{ij} w_ij with w = det(u_ij)⁻¹ and U the cofactor matrix.

    ``jet``: w_ij expanded analytically from the order-4 jet.
    ``field``: w tabulated around ξ and differentiated by central differences.
    ``divergence``: the equivalent form −Σ ∂_i∂_j u^{ij}, by central differences.
    """
    if route == "jet":
        j = jet(u, xi, 4)
        a = log_det_grad(j)
        b = -ricci_real(j)  # ∂²log det
        # w_ij = w (a_i a_j − b_ij) and U = det · u^{-1}
        return float(-(a @ j.hess_inv @ a) + np.sum(j.hess_inv * b))
    x = np.asarray(xi, dtype=float)
    if route == "field":
        j = jet(u, x, 2)
        wh = fd_hess(lambda y: 1.0 / jet(u, y, 2).det, x, step)
        return float(-np.sum(j.cofactor * wh))
    if route == "divergence":
        H = fd_hess(lambda y: jet(u, y, 2).hess_inv, x, step)  # H[a, b, i, j] = ∂_a∂_b u^{ij}
        return float(-np.einsum("ijij->", H))
    raise ValueError(f"unknown route {route!r}")


def abreu_S_f(f: Potential, x) -> float:
    """S = −Σ f^{ij} ∂_i∂_j log det(f_kl)."""
    return scalar_curvature_f(jet(f, x, 4))


def sign_convention_probe() -> int:
    """Pin the descent direction of the flow from S(Guillemin square) = +4."""
    from .polytope import standard_simplex, unit_square

    s = abreu_S_u(unit_square().potential, (0.5, 0.5))
    if abs(s - 4.0) > 1e-8:
        raise AssertionError(f"square Guillemin gives S = {s}, expected +4")
    s6 = abreu_S_u(standard_simplex().potential, (0.25, 0.3))
    if abs(s6 - 6.0) > 1e-8:
        raise AssertionError(f"simplex Guillemin gives S = {s6}, expected +6")
    # δS = +∂∂(u^{ia} δu_ab u^{bj}) is a positive fourth-order operator, so ψ ← ψ − τ(S − K) descends
    return 1


# -- prescribed curvature ---------------------------------------------------------


class CurvatureSpec:
    """K given as a sympy-parsable expression in ξ1, ξ2 (names xi1, xi2)."""

    def __init__(self, expr="0", cinf_bound: float | None = None):
        import sympy as sp_

        self.expr = str(expr)
        x1, x2 = sp_.symbols("xi1 xi2")
        e = sp_.sympify(self.expr, locals={"xi1": x1, "xi2": x2})
        self.constant = not e.free_symbols
        self._f = sp_.lambdify((x1, x2), e, modules="numpy")
        self._grad = [sp_.lambdify((x1, x2), sp_.diff(e, s), modules="numpy") for s in (x1, x2)]
        self.cinf_bound = cinf_bound

    def __call__(self, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        return float(self._f(xi[0], xi[1]))

    def values(self, X1, X2) -> np.ndarray:
        return np.broadcast_to(np.asarray(self._f(X1, X2), dtype=float), np.shape(X1)).copy()

    def gradient(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.array([float(g(xi[0], xi[1])) for g in self._grad])

    def edge_vanishing(self, poly, samples: int = 65) -> list:
        """Edges on which K has a zero (closed edge, sampled); empty means edge-nonvanishing."""
        bad = []
        V = poly.vertices
        for k in range(len(V)):
            a, b = V[k - 1], V[k]  # edge k runs between vertices k−1 and k
            t = np.linspace(0.0, 1.0, samples)
            pts = a[None, :] + t[:, None] * (b - a)[None, :]
            vals = self.values(pts[:, 0], pts[:, 1])
            if np.any(np.abs(vals) <= 1e-12) or vals.min() < 0 < vals.max():
                bad.append(k)
        return bad

    def __repr__(self):
        return f"CurvatureSpec({self.expr!r})"


def residual(u: Potential, spec: CurvatureSpec, grid: Grid):
    """S(u) − K at the grid's interior nodes, with (L2, L∞) norms over evaluable nodes."""
    X1, X2 = grid.mesh()
    vals = np.full(grid.shape, np.nan)
    for i, j in zip(*np.nonzero(grid.interior)):
        p = np.array([X1[i, j], X2[i, j]])
        try:
            vals[i, j] = abreu_S_u(u, p) - spec(p)
        except StencilOutOfDomain:
            continue
    ok = np.isfinite(vals)
    r = vals[ok]
    l2 = float(math.sqrt(np.mean(r * r))) if r.size else float("nan")
    linf = float(np.max(np.abs(r))) if r.size else float("nan")
    return ScalarField(grid, vals), l2, linf


# -- discrete operator ----------------------------------------------------------------


def _lap_ops(n1: int, n2: int, h: float):
    """Sparse central second differences on the full n1×n2 array (row-major)."""
    def d2(n):
        return sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], shape=(n, n))

    def d1(n):
        return sp.diags([-0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [-1, 1], shape=(n, n))

    I1, I2 = sp.identity(n1), sp.identity(n2)
    D11 = sp.kron(d2(n1), I2) / h ** 2
    D22 = sp.kron(I1, d2(n2)) / h ** 2
    D12 = sp.kron(d1(n1), d1(n2)) / h ** 2
    return {(0, 0): D11.tocsr(), (1, 1): D22.tocsr(), (0, 1): D12.tocsr(), (1, 0): D12.tocsr()}


def _ghost_extrapolation(grid: Grid, active: np.ndarray, ghosts: np.ndarray):
    """Sparse E with ψ_ghost = E ψ_active: local quadratic least squares, exact on quadratics."""
    ai, aj = np.nonzero(active)
    index = -np.ones(grid.shape, dtype=int)
    index[ai, aj] = np.arange(ai.size)
    rows, cols, data = [], [], []
    gi, gj = np.nonzero(ghosts)
    for g, (i, j) in enumerate(zip(gi, gj)):
        rad = GHOST_FIT_RADIUS
        while True:
            i0, i1 = max(0, i - rad), min(grid.shape[0], i + rad + 1)
            j0, j1 = max(0, j - rad), min(grid.shape[1], j + rad + 1)
            ni, nj = np.nonzero(active[i0:i1, j0:j1])
            if ni.size >= 10 or rad > 12:
                break
            rad += 1
        di = (ni + i0 - i).astype(float)
        dj = (nj + j0 - j).astype(float)
        Vm = np.stack([np.ones_like(di), di, dj, di * di, di * dj, dj * dj], axis=1)
        w = 1.0 / (1.0 + di * di + dj * dj)
        # value at the ghost = e₀ᵀ (VᵀWV)⁻¹ VᵀW ψ
        coef = np.linalg.lstsq(Vm * w[:, None], np.eye(len(w)) * w, rcond=None)[0][0]
        rows.extend([g] * len(coef))
        cols.extend(index[ni + i0, nj + j0])
        data.extend(coef)
    return sp.csr_matrix((data, (rows, cols)), shape=(gi.size, ai.size))


@dataclass
class DiscreteAbreu:
    grid: Grid
    analytic: Potential
    active: np.ndarray
    ghosts: np.ndarray
    mode: str  # "extrapolate" | "dirichlet"
    ghost_values: np.ndarray | None = None

    def __post_init__(self):
        g = self.grid
        n = g.shape[0] * g.shape[1]
        X1, X2 = g.mesh()
        self.ring1 = erode(g.inside, 1)
        self.xi = np.stack([X1.ravel(), X2.ravel()], axis=1)
        # analytic Hessian on ring ≥ 1 nodes
        Hv = np.zeros((n, 2, 2))
        for k in np.flatnonzero(self.ring1.ravel()):
            Hv[k] = self.analytic.jet(self.xi[k], 2).hess
        self.Hv = Hv
        self.D = _lap_ops(g.shape[0], g.shape[1], g.h)
        self.act_idx = np.flatnonzero(self.active.ravel())
        self.gh_idx = np.flatnonzero(self.ghosts.ravel())
        self.r1_idx = np.flatnonzero(self.ring1.ravel())
        if self.mode == "extrapolate":
            self.E = _ghost_extrapolation(g, self.active, self.ghosts)
        else:
            self.E = None
        self.n_full = n
        # P: active values → full field (ghost part linear, plus a fixed offset in dirichlet mode)
        na = self.act_idx.size
        P = sp.lil_matrix((n, na))
        P[self.act_idx, np.arange(na)] = 1.0
        if self.E is not None:
            P[self.gh_idx, :] = self.E
        self.P = P.tocsr()
        self.offset = np.zeros(n)
        if self.mode == "dirichlet":
            gv = np.zeros(self.gh_idx.size) if self.ghost_values is None else np.asarray(self.ghost_values, float)
            self.offset[self.gh_idx] = gv
        # restrictions
        self.R_r1 = sp.identity(n, format="csr")[self.r1_idx]
        self.R_act = sp.identity(n, format="csr")[self.act_idx]

    def full(self, psi_a: np.ndarray) -> np.ndarray:
        return self.P @ psi_a + self.offset

    def hessians(self, psi_full):
        H = self.Hv.copy()
        for (a, b), D in self.D.items():
            H[:, a, b] += D @ psi_full
        return H

    def operator(self, psi_a):
        """S at active nodes, the inverse Hessians M on ring ≥ 1 nodes, and the convexity flag."""
        psi_full = self.full(psi_a)
        H = self.hessians(psi_full)[self.r1_idx]
        det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] * H[:, 1, 0]
        convex = bool(np.all(H[:, 0, 0] > 0) and np.all(det > 0))
        M = np.zeros((self.n_full, 2, 2))
        Mr = np.empty_like(H)
        Mr[:, 0, 0] = H[:, 1, 1] / det
        Mr[:, 1, 1] = H[:, 0, 0] / det
        Mr[:, 0, 1] = Mr[:, 1, 0] = -0.5 * (H[:, 0, 1] + H[:, 1, 0]) / det
        M[self.r1_idx] = Mr
        S = np.zeros(self.n_full)
        for (a, b), D in self.D.items():
            S -= D @ M[:, a, b]
        return S[self.act_idx], M, convex, int(np.sum(~((H[:, 0, 0] > 0) & (det > 0))))

    def jacobian(self, M) -> sp.csr_matrix:
        """δS = Σ_ab D_ab (M δH M)_ab with δH_cd = D_cd δψ."""
        n = self.n_full
        mask = np.zeros(n)
        mask[self.r1_idx] = 1.0
        J = sp.csr_matrix((n, n))
        for (a, b), Dab in self.D.items():
            inner = sp.csr_matrix((n, n))
            for (c, d), Dcd in self.D.items():
                w = M[:, a, c] * M[:, d, b] * mask
                inner = inner + sp.diags(w) @ Dcd
            J = J + Dab @ inner
        return (self.R_act @ J @ self.P).tocsr()

    def affine_basis(self) -> np.ndarray:
        xa = self.xi[self.act_idx]
        C = np.stack([np.ones(len(xa)), xa[:, 0], xa[:, 1]], axis=1)
        q, _ = np.linalg.qr(C)
        return q


# -- solver -----------------------------------------------------------------------------


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_l2: list = field(default_factory=list)
    residual_linf: list = field(default_factory=list)
    convexity_violations: int = 0
    gauge: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    mode: str = "newton"
    boundary: str = "extrapolate"
    h: float = float("nan")
    nodes: int = 0
    certificate_linf: float = float("nan")
    certificate_h: float = float("nan")
    certified: bool = False
    monotone: bool = True
    message: str = ""
    seconds: float = 0.0

    def to_dict(self, timings: bool = False) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "seconds"}
        if timings:
            d["seconds"] = self.seconds
        return d


def solver_grid(domain: Domain, n: int = DEFAULT_N, bbox=None) -> Grid:
    """Cell-centred grid with n cells across the longest width of the box."""
    lo, hi = (np.asarray(b, dtype=float) for b in (bbox if bbox is not None else domain.bbox))
    h = float(np.max(hi - lo)) / n
    return make_grid(domain, h, margin=2, centering="cell", bbox=(lo, hi))


def _affine_fit(xi: np.ndarray, vals: np.ndarray) -> np.ndarray:
    C = np.stack([np.ones(len(xi)), xi[:, 0], xi[:, 1]], axis=1)
    return np.linalg.lstsq(C, vals, rcond=None)[0]


def _spline_field(grid: Grid, values: np.ndarray, where: np.ndarray, degree: int = 3):
    """Interpolating spline through the field on the bounding rectangle of ``where``."""
    ii, jj = np.nonzero(where)
    sl = (slice(ii.min(), ii.max() + 1), slice(jj.min(), jj.max() + 1))
    a, b = grid.axes
    block = values[sl]
    if not np.all(np.isfinite(block)):
        # nodes outside the mask only influence fine nodes outside it
        block = np.where(np.isfinite(block), block, 0.0)
    return RectBivariateSpline(a[sl[0]], b[sl[1]], block, kx=degree, ky=degree)


def solve(domain_or_poly, spec: CurvatureSpec, psi0=None, *, analytic: Potential | None = None,
          n: int = DEFAULT_N, bbox=None, tol: float = DEFAULT_TOL, max_iter: int = 50, mode: str = "newton",
          tau0: float = 1e-7, boundary: str = "extrapolate", ghost_fn=None, certify: bool = True):
    """Solve S(v + ψ) = K for ψ.

    ``domain_or_poly`` is a :class:`DelzantPolytope` (v = its Guillemin potential)
    or a domain together with ``analytic``.  ``psi0`` is a callable ξ ↦ ψ₀(ξ).
    ``boundary`` selects extrapolated ghosts (ψ free up to affine gauge) or
    fixed ghost values ``ghost_fn`` (Dirichlet data on two node rings).
    """
    t_start = time.perf_counter()
    domain = getattr(domain_or_poly, "domain", domain_or_poly)
    if analytic is None:
        analytic = getattr(domain_or_poly, "potential", None)
        if analytic is None:
            raise ValueError("an analytic part is required when solving on a bare domain")
    grid = solver_grid(domain, n, bbox)
    active = erode(grid.inside, 2)
    ghosts = grid.inside & ~active
    X1, X2 = grid.mesh()
    gv = None
    if boundary == "dirichlet":
        fn = ghost_fn or (lambda p: 0.0)
        gv = np.array([fn(np.array([X1.flat[k], X2.flat[k]])) for k in np.flatnonzero(ghosts.ravel())])
    elif boundary != "extrapolate":
        raise ValueError(f"unknown boundary treatment {boundary!r}")
    op = DiscreteAbreu(grid, analytic, active, ghosts, boundary, gv)
    xa = op.xi[op.act_idx]
    Kv = spec.values(xa[:, 0], xa[:, 1])
    if psi0 is None and boundary == "dirichlet" and ghost_fn is not None:
        psi0 = ghost_fn  # start from the boundary data so the seed is continuous across the ghost rings
    psi = np.array([psi0(p) for p in xa], dtype=float) if psi0 is not None else np.zeros(len(xa))
    gauge_total = np.zeros(3)

    def gauge(p):
        nonlocal gauge_total
        if boundary != "extrapolate":
            return p
        c = _affine_fit(xa, p)
        gauge_total += c
        return p - (c[0] + xa @ c[1:])

    psi = gauge(psi)
    S, M, convex, nviol = op.operator(psi)
    if not convex:
        raise ConvexityLost("initial potential is not convex on the grid", violations=nviol)
    r = S - Kv
    rep = SolveReport(False, 0, [float(np.sqrt(np.mean(r * r)))], [float(np.max(np.abs(r)))],
                      mode=mode, boundary=boundary, h=grid.h, nodes=int(len(xa)))
    sign = sign_convention_probe()
    tau = tau0
    C = op.affine_basis() if boundary == "extrapolate" else None
    it = 0
    while rep.residual_linf[-1] >= tol:
        if it >= max_iter:
            rep.message = "maximum iterations reached"
            break
        it += 1
        cur = rep.residual_linf[-1]
        if mode == "newton":
            J = op.jacobian(M)
            if C is not None:
                k = C.shape[1]
                A = sp.bmat([[J, sp.csr_matrix(C)], [sp.csr_matrix(C.T), None]]).tocsc()
                rhs = np.concatenate([-r, np.zeros(k)])
            else:
                A, rhs = J.tocsc(), -r
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sol = spla.spsolve(A, rhs)
            step = sol[: len(psi)]
            if not np.all(np.isfinite(step)):
                raise Diverged("Newton system is singular", iteration=it)
        else:
            step = -sign * tau * r
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = gauge(psi + t * step) if boundary == "extrapolate" else psi + t * step
            Sc, Mc, ok, nv = op.operator(cand)
            rc = Sc - Kv
            if not ok:
                rep.convexity_violations += nv
            if ok and np.all(np.isfinite(rc)):
                linf = float(np.max(np.abs(rc)))
                if mode != "newton" or linf < cur or t < 1.0 / 64:
                    break
            t *= 0.5
        else:
            raise ConvexityLost("convexity could not be restored after 20 halvings", iteration=it)
        if mode != "newton":
            tau = tau * t
        psi, S, M, r = cand, Sc, Mc, rc
        rep.residual_l2.append(float(np.sqrt(np.mean(r * r))))
        rep.residual_linf.append(float(np.max(np.abs(r))))
        if mode != "newton":
            if rep.residual_linf[-1] > cur:
                tau *= 0.5
            else:
                tau *= 1.1
        if not np.isfinite(rep.residual_linf[-1]) or rep.residual_linf[-1] > 1e6 * max(1.0, rep.residual_linf[0]):
            raise Diverged("residual blew up", iteration=it, residual=rep.residual_linf[-1])
    rep.iterations = it
    rep.converged = rep.residual_linf[-1] < tol
    rep.gauge = [float(c) for c in gauge_total]
    hist = rep.residual_linf
    rep.monotone = all(b <= a * (1 + 1e-9) for a, b in zip(hist[2:], hist[3:]))
    if rep.converged and mode != "newton":
        rep.message = rep.message or "converged"
    elif rep.converged:
        rep.message = "converged"

    values = np.full(grid.shape, np.nan)
    full = op.full(psi)
    flat_inside = grid.inside.ravel()
    values.ravel()[flat_inside] = full[flat_inside]
    psi_field = ScalarField(grid, values)
    u = SplitPotential(analytic, psi_field, tag="solved")
    if certify and rep.converged:
        rep.certificate_linf, rep.certificate_h = certify_solution(analytic, spec, psi_field, boundary)
        rep.certified = bool(rep.certificate_linf < CERTIFY_FACTOR * tol)
    rep.seconds = time.perf_counter() - t_start
    return u, rep


def discrete_residual(analytic: Potential, spec: CurvatureSpec, grid: Grid, psi_fn,
                      boundary: str = "extrapolate", ghost_fn=None):
    """Residual of the discrete operator on ``grid`` for ψ given pointwise by ``psi_fn``.

    Ghost values come from ``ghost_fn`` in dirichlet mode (default: ``psi_fn``).
    """
    active = erode(grid.inside, 2)
    ghosts = grid.inside & ~active
    X1, X2 = grid.mesh()
    gv = None
    if boundary == "dirichlet":
        fn = ghost_fn or psi_fn
        gv = np.array([fn(np.array([X1.flat[k], X2.flat[k]])) for k in np.flatnonzero(ghosts.ravel())])
    op = DiscreteAbreu(grid, analytic, active, ghosts, boundary, gv)
    xa = op.xi[op.act_idx]
    psi = np.array([psi_fn(p) for p in xa])
    S, _, convex, _ = op.operator(psi)
    return S - spec.values(xa[:, 0], xa[:, 1]), convex


def refined_grid(g: Grid) -> Grid:
    """Coarse nodes plus all midpoints; a fine node is inside when its coarse cell corners are."""
    n1, n2 = g.shape
    fine_shape = (2 * n1 - 1, 2 * n2 - 1)
    I, J = np.meshgrid(np.arange(fine_shape[0]), np.arange(fine_shape[1]), indexing="ij")
    inside = (g.inside[I // 2, J // 2] & g.inside[(I + 1) // 2, J // 2]
              & g.inside[I // 2, (J + 1) // 2] & g.inside[(I + 1) // 2, (J + 1) // 2])
    lo = g.lo + g.offset * g.h
    return Grid(lo, g.h / 2, fine_shape, inside, erode(inside, 2), 2, "vertex")


def certify_solution(analytic, spec, psi_field: ScalarField, boundary="extrapolate"):
    """Re-evaluate the residual on a grid refined 2× with ψ interpolated by a quintic spline.

    Extrapolated ghosts are rebuilt on the fine grid; in dirichlet mode the fine
    ghost rings take the interpolated solution, which carries the boundary data.
    """
    g = psi_field.grid
    spl = _spline_field(g, psi_field.values, g.inside, degree=5)
    fine = refined_grid(g)
    fn = lambda p: float(spl.ev(p[0], p[1]))
    r, convex = discrete_residual(analytic, spec, fine, fn, boundary)
    if not convex:
        return float("inf"), fine.h
    return float(np.max(np.abs(r))), fine.h


def best_affine_deviation(u: SplitPotential) -> float:
    """L∞ distance of ψ from its least-squares affine fit over the active nodes."""
    g = u.psi.grid
    act = erode(g.inside, 2)
    X1, X2 = g.mesh()
    xi = np.stack([X1[act], X2[act]], axis=1)
    v = u.psi.values[act]
    c = _affine_fit(xi, v)
    return float(np.max(np.abs(v - c[0] - xi @ c[1:])))
