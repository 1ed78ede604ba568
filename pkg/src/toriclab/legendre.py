"""Legendre duality between symplectic potentials u(ξ) and Kähler potentials f(x)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import Domain, HalfSpaces, Intersection, Plane
from .errors import MaxIterations, NotInImage, OutsideDomain, ToricLabError
from .field import Grid, ScalarField, SplitPotential, make_grid
from .jets import JetSample, Potential, QuadraticPotential

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50


def gradient_map(p: Potential, point) -> np.ndarray:
    return p.jet(point, 1).grad


def default_seed(domain: Domain) -> np.ndarray:
    """An interior point: the polygon centroid when available, else a Chebyshev-type centre."""
    verts = getattr(domain, "vertices", None)
    if verts is not None:
        from .polytope import polygon_centroid

        return polygon_centroid(verts)
    if isinstance(domain, Plane) and not domain.constraints(np.zeros(2)).size:
        return np.zeros(2)
    if domain.bbox is not None:
        c = 0.5 * (domain.bbox[0] + domain.bbox[1])
        if domain.contains(c):
            return c
    # march away from the violated constraints
    p = np.zeros(2)
    for _ in range(200):
        g = domain.constraints(p)
        if np.all(g > 0):
            return p
        grads = domain.constraint_grads(p)
        bad = g <= 0
        step = grads[bad].sum(axis=0)
        n = np.linalg.norm(step)
        p = p + (step / n if n > 0 else np.ones(2)) * 0.5
    raise OutsideDomain("could not find an interior seed point")


def invert_gradient(p: Potential, target, seed=None, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> np.ndarray:
    """Damped Newton for ∇p(ξ) = target with halving line search and a domain-exit guard."""
    target = np.asarray(target, dtype=float)
    xi = np.asarray(default_seed(p.domain) if seed is None else seed, dtype=float).copy()
    if not p.domain.contains(xi):
        raise NotInImage("seed is outside the domain", seed=xi)
    scale = max(1.0, float(np.abs(target).max()))
    j = p.jet(xi, 2)
    r = j.grad - target
    for it in range(max_iter + 1):
        nr = float(np.linalg.norm(r))
        if nr < tol * scale:
            # one polishing step: quadratic convergence takes the residual to rounding level
            step = np.linalg.solve(j.hess, r)
            cand = xi - step
            if p.domain.contains(cand):
                jc = p.jet(cand, 1)
                if np.linalg.norm(jc.grad - target) <= nr:
                    xi = cand
            return xi
        if it == max_iter:
            break
        try:
            step = np.linalg.solve(j.hess, r)
        except np.linalg.LinAlgError:
            raise NotInImage("singular Hessian during inversion", point=xi) from None
        t = 1.0
        for _ in range(60):
            cand = xi - t * step
            if p.domain.contains(cand):
                try:
                    jc = p.jet(cand, 2)
                except ToricLabError:
                    jc = None
                if jc is not None and np.linalg.norm(jc.grad - target) < (1 - 1e-4 * t) * nr:
                    break
            t *= 0.5
        else:
            raise NotInImage("Newton step left the domain after backtracking", target=target, point=xi)
        xi, j = cand, jc
        r = j.grad - target
    raise MaxIterations("gradient inversion did not converge", target=target, residual=float(np.linalg.norm(r)))


def dual_jet(uj: JetSample, order: int = 4) -> JetSample:
    """Jet of f = L(u) at x = ∇u(ξ) from the jet of u at ξ (chain rule through ξ = ∇f(x))."""
    xi = uj.point
    x = uj.grad
    F = np.linalg.inv(uj.hess)
    F = 0.5 * (F + F.T)
    derivs = [np.array(x @ xi - uj.value), xi.copy()]
    if order >= 2:
        derivs.append(F)
    if order >= 3:
        f3 = -np.einsum("ia,jb,kc,abc->ijk", F, F, F, uj.d3)
        derivs.append(f3)
    if order >= 4:
        u3, u4 = uj.d3, uj.d4
        f4 = -(np.einsum("ial,jb,kc,abc->ijkl", f3, F, F, u3)
               + np.einsum("ia,jbl,kc,abc->ijkl", F, f3, F, u3)
               + np.einsum("ia,jb,kcl,abc->ijkl", F, F, f3, u3)
               + np.einsum("ia,jb,kc,abcd,dl->ijkl", F, F, F, u4, F))
        derivs.append(f4)
    if order >= 5:
        raise ValueError("dual jets are provided up to order 4")
    return JetSample(x, derivs)


class ImageDomain(Domain):
    """x-side domain ∇u(dom u), tested by inverting the gradient map."""

    def __init__(self, dual: "DualPotential"):
        self.dual = dual
        base = dual.u.domain
        self._singular = base.singular
        self.bbox = None

    def constraints(self, x):
        try:
            xi = self.dual.preimage(x)
        except ToricLabError:
            return -np.ones(max(1, len(self._singular)))
        g = self.dual.u.domain.constraints(xi)
        return g if g.size else np.ones(1)

    def constraint_grads(self, x):
        # d g(ξ(x)) / dx = ∇g · F
        xi = self.dual.preimage(x)
        F = np.linalg.inv(self.dual.u.jet(xi, 2).hess)
        return self.dual.u.domain.constraint_grads(xi) @ F

    @property
    def singular(self):
        return self._singular


class DualPotential(Potential):
    """f(x) = x·ξ − u(ξ) with ξ = (∇u)⁻¹(x), evaluated pointwise by Newton inversion."""

    def __init__(self, u: Potential, seed=None):
        self.u = u
        self.max_order = min(4, u.max_order)
        self._seed = None if seed is None else np.asarray(seed, dtype=float)
        self._last = None
        self.domain = ImageDomain(self)

    def preimage(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        seed = self._last if self._last is not None else self._seed
        try:
            xi = invert_gradient(self.u, x, seed=seed)
        except ToricLabError:
            if seed is None:
                raise
            xi = invert_gradient(self.u, x, seed=self._seed)
        self._last = xi
        return xi

    def jet(self, point, order=2):
        if order > self.max_order:
            raise ValueError(f"dual jets are provided up to order {self.max_order}")
        xi = self.preimage(point)
        uj = self.u.jet(xi, max(order, 2))
        fj = dual_jet(uj, order)
        fj.point = np.asarray(point, dtype=float)
        return fj


def legendre_transform(u: Potential, grid: Grid | None = None, box=None, h: float | None = None):
    """f = L(u).

    Without a grid the result is the pointwise-exact :class:`DualPotential`.
    With ``grid`` (or ``box`` + ``h``) f is tabulated on the x-grid and returned
    as a fully gridded :class:`SplitPotential`.
    """
    if isinstance(u, QuadraticPotential) and not np.any(u.b) and u.c == 0.0:
        return QuadraticPotential(np.linalg.inv(u.Q))
    dual = DualPotential(u)
    if grid is None and box is None:
        return dual
    if grid is None:
        if box is None:
            box = default_dual_box(u)
        grid = make_grid(Plane(), h or (box[1][0] - box[0][0]) / 64, margin=0, centering="vertex", bbox=box)
    vals = np.full(grid.shape, np.nan)
    X1, X2 = grid.mesh()
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            vals[i, j] = dual.jet((X1[i, j], X2[i, j]), 0).value
    inside = np.ones(grid.shape, dtype=bool)
    g = Grid(grid.lo, grid.h, grid.shape, inside, inside.copy(), 0, grid.centering)
    zero = QuadraticPotential(np.zeros((2, 2)))
    return SplitPotential(zero, ScalarField(g, vals), tag="gridded-legendre")


def default_dual_box(u: Potential, shrink: float = 2.0 / 3.0, pad: float = 0.1):
    """Image under ∇u of the polygon shrunk by ``shrink`` about its centroid, padded."""
    verts = getattr(u.domain, "vertices", None)
    if verts is None:
        lo, hi = u.domain.bbox
        verts = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    c = verts.mean(axis=0)
    pts = c + shrink * (np.asarray(verts) - c)
    # sample the shrunk boundary densely
    img = []
    for a, b in zip(pts, np.roll(pts, -1, axis=0)):
        for t in np.linspace(0, 1, 16, endpoint=False):
            img.append(u.jet(a + t * (b - a), 1).grad)
    img = np.array(img)
    lo, hi = img.min(axis=0), img.max(axis=0)
    span = hi - lo
    return (lo - pad * span, hi + pad * span)


def moment_map(f: Potential, x) -> np.ndarray:
    """τ_f in log-affine form: x ↦ ∇f(x) ∈ Δ."""
    return gradient_map(f, x)


def inverse_moment_map(f: Potential, xi, seed=None) -> np.ndarray:
    return invert_gradient(f, xi, seed=seed)


@dataclass
class DualPair:
    u: Potential
    f: Potential

    @classmethod
    def build(cls, u: Potential) -> "DualPair":
        return cls(u, legendre_transform(u))

    def roundtrip_error(self, points) -> float:
        err = 0.0
        for xi in points:
            x = gradient_map(self.u, xi)
            err = max(err, float(np.max(np.abs(gradient_map(self.f, x) - xi))))
        return err

    def fenchel_error(self, points) -> float:
        err = 0.0
        for xi in points:
            x = gradient_map(self.u, xi)
            err = max(err, abs(self.f.value(x) + self.u.value(xi) - x @ np.asarray(xi)))
        return err
