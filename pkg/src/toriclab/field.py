"""Uniform grids, central finite differences up to fourth order, and the
split potential u = v + ψ (analytic v, gridded ψ)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .domain import EPS_GEOM, Box, Domain, intersect
from .errors import IoError, NotConvexHere, SpacingTooCoarse, StencilOutOfDomain
from .jets import JetSample, Potential, sym_tensor

# 1-D central stencils (offsets, weights); the derivative is Σ w f(x + o h) / h^k
STENCILS = {
    0: ((0,), (1.0,)),
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
}
MIN_INTERIOR_NODES = 8


def stencil_radius(k: int) -> int:
    return max(abs(o) for o in STENCILS[k][0])


@dataclass(eq=False)
class Grid:
    lo: np.ndarray
    h: float
    shape: tuple
    inside: np.ndarray  # nodes strictly inside the domain
    interior: np.ndarray  # inside nodes whose radius-`margin` neighbourhood is inside
    margin: int = 0
    centering: str = "vertex"

    @property
    def offset(self) -> float:
        return 0.5 if self.centering == "cell" else 0.0

    @property
    def axes(self):
        return tuple(self.lo[k] + (np.arange(self.shape[k]) + self.offset) * self.h for k in range(2))

    def mesh(self):
        a, b = self.axes
        return np.meshgrid(a, b, indexing="ij")

    def coords(self, i, j) -> np.ndarray:
        return self.lo + (np.array([i, j], dtype=float) + self.offset) * self.h

    @property
    def mask(self) -> np.ndarray:
        """0 outside, 1 margin, 2 interior."""
        m = np.zeros(self.shape, dtype=np.int8)
        m[self.inside] = 1
        m[self.interior] = 2
        return m

    @property
    def bbox(self):
        a, b = self.axes
        return (np.array([a[0], b[0]]), np.array([a[-1], b[-1]]))

    def mask_hash(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.mask).tobytes()).hexdigest()

    def nearest_node(self, p):
        idx = np.rint((np.asarray(p, dtype=float) - self.lo) / self.h - self.offset).astype(int)
        return tuple(idx)


def erode(mask: np.ndarray, r: int) -> np.ndarray:
    """Chebyshev-radius erosion (nodes off the array count as outside)."""
    out = mask.copy()
    if r <= 0:
        return out
    n1, n2 = mask.shape
    pad = np.zeros((n1 + 2 * r, n2 + 2 * r), dtype=bool)
    pad[r:r + n1, r:r + n2] = mask
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            out &= pad[r + di:r + di + n1, r + dj:r + dj + n2]
    return out


def make_grid(domain: Domain, h: float, margin: int = 0, centering: str = "vertex", bbox=None) -> Grid:
    if h <= 0:
        raise SpacingTooCoarse("grid spacing must be positive", h=h)
    if bbox is None:
        if domain.bbox is None:
            raise SpacingTooCoarse("unbounded domain needs an explicit bounding box")
        bbox = domain.bbox
    lo = np.asarray(bbox[0], dtype=float)
    hi = np.asarray(bbox[1], dtype=float)
    span = (hi - lo) / h
    if centering == "cell":
        shape = tuple(int(max(1, round(s))) for s in span)
    else:
        shape = tuple(int(round(s)) + 1 for s in span)
    g = Grid(lo, float(h), shape, np.zeros(shape, dtype=bool), np.zeros(shape, dtype=bool), int(margin), centering)
    X1, X2 = g.mesh()
    pts = np.stack([X1.ravel(), X2.ravel()], axis=1)
    inside = np.array([np.all(domain.constraints(p) > EPS_GEOM) for p in pts]).reshape(shape)
    interior = erode(inside, margin)
    if interior.sum() < MIN_INTERIOR_NODES:
        raise SpacingTooCoarse(f"only {int(interior.sum())} interior nodes at h={h}", h=h, nodes=int(interior.sum()))
    return Grid(lo, float(h), shape, inside, interior, int(margin), centering)


@dataclass(eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    @classmethod
    def sample(cls, grid: Grid, fn, where: np.ndarray | None = None) -> "ScalarField":
        X1, X2 = grid.mesh()
        where = grid.inside if where is None else where
        vals = np.full(grid.shape, np.nan)
        for i, j in zip(*np.nonzero(where)):
            vals[i, j] = fn(np.array([X1[i, j], X2[i, j]]))
        return cls(grid, vals)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


def _shift(a: np.ndarray, o: int, axis: int) -> np.ndarray:
    """b[i] = a[i + o] with NaN where i + o is off the array."""
    out = np.full_like(a, np.nan)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if o >= 0:
        src[axis] = slice(o, n)
        dst[axis] = slice(0, n - o)
    else:
        src[axis] = slice(0, n + o)
        dst[axis] = slice(-o, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


def fd_field(values: np.ndarray, h: float, a1: int, a2: int) -> np.ndarray:
    """∂^{a1}_1 ∂^{a2}_2 on every node; NaN where the stencil leaves the array."""
    out = np.asarray(values, dtype=float)
    for axis, k in ((0, a1), (1, a2)):
        if k == 0:
            continue
        offs, wts = STENCILS[k]
        acc = np.zeros_like(out)
        for o, w in zip(offs, wts):
            acc = acc + w * _shift(out, o, axis)
        out = acc / h ** k
    return out


def fd_derivative(field: ScalarField, multi_index, node) -> float:
    """Central difference ∂^α at a node; ``multi_index`` = (α₁, α₂)."""
    a1, a2 = (int(a) for a in multi_index)
    if a1 + a2 > 4 or a1 < 0 or a2 < 0:
        raise ValueError("multi-index order must be between 0 and 4")
    g = field.grid
    i, j = node
    r1, r2 = stencil_radius(a1), stencil_radius(a2)
    if not (0 <= i < g.shape[0] and 0 <= j < g.shape[1]) or not g.inside[i, j]:
        raise StencilOutOfDomain("node is not inside the grid domain", node=node)
    if i - r1 < 0 or i + r1 >= g.shape[0] or j - r2 < 0 or j + r2 >= g.shape[1]:
        raise StencilOutOfDomain("stencil leaves the grid", node=node, alpha=(a1, a2))
    block = g.inside[i - r1:i + r1 + 1, j - r2:j + r2 + 1]
    vals = field.values[i - r1:i + r1 + 1, j - r2:j + r2 + 1]
    o1, w1 = STENCILS[a1]
    o2, w2 = STENCILS[a2]
    total = 0.0
    for oa, wa in zip(o1, w1):
        for ob, wb in zip(o2, w2):
            if not block[oa + r1, ob + r2] or not np.isfinite(vals[oa + r1, ob + r2]):
                raise StencilOutOfDomain("stencil touches a node outside the domain", node=node, alpha=(a1, a2))
            total += wa * wb * vals[oa + r1, ob + r2]
    return float(total / g.h ** (a1 + a2))


class GridJets:
    """FD derivative fields of ψ up to order 4, spline-interpolated off-node."""

    def __init__(self, field: ScalarField, max_order: int = 4, degree: int = 3):
        self.field = field
        self.max_order = max_order
        g = field.grid
        r = 2 if max_order >= 3 else (1 if max_order >= 1 else 0)
        self.crop = (slice(r, g.shape[0] - r), slice(r, g.shape[1] - r))
        a, b = g.axes
        self.ax = (a[self.crop[0]], b[self.crop[1]])
        if len(self.ax[0]) < degree + 1 or len(self.ax[1]) < degree + 1:
            raise StencilOutOfDomain("grid too small for interpolation")
        vals = np.where(g.inside, field.values, np.nan)
        self.valid = np.ones((len(self.ax[0]), len(self.ax[1])), dtype=bool)
        self.splines = {}
        for k in range(max_order + 1):
            for a2 in range(k + 1):
                d = fd_field(vals, g.h, k - a2, a2)[self.crop]
                ok = np.isfinite(d)
                self.valid &= ok
                self.splines[(k - a2, a2)] = RectBivariateSpline(self.ax[0], self.ax[1], np.where(ok, d, 0.0), kx=degree, ky=degree)
        self.lo = np.array([self.ax[0][0], self.ax[1][0]])
        self.hi = np.array([self.ax[0][-1], self.ax[1][-1]])
        self.degree = degree

    @property
    def box(self) -> Box:
        return Box(self.lo, self.hi, singular=False)

    def _check(self, p):
        if np.any(p < self.lo - 1e-12) or np.any(p > self.hi + 1e-12):
            raise StencilOutOfDomain("point outside the interpolation box of ψ", point=p)
        h = self.field.grid.h
        i = int(np.clip(np.floor((p[0] - self.lo[0]) / h), 0, self.valid.shape[0] - 1))
        j = int(np.clip(np.floor((p[1] - self.lo[1]) / h), 0, self.valid.shape[1] - 1))
        blk = self.valid[max(i - 1, 0):i + 3, max(j - 1, 0):j + 3]
        if not blk.all():
            raise StencilOutOfDomain("ψ stencils incomplete near this point", point=p)

    def jet(self, p, order: int) -> JetSample:
        p = np.asarray(p, dtype=float)
        if order > self.max_order:
            raise ValueError(f"ψ jets available up to order {self.max_order}")
        self._check(p)
        derivs = []
        for k in range(order + 1):
            comps = [float(self.splines[(k - a2, a2)].ev(p[0], p[1])) for a2 in range(k + 1)]
            derivs.append(np.array(comps[0]) if k == 0 else sym_tensor(comps, k))
        return JetSample(p, derivs)


class SplitPotential(Potential):
    """u = v + ψ with v analytic and ψ a gridded smooth field."""

    def __init__(self, analytic: Potential, psi: ScalarField | None = None, tag: str = "", max_order: int = 4):
        self.analytic = analytic
        self.psi = psi
        self.tag = tag
        self._gj = None
        self.max_order = min(max_order, analytic.max_order) if psi is not None else analytic.max_order
        parts = [analytic.domain]
        if psi is not None:
            parts.append(self.grid_jets.box)
        self.domain = intersect(parts)

    @property
    def grid_jets(self) -> GridJets:
        if self._gj is None:
            self._gj = GridJets(self.psi, max_order=4)
        return self._gj

    def jet(self, point, order=2):
        j = self.analytic.jet(point, order)
        if self.psi is None:
            return j
        return j + self.grid_jets.jet(point, order)

    def value(self, point):
        v = self.analytic.value(point)
        if self.psi is None:
            return v
        return v + self.grid_jets.jet(point, 0).value

    def psi_at_nodes(self) -> np.ndarray:
        return self.psi.values


def jet(potential: Potential, point, order: int = 2) -> JetSample:
    """Jet with the convexity contract enforced when a Hessian is requested."""
    j = potential.jet(point, order)
    if order >= 2 and not j.convex:
        raise NotConvexHere("Hessian is not positive definite", point=np.asarray(point), det=j.det)
    return j


def fd_grad(fun, x, step: float) -> np.ndarray:
    """Central gradient of a (possibly tensor-valued) callable; index 0 is the direction."""
    x = np.asarray(x, dtype=float)
    out = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        out.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * step))
    return np.array(out)


def fd_hess(fun, x, step: float) -> np.ndarray:
    """Central Hessian of a (possibly tensor-valued) callable; indices 0, 1 are directions."""
    x = np.asarray(x, dtype=float)
    e = np.eye(2) * step
    f0 = np.asarray(fun(x))
    fp = [np.asarray(fun(x + e[k])) for k in range(2)]
    fm = [np.asarray(fun(x - e[k])) for k in range(2)]
    h11 = (fp[0] - 2 * f0 + fm[0]) / step ** 2
    h22 = (fp[1] - 2 * f0 + fm[1]) / step ** 2
    h12 = (np.asarray(fun(x + e[0] + e[1])) - np.asarray(fun(x + e[0] - e[1]))
           - np.asarray(fun(x - e[0] + e[1])) + np.asarray(fun(x - e[0] - e[1]))) / (4 * step ** 2)
    return np.array([[h11, h12], [h12, h22]])


def _as_callable(s):
    if isinstance(s, ScalarField):
        gj = GridJets(s, max_order=0)
        return lambda p: gj.jet(p, 0).value
    return s


def laplace_beltrami(potential: Potential, s, point, power: float = 0.5, step: float = 1e-3) -> float:
    """(1/D^p) ∂_i(D^p G^{ij} ∂_j s) with G the Hessian of ``potential`` and D = det G.

    power = ½ is the Riemannian Laplacian of the Hessian metric; power = 1
    gives G^{ij}∂_ij, the torus-invariant reduction of the Kähler Laplacian.
    """
    s = _as_callable(s)
    x = np.asarray(point, dtype=float)

    def flux(y):
        j = jet(potential, y, 2)
        g = fd_grad(s, y, step)
        return j.det ** power * (j.hess_inv @ g)

    div = 0.0
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        div += (flux(x + e)[k] - flux(x - e)[k]) / (2 * step)
    return float(div / jet(potential, x, 2).det ** power)


def laplace_beltrami_nd(potential: Potential, s, point, power: float = 0.5, step: float = 1e-3) -> float:
    """Non-divergence form of :func:`laplace_beltrami`, using third derivatives of the potential."""
    s = _as_callable(s)
    j = jet(potential, point, 3)
    Gi = j.hess_inv
    g = fd_grad(s, point, step)
    H = fd_hess(s, point, step)
    dlogdet = np.einsum("ab,abi->i", Gi, j.d3)
    dGi = -np.einsum("ia,abk,bj->kij", Gi, j.d3, Gi)  # ∂_k G^{ij}
    first = power * dlogdet @ Gi @ g + np.einsum("iij,j->", dGi, g)
    return float(np.sum(Gi * H) + first)


def save_field(field: ScalarField, csv_path, meta: dict | None = None) -> None:
    g = field.grid
    X1, X2 = g.mesh()
    lines = ["xi1,xi2,value"]
    for i in range(g.shape[0]):
        for j in range(g.shape[1]):
            v = field.values[i, j]
            if g.inside[i, j] and np.isfinite(v):
                lines.append(f"{X1[i, j]:.17g},{X2[i, j]:.17g},{v:.17g}")
    Path(csv_path).write_text("\n".join(lines) + "\n")
    side = {
        "h": g.h,
        "bbox": [list(map(float, g.lo)), [float(g.lo[k] + (g.shape[k] - 1 + 2 * g.offset) * g.h) for k in range(2)]],
        "shape": list(g.shape),
        "centering": g.centering,
        "margin": g.margin,
        "mask_sha256": g.mask_hash(),
    }
    if meta:
        side.update(meta)
    Path(str(csv_path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def load_field(csv_path, grid: Grid | None = None) -> ScalarField:
    p = Path(csv_path)
    side_path = Path(str(p) + ".json")
    if not p.exists() or not side_path.exists():
        raise IoError("field snapshot or its sidecar is missing", path=str(p))
    side = json.loads(side_path.read_text())
    if grid is None:
        lo = np.array(side["bbox"][0], dtype=float)
        shape = tuple(side["shape"])
        inside = np.zeros(shape, dtype=bool)
        grid = Grid(lo, float(side["h"]), shape, inside, inside.copy(), int(side["margin"]), side["centering"])
    vals = np.full(grid.shape, np.nan)
    inside = np.zeros(grid.shape, dtype=bool)
    rows = p.read_text().splitlines()[1:]
    for row in rows:
        a, b, v = (float(t) for t in row.split(","))
        i, j = grid.nearest_node((a, b))
        vals[i, j] = v
        inside[i, j] = True
    if not grid.inside.any():
        grid = Grid(grid.lo, grid.h, grid.shape, inside, erode(inside, grid.margin), grid.margin, grid.centering)
    if grid.mask_hash() != side["mask_sha256"]:
        raise IoError("mask hash mismatch between snapshot and grid", path=str(p))
    return ScalarField(grid, vals)
