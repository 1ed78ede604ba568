"""Delzant polygons, the half-plane model and their Guillemin potentials."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .domain import EPS_GEOM, HalfSpaces
from .errors import EmptyInterior, IoError, NotDelzant, OutsideDomain, Unbounded
from .jets import JetSample, LogTermsPotential, QuadraticPotential, SumPotential


@dataclass(frozen=True)
class Location:
    kind: str  # "interior" | "boundary" | "outside"
    edge: int | None = None
    vertex: int | None = None


class DelzantPolytope:
    """Polygon {ξ : l_i(ξ) > 0} with integral inward normals listed counterclockwise."""

    def __init__(self, normals, offsets, vertices):
        self.normals = np.asarray(normals, dtype=int)
        self.offsets = np.asarray(offsets, dtype=float)
        self.vertices = np.asarray(vertices, dtype=float)
        self.domain = HalfSpaces(self.normals, self.offsets, singular=True)
        self.domain.vertices = self.vertices
        self.potential = LogTermsPotential(self.normals, self.offsets, domain=self.domain)

    @property
    def edges(self):
        return [(tuple(int(c) for c in v), float(lam)) for v, lam in zip(self.normals, self.offsets)]

    def __len__(self):
        return len(self.offsets)

    def __repr__(self):
        return f"DelzantPolytope(edges={self.edges})"

    def l_values(self, xi) -> np.ndarray:
        return l_values(self, xi)

    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.vertices)


class HalfPlaneModel:
    """The local model {ξ₁ > 0} with v_h(ξ) = ξ₁ log ξ₁ + ξ₂²."""

    def __init__(self):
        self.domain = HalfSpaces([(1, 0)], [0.0], singular=True)
        self.potential = SumPotential([
            LogTermsPotential([(1, 0)], [0.0], domain=self.domain),
            QuadraticPotential(np.diag([0.0, 2.0])),
        ])

    def __repr__(self):
        return "HalfPlaneModel()"


def make_polytope(edges) -> DelzantPolytope:
    """Validate edge data ``[((v1, v2), lam), ...]`` and derive the vertices."""
    if len(edges) < 3:
        raise EmptyInterior("a polygon needs at least three edges", count=len(edges))
    normals, offsets = [], []
    for k, (v, lam) in enumerate(edges):
        v = tuple(v)
        if len(v) != 2 or any(float(c) != int(round(float(c))) for c in v):
            raise NotDelzant("edge normals must be integer vectors", edge=k, normal=list(v))
        normals.append((int(round(float(v[0]))), int(round(float(v[1])))))
        offsets.append(float(lam))
    N = np.array(normals, dtype=float)
    lam = np.array(offsets)
    if any(n == (0, 0) for n in normals):
        raise NotDelzant("zero normal", normals=normals)

    # nonempty and bounded, via the Chebyshev-style LP max t s.t. l_i >= t
    res = linprog([0, 0, -1], A_ub=np.c_[-N, np.ones(len(lam))], b_ub=-lam,
                  bounds=[(None, None), (None, None), (None, 1.0)], method="highs")
    if res.status != 0 or res.x[2] <= EPS_GEOM:
        raise EmptyInterior("the inequalities l_i > 0 have no common solution", edges=edges)
    for k in range(2):
        for sgn in (1.0, -1.0):
            c = np.zeros(2)
            c[k] = sgn
            r = linprog(c, A_ub=-N, b_ub=-lam, bounds=[(None, None)] * 2, method="highs")
            if r.status == 3:
                raise Unbounded("the region l_i > 0 is unbounded", edges=edges)

    m = len(lam)
    verts = []
    for i in range(m):
        j = (i + 1) % m
        M = N[[i, j]]
        det = float(np.linalg.det(M))
        if abs(det) < 1e-12:
            raise Unbounded("consecutive edges are parallel; the vertex cycle does not close", edges=(i, j))
        verts.append(np.linalg.solve(M, lam[[i, j]]))
    verts = np.array(verts)

    for i in range(m):
        j = (i + 1) % m
        d = normals[i][0] * normals[j][1] - normals[i][1] * normals[j][0]
        if d <= 0:
            raise NotDelzant("edges must be listed counterclockwise with inward normals", edges=(i, j), det=d)
        if d != 1:
            raise NotDelzant(f"consecutive normals {normals[i]}, {normals[j]} have determinant {d}", edges=(i, j), det=d)

    # every derived vertex must lie on the closed polygon, otherwise some edge is redundant or misordered
    scale = max(1.0, float(np.abs(verts).max()))
    for k, p in enumerate(verts):
        if np.any(N @ p - lam < -1e-9 * scale):
            raise EmptyInterior("derived vertex violates another edge; edges are not a convex cycle", vertex=k)
    area = 0.5 * np.sum(verts[:, 0] * np.roll(verts[:, 1], -1) - np.roll(verts[:, 0], -1) * verts[:, 1])
    if area <= 0:
        raise NotDelzant("vertex cycle is not counterclockwise", area=float(area))
    return DelzantPolytope(normals, offsets, verts)


def unit_square() -> DelzantPolytope:
    return make_polytope([((1, 0), 0), ((0, 1), 0), ((-1, 0), -1), ((0, -1), -1)])


def standard_simplex() -> DelzantPolytope:
    return make_polytope([((1, 0), 0), ((0, 1), 0), ((-1, -1), -1)])


def l_values(poly, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return xi @ np.asarray(poly.normals, dtype=float).T - poly.offsets


def guillemin_value(poly: DelzantPolytope, xi) -> float:
    l = l_values(poly, xi)
    if np.any(l < -EPS_GEOM):
        raise OutsideDomain("point outside the polytope", point=xi)
    l = np.clip(l, 0.0, None)
    safe = np.where(l > 0, l, 1.0)
    return float(np.sum(np.where(l > 0, l * np.log(safe), 0.0)))


def guillemin_jet(poly: DelzantPolytope, xi, order: int = 4) -> JetSample:
    return poly.potential.jet(xi, order)


def contains(poly: DelzantPolytope, xi, eps: float = EPS_GEOM) -> Location:
    l = l_values(poly, xi)
    if np.any(l < -eps):
        return Location("outside")
    zero = np.flatnonzero(np.abs(l) <= eps)
    if zero.size == 0:
        return Location("interior")
    if zero.size >= 2:
        m = len(l)
        # vertex k joins edges k and k+1
        for k in range(m):
            if k in zero and (k + 1) % m in zero:
                return Location("boundary", edge=int(k), vertex=int(k))
    return Location("boundary", edge=int(zero[0]))


def polygon_centroid(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    cx = ((x + xn) * cross).sum() / (6 * a)
    cy = ((y + yn) * cross).sum() / (6 * a)
    return np.array([cx, cy])


def parse_polytope_text(text: str) -> DelzantPolytope:
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise IoError(f"line {lineno}: expected 'v1 v2 lambda'", line=raw)
        try:
            v1, v2 = int(parts[0]), int(parts[1])
            lam = float(Fraction(parts[2]))
        except ValueError as exc:
            raise IoError(f"line {lineno}: {exc}", line=raw) from None
        edges.append(((v1, v2), lam))
    return make_polytope(edges)


def read_polytope(path) -> DelzantPolytope:
    p = Path(path)
    if not p.exists():
        raise IoError(f"polytope file not found: {p}", path=str(p))
    return parse_polytope_text(p.read_text())


def format_polytope(poly: DelzantPolytope) -> str:
    return "".join(f"{v[0]} {v[1]} {lam!r}\n" for v, lam in poly.edges)
