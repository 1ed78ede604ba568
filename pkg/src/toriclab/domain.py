"""Open convex domains described by defining functions g_k > 0.

Each defining function carries a flag telling whether the Hessian metric of
the potential living on the domain blows up there (a Guillemin-type edge)
or stays regular (a disk patch, a grid box).  Geodesic exit detection uses
the flag to pick the right end-game.
"""

from __future__ import annotations

import numpy as np

EPS_GEOM = 1e-12


class Domain:
    bbox: tuple | None = None

    def constraints(self, p) -> np.ndarray:
        return np.zeros(0)

    def constraint_grads(self, p) -> np.ndarray:
        return np.zeros((0, 2))

    @property
    def singular(self) -> np.ndarray:
        return np.zeros(0, dtype=bool)

    def contains(self, p, tol: float = 0.0) -> bool:
        g = self.constraints(np.asarray(p, dtype=float))
        return bool(np.all(g > tol))


class Plane(Domain):
    pass


class HalfSpaces(Domain):
    """{ξ : ⟨ξ, v_k⟩ − λ_k > 0}."""

    def __init__(self, normals, offsets, singular=True):
        self.normals = np.asarray(normals, dtype=float).reshape(-1, 2)
        self.offsets = np.asarray(offsets, dtype=float).reshape(-1)
        self._singular = np.broadcast_to(np.asarray(singular, dtype=bool), self.offsets.shape).copy()
        self.bbox = _halfspace_bbox(self.normals, self.offsets)

    def constraints(self, p):
        return self.normals @ np.asarray(p, dtype=float) - self.offsets

    def constraint_grads(self, p):
        return self.normals.copy()

    @property
    def singular(self):
        return self._singular


class Box(HalfSpaces):
    def __init__(self, lo, hi, singular=False):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        super().__init__([(1, 0), (0, 1), (-1, 0), (0, -1)], [lo[0], lo[1], -hi[0], -hi[1]], singular)
        self.lo, self.hi = lo, hi
        self.bbox = (lo.copy(), hi.copy())


class Disk(Domain):
    def __init__(self, center=(0.0, 0.0), radius=1.0, singular=False):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self._singular = np.array([singular])
        self.bbox = (self.center - self.radius, self.center + self.radius)

    def constraints(self, p):
        d = np.asarray(p, dtype=float) - self.center
        return np.array([self.radius ** 2 - d @ d])

    def constraint_grads(self, p):
        return (-2.0 * (np.asarray(p, dtype=float) - self.center))[None, :]

    @property
    def singular(self):
        return self._singular


class Intersection(Domain):
    def __init__(self, parts):
        self.parts = list(parts)
        boxes = [d.bbox for d in self.parts if d.bbox is not None]
        if boxes:
            lo = np.max([b[0] for b in boxes], axis=0)
            hi = np.min([b[1] for b in boxes], axis=0)
            self.bbox = (lo, hi)

    def constraints(self, p):
        return np.concatenate([d.constraints(p) for d in self.parts]) if self.parts else np.zeros(0)

    def constraint_grads(self, p):
        return np.concatenate([d.constraint_grads(p) for d in self.parts]) if self.parts else np.zeros((0, 2))

    @property
    def singular(self):
        return np.concatenate([d.singular for d in self.parts]) if self.parts else np.zeros(0, dtype=bool)


class Mapped(Domain):
    """Image of ``base`` under ξ ↦ Aξ + a0."""

    def __init__(self, base: Domain, A, a0):
        self.base = base
        self.A = np.asarray(A, dtype=float)
        self.a0 = np.asarray(a0, dtype=float)
        self.Ainv = np.linalg.inv(self.A)
        if base.bbox is not None:
            lo, hi = base.bbox
            corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
            img = corners @ self.A.T + self.a0
            self.bbox = (img.min(axis=0), img.max(axis=0))

    def _pre(self, p):
        return self.Ainv @ (np.asarray(p, dtype=float) - self.a0)

    def constraints(self, p):
        return self.base.constraints(self._pre(p))

    def constraint_grads(self, p):
        return self.base.constraint_grads(self._pre(p)) @ self.Ainv

    @property
    def singular(self):
        return self.base.singular


def intersect(domains) -> Domain:
    parts = []
    for d in domains:
        if isinstance(d, Plane) and not isinstance(d, Intersection):
            continue
        parts.extend(d.parts if isinstance(d, Intersection) else [d])
    if not parts:
        return Plane()
    if len(parts) == 1:
        return parts[0]
    return Intersection(parts)


def _halfspace_bbox(normals, offsets):
    """Bounding box of a polygon given by half-planes, None when unbounded."""
    from scipy.optimize import linprog

    lo, hi = np.zeros(2), np.zeros(2)
    for k in range(2):
        for sgn, store in ((1.0, lo), (-1.0, hi)):
            c = np.zeros(2)
            c[k] = sgn
            res = linprog(c, A_ub=-normals, b_ub=-offsets, bounds=[(None, None)] * 2, method="highs")
            if res.status != 0:
                return None
            store[k] = res.x[k]
    return lo, hi


def sample_interior(domain: Domain, n: int, rng: np.random.Generator, min_margin: float = 0.0, box=None) -> np.ndarray:
    """Rejection-sample ``n`` points with every defining function above ``min_margin``."""
    lo, hi = box if box is not None else domain.bbox
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = []
    while len(out) < n:
        cand = lo + (hi - lo) * rng.random((4 * n + 16, 2))
        for c in cand:
            if np.all(domain.constraints(c) > min_margin):
                out.append(c)
                if len(out) == n:
                    break
    return np.array(out)
