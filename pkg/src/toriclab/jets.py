"""Point-local derivative bundles and the analytic potentials built on them.

A potential is anything with a ``jet(point, order)`` method returning a
:class:`JetSample`; every invariant in the package is computed from jets.
Derivative tensors are stored fully (shape ``(2,)*k``) and symmetric.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .domain import Domain, Plane, intersect
from .errors import NotConvexHere, OutsideDomain

PD_PIVOT = 1e-12


def sym_tensor(components, order: int) -> np.ndarray:
    """Assemble a symmetric tensor from components indexed by the number of
    derivatives taken in the second coordinate."""
    t = np.empty((2,) * order)
    for idx in itertools.product((0, 1), repeat=order):
        t[idx] = components[sum(idx)]
    return t


def tensor_power(v: np.ndarray, m: int) -> np.ndarray:
    out = np.asarray(v, dtype=float)
    for _ in range(m - 1):
        out = np.multiply.outer(out, v)
    return out


def pull_tensor(t: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Contract every index of ``t`` with the matrix ``b`` (t[a..] b[a,i] ...)."""
    out = t
    for _ in range(t.ndim):
        # contract the leading index, appending the new one at the end
        out = np.tensordot(out, b, axes=([0], [0]))
    return out


@dataclass
class JetSample:
    point: np.ndarray
    derivs: list
    hess_inv: np.ndarray | None = field(default=None, init=False)
    det: float = field(default=float("nan"), init=False)
    convex: bool = field(default=False, init=False)

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        if len(self.derivs) > 2:
            # 2x2 algebra on Python floats: this runs once per jet and dominates geodesic integration
            a, b, c, d = np.asarray(self.derivs[2], dtype=float).ravel().tolist()
            b = c = 0.5 * (b + c)
            self.derivs[2] = np.array([[a, b], [c, d]])
            self.det = a * d - b * c
            # 2x2 Cholesky pivots
            self.convex = bool(a > PD_PIVOT and self.det / a > PD_PIVOT)
            if self.det != 0.0:
                self.hess_inv = np.array([[d, -b], [-c, a]]) / self.det

    @property
    def order(self) -> int:
        return len(self.derivs) - 1

    def d(self, k: int) -> np.ndarray:
        if k > self.order:
            raise ValueError(f"jet has order {self.order}, derivative {k} requested")
        return self.derivs[k]

    @property
    def value(self) -> float:
        return float(self.derivs[0])

    @property
    def grad(self) -> np.ndarray:
        return self.d(1)

    @property
    def hess(self) -> np.ndarray:
        return self.d(2)

    @property
    def d3(self) -> np.ndarray:
        return self.d(3)

    @property
    def d4(self) -> np.ndarray:
        return self.d(4)

    @property
    def cofactor(self) -> np.ndarray:
        return self.det * self.hess_inv

    def require_convex(self) -> "JetSample":
        if not self.convex:
            raise NotConvexHere("Hessian is not positive definite", point=self.point, det=self.det)
        return self

    def __add__(self, other: "JetSample") -> "JetSample":
        n = min(self.order, other.order)
        return JetSample(self.point, [np.asarray(a) + np.asarray(b) for a, b in zip(self.derivs[: n + 1], other.derivs[: n + 1])])

    def truncated(self, order: int) -> "JetSample":
        return JetSample(self.point, [np.array(t, copy=True) for t in self.derivs[: order + 1]])


class Potential:
    """Convex function with point-local jets.  Subclasses set ``domain``."""

    domain: Domain = Plane()
    max_order: int = 6

    def jet(self, point, order: int = 2) -> JetSample:  # pragma: no cover - interface
        raise NotImplementedError

    def _derivs(self, point, order: int) -> list:
        # raw derivative list; sums use it to build a single JetSample
        return self.jet(point, order).derivs

    def value(self, point) -> float:
        return self.jet(point, 0).value

    def gradient(self, point) -> np.ndarray:
        return self.jet(point, 1).grad

    def hessian(self, point) -> np.ndarray:
        return self.jet(point, 2).hess

    def __add__(self, other: "Potential") -> "Potential":
        return SumPotential([self, other])

    def _check(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        if not self.domain.contains(p):
            raise OutsideDomain("point outside the potential's domain", point=p)
        return p


class SumPotential(Potential):
    def __init__(self, terms):
        flat = []
        for t in terms:
            flat.extend(t.terms if isinstance(t, SumPotential) else [t])
        self.terms = flat
        self.domain = intersect([t.domain for t in flat])
        self.max_order = min(t.max_order for t in flat)

    def jet(self, point, order=2):
        return JetSample(point, self._derivs(point, order))

    def _derivs(self, point, order):
        out = None
        for t in self.terms:
            d = t._derivs(point, order)
            if out is None:
                out = d
            else:
                # sums allocate new arrays, so term caches are never written to
                n = min(len(out), len(d))
                out = [out[k] + d[k] for k in range(n)]
        if len(self.terms) == 1:
            out = [np.array(a, dtype=float, copy=True) for a in out]
        return out

    def value(self, point) -> float:
        # term values may extend to the closure where jets do not
        return float(sum(t.value(point) for t in self.terms))


class QuadraticPotential(Potential):
    """½ ξᵀQξ + b·ξ + c."""

    max_order = 64

    def __init__(self, Q, b=(0.0, 0.0), c=0.0, domain: Domain | None = None):
        self.Q = np.asarray(Q, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.c = float(c)
        self.domain = domain or Plane()

    def jet(self, point, order=2):
        return JetSample(point, self._derivs(point, order))

    def _derivs(self, point, order):
        p = np.asarray(point, dtype=float)
        derivs = [np.array(0.5 * p @ self.Q @ p + self.b @ p + self.c)]
        if order >= 1:
            derivs.append(self.Q @ p + self.b)
        if order >= 2:
            derivs.append(self.Q.copy())
        for k in range(3, order + 1):
            derivs.append(np.zeros((2,) * k))
        return derivs


class LogTermsPotential(Potential):
    """Σ_i l_i log l_i with l_i(ξ) = ⟨ξ, v_i⟩ − λ_i.

    Derivatives of order m ≥ 2 are (−1)^m (m−2)! Σ v_i^{⊗m} / l_i^{m−1}, so
    jets of any order are exact.
    """

    max_order = 64

    def __init__(self, normals, offsets, domain: Domain | None = None):
        from .domain import HalfSpaces

        self.normals = np.asarray(normals, dtype=float).reshape(-1, 2)
        self.offsets = np.asarray(offsets, dtype=float).reshape(-1)
        self.domain = domain or HalfSpaces(self.normals, self.offsets, singular=True)
        self._powers = {}
        self._shapes = {}

    def _vpow(self, m):
        # rows v_i^{⊗m} scaled by (−1)^m (m−2)!
        if m not in self._powers:
            c = (-1.0) ** m * math.factorial(m - 2)
            self._powers[m] = c * np.array([tensor_power(v, m).ravel() for v in self.normals])
            self._shapes[m] = (2,) * m
        return self._powers[m]

    def value(self, point) -> float:
        l = self.normals @ np.asarray(point, dtype=float) - self.offsets
        if np.any(l < 0):
            raise OutsideDomain("point outside the polytope", point=point)
        safe = np.where(l > 0, l, 1.0)
        return float(np.sum(np.where(l > 0, l * np.log(safe), 0.0)))

    def jet(self, point, order=2):
        return JetSample(point, self._derivs(point, order))

    def _derivs(self, point, order):
        p = np.asarray(point, dtype=float)
        l = self.normals @ p - self.offsets
        if not l.min() > 0:
            raise OutsideDomain("jet requested at a non-interior point", point=p, l=l)
        logl = np.log(l)
        derivs = [np.array(l @ logl)]
        if order >= 1:
            derivs.append((logl + 1.0) @ self.normals)
        inv = 1.0 / l
        w = inv
        for m in range(2, order + 1):
            derivs.append((w @ self._vpow(m)).reshape(self._shapes[m]))
            w = w * inv
        return derivs


@lru_cache(maxsize=None)
def _symbolic_table(expr_src: str, names: tuple, order: int):
    import sympy as sp

    syms = sp.symbols(names)
    expr = sp.sympify(expr_src, locals={n: s for n, s in zip(names, syms)})
    fns = []
    for k in range(order + 1):
        comps = []
        for a in range(k + 1):
            # a derivatives in the second coordinate, k − a in the first
            e = expr
            if k - a:
                e = sp.diff(e, syms[0], k - a)
            if a:
                e = sp.diff(e, syms[1], a)
            comps.append(sp.lambdify(syms, e, modules="numpy"))
        fns.append(comps)
    return fns


class SymbolicPotential(Potential):
    """Closed-form potential given as a sympy-parsable expression."""

    def __init__(self, expr: str, names=("x1", "x2"), domain: Domain | None = None, max_order: int = 6):
        self.expr = str(expr)
        self.names = tuple(names)
        self.domain = domain or Plane()
        self.max_order = max_order
        self._fns = None

    def _table(self, order):
        return _symbolic_table(self.expr, self.names, max(order, 4))

    def jet(self, point, order=2):
        p = np.asarray(point, dtype=float)
        if not self.domain.contains(p):
            raise OutsideDomain("point outside the potential's domain", point=p)
        table = self._table(order)
        derivs = []
        for k in range(order + 1):
            comps = [float(fn(p[0], p[1])) for fn in table[k]]
            derivs.append(np.array(comps[0]) if k == 0 else sym_tensor(comps, k))
        return JetSample(p, derivs)

    def value(self, point) -> float:
        p = np.asarray(point, dtype=float)
        return float(self._table(0)[0][0](p[0], p[1]))


class LinearAdded(Potential):
    """base(ξ) + ℓ·ξ + c, the gauge freedom of every curvature operator."""

    def __init__(self, base: Potential, slope=(0.0, 0.0), const=0.0):
        self.base = base
        self.slope = np.asarray(slope, dtype=float)
        self.const = float(const)
        self.domain = base.domain
        self.max_order = base.max_order

    def jet(self, point, order=2):
        j = self.base.jet(point, order)
        derivs = [np.array(t, copy=True) for t in j.derivs]
        derivs[0] = derivs[0] + self.slope @ j.point + self.const
        if order >= 1:
            derivs[1] = derivs[1] + self.slope
        return JetSample(j.point, derivs)
