"""Affine transformations of potentials and the normalizations built on them.

An :class:`AffineMap` (A, a₀, λ) sends a potential u to
u*(ξ) = λ·u(A⁻¹(ξ − a₀)).  Transformed potentials are evaluated by
composition, so their jets follow from the chain rule exactly and no
resampling takes place.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar
from scipy.spatial import ConvexHull

from .domain import Mapped
from .errors import BisectionFailed, Degenerate, NotCompact, OutsideDomain
from .field import jet
from .jets import JetSample, Potential, pull_tensor
from .polytope import polygon_centroid

SANDWICH_INNER = 2.0 ** -1.5
SANDWICH_SLACK = 1e-6
CONVEX_TOL = 1e-9
SECTION_GRID = 256
SECTION_RAYS = 32
MVEE_TOL = 1e-12
MVEE_MAX_ITER = 200000
BETA_RANGE = (1e-4, 1e4)
BETA_MAX_ITER = 80
S0_TARGET = 10.0
S0_TOL = 1e-7
# Riemannian length of the Kähler metric on a real slice, relative to the
# Calabi metric D²f (torus chart: g_{ij̄} = ¼ f_ij)
KAHLER_LENGTH = 0.5
# ξ₁ offset at which boundary jets of a half-plane potential are read
EDGE_EPS = 1e-10


@dataclass
class AffineMap:
    """ξ ↦ Aξ + a₀ on the domain together with the value scaling λ."""

    A: np.ndarray
    a0: np.ndarray = field(default_factory=lambda: np.zeros(2))
    lam: float = 1.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float).reshape(2, 2)
        self.a0 = np.asarray(self.a0, dtype=float).reshape(2)
        self.lam = float(self.lam)
        if abs(np.linalg.det(self.A)) < 1e-14:
            raise Degenerate("affine map has a singular linear part", A=self.A)
        if not self.lam > 0:
            raise Degenerate("value scaling must be positive", lam=self.lam)

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls(np.eye(2))

    @property
    def Ainv(self) -> np.ndarray:
        return np.linalg.inv(self.A)

    def __call__(self, xi) -> np.ndarray:
        return np.asarray(xi, dtype=float) @ self.A.T + self.a0

    def preimage(self, xi) -> np.ndarray:
        return (np.asarray(xi, dtype=float) - self.a0) @ self.Ainv.T

    def compose(self, other: "AffineMap") -> "AffineMap":
        """self ∘ other: apply ``other`` first."""
        return AffineMap(self.A @ other.A, self.A @ other.a0 + self.a0, self.lam * other.lam)

    def inverse(self) -> "AffineMap":
        Ai = self.Ainv
        return AffineMap(Ai, -Ai @ self.a0, 1.0 / self.lam)

    def distance_to(self, other: "AffineMap") -> float:
        return float(max(np.abs(self.A - other.A).max(), np.abs(self.a0 - other.a0).max(),
                         abs(self.lam - other.lam)))

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "a0": self.a0.tolist(), "lambda": self.lam}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "AffineMap":
        return cls(d["A"], d.get("a0", (0.0, 0.0)), d.get("lambda", 1.0))

    @classmethod
    def from_json(cls, text: str) -> "AffineMap":
        return cls.from_dict(json.loads(text))


class AffinePotential(Potential):
    """λ·u(A⁻¹(ξ − a₀)) + ℓ·ξ + c."""

    def __init__(self, base: Potential, m: AffineMap, slope=(0.0, 0.0), const: float = 0.0):
        self.base = base
        self.map = m
        self.slope = np.asarray(slope, dtype=float)
        self.const = float(const)
        self.domain = Mapped(base.domain, m.A, m.a0)
        self.max_order = base.max_order
        self._Ainv = m.Ainv

    def jet(self, point, order=2):
        p = np.asarray(point, dtype=float)
        j = self.base.jet(self.map.preimage(p), order)
        lam = self.map.lam
        derivs = [np.array(lam * j.value + self.slope @ p + self.const)]
        for k in range(1, order + 1):
            derivs.append(lam * pull_tensor(j.d(k), self._Ainv))
        if order >= 1:
            derivs[1] = derivs[1] + self.slope
        return JetSample(p, derivs)

    def value(self, point) -> float:
        p = np.asarray(point, dtype=float)
        return float(self.map.lam * self.base.value(self.map.preimage(p)) + self.slope @ p + self.const)


def apply_affine(u: Potential, m: AffineMap, slope=(0.0, 0.0), const: float = 0.0) -> AffinePotential:
    return AffinePotential(u, m, slope, const)


# -- John normalization --------------------------------------------------------------


def _vertices(omega) -> np.ndarray:
    v = np.asarray(getattr(omega, "vertices", omega), dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise Degenerate("a polygon needs at least three vertices", shape=list(v.shape))
    scale = max(1.0, float(np.abs(v).max()))
    try:
        hull = ConvexHull(v)
    except Exception as exc:  # qhull reports collinear input as an error
        raise Degenerate("polygon has empty interior", reason=str(exc).splitlines()[0]) from None
    if hull.volume <= 1e-12 * scale * scale:
        raise Degenerate("polygon has empty interior", area=hull.volume)
    return v[hull.vertices]  # counterclockwise


def centered_mvee(points) -> np.ndarray:
    """Q of the minimum-area ellipse {x : xᵀQx ≤ 1} centred at 0 containing ``points``.

    Solves the dual D-optimal design problem by multiplicative weight updates.
    """
    X = np.asarray(points, dtype=float)
    m, n = X.shape
    w = np.full(m, 1.0 / m)
    for _ in range(MVEE_MAX_ITER):
        M = X.T @ (w[:, None] * X)
        g = np.einsum("ij,jk,ik->i", X, np.linalg.inv(M), X)
        if g.max() <= n * (1 + MVEE_TOL):
            break
        w *= g / n
        w /= w.sum()
    Q = np.linalg.inv(M) / n
    Q /= np.einsum("ij,jk,ik->i", X, Q, X).max()
    return 0.5 * (Q + Q.T)


def _sym_sqrt(S) -> np.ndarray:
    ev, V = np.linalg.eigh(S)
    return (V * np.sqrt(ev)) @ V.T


def john_normalize(omega):
    """Normalizing map T and the image polygon T(Ω).

    T sends the minimum-area ellipse centred at the centroid of Ω to the unit
    disk; its linear part is the symmetric square root, so no rotation is added.
    """
    v = _vertices(omega)
    c = polygon_centroid(v)
    Q = centered_mvee(v - c)
    A = _sym_sqrt(Q)
    T = AffineMap(A, -A @ c, 1.0)
    return T, T(v)


def sandwich_radii(vertices) -> tuple[float, float]:
    """(inradius about 0, circumradius about 0) of a convex polygon containing 0."""
    v = _vertices(vertices)
    w = np.roll(v, -1, axis=0)
    e = w - v
    # distance from 0 to each edge line, signed positive inside for ccw order
    d = (v[:, 0] * e[:, 1] - v[:, 1] * e[:, 0]) / np.hypot(e[:, 0], e[:, 1])
    return float(d.min()), float(np.hypot(v[:, 0], v[:, 1]).max())


def check_sandwich(normalized_vertices, slack: float = SANDWICH_SLACK) -> bool:
    r_in, r_out = sandwich_radii(normalized_vertices)
    return r_in >= SANDWICH_INNER - slack and r_out <= 1.0 + slack


def is_L_bounded(T: AffineMap, L: float) -> bool:
    s = np.linalg.svd(T.A, compute_uv=False)
    return bool(np.linalg.norm(T.a0) <= L and s.min() >= 1.0 / L and s.max() <= L)


def widths(omega) -> tuple[float, float]:
    """Longest chords parallel to the ξ₁ and ξ₂ axes."""
    v = _vertices(omega)
    w = np.roll(v, -1, axis=0)
    out = []
    for i in (0, 1):
        j = 1 - i
        best = 0.0
        # chord length is concave in the transverse coordinate, so a vertex level attains it
        for t in np.unique(v[:, j]):
            hits = []
            for a, b in zip(v, w):
                if a[j] == b[j]:
                    if a[j] == t:
                        hits.extend([a[i], b[i]])
                elif min(a[j], b[j]) <= t <= max(a[j], b[j]):
                    s = (t - a[j]) / (b[j] - a[j])
                    hits.append(a[i] + s * (b[i] - a[i]))
            if hits:
                best = max(best, max(hits) - min(hits))
        out.append(float(best))
    return out[0], out[1]


# -- sections ---------------------------------------------------------------------------


@dataclass
class SectionPolygon:
    p: np.ndarray
    sigma: float
    vertices: np.ndarray
    closed: bool
    convexified: bool = False

    def contains(self, q, slack: float = 0.0) -> bool:
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        d = np.asarray(q, dtype=float) - v
        cross = e[:, 0] * d[:, 1] - e[:, 1] * d[:, 0]
        return bool(np.all(cross / np.hypot(e[:, 0], e[:, 1]) >= -slack))

    def is_convex(self, tol: float = CONVEX_TOL) -> bool:
        return _is_convex(self.vertices, tol)

    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _is_convex(v, tol) -> bool:
    e = np.roll(v, -1, axis=0) - v
    f = np.roll(e, -1, axis=0)
    cross = e[:, 0] * f[:, 1] - e[:, 1] * f[:, 0]
    return bool(np.all(cross >= -tol))


def _tilted(u: Potential, p):
    j = u.jet(p, 1)
    u0, g = j.value, j.grad

    def h(q):
        try:
            return u.value(q) - u0 - g @ (np.asarray(q) - p)
        except OutsideDomain:
            return math.nan

    return h


def _ray_extent(h, u: Potential, p, d, sigma):
    """Distance along d at which the tilted potential reaches σ; NotCompact if the domain ends first."""
    t, last = 1e-3, 0.0
    while True:
        q = p + t * d
        if not u.domain.contains(q):
            # the level set may still close inside if h reaches σ before the boundary
            lo, hi = last, t
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if u.domain.contains(p + mid * d):
                    lo = mid
                else:
                    hi = mid
            edge = p + lo * d
            he = h(edge)
            if not (he > sigma):
                raise NotCompact("section reaches the boundary of the domain", p=p, sigma=sigma, direction=d)
            return brentq(lambda s: h(p + s * d) - sigma, last, lo, xtol=1e-14)
        if h(q) > sigma:
            return brentq(lambda s: h(p + s * d) - sigma, last, t, xtol=1e-14)
        last, t = t, 2 * t
        if t > 1e8:
            raise NotCompact("section is unbounded", p=p, sigma=sigma, direction=d)


def section(u: Potential, p, sigma: float, n: int = SECTION_GRID) -> SectionPolygon:
    """Polygon approximating {ξ : u(ξ) ≤ u(p) + ∇u(p)·(ξ − p) + σ}.

    Level set of the tilted potential extracted by marching squares on an
    n×n grid around p; the grid box comes from a fan of exact ray crossings.
    """
    from skimage.measure import find_contours

    if not sigma > 0:
        raise ValueError("section height must be positive")
    p = np.asarray(p, dtype=float)
    h = _tilted(u, p)
    th = 2 * np.pi * np.arange(SECTION_RAYS) / SECTION_RAYS
    dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    ext = np.array([_ray_extent(h, u, p, d, sigma) for d in dirs])
    pts = p + ext[:, None] * dirs
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.1 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x1 = np.linspace(lo[0], hi[0], n)
    x2 = np.linspace(lo[1], hi[1], n)
    vals = np.array([[h(np.array([a, b])) for b in x2] for a in x1])
    inside = np.isfinite(vals)
    big = np.nanmax(np.where(inside, vals, np.nan))
    vals = np.where(inside, vals, max(big, sigma) + 1.0)
    contours = find_contours(vals, sigma)
    if not contours:
        raise NotCompact("no level curve found around p", p=p, sigma=sigma)
    step = (hi - lo) / (n - 1)
    best = None
    for c in contours:
        xy = lo + c * step
        closed = bool(np.allclose(c[0], c[-1]))
        poly = xy[:-1] if closed else xy
        if closed and _winds(poly, p):
            best = (poly, closed, c)
            break
    if best is None:
        raise NotCompact("level curve around p is not closed", p=p, sigma=sigma)
    poly, closed, c = best
    # any non-finite cell touched by the curve means the boundary interfered
    ij = np.rint(c).astype(int)
    if not inside[np.clip(ij[:, 0], 0, n - 1), np.clip(ij[:, 1], 0, n - 1)].all():
        raise NotCompact("section touches the boundary of the domain", p=p, sigma=sigma)
    area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    if area < 0:
        poly = poly[::-1]
    convexified = False
    if not _is_convex(poly, CONVEX_TOL):
        poly = poly[ConvexHull(poly).vertices]
        convexified = True
    return SectionPolygon(p, float(sigma), poly, closed, convexified)


def _winds(poly, p) -> bool:
    d = poly - p
    ang = np.arctan2(d[:, 1], d[:, 0])
    turn = np.diff(np.concatenate([ang, ang[:1]]))
    turn = (turn + np.pi) % (2 * np.pi) - np.pi
    return abs(turn.sum()) > np.pi


# -- blow-up and half-plane normalizations ---------------------------------------------


def blowup_normalize(u: Potential, p, lam: float):
    """ũ(ξ) = λ[u(p + A⁻¹ξ) − u(p) − ∇u(p)·A⁻¹ξ] with A = (λD²u(p))^{1/2}, so D²ũ(0) = I."""
    p = np.asarray(p, dtype=float)
    j = jet(u, p, 2)
    A = _sym_sqrt(lam * j.hess)
    m = AffineMap(A, -A @ p, lam)
    slope = -lam * np.linalg.solve(A.T, j.grad)
    return AffinePotential(u, m, slope, -lam * j.value), m


@dataclass
class HalfPlaneTransform:
    """ũ(ξ) = αu(A⁻¹ξ) + ηξ₁ + bξ₂ + c with A(ξ) = (αξ₁, βξ₂ + γ)."""

    alpha: float
    beta: float
    gamma: float
    eta: float
    b: float
    c: float
    potential: AffinePotential

    @property
    def map(self) -> AffineMap:
        return self.potential.map

    def base_map(self, x) -> np.ndarray:
        """Induced map B on log-affine coordinates."""
        x = np.asarray(x, dtype=float)
        return np.array([x[0] + self.eta, self.alpha / self.beta * x[1] + self.b])

    def base_map_inverse(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([x[0] - self.eta, self.beta / self.alpha * (x[1] - self.b)])

    def complex_map(self, z1: complex, w2: complex) -> tuple[complex, complex]:
        """B_ℂ(z₁, w̆₂) = (e^{η/2}z₁, (α/β)w̆₂ + b)."""
        return complex(math.exp(self.eta / 2) * z1), complex(self.alpha / self.beta * w2 + self.b)

    def f_value(self, f: Potential, x_tilde) -> float:
        """αf(B⁻¹x̃) + γx̃₂ − γb − c, the predicted dual potential."""
        x_tilde = np.asarray(x_tilde, dtype=float)
        return float(self.alpha * f.value(self.base_map_inverse(x_tilde)) + self.gamma * x_tilde[1]
                     - self.gamma * self.b - self.c)


def halfplane_affine(u: Potential, alpha: float, beta: float, gamma: float = 0.0, eta: float = 0.0,
                     b: float = 0.0, c: float = 0.0) -> HalfPlaneTransform:
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    m = AffineMap(np.diag([alpha, beta]), (0.0, gamma), alpha)
    return HalfPlaneTransform(alpha, beta, gamma, eta, b, c, AffinePotential(u, m, (eta, b), c))


# -- minimal-normalized triples ---------------------------------------------------------


@dataclass
class NormalizedTriple:
    potential: AffinePotential
    p_circ: np.ndarray
    p_check: np.ndarray
    s0_measure: float
    beta: float
    map: AffineMap
    s0_interval: tuple
    s0_measure_x: float
    p_star: np.ndarray
    divisor_distance: float
    iterations: int


def _edge_h2(w: Potential, s: float) -> float:
    # u₂₂ restricted to the divisor edge ξ₁ = 0
    return float(w.jet(np.array([EDGE_EPS, s]), 2).hess[1, 1])


def _s0_interval(w: Potential, s_star: float):
    """Endpoints s₋ < s* < s₊ on the edge with ∫ √u₂₂ ds = 1 on each side."""
    g = lambda s: math.sqrt(max(_edge_h2(w, s), 0.0))

    def arc(s):
        return quad(g, min(s, s_star), max(s, s_star), epsabs=1e-13, epsrel=1e-12, limit=200)[0]

    out = []
    for sgn in (-1.0, 1.0):
        d = 1.0 / max(g(s_star), 1e-12)
        while arc(s_star + sgn * d) < 1.0:
            d *= 2.0
            if d > 1e12:
                raise BisectionFailed("arc length on the edge stays below 1", side=sgn)
        out.append(brentq(lambda t: arc(s_star + sgn * t) - 1.0, 0.0, d, xtol=1e-14, rtol=1e-14))
    return s_star - out[0], s_star + out[1]


def minimal_normalize_triple(u: Potential, p_circ, p_star=None, rays: int = 16,
                             target: float = S0_TARGET, l_max: float = 8.0) -> NormalizedTriple:
    """Normalize a half-plane potential around p∘ into a minimal-normalized triple.

    ``p_circ`` is the moment-map image of a point at unit divisor distance
    (the caller certifies it; the measured Kähler distance is recorded).  p*
    is the divisor point nearest to p∘, by default the exit point of the
    shortest ray of a geodesic fan (rays longer than ``l_max`` are dropped).
    |S₀| is measured in ξ₂ along the edge.
    """
    from .calabi import distance_to_boundary

    p_circ = np.asarray(p_circ, dtype=float)
    bd = distance_to_boundary(u, p_circ, rays=rays, l_max=l_max)
    if p_star is None:
        p_star = bd.exit_point
    p_star = np.asarray(p_star, dtype=float)
    g = u.jet(p_circ, 1).grad

    def h1(s):
        return u.value(np.array([0.0, s])) - g[1] * s

    # minimum of u − g·ξ on the edge ξ₁ = 0
    res = minimize_scalar(h1, bracket=(p_circ[1] - 1.0, p_circ[1] + 1.0), tol=1e-12)
    s_check = float(res.x)
    k = float(h1(s_check))

    def normalized(beta):
        A = np.diag([1.0, beta])
        m = AffineMap(A, -A @ np.array([0.0, s_check]), 1.0)
        slope = -np.linalg.solve(A.T, g)
        return AffinePotential(u, m, slope, -g[1] * s_check - k), m

    def measure(beta):
        w, m = normalized(beta)
        lo, hi = _s0_interval(w, m(p_star)[1])
        return hi - lo, (lo, hi), w, m

    a, b = (math.log(v) for v in BETA_RANGE)
    fa, fb = measure(math.exp(a))[0] - target, measure(math.exp(b))[0] - target
    if fa * fb > 0:
        raise BisectionFailed("|S0| does not bracket the target over the beta range", low=fa, high=fb)
    it = 0
    for it in range(1, BETA_MAX_ITER + 1):
        mid = 0.5 * (a + b)
        fm = measure(math.exp(mid))[0] - target
        if abs(fm) < S0_TOL:
            break
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    beta = math.exp(mid)
    size, interval, w, m = measure(beta)
    if abs(size - target) > 1e-4:
        raise BisectionFailed("bisection did not reach the target measure", measure=size, beta=beta)
    # the same set measured in the divisor coordinate x₂ = ∂₂u
    x_lo, x_hi = (float(w.jet(np.array([EDGE_EPS, s]), 1).grad[1]) for s in interval)
    return NormalizedTriple(w, m(p_circ), m(np.array([0.0, s_check])), float(size), float(beta), m,
                            (float(interval[0]), float(interval[1])), abs(x_hi - x_lo), m(p_star),
                            KAHLER_LENGTH * bd.distance, it)
