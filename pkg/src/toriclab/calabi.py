"""The Calabi (Hessian) metric G = D²f: connection, cubic form, curvature,
geodesics and distances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import LeftDomain, NoPathFound, ToricLabError
from .field import SplitPotential, fd_grad, jet
from .jets import Potential

# exit thresholds for the two kinds of boundary
EDGE_STEP = 0.05
EDGE_STOP = 1e-3
REGULAR_TOL = 1e-12


@dataclass
class MetricSample:
    point: np.ndarray
    G: np.ndarray
    Gi: np.ndarray
    Gamma: np.ndarray  # Gamma[k, i, j] = Γ^k_ij
    A: np.ndarray  # A[i, j, k] = −½ f_ijk
    R: np.ndarray  # R[i, j, k, l]
    Ric: np.ndarray  # Ric[i, k]


def christoffel(j) -> np.ndarray:
    return 0.5 * np.einsum("kl,ijl->kij", j.hess_inv, j.d3)


def metric_sample(p: Potential, point) -> MetricSample:
    j = jet(p, point, 3)
    Gi = j.hess_inv
    A = -0.5 * j.d3
    R = (np.einsum("mh,jkm,hil->ijkl", Gi, A, A) - np.einsum("mh,ikm,hjl->ijkl", Gi, A, A))
    Ric = np.einsum("ijkl,jl->ik", R, Gi)
    return MetricSample(j.point, j.hess, Gi, christoffel(j), A, R, Ric)


def curvature_from_christoffels(p: Potential, point, step: float = 1e-4) -> np.ndarray:
    """Riemann tensor from finite differences of the Christoffel symbols,
    returned in the index convention of :func:`metric_sample`."""
    x = np.asarray(point, dtype=float)
    j = jet(p, x, 3)
    Gam = christoffel(j)
    dGam = fd_grad(lambda y: christoffel(jet(p, y, 3)), x, step)  # dGam[c, e, d, b] = ∂_c Γ^e_db
    # R^e_{bcd} = ∂_c Γ^e_db − ∂_d Γ^e_cb + Γ^e_cf Γ^f_db − Γ^e_df Γ^f_cb
    Rup = (np.einsum("cedb->ebcd", dGam) - np.einsum("decb->ebcd", dGam)
           + np.einsum("ecf,fdb->ebcd", Gam, Gam) - np.einsum("edf,fcb->ebcd", Gam, Gam))
    # lowering the first index reproduces the Fubini–Pick R_ijkl index for index
    return np.einsum("ae,ebcd->abcd", j.hess, Rup)


@dataclass
class GeodesicPath:
    s: np.ndarray
    points: np.ndarray
    velocities: np.ndarray

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def speed_deviation(self, p: Potential) -> float:
        dev = 0.0
        for x, v in zip(self.points, self.velocities):
            G = p.jet(x, 2).hess
            dev = max(dev, abs(math.sqrt(v @ G @ v) - 1.0))
        return dev

    def to_csv(self, path) -> None:
        rows = ["s,x1,x2,v1,v2"]
        for s, x, v in zip(self.s, self.points, self.velocities):
            rows.append(f"{s:.17g},{x[0]:.17g},{x[1]:.17g},{v[0]:.17g},{v[1]:.17g}")
        Path(path).write_text("\n".join(rows) + "\n")


def default_step(p: Potential) -> float:
    if isinstance(p, SplitPotential) and p.psi is not None:
        return min(p.psi.grid.h / 2, 1e-2)
    return 1e-2


def _accel(p, x, v, j=None):
    if j is None:
        j = p.jet(x, 3)
    if not j.convex:
        raise LeftDomain("metric degenerate along geodesic", point=x)
    # Γ^k_ij v^i v^j = ½ G^{kl} f_ijl v^i v^j
    return -0.5 * j.hess_inv @ ((j.d3 @ v) @ v), j


def _unit(p, x, v, j=None):
    G = (j if j is not None else p.jet(x, 2)).hess
    n2 = float(v @ G @ v)
    if not n2 > 0:
        raise ValueError("direction must be nonzero")
    return v / math.sqrt(n2)


def _rk4(p, x, v, t, j=None):
    a1, _ = _accel(p, x, v, j)
    x2, v2 = x + 0.5 * t * v, v + 0.5 * t * a1
    a2, _ = _accel(p, x2, v2)
    x3, v3 = x + 0.5 * t * v2, v + 0.5 * t * a2
    a3, _ = _accel(p, x3, v3)
    x4, v4 = x + t * v3, v + t * a3
    a4, _ = _accel(p, x4, v4)
    xn = x + t / 6 * (v + 2 * v2 + 2 * v3 + v4)
    vn = v + t / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
    return xn, vn


def _try_step(p, x, v, t, j=None):
    """RK4 step; returns (x, v, jet at x) or None when the step leaves the domain."""
    try:
        xn, vn = _rk4(p, x, v, t, j)
        if not p.domain.contains(xn):
            return None
        jn = p.jet(xn, 3)
        return xn, _unit(p, xn, vn, jn), jn
    except (ToricLabError, ValueError, FloatingPointError, np.linalg.LinAlgError):
        return None


def geodesic_shoot(p: Potential, start, direction, length: float, step: float | None = None) -> GeodesicPath:
    """Unit-speed RK4 integration of ẍ + Γ(ẋ, ẋ) = 0 over arclength ``length``."""
    step = step or default_step(p)
    x = np.asarray(start, dtype=float)
    v = _unit(p, x, np.asarray(direction, dtype=float))
    n = max(1, int(math.ceil(length / step - 1e-12)))
    t = length / n
    S, X, V = [0.0], [x], [v]
    j = None
    for k in range(n):
        nxt = _try_step(p, x, v, t, j)
        if nxt is None:
            raise LeftDomain("geodesic left the domain", arclength=k * t, point=x,
                             path=GeodesicPath(np.array(S), np.array(X), np.array(V)))
        x, v, j = nxt
        S.append((k + 1) * t)
        X.append(x)
        V.append(v)
    return GeodesicPath(np.array(S), np.array(X), np.array(V))


@dataclass
class ExitResult:
    length: float
    point: np.ndarray
    constraint: int
    exited: bool


def edge_sigma(p, x, j=None) -> np.ndarray:
    """σ_k = 2 g_k / |dg_k|_G for each singular defining function (∞ for regular ones).

    For a potential behaving like g log g near the edge, σ_k is the metric
    distance to the edge along the normal; it is invariant under affine maps.
    """
    dom = p.domain
    sing = dom.singular
    out = np.full(sing.shape, np.inf)
    if not sing.any():
        return out
    g = dom.constraints(x)
    dg = dom.constraint_grads(x)
    Gi = (j if j is not None else p.jet(x, 2)).hess_inv
    for k in np.flatnonzero(sing):
        out[k] = 2.0 * max(g[k], 0.0) / math.sqrt(float(dg[k] @ Gi @ dg[k]))
    return out


def exit_length(p: Potential, start, direction, step: float | None = None, l_max: float = 50.0,
                eta: float = EDGE_STEP, stop: float = EDGE_STOP) -> ExitResult:
    """Arclength at which the geodesic from ``start`` reaches the domain boundary.

    Near a singular edge the step is capped at ``eta`` times the edge distance
    estimate σ, integration stops once σ falls below ``stop`` times its initial
    value, and the remainder is σ divided by its observed decay rate.
    """
    step = step or default_step(p)
    x = np.asarray(start, dtype=float)
    v = _unit(p, x, np.asarray(direction, dtype=float))
    dom = p.domain
    sig0 = float(np.min(edge_sigma(p, x), initial=np.inf))
    s = 0.0
    prev = None
    j = p.jet(x, 3)
    while s < l_max:
        sig = edge_sigma(p, x, j)
        k = int(np.argmin(sig)) if sig.size else -1
        smin = float(sig[k]) if sig.size else np.inf
        if np.isfinite(smin) and smin < stop * sig0:
            rate = (prev - smin) / last_t if prev is not None else 1.0
            rate = min(max(rate, 0.2), 1.0)
            return ExitResult(s + smin / rate, x, k, True)
        t = min(step, eta * smin, l_max - s)
        nxt = _try_step(p, x, v, t, j)
        if nxt is None:
            if _crosses_regular(p, x, v, t):
                tt = _bisect_regular(p, x, v, t)
                xe, _ = _rk4(p, x, v, tt)
                kk = int(np.argmin(dom.constraints(xe)))
                return ExitResult(s + tt, xe, kk, True)
            raise LeftDomain("geodesic integration failed before reaching the boundary", point=x, arclength=s)
        x, v, j = nxt
        s += t
        prev, last_t = smin, t
    return ExitResult(math.inf, x, -1, False)


def _crosses_regular(p, x, v, t) -> bool:
    sing = p.domain.singular
    if not sing.size or np.all(sing):
        return False
    try:
        xn, _ = _rk4(p, x, v, t)
    except (ToricLabError, ValueError, FloatingPointError):
        return False
    g = p.domain.constraints(xn)
    return bool(np.any((~sing) & (g <= 0)) and np.all(g[sing] > 0))


def _bisect_regular(p, x, v, t) -> float:
    sing = p.domain.singular
    lo, hi = 0.0, t
    while hi - lo > REGULAR_TOL:
        mid = 0.5 * (lo + hi)
        try:
            xm, _ = _rk4(p, x, v, mid)
            ok = np.all(p.domain.constraints(xm)[~sing] > 0)
        except (ToricLabError, ValueError):
            ok = False
        if ok:
            lo = mid
        else:
            hi = mid
    return lo


def _frame(p, a):
    G = p.jet(a, 2).hess
    L = np.linalg.cholesky(G)
    return np.linalg.inv(L).T  # columns are G-orthonormal


@dataclass
class BoundaryDistance:
    distance: float
    direction: np.ndarray
    exit_point: np.ndarray
    rays: int
    refined: bool
    finite: bool
    fan: np.ndarray


def distance_to_boundary(p: Potential, a, rays: int = 64, step: float | None = None, l_max: float = 50.0,
                         refine: bool = True) -> BoundaryDistance:
    """Lower envelope of exit lengths over a direction fan, refined by a 1-D search."""
    a = np.asarray(a, dtype=float)
    B = _frame(p, a)
    thetas = 2 * np.pi * np.arange(rays) / rays

    def length(th):
        return exit_length(p, a, B @ np.array([math.cos(th), math.sin(th)]), step, l_max).length

    fan = np.array([length(th) for th in thetas])
    k = int(np.argmin(fan))
    best_th, best = thetas[k], fan[k]
    if not np.isfinite(best):
        return BoundaryDistance(math.inf, B[:, 0], a, rays, False, False, fan)
    if refine:
        d = 2 * np.pi / rays
        res = minimize_scalar(length, bounds=(best_th - d, best_th + d), method="bounded",
                              options={"xatol": 1e-6, "maxiter": 60})
        if res.fun < best:
            best_th, best = float(res.x), float(res.fun)
    direction = B @ np.array([math.cos(best_th), math.sin(best_th)])
    ex = exit_length(p, a, direction, step, l_max)
    return BoundaryDistance(float(best), direction, ex.point, rays, refine, True, fan)


def _endpoint(p, a, V, step):
    G = p.jet(a, 2).hess
    L = math.sqrt(float(V @ G @ V))
    if L == 0:
        return np.asarray(a, dtype=float)
    return geodesic_shoot(p, a, V, L, step).end


def distance(p: Potential, a, b, step: float | None = None, tol: float = 1e-10, max_iter: int = 40) -> float:
    """Geodesic distance by Newton shooting on the exponential map exp_a(V) = b."""
    return shoot_to(p, a, b, step, tol, max_iter)[0]


def _chord_newton(p, a, b, V, step, jac_step, tol, max_iter, J=None):
    """Solve exp_a(V) = b at integration step ``step``; returns (V or None, Jacobian).

    The Jacobian comes from ``jac_step``, is corrected by Broyden updates after
    every accepted step and is recomputed only when the residual stops contracting.
    """
    E = _endpoint(p, a, V, step)
    prev = math.inf
    for _ in range(max_iter):
        r = E - b
        nr = float(np.linalg.norm(r))
        if nr < tol:
            return V, J
        if J is None or nr > 0.25 * prev:
            h = 1e-6 * max(float(np.linalg.norm(V)), 1e-3)
            J = np.empty((2, 2))
            for k in range(2):
                e = np.zeros(2)
                e[k] = h
                J[:, k] = (_endpoint(p, a, V + e, jac_step) - _endpoint(p, a, V - e, jac_step)) / (2 * h)
        dV = np.linalg.solve(J, r)
        t = 1.0
        while t > 1e-6:
            try:
                En = _endpoint(p, a, V - t * dV, step)
                if np.linalg.norm(En - b) < nr:
                    break
            except LeftDomain:
                pass
            t *= 0.5
        else:
            return None, J
        step_V = -t * dV
        # Broyden: make J reproduce the observed change of the endpoint
        J = J + np.outer(En - E - J @ step_V, step_V) / float(step_V @ step_V)
        V = V + step_V
        E = En
        prev = nr
    return None, J


def shoot_to(p: Potential, a, b, step=None, tol=1e-10, max_iter=40):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    step = step or default_step(p)
    V = b - a
    if not np.any(V):
        return 0.0, V
    scale = max(1.0, float(np.linalg.norm(b)))
    coarse = max(step, min(16 * step, 0.05))
    try:
        # converge on a coarse integration first, then polish at the requested step
        J = None
        if coarse > step:
            Vc, J = _chord_newton(p, a, b, V, coarse, coarse, 1e-7 * scale, max_iter)
            if Vc is not None:
                V = Vc
            else:
                J = None
        V, _ = _chord_newton(p, a, b, V, step, coarse, tol * scale, max_iter, J)
    except (LeftDomain, np.linalg.LinAlgError) as exc:
        raise NoPathFound("shooting failed to connect the points", a=a, b=b, reason=str(exc)) from None
    if V is None:
        raise NoPathFound("shooting did not converge", a=a, b=b)
    G = p.jet(a, 2).hess
    return math.sqrt(float(V @ G @ V)), V


def sample_geodesic_ball(p: Potential, center, radius: float, rays: int = 16, radii: int = 6,
                         step: float | None = None) -> np.ndarray:
    """Points exp_c(r θ) for r on a radial grid in (0, radius] and θ on a fan (plus the centre).

    Each radius is reached exactly by a final partial step from the preceding
    node, so the sample transforms with the potential under affine maps.
    """
    c = np.asarray(center, dtype=float)
    B = _frame(p, c)
    pts = [c]
    for th in 2 * np.pi * np.arange(rays) / rays:
        d = B @ np.array([math.cos(th), math.sin(th)])
        try:
            path = geodesic_shoot(p, c, d, radius, step)
        except LeftDomain as exc:
            path = exc.detail["path"]
        for r in np.linspace(radius / radii, radius, radii):
            k = int(np.searchsorted(path.s, r - 1e-12))
            if k >= len(path.s):
                continue
            dt = r - path.s[k - 1]
            nxt = _try_step(p, path.points[k - 1], path.velocities[k - 1], dt)
            pts.append(nxt[0] if nxt is not None else path.points[k])
    return np.array(pts)
