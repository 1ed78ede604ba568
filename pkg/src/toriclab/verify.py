"""Numerical checks of differential inequalities and monitors of scale-invariant quantities.

A check evaluates LHS − RHS at sample points and compares it with a noise
estimate obtained by repeating every finite difference at twice the step.
Statements whose constants are only shown to exist are run as monitors:
they report the dimensionless quantity and never pass or fail.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .abreu import abreu_S_u
from .affine import EDGE_EPS, KAHLER_LENGTH
from .calabi import GeodesicPath, distance_to_boundary, exit_length, _frame, sample_geodesic_ball
from .errors import InsufficientResolution, NotConvexHere, PreconditionViolated, ToricLabError
from .field import SplitPotential, erode, fd_grad, jet, laplace_beltrami
from .invariants import (CHART, EUCLIDEAN_Z, complex_W, grad_V, grad_log_S_norm2, log_det_grad,
                         metric_grad_norm2, p_quantity, phi, psi, q_quantity, ricci_norm_K, ricci_real,
                         scalar_curvature_f, theta, trace_T, z_norm2)
from .jets import Potential
from .legendre import DualPotential

DEGENERATE = 1e-10
DEFAULT_TOL = 1e-6
DEFAULT_STEP = 1e-3
N = 2
BERNSTEIN_MIN_POINTS = 12


@dataclass
class CheckReport:
    id: str
    points: int
    min_margin: float
    violations: int
    skipped: int
    noise: float
    verdict: str  # pass | fail | vacuous | monitor
    tolerance: float = DEFAULT_TOL
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sample: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self, values_ref: str | None = None) -> dict:
        d = {"id": self.id, "points": self.points, "min_margin": _num(self.min_margin),
             "violations": self.violations, "skipped": self.skipped, "noise": _num(self.noise),
             "verdict": self.verdict, "tolerance": self.tolerance,
             "extra": json.loads(json.dumps(self.extra, default=_num))}
        if values_ref is not None:
            d["values"] = values_ref
        return d

    def to_json(self, values_ref: str | None = None) -> str:
        return json.dumps(self.to_dict(values_ref), sort_keys=True, indent=2)

    def write_values(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "xi1", "xi2", "value"])
            for k, (p, v) in enumerate(zip(self.sample, self.values)):
                w.writerow([k, f"{p[0]:.17g}", f"{p[1]:.17g}", f"{v:.17g}"])

    def line(self) -> str:
        return (f"{self.id}: {self.verdict} (points={self.points}, skipped={self.skipped}, "
                f"min_margin={self.min_margin:.3e}, noise={self.noise:.1e})")


def _num(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, np.ndarray):
        return [_num(x) for x in v.tolist()]
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _margin_report(cid, pts, margins, noises, skipped, tol, extra=None, verdict=None) -> CheckReport:
    margins = np.asarray(margins, dtype=float)
    noises = np.asarray(noises, dtype=float)
    n_eval = len(margins)
    if n_eval == 0:
        return CheckReport(cid, len(pts), math.nan, 0, skipped, 0.0, "vacuous", tol,
                           np.zeros(0), np.asarray(pts).reshape(-1, 2), extra or {})
    viol = int(np.sum(margins < -(noises + tol)))
    v = verdict or ("pass" if viol == 0 else "fail")
    return CheckReport(cid, len(pts), float(margins.min()), viol, skipped, float(noises.max()), v, tol,
                       margins, np.asarray(extra.pop("_kept") if extra and "_kept" in extra else pts).reshape(-1, 2),
                       extra or {})


def _monitor_report(cid, pts, values, skipped=0, extra=None) -> CheckReport:
    values = np.asarray(values, dtype=float)
    sup = float(values.max()) if len(values) else math.nan
    ex = {"sup": sup}
    ex.update(extra or {})
    verdict = "monitor" if len(values) else "vacuous"
    return CheckReport(cid, len(pts), math.nan, 0, skipped, float(ex.get("noise", 0.0)), verdict,
                       math.nan, values, np.asarray(pts).reshape(-1, 2), ex)


def _S_of(p: Potential, x, side: str) -> float:
    if side == "u":
        return abreu_S_u(p, x)
    return scalar_curvature_f(jet(p, x, 4))


# -- real-side theorem -------------------------------------------------------------------


def check_phi_inequality(f: Potential, points, eps_S: float = 1e-3, step: float = DEFAULT_STEP,
                         tol: float = DEFAULT_TOL, side: str = "f") -> CheckReport:
    """ΔΦ ≥ ‖∇Φ‖²/Φ + 7Φ² for n = 2 on the Calabi metric of ``f`` (the ⟨∇Φ, ∇log ρ⟩ term has coefficient 0).

    ``side = "u"`` evaluates the same inequality on a symplectic potential,
    whose Calabi metric is isometric to that of its Legendre dual.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    S = np.array([_S_of(f, x, side) for x in pts])
    if np.any(np.abs(S) >= eps_S):
        raise PreconditionViolated("scalar curvature is not small enough for the theorem",
                                   max_abs_S=float(np.abs(S).max()), eps_S=eps_S)
    c_grad = N / (2 * (N - 1))
    c_phi2 = (N + 2) ** 2 / 2 * (1 / (N - 1) - (N - 1) / (4 * N))
    Ph = lambda y: phi(f, y)
    margins, noises, kept, skipped = [], [], [], 0
    for x in pts:
        F = Ph(x)
        if F <= DEGENERATE:
            skipped += 1
            continue
        lhs = laplace_beltrami(f, Ph, x, 0.5, step)
        lhs2 = laplace_beltrami(f, Ph, x, 0.5, 2 * step)
        g2, gn = metric_grad_norm2(f, Ph, x, step)
        rhs = c_grad * g2 / F + c_phi2 * F * F
        margins.append(lhs - rhs)
        noises.append(abs(lhs - lhs2) + c_grad * gn / F)
        kept.append(x)
    return _margin_report("phi_inequality", pts, margins, noises, skipped, tol,
                          {"max_abs_S": float(np.abs(S).max()), "_kept": np.array(kept)})


def check_tchebychev_bound(u: Potential, path: GeodesicPath, N_: float) -> CheckReport:
    """|d log T/ds| ≤ 2n²N and |d log det(u_ij)/ds| ≤ (n+2)N along a curve with Θ ≤ N²."""
    th = np.array([theta(u, x) for x in path.points])
    if th.max() > N_ * N_ * (1 + 1e-12):
        raise PreconditionViolated("Θ exceeds N² along the path", max_theta=float(th.max()), N=N_)
    bT, bD = 2 * N * N * N_, (N + 2) * N_
    margins, dT, dD = [], [], []
    for x, v in zip(path.points, path.velocities):
        j = jet(u, x, 3)
        v = v / math.sqrt(float(v @ j.hess @ v))
        T = float(np.trace(j.hess))
        a = float(np.einsum("iij,j->", j.d3, v)) / T
        b = float(log_det_grad(j) @ v)
        dT.append(a)
        dD.append(b)
        margins.append(min(bT - abs(a), bD - abs(b)))
    noise = np.full(len(margins), 1e-12 * max(bT, 1.0))
    return _margin_report("tchebychev_bound", path.points, margins, noise, 0, 0.0,
                          {"max_theta": float(th.max()), "max_dlogT": float(np.max(np.abs(dT))),
                           "max_dlogdet": float(np.max(np.abs(dD))), "bound_T": bT, "bound_det": bD})


# -- complex-side inequalities ------------------------------------------------------------


def box(f: Potential, s, x, step: float = DEFAULT_STEP) -> float:
    """□s = f^{ij}∂_i∂_j s, the Kähler Laplacian on torus-invariant functions."""
    return laplace_beltrami(f, s, x, 1.0, step)


def _hess_V_norm2(j) -> float:
    # D²V = −r in every chart; ‖V_{,ij̄}‖²_f = tr((F⁻¹D²V)²)
    M = j.hess_inv @ ricci_real(j)
    return float(np.sum(M * M.T))


def check_inequality_I(f: Potential, points, kappa: float = 1.0 / 8.0, alpha: float = 1.0 / 3.0,
                       chart: str = "torus", step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL) -> CheckReport:
    """□P/P ≥ ‖V_{,ij̄}‖²/(2Ψ) + α²κ(1−2κW^α)W^αΨ − 2|⟨∇S,∇V⟩|/Ψ − (ακW^α + ½)S."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    P = lambda y: p_quantity(f, y, kappa, alpha, chart)
    Sf = lambda y: scalar_curvature_f(jet(f, y, 4))
    margins, noises, kept, skipped = [], [], [], 0
    kw_max = 0.0
    for x in pts:
        j = jet(f, x, 4)
        Ps = psi(f, j, chart)
        if Ps <= DEGENERATE:
            skipped += 1
            continue
        W = complex_W(f, j, chart)
        Wa = W ** alpha
        kw_max = max(kw_max, kappa * Wa)
        Pv = P(x)
        lhs = box(f, P, x, step) / Pv
        lhs2 = box(f, P, x, 2 * step) / Pv
        S = scalar_curvature_f(j)
        gV = grad_V(j, chart)
        cross = [abs(float(fd_grad(Sf, x, h) @ j.hess_inv @ gV)) for h in (step, 2 * step)]
        rhs = (_hess_V_norm2(j) / (2 * Ps) + alpha ** 2 * kappa * (1 - 2 * kappa * Wa) * Wa * Ps
               - 2 * cross[0] / Ps - (alpha * kappa * Wa + 0.5) * S)
        margins.append(lhs - rhs)
        noises.append(abs(lhs - lhs2) + 2 * abs(cross[0] - cross[1]) / Ps)
        kept.append(x)
    # outside κW^α ≤ ½ the inequality is not the one the estimates use
    verdict = "monitor" if kw_max > 0.5 else None
    return _margin_report("inequality_I", pts, margins, noises, skipped, tol,
                          {"max_kappa_W_alpha": kw_max, "chart": chart, "_kept": np.array(kept)}, verdict)


def reference_curvature(g: Potential, x) -> float:
    """Ṙ, the full norm of the curvature tensor of ω_g (chart factors cancel)."""
    j = jet(g, x, 4)
    Gi = j.hess_inv
    rho_t = -j.d4 + np.einsum("pq,ikq,pjl->ijkl", Gi, j.d3, j.d3)
    val = np.einsum("mlit,knsj,mn,kl,ij,st->", rho_t, rho_t, Gi, Gi, Gi, Gi)
    return math.sqrt(max(float(val), 0.0))


def ricci_norm(j) -> float:
    """‖Ric‖_f = (tr (F⁻¹r)²)^{1/2}."""
    return math.sqrt(max(_hess_V_norm2(j), 0.0))


def check_inequality_II(f: Potential, g: Potential, points, step: float = DEFAULT_STEP,
                        tol: float = DEFAULT_TOL) -> CheckReport:
    """□ log(n − □φ) ≥ −‖Ric‖_f − Ṙ(n − □φ) with n − □φ = tr(F⁻¹ D²g)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    logT = lambda y: math.log(trace_T(f, y, g))
    margins, noises = [], []
    for x in pts:
        j = jet(f, x, 4)
        T = trace_T(f, j, g)
        lhs = box(f, logT, x, step)
        lhs2 = box(f, logT, x, 2 * step)
        rhs = -ricci_norm(j) - reference_curvature(g, x) * T
        margins.append(lhs - rhs)
        noises.append(abs(lhs - lhs2))
    return _margin_report("inequality_II", pts, margins, noises, 0, tol)


def inequality_III_parameters(N2: float) -> dict:
    return {"A": N2 * N2 + 1.0, "N1": 100.0, "alpha": 1.0 / 3.0, "kappa": 1.0 / (4.0 * N2 ** (1.0 / 3.0))}


def check_inequality_III(f: Potential, points, N2: float, C7_sweep=(0.0, 1.0, 10.0, 100.0, 1000.0),
                         chart: str = "z", step: float = DEFAULT_STEP) -> CheckReport:
    """Monitor of □(P + Q + C₇f)/(P + Q)² under the parameter choice A = N₂²+1, N₁ = 100, α = ⅓, κ = (4N₂^{1/3})⁻¹."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    prm = inequality_III_parameters(N2)
    hyp = {"max_K_term": 0.0, "max_W": 0.0, "max_z": 0.0}
    Sf = lambda y: scalar_curvature_f(jet(f, y, 4))
    for x in pts:
        j = jet(f, x, 4)
        dK = np.abs(j.hess_inv @ fd_grad(Sf, x, step))  # ∂K/∂ξ = F⁻¹∇ₓS
        hyp["max_K_term"] = max(hyp["max_K_term"], abs(scalar_curvature_f(j)) + float(dK.sum()))
        hyp["max_W"] = max(hyp["max_W"], complex_W(f, j, chart))
        hyp["max_z"] = max(hyp["max_z"], math.sqrt(z_norm2(x)))
    if max(hyp.values()) > N2:
        raise PreconditionViolated("hypothesis of the lemma fails on the sample", N2=N2, **hyp)
    P = lambda y: p_quantity(f, y, prm["kappa"], prm["alpha"], chart)
    Q = lambda y: q_quantity(f, y, prm["N1"], prm["A"], chart)
    base, noise, denom, kept, skipped = [], [], [], [], 0
    for x in pts:
        pq = P(x) + Q(x)
        if pq * pq <= DEGENERATE ** 2:
            skipped += 1
            continue
        PQ = lambda y: P(y) + Q(y)
        b1, b2 = box(f, PQ, x, step), box(f, PQ, x, 2 * step)
        base.append(b1)
        noise.append(abs(b1 - b2))
        denom.append(pq * pq)
        kept.append(x)
    base, denom = np.array(base), np.array(denom)
    ratios = {}
    chosen = None
    for C7 in C7_sweep:
        r = (base + N * C7) / denom if len(base) else np.zeros(0)  # □f = n
        ratios[str(C7)] = float(r.min()) if len(r) else math.nan
        if chosen is None and len(r) and r.min() > 0:
            chosen = C7
    values = (base + N * (chosen or 0.0)) / denom if len(base) else np.zeros(0)
    extra = {"parameters": prm, "hypotheses": hyp, "min_ratio_by_C7": ratios, "C7": chosen,
             "noise": float(max(noise)) if noise else 0.0}
    rep = _monitor_report("inequality_III", np.array(kept).reshape(-1, 2), values, skipped, extra)
    rep.points = len(pts)
    return rep


# -- interior estimates -------------------------------------------------------------------


def _ball(p: Potential, center, radius, rays, radii):
    return sample_geodesic_ball(p, center, radius, rays=rays, radii=radii)


def check_interior_psi(f: Potential, o, a: float, chart: str = "torus", rays: int = 8, radii: int = 3,
                       step: float = DEFAULT_STEP) -> CheckReport:
    """Monitor of sup_{B_{a/2}} W^½Ψ against max_{B_a}(|S| + ‖∇S‖^{2/3}) + a⁻¹ + a⁻²."""
    inner = _ball(f, o, a / 2, rays, radii)
    outer = _ball(f, o, a, rays, radii)
    num = np.array([math.sqrt(complex_W(f, x, chart)) * psi(f, x, chart) for x in inner])
    Sf = lambda y: scalar_curvature_f(jet(f, y, 4))
    br = []
    maxW = 0.0
    for x in outer:
        j = jet(f, x, 4)
        gS = fd_grad(Sf, x, step)
        br.append(abs(scalar_curvature_f(j)) + float(gS @ j.hess_inv @ gS) ** (1.0 / 3.0))
        maxW = max(maxW, complex_W(f, j, chart))
    bracket = max(br) + 1.0 / a + 1.0 / a ** 2
    extra = {"numerator": float(num.max()), "bracket": bracket, "max_W": maxW, "a": a}
    return _monitor_report("interior_psi", inner, num / bracket, 0, extra)


def check_gradient_estimate(f: Potential, p0, a: float, rays: int = 16, radii: int = 8,
                            with_K: bool = False) -> CheckReport:
    """Monitor of sup_{B_{a/2}(p₀)} ‖∇f‖²_f/(1 + f)² for f normalized by f(p₀) = inf f = 0."""
    p0 = np.asarray(p0, dtype=float)
    j0 = jet(f, p0, 2)
    if abs(j0.value) > 1e-10 or np.linalg.norm(j0.grad) > 1e-8:
        raise PreconditionViolated("f must vanish at its minimum point p0", value=j0.value,
                                   gradient=j0.grad)
    pts = _ball(f, p0, a / 2, rays, radii)
    vals = []
    for x in pts:
        j = jet(f, x, 2)
        vals.append(float(j.grad @ j.hess_inv @ j.grad) / (1.0 + j.value) ** 2)
    extra = {"a": a}
    if with_K:
        outer = _ball(f, p0, a, 4, 2)
        extra["max_K"] = max(ricci_norm_K(f, x, strict=False).K for x in outer)
    return _monitor_report("gradient_estimate", pts, vals, 0, extra)


# -- boundary-distance monitors -------------------------------------------------------------


def monitor_theta_d2(u: Potential, points, rays: int = 16, with_K: bool = True, delta: float | None = None,
                     f: Potential | None = None) -> CheckReport:
    """Θ·d²_u(p, ∂Ω), and optionally 𝒦·d² and ‖∇log S‖²·d² (the latter where |S| ≥ δ)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    f = f or DualPotential(u)
    td, kd, sd, dist = [], [], [], []
    for p in pts:
        bd = distance_to_boundary(u, p, rays=rays)
        d2 = bd.distance ** 2
        dist.append(bd.distance)
        td.append(theta(u, p) * d2)
        x = jet(u, p, 1).grad
        if with_K:
            kd.append(ricci_norm_K(f, x).K * d2)
        if delta is not None:
            S = abreu_S_u(u, p)
            if abs(S) >= delta:
                sd.append(metric_grad_norm2(u, lambda y: math.log(abs(abreu_S_u(u, y))), p)[0] * d2)
    extra = {"rays": rays, "distances": dist}
    if with_K:
        extra["K_d2"] = kd
        extra["sup_K_d2"] = float(max(kd))
    if delta is not None:
        extra["gradlogS_d2"] = sd
        extra["sup_gradlogS_d2"] = float(max(sd)) if sd else math.nan
    return _monitor_report("theta_d2", pts, td, 0, extra)


def edge_W(u: Potential, xi, chart: str = "mixed") -> float:
    """W of the Legendre dual evaluated from u-jets, W = c·e^{−w·∇u}/det D²u."""
    c = CHART[chart]
    j = jet(u, xi, 2)
    return float(c["scale"] * math.exp(-np.dot(c["weights"], j.grad)) / j.det)


def monitor_theorem7(u: Potential, center, a: float, delta: float, N5: float, rays: int = 16,
                     radii: int = 3, edge_samples: int = 41, with_K: bool = True) -> CheckReport:
    """(min_{B_a∩Z} W / max_{B_a} W)·(𝒦 + ‖∇log|S|‖²)·a² over B_{a/2}, for a potential on {ξ₁ > 0}.

    ``a`` is a Kähler radius; on the real slice it corresponds to Calabi radius a/KAHLER_LENGTH.
    """
    c = np.asarray(center, dtype=float)
    R = a / KAHLER_LENGTH
    inner = _ball(u, c, R / 2, rays, radii)
    outer = _ball(u, c, R, rays, radii)
    # divisor points within the ball: exit points of fan rays shorter than R
    B = _frame(u, c)
    hits = []
    for th in 2 * np.pi * np.arange(4 * rays) / (4 * rays):
        ex = exit_length(u, c, B @ np.array([math.cos(th), math.sin(th)]), l_max=R)
        if np.isfinite(ex.length) and ex.length <= R:
            hits.append(ex.point[1])
    if not hits:
        raise PreconditionViolated("the geodesic ball does not reach the divisor", center=c, a=a)
    s = np.linspace(min(hits), max(hits), edge_samples)
    on_Z = [np.array([EDGE_EPS, t]) for t in s]
    minWZ = min(edge_W(u, q) for q in on_Z)
    maxW = max(edge_W(u, q) for q in outer)
    h22 = min(jet(u, q, 2).hess[1, 1] for q in on_Z)
    S = np.array([abreu_S_u(u, q) for q in outer])
    if np.abs(S).min() < delta:
        raise PreconditionViolated("|S| falls below delta on the ball", min_abs_S=float(np.abs(S).min()),
                                   delta=delta)
    if h22 < 1.0 / N5:
        raise PreconditionViolated("h22 on the edge is below 1/N5", h22=h22, N5=N5)
    f = DualPotential(u)
    vals, Ks, Gs = [], [], []
    for p in inner:
        K = ricci_norm_K(f, jet(u, p, 1).grad).K if with_K else 0.0
        g2 = metric_grad_norm2(u, lambda y: math.log(abs(abreu_S_u(u, y))), p)[0]
        Ks.append(K)
        Gs.append(g2)
        vals.append(minWZ / maxW * (K + g2) * a * a)
    extra = {"a": a, "min_W_divisor": minWZ, "max_W_ball": maxW, "min_h22": h22,
             "min_abs_S": float(np.abs(S).min()), "edge_interval": [float(s[0]), float(s[-1])],
             "K": Ks, "gradlogS": Gs}
    return _monitor_report("theorem7", inner, vals, 0, extra)


# -- Bernstein at desk scale --------------------------------------------------------------


def best_quadratic_fit(xi, vals):
    """Least-squares quadratic q(ξ) = c + b·ξ + ½ξᵀHξ; returns (H, b, c)."""
    x1, x2 = xi[:, 0], xi[:, 1]
    M = np.stack([np.ones_like(x1), x1, x2, 0.5 * x1 * x1, x1 * x2, 0.5 * x2 * x2], axis=1)
    coef, *_ = np.linalg.lstsq(M, vals, rcond=None)
    H = np.array([[coef[3], coef[4]], [coef[4], coef[5]]])
    return H, coef[1:3], coef[0], M @ coef


def check_bernstein(u: Potential, points=None, tol: float = 1e-3) -> CheckReport:
    """Deviation of u from its best quadratic fit; a K ≡ 0 solution should be a paraboloid."""
    if points is None:
        if not isinstance(u, SplitPotential) or u.psi is None:
            raise ValueError("sample points are required for a potential without a grid")
        g = u.psi.grid
        act = erode(g.inside, 2)
        X1, X2 = g.mesh()
        pts = np.stack([X1[act], X2[act]], axis=1)
        vals = np.array([u.analytic.value(p) for p in pts]) + u.psi.values[act]
    else:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        vals = np.array([u.value(p) for p in pts])
    if len(pts) < BERNSTEIN_MIN_POINTS:
        # a quadratic has six coefficients; too few samples make the fit exact
        raise InsufficientResolution("too few points for a meaningful quadratic fit", points=len(pts),
                                     required=BERNSTEIN_MIN_POINTS)
    H, b, c, fit = best_quadratic_fit(pts, vals)
    ev = np.linalg.eigvalsh(H)
    if ev.min() <= 0:
        raise NotConvexHere("best quadratic fit is not convex", eigenvalues=ev)
    dev = np.abs(vals - fit)
    d = float(dev.max())
    rep = _margin_report("bernstein", pts, [tol - d], [0.0], 0, 0.0,
                         {"deviation": d, "hessian": H.tolist(), "gradient": b.tolist(), "constant": float(c)})
    rep.points = len(pts)
    return rep


CHECKS = {
    "phi_inequality": check_phi_inequality,
    "tchebychev_bound": check_tchebychev_bound,
    "inequality_I": check_inequality_I,
    "inequality_II": check_inequality_II,
    "inequality_III": check_inequality_III,
    "interior_psi": check_interior_psi,
    "gradient_estimate": check_gradient_estimate,
    "theta_d2": monitor_theta_d2,
    "theorem7": monitor_theorem7,
    "bernstein": check_bernstein,
}
