"""Pointwise affine and complex invariants of a convex potential.

Real-side quantities (ρ, Φ, J, Θ) are defined for any strictly convex
function.  Complex-side quantities (W, V, Ψ, P, T, Q, 𝒦) read the potential
as a Kähler potential f(x) of a torus-invariant metric in log-affine
coordinates; their normalization depends on the holomorphic chart, recorded
in :data:`CHART`.

Norm conventions.  For torus-invariant data the Kähler metric in a chart is
g_{i j̄} = c_i c_j f_{ij} for per-coordinate factors c (½ for w = log z²,
e^{−x/2} for z).  Complex gradients of invariant functions carry the same
factors, so every full contraction collapses to contraction with f^{ij} in x:
Ψ = f^{ij} V_i V_j, ‖∇φ‖²_f = f^{ij} φ_i φ_j and □ = f^{ij} ∂_i ∂_j.  The
symbolic oracle in the tests checks the resulting Ψ/Φ = 16.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientResolution
from .field import fd_grad, fd_hess, jet
from .jets import JetSample, Potential, SymbolicPotential
from .legendre import DualPotential, dual_jet

N_DIM = 2
DEGENERATE = 1e-14

# W = scale · det(f_ij) · exp(−weights·x) for each chart
CHART = {
    "torus": {"scale": 1.0 / 16.0, "weights": (0.0, 0.0)},  # (w1, w2), w = log z²
    "mixed": {"scale": 1.0 / 4.0, "weights": (1.0, 0.0)},  # (z1, w2), the chart near {ξ1 = 0}
    "z": {"scale": 1.0, "weights": (1.0, 1.0)},  # (z1, z2), the chart near a vertex
}
# Ψ/Φ on the torus chart: c★·(n+2)² with c★ = 1 in the convention above
PSI_PHI_RATIO = 16.0

# Ricci-derivative finite differences: step in metric units, scaled by the curvature radius
K_STEP = 0.002
K_NOISE_RATIO = 0.1


def _chart(chart: str) -> dict:
    try:
        return CHART[chart]
    except KeyError:
        raise ValueError(f"unknown chart {chart!r}; expected one of {sorted(CHART)}") from None


def _j(p, point, order) -> JetSample:
    return point if isinstance(point, JetSample) else jet(p, point, order)


# -- real side ---------------------------------------------------------------


def log_det_grad(j: JetSample) -> np.ndarray:
    """∂_i log det(f_kl) = f^{ab} f_abi."""
    return np.einsum("ab,abi->i", j.hess_inv, j.d3)


def rho(p: Potential, point) -> float:
    j = _j(p, point, 2)
    return float(j.det ** (-1.0 / (N_DIM + 2)))


def phi(p: Potential, point) -> float:
    """Φ = ‖∇ρ‖²_G/ρ² = G^{ij} ∂_i log ρ ∂_j log ρ."""
    j = _j(p, point, 3)
    g = -log_det_grad(j) / (N_DIM + 2)
    return float(g @ j.hess_inv @ g)


def pick_J(p: Potential, point) -> float:
    """J with 4n(n−1)J = f^{il} f^{jm} f^{kn} f_ijk f_lmn."""
    j = _j(p, point, 3)
    Gi, c = j.hess_inv, j.d3
    s = np.einsum("il,jm,kn,ijk,lmn->", Gi, Gi, Gi, c, c)
    return float(s / (4 * N_DIM * (N_DIM - 1)))


def pick_J_orthonormal(p: Potential, point) -> float:
    """Same contraction evaluated in a G-orthonormal frame, as a sum of squares."""
    j = _j(p, point, 3)
    L = np.linalg.cholesky(j.hess)
    B = np.linalg.inv(L).T
    c = np.einsum("ijk,ia,jb,kc->abc", j.d3, B, B, B)
    return float(np.sum(c * c) / (4 * N_DIM * (N_DIM - 1)))


def theta(p: Potential, point) -> float:
    j = _j(p, point, 3)
    return pick_J(p, j) + phi(p, j)


# -- complex side ------------------------------------------------------------


def complex_W(f: Potential, x, chart: str = "torus") -> float:
    c = _chart(chart)
    j = _j(f, x, 2)
    return float(c["scale"] * j.det * math.exp(-np.dot(c["weights"], j.point)))


def complex_V(f: Potential, x, chart: str = "torus") -> float:
    return math.log(complex_W(f, x, chart))


def grad_V(j: JetSample, chart: str = "torus") -> np.ndarray:
    return log_det_grad(j) - np.asarray(_chart(chart)["weights"])


def psi(f: Potential, x, chart: str = "torus") -> float:
    """Ψ = ‖∇V‖²_f = f^{ij} V_i V_j with V = log W."""
    j = _j(f, x, 3)
    g = grad_V(j, chart)
    val = float(g @ j.hess_inv @ g)
    return 0.0 if val < DEGENERATE else val


def p_quantity(f: Potential, x, kappa: float = 1.0 / 8.0, alpha: float = 1.0 / 3.0, chart: str = "torus") -> float:
    j = _j(f, x, 3)
    W = complex_W(f, j, chart)
    return float(math.exp(kappa * W ** alpha) * math.sqrt(W) * psi(f, j, chart))


def trace_T(f: Potential, x, g: Potential) -> float:
    """T = f^{i ī} g_{i ī}; chart factors cancel between the two metrics."""
    j = _j(f, x, 2)
    G = g.jet(j.point, 2).hess
    return float(np.sum(j.hess_inv * G))


EUCLIDEAN_Z = SymbolicPotential("exp(x1) + exp(x2)")  # |z1|² + |z2|² in log-affine form


def z_norm2(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.exp(x).sum())


def q_quantity(f: Potential, x, N1: float = 100.0, A: float = 1.0, chart: str = "z",
               reference: Potential = EUCLIDEAN_Z) -> float:
    """Q = e^{N₁(|z|²−A)} √W T with T taken against the flat metric of the z-chart."""
    j = _j(f, x, 2)
    W = complex_W(f, j, chart)
    T = trace_T(f, j, reference)
    e = N1 * (z_norm2(j.point) - A)
    if e > 700.0:
        # the weight overflows a double far outside the |z|² < A region of interest
        return math.inf
    return float(math.exp(e) * math.sqrt(W) * T)


# -- Ricci tensor and 𝒦 --------------------------------------------------------


def ricci_real(j: JetSample) -> np.ndarray:
    """r_ij = −∂_i∂_j log det(f_kl); the Kähler Ricci form is R_{i j̄} = c_i c_j r_ij."""
    Gi = j.hess_inv
    t = np.einsum("ab,abij->ij", Gi, j.d4) - np.einsum("ac,cdj,db,abi->ij", Gi, j.d3, Gi, j.d3)
    t = -0.5 * (t + t.T)
    return t


def scalar_curvature_f(j: JetSample) -> float:
    return float(np.sum(j.hess_inv * ricci_real(j)))


def _norm2(T: np.ndarray, Gi: np.ndarray) -> float:
    """Full contraction with 4·f^{ij} on every slot (the torus-chart g^{i j̄})."""
    out = T
    for _ in range(T.ndim):
        out = np.tensordot(out, 4.0 * Gi, axes=([0], [0]))
    return float(np.sum(out * T))


def _correct(Gam: np.ndarray, T: np.ndarray, types, tau) -> np.ndarray:
    """Σ over slots s of type τ of Γ^p_{c s} T[.., p, ..], with the new index c leading."""
    out = np.zeros((2,) + T.shape)
    for s, ty in enumerate(types):
        if ty != tau:
            continue
        # move slot s first, contract with Γ[p, c, q] over p, put c first and q back at s
        Ts = np.moveaxis(T, s, 0)
        C = np.tensordot(Gam, Ts, axes=([0], [0]))  # C[c, q, rest...]
        out += np.moveaxis(C, 1, s + 1)
    return out


def _d_correct(Gam, dGam, T, dT, types, tau):
    """x-derivative (leading index) of :func:`_correct`."""
    a = np.array([_correct(dGam[l], T, types, tau) for l in range(2)])
    b = np.array([_correct(Gam, dT[l], types, tau) for l in range(2)])
    return a + b


@dataclass
class RicciNorm:
    K: float
    ric: float
    dric: float
    ddric: float
    summands: tuple
    noise: float
    step: float


def _frame(j: JetSample) -> np.ndarray:
    L = np.linalg.cholesky(j.hess)
    return np.linalg.inv(L).T


def _ricci_derivs(f: Potential, x, B, d):
    """∂r and ∂²r in coordinates from central differences of r along the frame B."""
    rf = lambda y: ricci_real(jet(f, x + B @ y, 4))
    D1 = fd_grad(rf, np.zeros(2), d)
    D2 = fd_hess(rf, np.zeros(2), d)
    Bi = np.linalg.inv(B)
    dr = np.einsum("ma,mij->aij", Bi, D1)
    ddr = np.einsum("ma,nb,mnij->abij", Bi, Bi, D2)
    return dr, ddr


def _K_from(j: JetSample, dr, ddr):
    Gi, f3, f4 = j.hess_inv, j.d3, j.d4
    r = ricci_real(j)
    # complex derivatives are ½∂_x in the torus chart; R_{i j̄} = ¼ r_ij
    R, dR = 0.25 * r, 0.125 * dr
    Gam = 0.5 * np.einsum("pq,kiq->pki", Gi, f3)  # Γ^p_{ki}
    dGi = -np.einsum("pa,abl,bq->lpq", Gi, f3, Gi)
    dGam = 0.5 * (np.einsum("lpq,kiq->lpki", dGi, f3) + np.einsum("pq,kiql->lpki", Gi, f4))
    dxR, dxdR = 0.25 * dr, 0.125 * ddr
    types = ("u", "b")

    n1 = {}
    for tau in "ub":
        n1[tau] = dR - _correct(Gam, R, types, tau)
    n2 = []
    for tau in "ub":
        dxn1 = dxdR - _d_correct(Gam, dGam, R, dxR, types, tau)
        for sigma in "ub":
            n2.append(0.5 * dxn1 - _correct(Gam, n1[tau], (tau,) + types, sigma))
    ric = math.sqrt(max(_norm2(R, Gi), 0.0))
    dric = math.sqrt(max(sum(_norm2(t, Gi) for t in n1.values()), 0.0))
    ddric = math.sqrt(max(sum(_norm2(t, Gi) for t in n2), 0.0))
    return ric, dric, ddric


def ricci_norm_K(f: Potential, x, step: float | None = None, strict: bool = True) -> RicciNorm:
    """𝒦 = ‖Ric‖ + ‖∇Ric‖^{2/3} + ‖∇²Ric‖^{1/2}.

    ∂r and ∂²r come from Richardson-extrapolated central differences of the
    Ricci field along a metric-orthonormal frame, with a step proportional to
    the curvature radius so the result transforms exactly under scalings.
    The noise estimate compares extrapolations at steps d and 2d.
    """
    x = np.asarray(x, dtype=float)
    j = jet(f, x, 4)
    r = ricci_real(j)
    ric0 = math.sqrt(max(np.einsum("ij,kl,ik,jl->", j.hess_inv, j.hess_inv, r, r), 0.0))
    if step is None:
        step = K_STEP / math.sqrt(ric0) if ric0 > 1e-12 else K_STEP
    B = _frame(j)
    est = []
    for d in (step, 2 * step, 4 * step):
        est.append(_ricci_derivs(f, x, B, d))
    rich = [tuple((4 * a - b) / 3 for a, b in zip(est[k], est[k + 1])) for k in range(2)]
    vals = [_K_from(j, *rd) for rd in rich]

    def total(v):
        return v[0] + v[1] ** (2.0 / 3.0) + math.sqrt(v[2])

    ric, dric, ddric = vals[0]
    K = total(vals[0])
    noise = abs(K - total(vals[1]))
    if strict and noise > K_NOISE_RATIO * K and noise > 1e-10:
        raise InsufficientResolution("finite-difference noise in 𝒦 exceeds 10% of its value",
                                     point=x, K=K, noise=noise)
    return RicciNorm(K, ric, dric, ddric, (ric, dric ** (2.0 / 3.0), math.sqrt(ddric)), noise, step)


def metric_grad_norm2(p: Potential, fun, point, step: float = 1e-3) -> tuple[float, float]:
    """G^{ij}∂_iφ∂_jφ by Richardson differences along a G-orthonormal frame; returns (value, noise)."""
    x = np.asarray(point, dtype=float)
    B = _frame(jet(p, x, 2))
    g = lambda y: fun(x + B @ y)
    d = [fd_grad(g, np.zeros(2), s) for s in (step, 2 * step, 4 * step)]
    r1 = (4 * d[0] - d[1]) / 3
    r2 = (4 * d[1] - d[2]) / 3
    v1, v2 = float(r1 @ r1), float(r2 @ r2)
    return v1, abs(v1 - v2)


def grad_log_S_norm2(f: Potential, x, step: float = 1e-3) -> tuple[float, float]:
    """‖∇ log|𝒮(f)|‖²_f."""
    fun = lambda y: math.log(abs(scalar_curvature_f(jet(f, y, 4))))
    return metric_grad_norm2(f, fun, x, step)


# -- reports -------------------------------------------------------------------


@dataclass
class InvariantReport:
    point: np.ndarray
    rho: float
    phi: float
    J: float
    theta: float
    W: float
    V: float
    psi: float
    P: float
    T: float
    Q: float
    K: float = float("nan")
    K_summands: tuple = (float("nan"),) * 3
    K_noise: float = float("nan")
    chart: str = "torus"

    def row(self) -> list:
        return [self.point[0], self.point[1], self.rho, self.phi, self.J, self.theta,
                self.W, self.psi, self.P, self.T, self.Q, self.K]


CSV_HEADER = ["xi1", "xi2", "rho", "phi", "J", "theta", "W", "psi", "P", "T", "Q", "K"]


def invariant_report(u: Potential, xi, chart: str = "torus", f: Potential | None = None,
                     kappa: float = 1.0 / 8.0, alpha: float = 1.0 / 3.0, N1: float = 100.0, A: float = 1.0,
                     with_K: bool = True) -> InvariantReport:
    """All invariants at a Δ-side point ξ; complex ones are evaluated at x = ∇u(ξ)."""
    uj = jet(u, xi, 4)
    fj = dual_jet(uj, 4)
    W = complex_W(None, fj, chart)
    rep = InvariantReport(
        point=np.asarray(xi, dtype=float), rho=rho(u, uj), phi=phi(u, uj), J=pick_J(u, uj),
        theta=0.0, W=W, V=math.log(W), psi=psi(None, fj, chart),
        P=p_quantity(None, fj, kappa, alpha, chart), T=trace_T(None, fj, EUCLIDEAN_Z),
        Q=q_quantity(None, fj, N1, A), chart=chart)
    rep.theta = rep.phi + rep.J
    if with_K:
        f = f or DualPotential(u, seed=xi)
        rk = ricci_norm_K(f, fj.point, strict=False)
        rep.K, rep.K_summands, rep.K_noise = rk.K, rk.summands, rk.noise
    return rep


def write_invariant_csv(reports, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow([f"{v:.17g}" for v in r.row()])
