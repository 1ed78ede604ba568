"""Reference instances shared by the command line, the checks and the tests."""

from __future__ import annotations

import math

import numpy as np

from .abreu import CurvatureSpec, solve
from .domain import Box, Disk, intersect
from .jets import QuadraticPotential, SymbolicPotential
from .polytope import HalfPlaneModel

# Legendre dual of the square's Guillemin potential: Σ log(1 + e^{x_i})
SQUARE_DUAL = "log(1 + exp(x1)) + log(1 + exp(x2))"
# a Euclidean-flat reference potential in the torus chart
FLAT = "(x1**2 + x2**2)/2"

HALFPLANE_BOX = ((0.5, -0.5), (1.5, 0.5))


def square_dual() -> SymbolicPotential:
    return SymbolicPotential(SQUARE_DUAL)


def flat_reference() -> SymbolicPotential:
    return SymbolicPotential(FLAT)


def halfplane_ghosts(p) -> float:
    return 0.05 * p[1] ** 3


def solved_halfplane_k0(n: int = 64):
    """S(v_ℍ + ψ) = 0 on the box [0.5, 1.5]×[−0.5, 0.5] with ψ = 0.05ξ₂³ on the ghost rings."""
    hp = HalfPlaneModel()
    dom = intersect([hp.domain, Box(*HALFPLANE_BOX)])
    return solve(dom, CurvatureSpec("0"), None, analytic=hp.potential, n=n, boundary="dirichlet",
                 ghost_fn=halfplane_ghosts, bbox=HALFPLANE_BOX)


def disk_seed(p) -> float:
    return 0.05 * max(0.0, 1.0 - float(p @ p) / 0.64) ** 3 * math.cos(2 * p[0] + p[1])


def solved_disk_k0(n: int = 64):
    """S(½|ξ|² + ψ) = 0 on the unit disk with ψ = 0 on the ghost rings, from a perturbed seed."""
    q = QuadraticPotential(np.eye(2))
    return solve(Disk((0.0, 0.0), 1.0), CurvatureSpec("0"), disk_seed, analytic=q, n=n, boundary="dirichlet")
