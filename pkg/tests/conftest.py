import numpy as np
import pytest

from toriclab.polytope import standard_simplex, unit_square


@pytest.fixture(scope="session")
def square():
    return unit_square()


@pytest.fixture(scope="session")
def simplex():
    return standard_simplex()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def interior_points(poly, n, rng, margin=0.05):
    from toriclab.domain import sample_interior

    return sample_interior(poly.domain, n, rng, min_margin=margin)
