import numpy as np
import pytest

from integrasym.cli import load_system
from integrasym.symexpr import parse_expr
from integrasym.vcalc import IntegrableSystem, VectorField


def make_system(field, integrals, nu, domain, variables=("x1", "x2"), **kwargs):
    """System from expression strings; the last integral is the Hamiltonian."""
    return IntegrableSystem(
        field=VectorField.from_strings(field, variables),
        casimirs=tuple(parse_expr(c, variables) for c in integrals[:-1]),
        hamiltonian=parse_expr(integrals[-1], variables),
        nu=parse_expr(nu, variables),
        domain=domain,
        **kwargs,
    )


def box_points(system, count, seed=0):
    rng = np.random.default_rng(seed)
    bounds = system.bounds
    return bounds[:, 0] + (bounds[:, 1] - bounds[:, 0]) * rng.random((count, system.dimension))


@pytest.fixture(scope="session")
def scaling2d():
    return load_system("scaling2d").system


@pytest.fixture(scope="session")
def quadratic2d():
    return load_system("quadratic2d").system


@pytest.fixture(scope="session")
def rigidbody3d():
    return load_system("rigidbody3d").system


@pytest.fixture(scope="session")
def rigidbody3d_rescaled():
    return load_system("rigidbody3d_rescaled").system
