import math

import pytest

from src.conditions import EllipticCoefficients, ParabolicCoefficients
from src.kernels import ExponentialKernel, ZeroKernel
from src.multiplier import Grid
from src.sectorial import build_dirichlet_laplacian, scalar_operator


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ("FMLAB_OUTPUT_DIR", "FMLAB_THREADS", "LOG_LEVEL"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def stencil3():
    # h = 1, eigenvalues 2 - sqrt(2), 2, 2 + sqrt(2)
    return build_dirichlet_laplacian(3, 4.0)


@pytest.fixture
def stencil32():
    # h = 1, eigenvalues in (0, 4)
    return build_dirichlet_laplacian(32, 33.0)


@pytest.fixture
def scalar_one():
    return scalar_operator(1.0, phi=math.pi / 2)


@pytest.fixture
def line_grid():
    return Grid(1, 512, 16.0)


@pytest.fixture
def heat_coeffs():
    return EllipticCoefficients.laplacian(1)


@pytest.fixture
def cauchy_coeffs():
    return ParabolicCoefficients(1.0, ZeroKernel(), 1.0, ZeroKernel())


@pytest.fixture
def fading_memory_coeffs():
    return ParabolicCoefficients(1.0, ExponentialKernel(m=1.0), 1.0, ExponentialKernel(m=1.0))
