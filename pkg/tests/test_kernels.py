import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.kernels import (
    ExponentialKernel,
    GaussianKernel,
    KernelError,
    ScaledSumKernel,
    ZeroKernel,
    default_half_length,
    eval_kernel,
    format_kernel,
    kernel_transform,
    kernel_transform_derivative,
    numeric_transform_oracle,
    parse_kernel,
)


def test_eval_kernel_values():
    assert eval_kernel(ZeroKernel(), 0.5) == 0
    assert eval_kernel(ExponentialKernel(m=1.0), 0.0) == pytest.approx(1.0)
    assert eval_kernel(ExponentialKernel(m=2.0), 1.0) == pytest.approx(math.exp(-2.0))


def test_eval_kernel_is_vectorized():
    values = eval_kernel(ExponentialKernel(m=1.0), np.array([-1.0, 0.0, 2.0]))
    assert_allclose(values, np.exp(-np.array([1.0, 0.0, 2.0])))


def test_kernel_transform_closed_forms():
    assert kernel_transform(ZeroKernel(), 3.0) == 0
    assert kernel_transform(ExponentialKernel(m=2.0), 0.0) == pytest.approx(1.0)
    assert kernel_transform(ExponentialKernel(m=1.0), 1.0) == pytest.approx(1.0)
    assert kernel_transform(GaussianKernel(s=1.0), 0.0) == pytest.approx(math.sqrt(2 * math.pi))


def test_transform_derivative():
    k = ExponentialKernel(m=1.0)
    assert kernel_transform_derivative(k, 0.0, (1,)) == pytest.approx(0.0)
    assert kernel_transform_derivative(ZeroKernel(), 4.0, (1,)) == 0
    assert kernel_transform_derivative(k, 1.0, (1,)) == pytest.approx(-1.0)
    step = 1e-5
    fd = (kernel_transform(k, 1.0 + step) - kernel_transform(k, 1.0 - step)) / (2 * step)
    assert kernel_transform_derivative(k, 1.0, (1,)) == pytest.approx(fd, rel=1e-8)


def test_transform_derivative_2d_matches_finite_difference():
    k = GaussianKernel(dim=2, s=0.7)
    xi = np.array([0.4, -1.1])
    step = 1e-4

    def t(x, y):
        return kernel_transform(k, np.array([x, y]))

    mixed = (
        t(xi[0] + step, xi[1] + step)
        - t(xi[0] + step, xi[1] - step)
        - t(xi[0] - step, xi[1] + step)
        + t(xi[0] - step, xi[1] - step)
    ) / (4 * step**2)
    assert kernel_transform_derivative(k, xi, (1, 1)) == pytest.approx(mixed, rel=1e-5)


def test_bad_multi_index():
    with pytest.raises(KernelError):
        kernel_transform_derivative(ExponentialKernel(), 1.0, (2,))
    with pytest.raises(KernelError):
        kernel_transform_derivative(ExponentialKernel(), 1.0, (1, 0))


def test_invalid_parameters():
    with pytest.raises(KernelError):
        ExponentialKernel(m=0.0)
    with pytest.raises(KernelError):
        GaussianKernel(s=-1.0)
    with pytest.raises(KernelError):
        ScaledSumKernel(dim=1, terms=((1.0, ExponentialKernel(dim=2)),))


@pytest.mark.parametrize("m", [0.5, 1.0, 2.0])
def test_oracle_matches_exponential_transform(m):
    k = ExponentialKernel(m=m)
    for xi in np.logspace(-2, 1.5, 200)[::20]:
        oracle = numeric_transform_oracle(k, xi, 40.0 / m, 2**16)
        assert oracle == pytest.approx(kernel_transform(k, xi), abs=1e-6)


def test_oracle_reference_points():
    assert numeric_transform_oracle(ZeroKernel(), 1.0, 10.0, 64) == 0
    assert numeric_transform_oracle(ExponentialKernel(m=2.0), 0.0, 40.0, 2**16) == pytest.approx(1.0, abs=1e-8)
    assert numeric_transform_oracle(ExponentialKernel(m=1.0), 1.0, 40.0, 2**16) == pytest.approx(1.0, abs=1e-8)


def test_oracle_matches_gaussian_transform_2d():
    k = GaussianKernel(dim=2, s=1.0)
    xi = np.array([0.5, 1.0])
    oracle = numeric_transform_oracle(k, xi, 10.0, 256)
    assert oracle == pytest.approx(kernel_transform(k, xi), abs=1e-8)


def test_oracle_rejects_bad_panels():
    with pytest.raises(KernelError):
        numeric_transform_oracle(ExponentialKernel(), 0.0, 10.0, 18)


def test_scaled_sum_flattens_and_combines():
    inner = ScaledSumKernel(terms=((2.0, ExponentialKernel(m=1.0)),))
    outer = ScaledSumKernel(terms=((0.5, inner), (1.0, GaussianKernel(s=1.0))))
    assert all(not isinstance(k, ScaledSumKernel) for _, k in outer.terms)
    expected = kernel_transform(ExponentialKernel(m=1.0), 2.0) + kernel_transform(GaussianKernel(s=1.0), 2.0)
    assert kernel_transform(outer, 2.0) == pytest.approx(expected)


def test_parse_and_format_round_trip():
    for text in ("zero", "exp(m=1.5)", "gauss(s=0.25)", "sum(2*exp(m=1), -1*gauss(s=2))"):
        kernel = parse_kernel(text)
        assert parse_kernel(format_kernel(kernel)) == kernel


def test_parse_kernel_errors():
    for text in ("exp(m=-1)", "cosh(m=1)", "sum()", "exp(m=abc)"):
        with pytest.raises(KernelError):
            parse_kernel(text)


@pytest.mark.parametrize(
    "text,message",
    [
        ("exp(m=-1)", "m must be positive"),
        ("exp(m=0)", "m must be positive"),
        ("gauss(s=0)", "s must be positive"),
        ("gauss(s=nan)", "s must be positive"),
        ("sum(2*exp(m=-3), gauss(s=1))", "m must be positive"),
    ],
)
def test_parse_kernel_rejects_non_positive_parameters(text, message):
    with pytest.raises(KernelError, match=message):
        parse_kernel(text)


def test_default_half_length():
    assert default_half_length([ZeroKernel()]) == 16.0
    assert default_half_length([ExponentialKernel(m=0.5)]) == pytest.approx(64.0)
    assert default_half_length([ExponentialKernel(m=4.0)]) == 16.0
