import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.conditions import ConditionFailure, EllipticCoefficients, GapConditionError, ParabolicCoefficients
from src.kernels import ExponentialKernel, GaussianKernel, ZeroKernel, eval_kernel
from src.multiplier import (
    ENorm,
    Grid,
    GridFunction,
    ScalarSymbol,
    apply_multiplier,
    band_limited_function,
    causal_pulses,
    doe_operator_symbol,
    parabolic_operator_symbol,
)
from src.sectorial import build_dirichlet_laplacian, diagonal_operator, scalar_operator
from src.solver import (
    SolverError,
    apply_operator,
    demo_diffusion_system,
    demo_fading_memory,
    duhamel_quadrature,
    equation_residual,
    negative_test_m1,
    phi_function,
    solve_cauchy,
    solve_elliptic,
    solve_elliptic_doe,
    solve_parabolic,
    verify_sobolev,
)


@pytest.fixture
def circle():
    # xi_k = k
    return Grid(1, 256, math.pi)


def _mode(grid, vector, k, kind="cos"):
    t = grid.axis()
    wave = {"cos": np.cos(k * t), "sin": np.sin(k * t), "exp": np.exp(1j * k * t)}[kind]
    return GridFunction(grid, wave[:, None] * np.asarray(vector, dtype=complex)[None, :])


def test_solve_elliptic_manufactured_scalar(circle, heat_coeffs):
    op = scalar_operator(1.0)
    u_exact = _mode(circle, [1.0], 3, "sin")
    f = u_exact * 10.0
    solution = solve_elliptic(heat_coeffs, op, f)
    assert_allclose(solution.u.values, u_exact.values, atol=1e-10)
    assert solution.residual <= 1e-10
    assert_allclose(solution.derived["d1d1u"].values, -9.0 * u_exact.values, atol=1e-9)


def test_solve_elliptic_manufactured_with_memory(circle, stencil3):
    coeffs = EllipticCoefficients(np.eye(1), [[ExponentialKernel(m=1.0)]], 1.0, ZeroKernel())
    v = np.array([1.0, -0.5, 2.0])
    xi = 2.0
    a_hat = 2.0 / (1.0 + xi**2)
    u_exact = _mode(circle, v, 2)
    rhs = (xi**2 * (1 + a_hat) * v + stencil3.matrix @ v).real
    f = _mode(circle, rhs, 2)
    solution = solve_elliptic(coeffs, stencil3, f)
    assert_allclose(solution.u.values, u_exact.values, atol=1e-8)
    assert solution.condition is not None and solution.condition.overall


def test_solve_elliptic_zero_forcing(circle, heat_coeffs, stencil3):
    solution = solve_elliptic(heat_coeffs, stencil3, GridFunction.zeros(circle, 3))
    assert not np.any(solution.u.values)
    assert solution.ratios["sobolev"] is None


def test_solve_elliptic_refusals(circle, stencil3):
    f = _mode(circle, [1.0, 0.0, 0.0], 1)
    with pytest.raises(ConditionFailure) as info:
        solve_elliptic(EllipticCoefficients.laplacian(1, b0=0.0), stencil3, f)
    assert info.value.report.failing()[0].label.startswith("(1)")
    with pytest.raises(GapConditionError):
        solve_elliptic(EllipticCoefficients.laplacian(1), stencil3, f, p=2.0, q=4.0)
    with pytest.raises(SolverError):
        solve_elliptic(EllipticCoefficients.laplacian(2), stencil3, f)


def test_solve_elliptic_singular_operator_projects_mean(circle, heat_coeffs):
    op = diagonal_operator([0.0, 1.0])
    t = circle.axis()
    values = np.stack([1.0 + np.cos(t), np.cos(t)], axis=1).astype(complex)
    solution = solve_elliptic(heat_coeffs, op, GridFunction(circle, values))
    assert solution.notes
    assert_allclose(solution.u.values[:, 0], np.cos(t), atol=1e-12)
    assert_allclose(solution.u.values[:, 1], np.cos(t) / 2, atol=1e-12)


def test_solve_parabolic_manufactured(circle, fading_memory_coeffs, stencil3):
    v = np.array([0.5, 1.0, -1.0])
    xi = 4.0
    transform = 2.0 / (1.0 + xi**2)
    u_exact = _mode(circle, v, 4, "exp")
    rhs = 1j * xi * (1 + transform) * v + (1 + transform) * (stencil3.matrix @ v)
    f = _mode(circle, rhs, 4, "exp")
    solution = solve_parabolic(fading_memory_coeffs, stencil3, f)
    assert_allclose(solution.u.values, u_exact.values, atol=1e-10)
    assert solution.residual <= 1e-10
    assert_allclose(solution.derived["u_prime"].values, 1j * xi * u_exact.values, atol=1e-9)
    assert solution.coercive is not None and solution.coercive.ratio_C is not None


def test_solve_parabolic_cauchy_type_sine(circle, cauchy_coeffs):
    op = scalar_operator(2.0)
    f = _mode(circle, [1.0], 1, "sin")
    solution = solve_parabolic(cauchy_coeffs, op, f)
    # u' + 2u = sin t  =>  u = (2 sin t - cos t) / 5
    t = circle.axis()
    assert_allclose(solution.u.values[:, 0], (2 * np.sin(t) - np.cos(t)) / 5, atol=1e-10)


def test_solve_parabolic_zero_forcing(circle, cauchy_coeffs):
    solution = solve_parabolic(cauchy_coeffs, scalar_operator(1.0), GridFunction.zeros(circle))
    assert solution.residual == 0.0
    assert solution.coercive.ratio_C is None


def test_solve_parabolic_rejects_sector_failure(circle):
    coeffs = ParabolicCoefficients(-1.0, ZeroKernel(), 1.0, ZeroKernel())
    op = scalar_operator(1.0, phi=math.pi / 3)
    with pytest.raises(ConditionFailure):
        solve_parabolic(coeffs, op, _mode(circle, [1.0], 1))


def test_phi_function_branches():
    z = np.array([0.0, 0.5, -1.0, -3.0, -30.0, 2.5j])
    expected = np.where(z == 0, 1.0, (np.exp(z) - 1) / np.where(z == 0, 1, z))
    assert_allclose(phi_function(1, z), expected, rtol=1e-12, atol=1e-14)
    assert_allclose(phi_function(0, z), np.exp(z), rtol=1e-12)


def test_duhamel_quadrature_constant_forcing():
    grid = Grid(1, 512, 8.0)
    t = grid.axis()
    values = np.where(t >= 0, 1.0, 0.0)[:, None].astype(complex)
    u = duhamel_quadrature(scalar_operator(2.0), GridFunction(grid, values))
    inside = t >= 0
    assert_allclose(u.values[inside, 0], (1 - np.exp(-2 * t[inside])) / 2, atol=1e-12)
    assert not np.any(u.values[~inside])


@pytest.mark.parametrize("seed", range(10))
def test_solve_cauchy_dual_paths_agree(seed, stencil3):
    grid = Grid(1, 8192, 32.0)
    f = causal_pulses(grid, seed, stencil3.n)
    solution = solve_cauchy(stencil3, f)
    assert solution.ratios["dual_path_discrepancy"] <= 1e-6
    assert solution.residual <= 1e-10
    assert set(solution.ratios) == {"dual_path_discrepancy", "term_identity", "theta=2", "theta=4", "coercive"}
    assert not np.any(solution.u.values[grid.axis() < 0])


def test_solve_cauchy_refusals(stencil3):
    grid = Grid(1, 256, 16.0)
    acausal = _mode(grid, [1.0, 0.0, 0.0], 1)
    with pytest.raises(SolverError):
        solve_cauchy(stencil3, acausal)
    f = causal_pulses(grid, 0, 3)
    with pytest.raises(SolverError):
        solve_cauchy(stencil3, f, q=4.0, thetas=[2.0])
    with pytest.raises(SolverError):
        solve_cauchy(diagonal_operator([0.0, 1.0]), causal_pulses(grid, 0, 2))


def test_solve_elliptic_doe_manufactured(circle, stencil3):
    v = np.array([2.0, 0.0, 1.0])
    u_exact = _mode(circle, v, 5)
    f = _mode(circle, 25.0 * v + (stencil3.matrix @ v).real, 5)
    solution = solve_elliptic_doe(stencil3, f)
    assert_allclose(solution.u.values, u_exact.values, atol=1e-10)
    assert_allclose(solution.derived["u_second"].values, -25.0 * u_exact.values, atol=1e-8)
    assert solution.residual <= 1e-10


def test_demo_fading_memory_ensemble():
    report = demo_fading_memory(grid_t=Grid(1, 512, 32.0), n_x=8, ensemble_size=6, seed=1)
    assert len(report.rows) == 6
    assert report.max_residual <= 1e-9
    assert report.max_ratio is not None and math.isfinite(report.max_ratio)
    assert report.condition.constants["C_b"] == pytest.approx(1.0, abs=0.01)
    assert report.condition.constants["C0"] == pytest.approx(2.0, rel=1e-6)
    assert report.excluded == []


@pytest.mark.slow
def test_demo_fading_memory_refinement_stability():
    coarse = demo_fading_memory(grid_t=Grid(1, 1024, 32.0), n_x=8, ensemble_size=50, band=32)
    fine = demo_fading_memory(grid_t=Grid(1, 4096, 32.0), n_x=8, ensemble_size=50, band=32)
    assert abs(fine.max_ratio - coarse.max_ratio) / coarse.max_ratio < 0.05


def test_demo_fading_memory_reuses_factorizations():
    grid = Grid(1, 256, 32.0)
    cached = demo_fading_memory(grid_t=grid, n_x=4, ensemble_size=2)
    uncached = demo_fading_memory(grid_t=grid, n_x=4, ensemble_size=2, use_cache=False)
    assert cached.factorizations <= 2 * grid.N
    assert uncached.factorizations >= 4 * grid.N
    assert uncached.factorizations >= 3 * cached.factorizations
    assert [r.ratio_C for r in cached.rows] == pytest.approx([r.ratio_C for r in uncached.rows], rel=1e-12)


def test_demo_fading_memory_rejects_bad_parameters():
    with pytest.raises(SolverError):
        demo_fading_memory(m=0.0)


def test_demo_diffusion_single_component_is_cauchy():
    grid = Grid(1, 1024, 32.0)
    f = causal_pulses(grid, 3, 8)
    report = demo_diffusion_system(K=1, grid_t=grid, n_x=8, forcings=[f])
    op = build_dirichlet_laplacian(8, 1.0, 1.0)
    direct = solve_cauchy(op, f.with_norm(ENorm("lp", 2.0, 1.0 / 9)))
    assert_allclose(report.components[0].u.values, direct.u.values, atol=1e-14)
    assert report.graph_norm is not None


def test_demo_diffusion_identical_components_scale():
    grid = Grid(1, 1024, 32.0)
    f = causal_pulses(grid, 4, 8)
    one = demo_diffusion_system(K=1, grid_t=grid, n_x=8, p_inner=3.0, forcings=[f])
    three = demo_diffusion_system(K=3, grid_t=grid, n_x=8, p_inner=3.0, forcings=[f, f, f])
    assert three.norm_u["u"] == pytest.approx(3 ** (1 / 3) * one.norm_u["u"], rel=1e-10)
    assert three.coercive_ratio == pytest.approx(one.coercive_ratio, rel=1e-10)


def test_demo_diffusion_guards():
    with pytest.raises(SolverError):
        demo_diffusion_system(K=0)
    with pytest.raises(SolverError):
        demo_diffusion_system(K=2, grid_t=Grid(1, 256, 32.0), n_x=4, forcings=[])
    with pytest.raises(SolverError):
        demo_diffusion_system(K=10**4, n_x=16)


def test_verify_sobolev_is_stable(heat_coeffs):
    report = verify_sobolev(heat_coeffs, scalar_operator(1.0), 2.0, 4.0, ensemble_size=8, seed=2)
    assert math.isfinite(report.max_ratio)
    assert report.stable
    with pytest.raises(GapConditionError):
        verify_sobolev(heat_coeffs, scalar_operator(1.0), 4.0, 2.0, ensemble_size=2)


def test_negative_m1_growth():
    op = scalar_operator(1.0, phi=math.pi / 2)
    horizons = [1e2, 1e3, 1e4, 1e5]
    growing = negative_test_m1(op, 2.0, 4.0, horizons, points_per_decade=50)
    assert growing.slope == pytest.approx(0.25, abs=0.05)
    assert not growing.bounded
    bounded = negative_test_m1(op, 2.0, 2.0, horizons, points_per_decade=50)
    assert bounded.bounded
    assert bounded.caveat == ""
    faint = negative_test_m1(op, 2.0, 2.0001, horizons, points_per_decade=50)
    assert faint.slope == pytest.approx(2.5e-5, abs=1e-4)
    assert faint.caveat


def test_negative_m1_literal_column_is_recorded():
    op = scalar_operator(1.0)
    report = negative_test_m1(op, 2.0, 4.0, [10.0, 100.0], points_per_decade=20)
    for T, majorant, literal in report.table:
        # |it/(1+it) - 1| = 1/sqrt(1+t^2) <= 1
        assert literal <= T**0.25
        assert majorant > literal
    with pytest.raises(SolverError):
        negative_test_m1(op, 4.0, 2.0, [10.0, 100.0])
    with pytest.raises(SolverError):
        negative_test_m1(op, 2.0, 4.0, [10.0])


def test_derived_convolutions_match_direct_quadrature(stencil3):
    kernel = GaussianKernel(s=1.0)
    coeffs = ParabolicCoefficients(1.0, kernel, 2.0, kernel)
    grid = Grid(1, 256, 16.0)
    f = band_limited_function(grid, 9, 3, 16)
    solution = solve_parabolic(coeffs, stencil3, f)
    weights = np.fft.ifftshift(eval_kernel(kernel, grid.axis())) * grid.h

    def convolve(g):
        return sum(w * np.roll(g.values, shift, axis=0) for shift, w in enumerate(weights))

    u_prime, au = solution.derived["u_prime"], solution.derived["Au"]
    scale = np.max(np.abs(u_prime.values))
    assert_allclose(solution.derived["conv_u_prime"].values, convolve(u_prime), atol=1e-6 * scale)
    assert_allclose(solution.derived["conv_Au"].values, convolve(au), atol=1e-6 * np.max(np.abs(au.values)))


def test_residual_measures_the_returned_solution(circle, fading_memory_coeffs, stencil3):
    f = band_limited_function(circle, 5, 3, 16)
    parabolic = solve_parabolic(fading_memory_coeffs, stencil3, f)
    doe = solve_elliptic_doe(stencil3, f)

    for solution, forward in (
        (parabolic, parabolic_operator_symbol(fading_memory_coeffs, stencil3)),
        (doe, doe_operator_symbol(stencil3)),
    ):
        assert solution.residual <= 1e-10
        assert solution.ratios["term_identity"] <= 1e-10
        assert equation_residual(forward, solution.u, f) == pytest.approx(solution.residual, abs=1e-12)
        assert equation_residual(forward, solution.u * 1.01, f) == pytest.approx(0.01, rel=1e-6)


def _max_relative_error(u, exact):
    return float(np.max(np.abs(u.values - exact.values)) / np.max(np.abs(exact.values)))


@pytest.fixture
def long_line():
    return Grid(1, 4096, 64.0)


def test_solve_elliptic_recovers_band_limited_solution(long_line, stencil32):
    kernel = ExponentialKernel(m=1.0)
    coeffs = EllipticCoefficients(np.eye(1), [[kernel]], 1.0, kernel)
    u_exact = band_limited_function(long_line, 11, stencil32.n, 64)
    second = ScalarSymbol(lambda xi: xi[0] ** 2 * (1.0 + kernel.transform(xi[0])), e_dim=stencil32.n)
    memory = ScalarSymbol(lambda xi: 1.0 + kernel.transform(xi[0]), e_dim=stencil32.n)
    f = apply_multiplier(second, u_exact) + apply_multiplier(memory, apply_operator(stencil32, u_exact))

    solution = solve_elliptic(coeffs, stencil32, f)

    assert _max_relative_error(solution.u, u_exact) <= 1e-8
    assert solution.residual <= 1e-8


def test_solve_parabolic_recovers_band_limited_solution(long_line, fading_memory_coeffs, stencil32):
    kernel = fading_memory_coeffs.a1
    u_exact = band_limited_function(long_line, 12, stencil32.n, 64)
    rate = ScalarSymbol(lambda xi: 1j * xi[0] * (1.0 + kernel.transform(xi[0])), e_dim=stencil32.n)
    memory = ScalarSymbol(lambda xi: 1.0 + kernel.transform(xi[0]), e_dim=stencil32.n)
    f = apply_multiplier(rate, u_exact) + apply_multiplier(memory, apply_operator(stencil32, u_exact))

    solution = solve_parabolic(fading_memory_coeffs, stencil32, f)

    assert _max_relative_error(solution.u, u_exact) <= 1e-8
    assert solution.residual <= 1e-8


def test_solve_cauchy_recovers_seeded_pulses(stencil32):
    grid = Grid(1, 4096, 32.0)
    t = grid.axis()
    rng = np.random.default_rng(13)
    width = 1.5
    values = np.zeros((grid.N, stencil32.n), dtype=complex)
    slopes = np.zeros_like(values)
    for center in rng.uniform(12.0, 20.0, 3):
        amp = rng.standard_normal(stencil32.n) + 1j * rng.standard_normal(stencil32.n)
        envelope = np.exp(-((t - center) ** 2) / (2 * width**2))
        values += envelope[:, None] * amp
        slopes += (-(t - center) / width**2 * envelope)[:, None] * amp
    forcing = slopes + values @ stencil32.matrix.T
    forcing[t < 0] = 0.0
    u_exact = GridFunction(grid, values)

    solution = solve_cauchy(stencil32, GridFunction(grid, forcing))

    assert _max_relative_error(solution.u, u_exact) <= 1e-8
    assert solution.residual <= 1e-8


def test_solve_elliptic_doe_recovers_band_limited_solution(long_line, stencil32):
    u_exact = band_limited_function(long_line, 14, stencil32.n, 64)
    second = ScalarSymbol(lambda xi: xi[0] ** 2, e_dim=stencil32.n)
    f = apply_multiplier(second, u_exact) + apply_operator(stencil32, u_exact)

    solution = solve_elliptic_doe(stencil32, f)

    assert _max_relative_error(solution.u, u_exact) <= 1e-8
    assert solution.residual <= 1e-8
