from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from .conditions import (
    ConditionFailure,
    ConditionReport,
    EllipticCoefficients,
    GapConditionError,
    ParabolicCoefficients,
    check_condition_3_1,
    check_condition_4_1,
    check_gap,
)
from .kernels import ExponentialKernel
from .multiplier import (
    ENorm,
    Grid,
    GridFunction,
    MultiplierSymbol,
    ScalarSymbol,
    apply_multiplier,
    apply_multiplier_batch,
    band_limited_function,
    causal_pulses,
    cauchy_operator_symbol,
    cauchy_symbols,
    doe_operator_symbol,
    elliptic_operator_symbol,
    elliptic_symbol,
    gaussian_packets,
    lp_norm,
    parabolic_operator_symbol,
    parabolic_symbols,
    project_mean,
)
from .sectorial import (
    SectorialOperator,
    block_diagonal,
    build_dirichlet_laplacian,
    graph_norm,
    resolvent_matrix,
    uniform_resolvent_constant,
)

LOGGER_NAME = "fmlab.solver"

CAUSALITY_TOL = 1e-12
MEMORY_BUDGET = 10**7
BLOCK_LIMIT = 1024
DEFAULT_ENSEMBLE = 50
DEFAULT_BAND = 64
CONTOUR_POINTS = 32
TAYLOR_RADIUS = 2.0
TAYLOR_TERMS = 40
BOUNDED_VARIATION = 0.01
SENSITIVITY_EXPONENT = 0.01


class SolverError(RuntimeError):
    """Raised for causality violations, budget overruns and refused solves."""


@dataclass
class CoerciveReport:
    norms: Dict[str, float]
    ratio_C: Optional[float]

    TERMS = ("u_prime", "conv_u_prime", "Au", "conv_Au")

    @classmethod
    def from_terms(cls, terms: Dict[str, GridFunction], f: GridFunction, p: float) -> "CoerciveReport":
        norms = {name: lp_norm(terms[name], p) for name in cls.TERMS}
        norms["f"] = lp_norm(f, p)
        ratio = None if norms["f"] == 0 else sum(norms[name] for name in cls.TERMS) / norms["f"]
        return cls(norms, ratio)


@dataclass
class Solution:
    u: GridFunction
    derived: Dict[str, GridFunction] = field(default_factory=dict)
    residual: float = 0.0
    ratios: Dict[str, Optional[float]] = field(default_factory=dict)
    coercive: Optional[CoerciveReport] = None
    condition: Optional[ConditionReport] = None
    notes: List[str] = field(default_factory=list)


def _relative(diff: GridFunction, ref: GridFunction) -> float:
    ref_norm = lp_norm(ref, 2.0)
    diff_norm = lp_norm(diff, 2.0)
    if ref_norm == 0:
        return diff_norm
    return diff_norm / ref_norm


def equation_residual(
    forward: MultiplierSymbol, u: GridFunction, f: GridFunction, workers: int = 1
) -> float:
    """||Lu - f|| / ||f|| with L given by its forward symbol."""
    return _relative(apply_multiplier(forward, u, workers) - f, f)


def apply_operator(op: SectorialOperator, u: GridFunction) -> GridFunction:
    """Pointwise action of A on an E-valued grid function."""
    return u.map_values(lambda v: v @ op.matrix.T)


def _ratio(num: float, den: float) -> Optional[float]:
    return None if den == 0 else num / den


def _zero_mode_input(op: SectorialOperator, f: GridFunction, notes: List[str]) -> GridFunction:
    if op.invertible:
        return f
    notes.append("A is singular: mean of f projected out at the zero frequency")
    return project_mean(f)


def solve_elliptic(
    coeffs: EllipticCoefficients,
    op: SectorialOperator,
    f: GridFunction,
    p: float = 2.0,
    q: float = 2.0,
    phi: Optional[float] = None,
    workers: int = 1,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> Solution:
    """u = F^{-1}[sigma(xi) f^(xi)] with sigma(xi) = mu (A + N mu)^{-1}, mu = 1/(b1^ + b0)."""
    log = logger or structlog.get_logger(LOGGER_NAME)
    if f.grid.d != coeffs.d:
        raise SolverError(f"grid dimension {f.grid.d} differs from coefficient dimension {coeffs.d}")
    if not check_gap(q, p, coeffs.d):
        raise GapConditionError(f"gap condition fails for q={q}, p={p}, d={coeffs.d}")
    report = check_condition_3_1(coeffs, op.phi if phi is None else phi, logger=log)
    if not report.overall:
        raise ConditionFailure(report)
    notes: List[str] = []
    rhs = _zero_mode_input(op, f, notes)
    u = apply_multiplier(elliptic_symbol(coeffs, op), rhs, workers)

    derived: Dict[str, GridFunction] = {}
    d = coeffs.d
    au = apply_operator(op, u)
    derived["Au"] = au
    derived["conv_Au"] = apply_multiplier(
        ScalarSymbol(lambda xi: coeffs.b1.transform(xi[0] if d == 1 else xi), e_dim=op.n, dim=d), au, workers
    )
    for k in range(d):
        for j in range(k, d):
            second = ScalarSymbol(lambda xi, k=k, j=j: -xi[k] * xi[j], e_dim=op.n, dim=d)
            derived[f"d{k + 1}d{j + 1}u"] = apply_multiplier(second, u, workers)
            kernel = coeffs.a[k][j]
            conv = ScalarSymbol(
                lambda xi, k=k, j=j, kernel=kernel: -kernel.transform(xi[0] if d == 1 else xi) * xi[k] * xi[j],
                e_dim=op.n,
                dim=d,
            )
            derived[f"a{k + 1}{j + 1}*d{k + 1}d{j + 1}u"] = apply_multiplier(conv, u, workers)

    residual = equation_residual(elliptic_operator_symbol(coeffs, op), u, rhs, workers)
    solution = Solution(
        u,
        derived,
        residual,
        ratios={"sobolev": _ratio(lp_norm(u, p), lp_norm(f, q))},
        condition=report,
        notes=notes,
    )
    log.info("Elliptic solve complete", N=f.grid.N, d=d, residual=residual, sobolev=solution.ratios["sobolev"])
    return solution


def solve_parabolic(
    coeffs: ParabolicCoefficients,
    op: SectorialOperator,
    f: GridFunction,
    p: float = 2.0,
    phi: Optional[float] = None,
    workers: int = 1,
    check: bool = True,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> Solution:
    """Solve a0 u' + a1*u' + b0 Au + b1*Au = f on the time torus.

    Derived terms come from m1..m4 applied to f. The residual applies the
    forward symbol to u; the term identity is kept as a ratio.
    """
    solutions = solve_parabolic_batch(coeffs, op, [f], p, phi, workers, check, logger)
    return solutions[0]


def solve_parabolic_batch(
    coeffs: ParabolicCoefficients,
    op: SectorialOperator,
    fs: Sequence[GridFunction],
    p: float = 2.0,
    phi: Optional[float] = None,
    workers: int = 1,
    check: bool = True,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> List[Solution]:
    log = logger or structlog.get_logger(LOGGER_NAME)
    if any(f.grid.d != 1 for f in fs):
        raise SolverError("parabolic problems live on a time grid (d=1)")
    report = None
    if check:
        report = check_condition_4_1(coeffs, op.phi if phi is None else phi, logger=log)
        if not report.overall:
            raise ConditionFailure(report)
    notes: List[str] = []
    rhs = [_zero_mode_input(op, f, notes) for f in fs]
    notes = sorted(set(notes))
    symbols = parabolic_symbols(coeffs, op)
    images = {name: apply_multiplier_batch(sym, rhs, workers) for name, sym in symbols.as_dict().items()}
    forward = apply_multiplier_batch(parabolic_operator_symbol(coeffs, op), images["m0"], workers)
    out = []
    for idx, f in enumerate(rhs):
        terms = {
            "u_prime": images["m1"][idx],
            "conv_u_prime": images["m2"][idx],
            "Au": images["m3"][idx],
            "conv_Au": images["m4"][idx],
        }
        composed = terms["u_prime"] * coeffs.a0 + terms["conv_u_prime"] + terms["Au"] * coeffs.b0 + terms["conv_Au"]
        residual = _relative(forward[idx] - f, f)
        coercive = CoerciveReport.from_terms(terms, f, p)
        ratios: Dict[str, Optional[float]] = {
            "coercive": coercive.ratio_C,
            "term_identity": _relative(composed - f, f),
        }
        out.append(Solution(images["m0"][idx], terms, residual, ratios, coercive, report, list(notes)))
    log.info(
        "Parabolic solve complete",
        members=len(out),
        N=fs[0].grid.N if fs else 0,
        max_residual=max((s.residual for s in out), default=0.0),
        factorizations=op.factorizations,
    )
    return out


def phi_function(k: int, z: np.ndarray) -> np.ndarray:
    """phi_k(z) = sum_m z^m/(m+k)!, by Taylor series near 0 and a contour mean elsewhere."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    near = np.abs(z) < TAYLOR_RADIUS
    if np.any(near):
        zn = z[near]
        term = np.full_like(zn, 1.0 / math.factorial(k))
        total = term.copy()
        for m in range(1, TAYLOR_TERMS):
            term = term * zn / (m + k)
            total = total + term
        out[near] = total
    if np.any(~near):
        roots = np.exp(2j * np.pi * (np.arange(CONTOUR_POINTS) + 0.5) / CONTOUR_POINTS)
        w = z[~near][:, None] + roots[None, :]
        head = sum(w**m / math.factorial(m) for m in range(k))
        out[~near] = ((np.exp(w) - head) / w**k).mean(axis=1)
    return out


def _stencil_weights(offsets: Sequence[int], z: np.ndarray, h: float) -> np.ndarray:
    """Weights of int_0^h e^{-lambda (h - tau)} P(tau) d tau for the cubic P through the offsets.

    Returns shape (len(offsets), len(z)); z = -lambda h.
    """
    s = np.asarray(offsets, dtype=float)
    coeffs = np.linalg.inv(np.vander(s, 4, increasing=True))
    moments = np.stack([h * math.factorial(k) * phi_function(k + 1, z) for k in range(4)])
    return coeffs.T @ moments


def duhamel_quadrature(op: SectorialOperator, f: GridFunction) -> GridFunction:
    """u(t) = int_0^t e^{-A(t-s)} f(s) ds on the nodes t >= 0, zero before.

    Exact exponential weights against a local cubic interpolant of f, in the
    eigenbasis of A.
    """
    grid = f.grid
    values, vectors, inverse = op.eigensystem()
    g = f.values @ inverse.T
    h = grid.h
    start = grid.N // 2
    z = -values * h
    decay = np.exp(z)
    kinds = {
        "first": (0, 1, 2, 3),
        "interior": (-1, 0, 1, 2),
        "last": (-2, -1, 0, 1),
    }
    weights = {name: _stencil_weights(offs, z, h) for name, offs in kinds.items()}
    coords = np.zeros_like(g)
    for j in range(start, grid.N - 1):
        if j == start:
            name = "first"
        elif j + 2 > grid.N - 1:
            name = "last"
        else:
            name = "interior"
        offsets = kinds[name]
        nodes = g[[j + o for o in offsets]]
        coords[j + 1] = decay * coords[j] + np.sum(weights[name] * nodes, axis=0)
    return GridFunction(grid, coords @ vectors.T, f.e_norm)


def _check_causal(f: GridFunction) -> None:
    t = f.grid.axis()
    past = np.abs(f.values[t < 0])
    scale = max(1.0, float(np.max(np.abs(f.values))) if f.values.size else 1.0)
    if past.size and float(past.max()) > CAUSALITY_TOL * scale:
        raise SolverError(f"forcing is nonzero before t=0 (max {float(past.max()):.3e})")


def solve_cauchy(
    op: SectorialOperator,
    f: GridFunction,
    q: float = 2.0,
    thetas: Optional[Sequence[float]] = None,
    workers: int = 1,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> Solution:
    """u' + Au = f, u(0) = 0, by the m0 multiplier and by the semigroup convolution.

    f must vanish on t < 0; the half [-L, 0) of the box absorbs wrap-around
    and u is zeroed there before reporting.
    """
    log = logger or structlog.get_logger(LOGGER_NAME)
    if f.grid.d != 1:
        raise SolverError("the Cauchy problem lives on a time grid (d=1)")
    if not op.invertible:
        raise SolverError("the Cauchy problem needs an invertible A for the zero mode")
    _check_causal(f)
    symbols = cauchy_symbols(op)
    u = apply_multiplier(symbols.m0, f, workers)
    u_prime = apply_multiplier(symbols.u_prime, f, workers)
    past = f.grid.axis() < 0

    def causal(g: GridFunction) -> GridFunction:
        vals = g.values.copy()
        vals[past] = 0.0
        return GridFunction(g.grid, vals, g.e_norm)

    residual = equation_residual(cauchy_operator_symbol(op), u, f, workers)
    u, u_prime = causal(u), causal(u_prime)
    au = apply_operator(op, u)
    semigroup = duhamel_quadrature(op, f)
    discrepancy = _relative(u - semigroup, semigroup)

    f_norm = lp_norm(f, q)
    ratios: Dict[str, Optional[float]] = {
        "dual_path_discrepancy": discrepancy,
        "term_identity": _relative(u_prime + au - f, f),
    }
    for theta in thetas or (q, 2.0 * q):
        if theta < q:
            raise SolverError(f"theta={theta} must not be below q={q}")
        ratios[f"theta={theta:g}"] = _ratio(lp_norm(u, theta), f_norm)
    ratios["coercive"] = _ratio(lp_norm(u, q) + lp_norm(u_prime, q) + lp_norm(au, q), f_norm)
    solution = Solution(
        u,
        {"u_prime": u_prime, "Au": au, "u_semigroup": semigroup},
        residual,
        ratios,
    )
    log.info("Cauchy solve complete", N=f.grid.N, discrepancy=discrepancy, residual=residual)
    return solution


def solve_elliptic_doe(
    op: SectorialOperator,
    f: GridFunction,
    workers: int = 1,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> Solution:
    """-u'' + Au = f through sigma0 = (A + xi^2)^{-1}; u', u'' and Au from sigma1..sigma3."""
    log = logger or structlog.get_logger(LOGGER_NAME)
    if f.grid.d != 1:
        raise SolverError("the elliptic DOE lives on a line grid (d=1)")
    notes: List[str] = []
    rhs = _zero_mode_input(op, f, notes)
    symbols = cauchy_symbols(op)
    u = apply_multiplier(symbols.sigma0, rhs, workers)
    u_prime = apply_multiplier(symbols.sigma1, rhs, workers) * 1j
    u_second = apply_multiplier(symbols.sigma2, rhs, workers) * -1.0
    au = apply_multiplier(symbols.sigma3, rhs, workers)
    residual = equation_residual(doe_operator_symbol(op), u, rhs, workers)
    ratios: Dict[str, Optional[float]] = {"term_identity": _relative(u_second * -1.0 + au - rhs, rhs)}
    log.info("Elliptic DOE solve complete", N=f.grid.N, residual=residual)
    return Solution(u, {"u_prime": u_prime, "u_second": u_second, "Au": au}, residual, ratios, notes=notes)


@dataclass
class EnsembleRow:
    member_seed: int
    residual: float
    norm_u_prime: float
    norm_conv_u_prime: float
    norm_Au: float
    norm_conv_Au: float
    norm_f: float
    ratio_C: Optional[float]

    COLUMNS = (
        "member_seed",
        "residual",
        "norm_u_prime",
        "norm_conv_u_prime",
        "norm_Au",
        "norm_conv_Au",
        "norm_f",
        "ratio_C",
    )

    def as_tuple(self) -> Tuple[object, ...]:
        return tuple(getattr(self, name) for name in self.COLUMNS)


@dataclass
class FadingMemoryReport:
    rows: List[EnsembleRow]
    condition: ConditionReport
    max_ratio: Optional[float]
    median_ratio: Optional[float]
    max_residual: float
    excluded: List[int]
    uniform_constant: float
    factorizations: int


def _member_seeds(seed: int, count: int) -> List[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def demo_fading_memory(
    m: float = 1.0,
    k: float = 1.0,
    c: float = 1.0,
    grid_t: Optional[Grid] = None,
    n_x: int = 32,
    p: float = 2.0,
    q_spatial: float = 2.0,
    ensemble_size: int = DEFAULT_ENSEMBLE,
    seed: int = 0,
    length: float = 1.0,
    band: int = DEFAULT_BAND,
    forcings: Optional[Sequence[GridFunction]] = None,
    workers: int = 1,
    use_cache: bool = True,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> FadingMemoryReport:
    """Heat conduction with fading memory: u' + e^{-m|t|}*u' + Au + e^{-k|t|}*Au = f, A = -d_xx + c."""
    log = logger or structlog.get_logger(LOGGER_NAME)
    if min(m, k, c) <= 0:
        raise SolverError("m, k and c must be positive")
    grid = grid_t or Grid(1, 1024, 32.0 / min(m, k))
    op = build_dirichlet_laplacian(n_x, length, c)
    if not use_cache:
        op = op.without_cache()
    coeffs = ParabolicCoefficients(1.0, ExponentialKernel(m=m), 1.0, ExponentialKernel(m=k))
    report = check_condition_4_1(coeffs, op.phi, logger=log)
    if not report.overall:
        raise ConditionFailure(report)
    e_norm = ENorm("lp", q_spatial, length / (n_x + 1))
    seeds = _member_seeds(seed, ensemble_size)
    if forcings is None:
        limit = min(band, grid.N // 4)
        forcings = [band_limited_function(grid, s, n_x, limit, e_norm) for s in seeds]
    else:
        forcings = [g.with_norm(e_norm) for g in forcings]
        seeds = list(range(len(forcings)))
    solutions = solve_parabolic_batch(coeffs, op, forcings, p, workers=workers, check=False, logger=log)

    rows: List[EnsembleRow] = []
    excluded: List[int] = []
    for member_seed, sol in zip(seeds, solutions):
        assert sol.coercive is not None
        norms = sol.coercive.norms
        if sol.coercive.ratio_C is None:
            excluded.append(member_seed)
        rows.append(
            EnsembleRow(
                member_seed,
                sol.residual,
                norms["u_prime"],
                norms["conv_u_prime"],
                norms["Au"],
                norms["conv_Au"],
                norms["f"],
                sol.coercive.ratio_C,
            )
        )
    ratios = [r.ratio_C for r in rows if r.ratio_C is not None]
    xi = np.pi * grid.mode_indices() / grid.L
    eta = 1j * xi * (1.0 + 2 * m / (m**2 + xi**2)) / (1.0 + 2 * k / (k**2 + xi**2))
    result = FadingMemoryReport(
        rows,
        report,
        max(ratios) if ratios else None,
        float(np.median(ratios)) if ratios else None,
        max((r.residual for r in rows), default=0.0),
        excluded,
        uniform_resolvent_constant(op, eta),
        op.factorizations,
    )
    log.info(
        "Fading memory demo complete",
        members=len(rows),
        excluded=len(excluded),
        max_ratio=result.max_ratio,
        median_ratio=result.median_ratio,
        max_residual=result.max_residual,
        factorizations=result.factorizations,
    )
    return result


@dataclass
class DiffusionReport:
    components: List[Solution]
    norm_u: Dict[str, float]
    norm_f: float
    coercive_ratio: Optional[float]
    theta_ratios: Dict[str, Optional[float]]
    graph_norm: Optional[float]


def demo_diffusion_system(
    K: int = 4,
    c: float = 1.0,
    grid_t: Optional[Grid] = None,
    n_x: int = 16,
    p_inner: float = 2.0,
    q: float = 2.0,
    seed: int = 0,
    length: float = 1.0,
    forcings: Optional[Sequence[GridFunction]] = None,
    workers: int = 1,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> DiffusionReport:
    """Truncated system du_k/dt + (-Delta_h + c) u_k = f_k, u_k(0) = 0, k < K.

    E = L_p(G; l_p) is discretized as C^{K n_x} with the weighted l_p norm;
    components are solved one at a time with the shared stencil.
    """
    log = logger or structlog.get_logger(LOGGER_NAME)
    if K < 1:
        raise SolverError("truncation K must be at least 1")
    if c <= 0:
        raise SolverError("shift c must be positive")
    grid = grid_t or Grid(1, 1024, 32.0)
    if K * n_x * grid.N > MEMORY_BUDGET:
        raise SolverError(f"K * n_x * N = {K * n_x * grid.N} exceeds the budget of {MEMORY_BUDGET} unknowns")
    op = build_dirichlet_laplacian(n_x, length, c)
    e_norm = ENorm("lp", p_inner, length / (n_x + 1))
    if forcings is None:
        forcings = [causal_pulses(grid, s, n_x) for s in _member_seeds(seed, K)]
    if len(forcings) != K:
        raise SolverError(f"expected {K} forcing components, got {len(forcings)}")
    components = [solve_cauchy(op, g.with_norm(e_norm), q, workers=workers, logger=log) for g in forcings]

    def stack(parts: Sequence[GridFunction]) -> GridFunction:
        return GridFunction(grid, np.concatenate([g.values for g in parts], axis=-1), e_norm)

    u = stack([s.u for s in components])
    f = stack([g for g in forcings])
    u_prime = stack([s.derived["u_prime"] for s in components])
    au = stack([s.derived["Au"] for s in components])
    norm_f = lp_norm(f, q)
    norm_u = {"u": lp_norm(u, q), "u_prime": lp_norm(u_prime, q), "Au": lp_norm(au, q)}
    theta_ratios = {f"theta={t:g}": _ratio(lp_norm(u, t), norm_f) for t in (q, 2.0 * q)}
    block_norm = graph_norm(block_diagonal(op, K), u, q) if K * n_x <= BLOCK_LIMIT else None
    report = DiffusionReport(
        components,
        norm_u,
        norm_f,
        _ratio(sum(norm_u.values()), norm_f),
        theta_ratios,
        block_norm,
    )
    log.info("Diffusion system demo complete", K=K, n_x=n_x, coercive=report.coercive_ratio)
    return report


@dataclass
class SobolevReport:
    max_ratio: float
    median_ratio: float
    ratios: List[float]
    excluded: int
    grid_drift: float
    box_drift: float

    @property
    def stable(self) -> bool:
        return self.grid_drift < 0.05 and self.box_drift < 0.05


def _sobolev_ratios(
    coeffs: EllipticCoefficients,
    op: SectorialOperator,
    q: float,
    p: float,
    grid: Grid,
    seeds: Sequence[int],
    workers: int,
) -> Tuple[List[float], int]:
    members = [gaussian_packets(grid, s, op.n) for s in seeds]
    images = apply_multiplier_batch(elliptic_operator_symbol(coeffs, op), members, workers)
    ratios = []
    excluded = 0
    for u, lu in zip(members, images):
        num, den = lp_norm(u, p), lp_norm(lu, q)
        if num == 0 or den == 0:
            excluded += 1
            continue
        ratios.append(num / den)
    return ratios, excluded


def verify_sobolev(
    coeffs: EllipticCoefficients,
    op: SectorialOperator,
    q: float,
    p: float,
    ensemble_size: int = DEFAULT_ENSEMBLE,
    seed: int = 0,
    grid: Optional[Grid] = None,
    workers: int = 1,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> SobolevReport:
    """max ||u||_p / ||Lu||_q over seeded packets, with drift under 2x grid and 2x box refinement."""
    log = logger or structlog.get_logger(LOGGER_NAME)
    grid = grid or Grid(coeffs.d, 1024 if coeffs.d == 1 else 128, 16.0)
    if not check_gap(q, p, coeffs.d):
        raise GapConditionError(f"gap condition fails for q={q}, p={p}, d={coeffs.d}")
    seeds = _member_seeds(seed, ensemble_size)
    base, excluded = _sobolev_ratios(coeffs, op, q, p, grid, seeds, workers)
    if not base:
        raise SolverError("every ensemble member was excluded")
    finer, _ = _sobolev_ratios(coeffs, op, q, p, grid.refined(), seeds, workers)
    wider, _ = _sobolev_ratios(coeffs, op, q, p, grid.enlarged(), seeds, workers)
    top = max(base)
    report = SobolevReport(
        top,
        float(np.median(base)),
        base,
        excluded,
        abs(max(finer) - top) / top,
        abs(max(wider) - top) / top,
    )
    log.info(
        "Sobolev check complete",
        q=q,
        p=p,
        max_ratio=report.max_ratio,
        grid_drift=report.grid_drift,
        box_drift=report.box_drift,
    )
    return report


@dataclass
class GrowthReport:
    table: List[Tuple[float, float, float]]
    slope: float
    bounded: bool
    variation: float
    exponent: float
    caveat: str = ""


def negative_test_m1(
    op: SectorialOperator,
    q: float,
    theta: float,
    T_list: Sequence[float],
    points_per_decade: int = 200,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> GrowthReport:
    """sup_{|t| <= T} |t|^{1/q - 1/theta} ||it R(it, A)|| for each T, with a log-log slope fit.

    The table also carries the same sup for the literal symbol it R(it, A) - I.
    """
    log = logger or structlog.get_logger(LOGGER_NAME)
    if theta < q:
        raise SolverError(f"theta={theta} must not be below q={q}")
    T_sorted = sorted(float(T) for T in T_list)
    if len(T_sorted) < 2 or T_sorted[0] <= 0:
        raise SolverError("need at least two positive horizons")
    exponent = 1.0 / q - 1.0 / theta
    decades = math.log10(T_sorted[-1] / 1e-3)
    t = np.logspace(-3, math.log10(T_sorted[-1]), int(decades * points_per_decade) + 1)
    t = np.union1d(t, T_sorted)
    majorant = np.empty(len(t))
    literal = np.empty(len(t))
    eye = np.eye(op.n)
    for i, tv in enumerate(t):
        best_major, best_literal = 0.0, 0.0
        for sign in (1.0, -1.0):
            res = resolvent_matrix(op, 1j * sign * tv, check_sector=False)
            scaled = 1j * sign * tv * res
            best_major = max(best_major, float(np.linalg.norm(scaled, 2)))
            best_literal = max(best_literal, float(np.linalg.norm(scaled - eye, 2)))
        weight = tv**exponent
        majorant[i] = weight * best_major
        literal[i] = weight * best_literal
    table = []
    for T in T_sorted:
        mask = t <= T
        table.append((T, float(majorant[mask].max()), float(literal[mask].max())))
    sups = np.array([row[1] for row in table])
    slope = float(np.polyfit(np.log(T_sorted), np.log(sups), 1)[0])
    variation = float((sups.max() - sups.min()) / sups.min())
    caveat = ""
    if 0 < exponent < SENSITIVITY_EXPONENT:
        caveat = (
            f"growth exponent {exponent:.3g} is below what the horizon range "
            f"[{T_sorted[0]:g}, {T_sorted[-1]:g}] can separate from boundedness"
        )
    report = GrowthReport(table, slope, variation < BOUNDED_VARIATION, variation, exponent, caveat)
    log.info("m1 growth test complete", q=q, theta=theta, slope=slope, bounded=report.bounded)
    return report
