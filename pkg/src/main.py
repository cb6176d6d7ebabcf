from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

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
    mikhlin_functional_operator,
    xi_sample,
)
from .config import ConfigError, RunConfig, build_parser, format_config, parse_config
from .kernels import ZeroKernel, default_half_length
from .multiplier import (
    ConstantSymbol,
    Grid,
    GridFunction,
    MultiplierSymbol,
    band_limited_function,
    causal_pulses,
    cauchy_symbols,
    dft,
    elliptic_symbol,
    estimate_Lq_to_Lp_norm,
    parabolic_symbols,
    symbol_norm_profile,
)
from .rbound import estimate_R_bound
from .reports import ReportWriter
from .sectorial import check_positivity
from .solver import (
    EnsembleRow,
    Solution,
    demo_diffusion_system,
    demo_fading_memory,
    negative_test_m1,
    solve_cauchy,
    solve_elliptic,
    solve_elliptic_doe,
    solve_parabolic,
)

LOGGER_NAME = "fmlab.main"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_HYPOTHESIS = 2

FORCING_MODES = 32


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )
    structlog.configure(
        processors=[
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_logger_name,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.dict_tracebacks,
            structlog.processors.JSONRenderer(),
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


@dataclass
class Outcome:
    body: List[str] = field(default_factory=list)
    passed: bool = True


Handler = Callable[[RunConfig, ReportWriter, structlog.stdlib.BoundLogger], Outcome]


def _elliptic(cfg: RunConfig) -> EllipticCoefficients:
    if cfg.problem != "elliptic":
        raise ConfigError("this subcommand needs --problem elliptic")
    a = cfg.kernel("a")
    kernels = [[a if k == j else ZeroKernel(dim=cfg.d) for j in range(cfg.d)] for k in range(cfg.d)]
    try:
        return EllipticCoefficients(cfg.c_matrix(), kernels, cfg.b0, cfg.kernel("b1"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parabolic(cfg: RunConfig) -> ParabolicCoefficients:
    if cfg.problem != "parabolic":
        raise ConfigError("this subcommand needs --problem parabolic")
    try:
        return ParabolicCoefficients(cfg.a0, cfg.kernel("a1"), cfg.b0, cfg.kernel("b1"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _grid(cfg: RunConfig, d: int, kernels: Sequence = ()) -> Grid:
    length = cfg.L if cfg.L > 0 else default_half_length(kernels)
    return Grid(d, cfg.N, length)


def _forcing(grid: Grid, cfg: RunConfig, e_dim: int) -> GridFunction:
    return band_limited_function(grid, cfg.seed, e_dim, min(FORCING_MODES, grid.N // 4))


def _symbol(cfg: RunConfig) -> MultiplierSymbol:
    op = cfg.build_operator()
    if cfg.symbol == "identity":
        return ConstantSymbol(np.eye(op.n), dim=cfg.d)
    if cfg.symbol == "sigma":
        return elliptic_symbol(_elliptic(cfg), op)
    if cfg.symbol in ("m0", "m1", "m2", "m3", "m4"):
        return parabolic_symbols(_parabolic(cfg), op).as_dict()[cfg.symbol]
    return cauchy_symbols(op).as_dict()[cfg.symbol.removeprefix("cauchy_")]


def _profile(writer: ReportWriter, name: str, u: GridFunction) -> None:
    magnitude = u.e_norm(u.values)
    if u.grid.d == 1:
        writer.write_plot(name, "t", "abs_u", u.grid.axis(), magnitude)
        return
    pts = u.grid.points().reshape(-1, 2)
    writer.write_csv(name, ("x0", "x1", "abs_u"), zip(pts[:, 0], pts[:, 1], magnitude.ravel()))


def _condition_csv(writer: ReportWriter, name: str, report: ConditionReport) -> None:
    writer.write_csv(name, ("item", "pass", "constant", "worst_xi"), report.rows())


def _solution_lines(sol: Solution, cfg: RunConfig) -> List[str]:
    lines = [f"residual: {sol.residual:.6e} (tolerance {cfg.residual_tol:g})"]
    for key, value in sol.ratios.items():
        lines.append(f"{key}: {'undefined (f = 0)' if value is None else f'{value:.6g}'}")
    lines.extend(f"note: {note}" for note in sol.notes)
    if sol.condition is not None:
        lines.append(sol.condition.format_text())
    return lines


def _finish_solution(
    cfg: RunConfig,
    writer: ReportWriter,
    logger: structlog.stdlib.BoundLogger,
    sol: Solution,
) -> Outcome:
    if sol.residual > cfg.residual_tol:
        logger.warning("Residual above tolerance", residual=sol.residual, tolerance=cfg.residual_tol)
    _profile(writer, f"{cfg.subcommand}-profile.csv", sol.u)
    writer.write_spectrum(f"{cfg.subcommand}-spectrum.csv", dft(sol.u))
    return Outcome(_solution_lines(sol, cfg))


def run_solve_elliptic(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    coeffs = _elliptic(cfg)
    op = cfg.build_operator()
    grid = _grid(cfg, coeffs.d, coeffs.kernels())
    sol = solve_elliptic(coeffs, op, _forcing(grid, cfg, op.n), cfg.p, cfg.q, cfg.phi, cfg.threads, logger)
    return _finish_solution(cfg, writer, logger, sol)


def run_solve_parabolic(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    coeffs = _parabolic(cfg)
    op = cfg.build_operator()
    grid = _grid(cfg, 1, coeffs.kernels())
    sol = solve_parabolic(coeffs, op, _forcing(grid, cfg, op.n), cfg.p, cfg.phi, cfg.threads, logger=logger)
    return _finish_solution(cfg, writer, logger, sol)


def run_solve_cauchy(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    op = cfg.build_operator()
    grid = _grid(cfg, 1)
    f = causal_pulses(grid, cfg.seed, op.n)
    sol = solve_cauchy(op, f, cfg.q, (cfg.q, cfg.theta), cfg.threads, logger)
    discrepancy = sol.ratios["dual_path_discrepancy"] or 0.0
    if discrepancy > cfg.drift_tol:
        logger.warning("Multiplier and semigroup paths disagree", discrepancy=discrepancy)
    return _finish_solution(cfg, writer, logger, sol)


def run_solve_elliptic_doe(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    op = cfg.build_operator()
    grid = _grid(cfg, 1)
    sol = solve_elliptic_doe(op, _forcing(grid, cfg, op.n), cfg.threads, logger)
    return _finish_solution(cfg, writer, logger, sol)


def run_check(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    if cfg.problem == "elliptic":
        report = check_condition_3_1(_elliptic(cfg), cfg.phi, logger=logger)
    else:
        report = check_condition_4_1(_parabolic(cfg), cfg.phi, logger=logger)
    positivity = check_positivity(cfg.build_operator(), cfg.phi, logger=logger)
    _condition_csv(writer, "check-conditions.csv", report)
    body = [report.format_text()]
    status = "pass" if positivity.passed else f"FAIL at lambda={positivity.offending_lambda}"
    body.append(f"positivity of A on S_phi: {status}, measured M = {positivity.measured_M:.6g}")
    return Outcome(body, report.overall and positivity.passed)


def run_mikhlin(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    symbol = _symbol(cfg)
    report = mikhlin_functional_operator(
        symbol,
        cfg.q,
        cfg.p,
        mode=cfg.mikhlin_mode,
        trials=cfg.trials,
        seed=cfg.seed,
        workers=cfg.threads,
        logger=logger,
    )
    rows = [
        (" ".join(map(str, alpha)), value, report.diverging.get(alpha, False))
        for alpha, value in report.per_alpha.items()
    ]
    writer.write_csv("mikhlin.csv", ("alpha", "value", "diverging"), rows)
    pts = xi_sample(symbol.dim)
    axis = pts[:, 0] if symbol.dim == 1 else np.linalg.norm(pts, axis=1)
    writer.write_plot("mikhlin-profile.csv", "xi", "symbol_norm", axis, symbol_norm_profile(symbol, pts))
    body = [f"symbol {symbol.name} ({report.mode}), q={cfg.q:g}, p={cfg.p:g}, d={report.d}"]
    for alpha, value, diverging in rows:
        body.append(f"  alpha=({alpha}): {value:.6g}{'  diverging' if diverging else ''}")
    body.append(f"overall sup: {report.overall_sup:.6g} ({'finite' if report.finite else 'not finite'})")
    return Outcome(body, report.finite)


def run_rbound(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    family = cfg.build_family()
    estimate = estimate_R_bound(family, cfg.p, cfg.trials, cfg.draw_size, cfg.seed, cfg.threads, logger)
    writer.write_csv("rbound-trials.csv", ("trial", "ratio"), enumerate(estimate.trial_ratios.tolist()))
    line = (
        f"R_p estimate {estimate.value:.6g} (lower bound), sup norm {estimate.sup_norm:.6g}, "
        f"p={cfg.p:g}, trials={estimate.trials}, N={estimate.draw_size_N}, "
        f"signs={'exhaustive' if estimate.exhaustive else 'sampled'}"
    )
    return Outcome([line])


def run_estimate_norm(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    symbol = _symbol(cfg)
    kernels = _elliptic(cfg).kernels() if cfg.problem == "elliptic" else _parabolic(cfg).kernels()
    grid = _grid(cfg, symbol.dim, kernels)
    value = estimate_Lq_to_Lp_norm(symbol, cfg.q, cfg.p, grid, cfg.ensemble_size, cfg.seed, cfg.threads, logger)
    return Outcome([f"||T_{symbol.name}||_(L_{cfg.q:g} -> L_{cfg.p:g}) >= {value:.6g} on {grid.format()}"])


def run_demo_fading_memory(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    grid = Grid(1, cfg.N, cfg.L if cfg.L > 0 else 32.0 / min(cfg.m, cfg.k))
    report = demo_fading_memory(
        cfg.m,
        cfg.k,
        cfg.heat_c,
        grid,
        cfg.n_x,
        cfg.p,
        cfg.q_spatial,
        cfg.ensemble_size,
        cfg.seed,
        workers=cfg.threads,
        logger=logger,
    )
    writer.write_csv("demo-fading-memory.csv", EnsembleRow.COLUMNS, (row.as_tuple() for row in report.rows))
    _condition_csv(writer, "demo-fading-memory-conditions.csv", report.condition)
    if report.max_residual > cfg.residual_tol:
        logger.warning("Residual above tolerance", max_residual=report.max_residual)
    body = [
        report.condition.format_text(),
        f"members: {len(report.rows)} (excluded f = 0: {len(report.excluded)})",
        f"max ratio_C: {report.max_ratio}",
        f"median ratio_C: {report.median_ratio}",
        f"max residual: {report.max_residual:.6e}",
        f"uniform resolvent constant K: {report.uniform_constant:.6g}",
        f"factorizations: {report.factorizations}",
    ]
    return Outcome(body)


def run_demo_diffusion(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    grid = Grid(1, cfg.N, cfg.L if cfg.L > 0 else 32.0)
    report = demo_diffusion_system(
        cfg.K,
        cfg.heat_c,
        grid,
        cfg.n_x,
        cfg.p_inner,
        cfg.q,
        cfg.seed,
        workers=cfg.threads,
        logger=logger,
    )
    rows = [
        (idx, sol.residual, sol.ratios.get("dual_path_discrepancy"), sol.ratios.get("coercive"))
        for idx, sol in enumerate(report.components)
    ]
    writer.write_csv("demo-diffusion.csv", ("component", "residual", "dual_path_discrepancy", "coercive"), rows)
    _profile(writer, "demo-diffusion-profile.csv", report.components[0].u)
    body = [f"{key}: {value:.6g}" for key, value in report.norm_u.items()]
    body.append(f"norm f: {report.norm_f:.6g}")
    body.append(f"coercive ratio: {report.coercive_ratio}")
    body.extend(f"{key}: {value}" for key, value in report.theta_ratios.items())
    if report.graph_norm is not None:
        body.append(f"graph norm of u: {report.graph_norm:.6g}")
    return Outcome(body)


def run_negative_m1(cfg: RunConfig, writer: ReportWriter, logger: structlog.stdlib.BoundLogger) -> Outcome:
    report = negative_test_m1(cfg.build_operator(), cfg.q, cfg.theta, cfg.horizons(), logger=logger)
    writer.write_csv("negative-m1.csv", ("T", "majorant_sup", "literal_sup"), report.table)
    body = [
        f"exponent 1/q - 1/theta = {report.exponent:.6g}",
        f"log-log slope: {report.slope:.6g}",
        f"variation: {report.variation:.6g} ({'bounded' if report.bounded else 'growing'})",
    ]
    if report.caveat:
        body.append(f"caveat: {report.caveat}")
    return Outcome(body)


HANDLERS: Dict[str, Handler] = {
    "solve-elliptic": run_solve_elliptic,
    "solve-parabolic": run_solve_parabolic,
    "solve-cauchy": run_solve_cauchy,
    "solve-elliptic-doe": run_solve_elliptic_doe,
    "check": run_check,
    "mikhlin": run_mikhlin,
    "rbound": run_rbound,
    "estimate-norm": run_estimate_norm,
    "demo-fading-memory": run_demo_fading_memory,
    "demo-diffusion": run_demo_diffusion,
    "negative-m1": run_negative_m1,
}


def run(cfg: RunConfig, writer: Optional[ReportWriter] = None) -> int:
    """Dispatch one subcommand and write its report; returns the exit code."""
    logger = structlog.get_logger(LOGGER_NAME).bind(subcommand=cfg.subcommand, seed=cfg.seed)
    writer = writer or ReportWriter(cfg.output_dir)
    report_name = f"{cfg.subcommand}.txt"
    header = format_config(cfg)
    try:
        if not check_gap(cfg.q, cfg.p, cfg.d):
            raise GapConditionError(f"gap condition 1/q - 1/p <= 2/d fails for q={cfg.q}, p={cfg.p}, d={cfg.d}")
        outcome = HANDLERS[cfg.subcommand](cfg, writer, logger)
    except ConditionFailure as exc:
        logger.error("Hypothesis check failed", error=str(exc))
        _condition_csv(writer, f"{cfg.subcommand}-conditions.csv", exc.report)
        writer.write_report(report_name, header, f"REFUSED: {exc}\n{exc.report.format_text()}")
        return EXIT_HYPOTHESIS
    except GapConditionError as exc:
        logger.error("Gap condition failed", error=str(exc))
        writer.write_report(report_name, header, f"REFUSED: {exc}")
        return EXIT_HYPOTHESIS
    except Exception as exc:
        logger.error("Run failed", error=str(exc), error_type=type(exc).__name__)
        return EXIT_ERROR
    text = "\n".join(outcome.body)
    writer.write_report(report_name, header, text)
    print(text)
    logger.info("Run complete", passed=outcome.passed, files=len(writer.written))
    return EXIT_OK if outcome.passed else EXIT_HYPOTHESIS


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    if not args:
        build_parser().print_usage(sys.stderr)
        return EXIT_ERROR
    try:
        cfg = parse_config(args)
    except GapConditionError as exc:
        print(f"fmlab: refused: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except ConfigError as exc:
        print(f"fmlab: {exc}", file=sys.stderr)
        return EXIT_ERROR
    configure_logging(cfg.log_level)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
