from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog

from .kernels import Kernel, ZeroKernel
from .multiplier import MultiplierSymbol
from .rbound import OperatorFamily, estimate_R_bound
from .sectorial import ANGLE_TOL

LOGGER_NAME = "fmlab.conditions"

XI_MIN = 1e-6
XI_MAX = 1e6
POINTS_PER_DECADE = 400
POINTS_PER_DECADE_2D = 50
DIRECTIONS_2D = 16
TAIL_THRESHOLD = 1e3
PASS_TOL = 1e-6
FD_STEP = 1e-4
RBOUND_SAMPLE = 64
TREND_SLOPE = 0.05

MultiIndex = Tuple[int, ...]


class GapConditionError(ValueError):
    """Raised when 1/q - 1/p <= 2/d fails or exponents are out of range."""


class MikhlinError(ValueError):
    """Raised when a symbol is not finite on the frequency sample."""


@dataclass
class ConditionItem:
    label: str
    passed: bool
    constant: float
    worst_xi: Optional[Tuple[float, ...]] = None
    detail: str = ""


@dataclass
class ConditionReport:
    problem: str
    items: List[ConditionItem] = field(default_factory=list)
    constants: Dict[str, float] = field(default_factory=dict)

    @property
    def overall(self) -> bool:
        return all(item.passed for item in self.items)

    def failing(self) -> List[ConditionItem]:
        return [item for item in self.items if not item.passed]

    def rows(self) -> List[Tuple[str, bool, float, str]]:
        return [
            (
                item.label,
                item.passed,
                item.constant,
                "" if item.worst_xi is None else " ".join(f"{x:.17g}" for x in item.worst_xi),
            )
            for item in self.items
        ]

    def format_text(self) -> str:
        width = max(len(item.label) for item in self.items) if self.items else 0
        lines = [f"{self.problem}: {'PASS' if self.overall else 'FAIL'}"]
        for item in self.items:
            status = "pass" if item.passed else "FAIL"
            worst = "" if item.worst_xi is None else f"  worst xi={list(item.worst_xi)}"
            note = f"  ({item.detail})" if item.detail else ""
            lines.append(f"  {item.label:<{width}}  {status}  {item.constant:.6g}{worst}{note}")
        return "\n".join(lines)


class ConditionFailure(RuntimeError):
    def __init__(self, report: ConditionReport):
        names = ", ".join(item.label for item in report.failing()) or "unknown"
        super().__init__(f"{report.problem} fails: {names}")
        self.report = report


@dataclass
class EllipticCoefficients:
    """c_kj, a_kj, b0, b1 of -sum (c_kj + a_kj*) d_k d_j u + b0 Au + b1*Au = f."""

    c: np.ndarray
    a: List[List[Kernel]]
    b0: complex
    b1: Kernel

    def __post_init__(self) -> None:
        self.c = np.atleast_2d(np.asarray(self.c, dtype=complex))
        d = self.c.shape[0]
        if d not in (1, 2) or self.c.shape != (d, d):
            raise ValueError(f"c must be a 1x1 or 2x2 matrix, got {self.c.shape}")
        if len(self.a) != d or any(len(row) != d for row in self.a):
            raise ValueError("kernel array a must be d x d")
        kernels = [k for row in self.a for k in row] + [self.b1]
        if any(k.dim != d for k in kernels):
            raise ValueError(f"all kernels must have dimension {d}")
        self.b0 = complex(self.b0)

    @property
    def d(self) -> int:
        return int(self.c.shape[0])

    @classmethod
    def laplacian(cls, d: int = 1, b0: complex = 1.0, b1: Optional[Kernel] = None) -> "EllipticCoefficients":
        return cls(
            np.eye(d),
            [[ZeroKernel(dim=d) for _ in range(d)] for _ in range(d)],
            b0,
            b1 or ZeroKernel(dim=d),
        )

    def kernels(self) -> List[Kernel]:
        return [k for row in self.a for k in row] + [self.b1]


@dataclass
class ParabolicCoefficients:
    """a0, a1, b0, b1 of a0 u' + a1*u' + b0 Au + b1*Au = f."""

    a0: complex
    a1: Kernel
    b0: complex
    b1: Kernel

    def __post_init__(self) -> None:
        if self.a1.dim != 1 or self.b1.dim != 1:
            raise ValueError("parabolic kernels must be one-dimensional")
        self.a0 = complex(self.a0)
        self.b0 = complex(self.b0)

    def kernels(self) -> List[Kernel]:
        return [self.a1, self.b1]


def check_gap(q: float, p: float, d: int) -> bool:
    if not (1.0 < q <= p < math.inf):
        raise GapConditionError(f"exponents must satisfy 1 < q <= p < inf, got q={q}, p={p}")
    if d < 1:
        raise GapConditionError(f"dimension must be positive, got {d}")
    return 1.0 / q - 1.0 / p <= 2.0 / d


def xi_sample(
    d: int = 1,
    points_per_decade: Optional[int] = None,
    xi_min: float = XI_MIN,
    xi_max: float = XI_MAX,
    directions: int = DIRECTIONS_2D,
) -> np.ndarray:
    """Symmetric log grid on the punctured line, or radii times unit directions in 2D."""
    density = points_per_decade or (POINTS_PER_DECADE if d == 1 else POINTS_PER_DECADE_2D)
    decades = math.log10(xi_max / xi_min)
    radii = np.logspace(math.log10(xi_min), math.log10(xi_max), int(round(decades * density)) + 1)
    if d == 1:
        return np.concatenate([-radii[::-1], radii]).reshape(-1, 1)
    if d == 2:
        angles = np.arange(directions) * (2.0 * math.pi / directions)
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    raise ValueError(f"frequency samples exist for d in (1, 2), got {d}")


def _multi_indices(d: int, include_zero: bool = True) -> List[MultiIndex]:
    out = [tuple(a) for a in itertools.product((0, 1), repeat=d)]
    return out if include_zero else [a for a in out if any(a)]


def _transform_all(kernel: Kernel, pts: np.ndarray, alpha: Optional[MultiIndex] = None) -> np.ndarray:
    arg = pts[:, 0] if pts.shape[1] == 1 else pts
    if alpha is None:
        return np.asarray(kernel.transform(arg), dtype=complex)
    return np.asarray(kernel.transform_derivative(arg, alpha), dtype=complex)


def _argmin_item(label: str, values: np.ndarray, pts: np.ndarray, threshold: float = PASS_TOL) -> ConditionItem:
    idx = int(np.argmin(values))
    const = float(values[idx])
    return ConditionItem(label, const > threshold, const, tuple(float(x) for x in pts[idx]))


def _argmax_item(label: str, values: np.ndarray, pts: np.ndarray) -> ConditionItem:
    idx = int(np.argmax(values))
    const = float(values[idx])
    return ConditionItem(label, bool(np.isfinite(const)), const, tuple(float(x) for x in pts[idx]))


def _sector_item(label: str, symbol: np.ndarray, phi: float, pts: np.ndarray) -> ConditionItem:
    nonzero = np.abs(symbol) > 0
    angles = np.where(nonzero, np.abs(np.angle(symbol)), 0.0)
    idx = int(np.argmax(angles))
    worst = float(angles[idx])
    return ConditionItem(
        label,
        worst <= phi + ANGLE_TOL,
        worst,
        tuple(float(x) for x in pts[idx]),
        detail=f"max |arg| vs phi={phi:.6g}",
    )


def _derivative_bound(kernel: Kernel, pts: np.ndarray) -> Tuple[np.ndarray, MultiIndex]:
    radius = np.linalg.norm(pts, axis=1)
    best = np.zeros(len(pts))
    best_alpha: MultiIndex = (0,) * pts.shape[1]
    top = -1.0
    for beta in _multi_indices(pts.shape[1]):
        vals = radius ** sum(beta) * np.abs(_transform_all(kernel, pts, beta if any(beta) else None))
        if vals.max() > top:
            top = float(vals.max())
            best, best_alpha = vals, beta
    return best, best_alpha


def _beta_constants(kernels: List[Kernel], pts: np.ndarray) -> Dict[MultiIndex, float]:
    """sup |xi|^|beta| |D^beta k^| for each beta, taken over all kernels."""
    radius = np.linalg.norm(pts, axis=1)
    out: Dict[MultiIndex, float] = {}
    for beta in _multi_indices(pts.shape[1]):
        vals = [radius ** sum(beta) * np.abs(_transform_all(k, pts, beta if any(beta) else None)) for k in kernels]
        out[beta] = float(np.max(vals))
    return out


def _beta_label(beta: MultiIndex) -> str:
    return "beta=" + "".join(str(b) for b in beta)


def check_condition_3_1(
    coeffs: EllipticCoefficients,
    phi: float,
    sample: Optional[np.ndarray] = None,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> ConditionReport:
    """Evaluate the four items of the elliptic condition on a frequency sample."""
    log = logger or structlog.get_logger(LOGGER_NAME)
    pts = xi_sample(coeffs.d) if sample is None else np.asarray(sample, dtype=float).reshape(-1, coeffs.d)
    radius = np.linalg.norm(pts, axis=1)
    if np.any(radius == 0):
        raise ValueError("frequency sample must exclude the origin")
    denom = coeffs.b0 + _transform_all(coeffs.b1, pts)
    symbol_n = np.zeros(len(pts), dtype=complex)
    for k in range(coeffs.d):
        for j in range(coeffs.d):
            symbol_n += (coeffs.c[k, j] + _transform_all(coeffs.a[k][j], pts)) * pts[:, k] * pts[:, j]

    report = ConditionReport("elliptic condition")
    item1 = _argmin_item("(1) C_b = inf |b0 + b1^|", np.abs(denom), pts)
    item2 = _argmin_item("(2) C = inf |N(xi)| / |xi|^2", np.abs(symbol_n) / radius**2, pts)
    report.items.extend([item1, item2])
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = symbol_n / denom
    if item1.passed:
        report.items.append(_sector_item("(3) eta(xi) in S_phi", eta, phi, pts))
    else:
        report.items.append(
            ConditionItem("(3) eta(xi) in S_phi", False, math.nan, detail="undefined where b0 + b1^ vanishes")
        )
    a_bounds = [_derivative_bound(k, pts) for row in coeffs.a for k in row]
    a_vals = np.max(np.stack([vals for vals, _ in a_bounds]), axis=0)
    b_vals, _ = _derivative_bound(coeffs.b1, pts)
    report.items.append(_argmax_item("(4) C0 = sup |xi|^|beta| |D^beta a_kj^|", a_vals, pts))
    report.items.append(_argmax_item("(4) C1 = sup |xi|^|beta| |D^beta b1^|", b_vals, pts))
    report.constants = {
        "C_b": item1.constant,
        "C": item2.constant,
        "C0": report.items[3].constant,
        "C1": report.items[4].constant,
    }
    per_beta = [
        (report.items[3], "C0", _beta_constants([k for row in coeffs.a for k in row], pts)),
        (report.items[4], "C1", _beta_constants([coeffs.b1], pts)),
    ]
    for item, name, constants in per_beta:
        item.detail = ", ".join(f"{_beta_label(beta)}: {value:.6g}" for beta, value in constants.items())
        report.constants.update({f"{name}[{_beta_label(beta)}]": value for beta, value in constants.items()})
    log.info(
        "Elliptic condition evaluated",
        passed=report.overall,
        samples=len(pts),
        **{key: round(value, 12) for key, value in report.constants.items()},
    )
    return report


def check_condition_4_1(
    coeffs: ParabolicCoefficients,
    phi: float,
    sample: Optional[np.ndarray] = None,
    tail_threshold: float = TAIL_THRESHOLD,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> ConditionReport:
    """Evaluate the three items of the parabolic condition on a frequency sample."""
    log = logger or structlog.get_logger(LOGGER_NAME)
    pts = xi_sample(1) if sample is None else np.asarray(sample, dtype=float).reshape(-1, 1)
    xi = pts[:, 0]
    if np.any(xi == 0):
        raise ValueError("frequency sample must exclude the origin")
    a_hat = _transform_all(coeffs.a1, pts)
    b_hat = _transform_all(coeffs.b1, pts)
    da_hat = _transform_all(coeffs.a1, pts, (1,))
    db_hat = _transform_all(coeffs.b1, pts, (1,))

    report = ConditionReport("parabolic condition")
    tail = np.abs(xi) >= tail_threshold
    if not np.any(tail):
        raise ValueError(f"sample has no frequencies beyond the tail threshold {tail_threshold}")
    tail_item = _argmin_item("(1) lim inf |a0 + a1^|", np.abs(coeffs.a0 + a_hat[tail]), pts[tail])
    tail_item.detail = f"infimum over |xi| >= {tail_threshold:g}"
    cb_item = _argmin_item("(1) C_b = inf |b0 + b1^|", np.abs(coeffs.b0 + b_hat), pts)
    report.items.extend([tail_item, cb_item])
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = 1j * xi * (a_hat + coeffs.a0) / (b_hat + coeffs.b0)
    if cb_item.passed:
        report.items.append(_sector_item("(2) i xi (a1^ + a0)/(b1^ + b0) in S_phi", eta, phi, pts))
    else:
        report.items.append(
            ConditionItem(
                "(2) i xi (a1^ + a0)/(b1^ + b0) in S_phi",
                False,
                math.nan,
                detail="undefined where b0 + b1^ vanishes",
            )
        )
    bounds = [
        ("C0", "(3) C0 = sup |a1^|", np.abs(a_hat)),
        ("C1", "(3) C1 = sup |xi a1^'|", np.abs(xi * da_hat)),
        ("C2", "(3) C2 = sup |b1^|", np.abs(b_hat)),
        ("C3", "(3) C3 = sup |xi b1^'|", np.abs(xi * db_hat)),
    ]
    constants = {"C_b": cb_item.constant, "tail_inf": tail_item.constant}
    for key, label, vals in bounds:
        item = _argmax_item(label, vals, pts)
        report.items.append(item)
        constants[key] = item.constant
    report.constants = constants
    log.info(
        "Parabolic condition evaluated",
        passed=report.overall,
        samples=len(pts),
        **{key: round(value, 12) for key, value in constants.items()},
    )
    return report


@dataclass
class MikhlinReport:
    per_alpha: Dict[MultiIndex, float]
    q: float
    p: float
    d: int
    diverging: Dict[MultiIndex, bool] = field(default_factory=dict)
    mode: str = "norm-sup"

    @property
    def overall_sup(self) -> float:
        return max(self.per_alpha.values())

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.per_alpha.values()) and not any(
            self.diverging.values()
        )


def _weight_exponent(alpha: MultiIndex, q: float, p: float, d: int) -> float:
    return sum(alpha) + d * (1.0 / q - 1.0 / p)


def _fd_step(xi: np.ndarray) -> float:
    return FD_STEP * max(1.0, float(np.linalg.norm(xi)))


def _nested_difference(fn: Callable[[np.ndarray], object], xi: np.ndarray, alpha: MultiIndex):
    """Central differences along every axis with alpha_i = 1."""
    axes = [i for i, a in enumerate(alpha) if a]
    if not axes:
        return fn(xi)
    axis, rest = axes[0], tuple(0 if i == axes[0] else a for i, a in enumerate(alpha))
    step = _fd_step(xi)
    shift = np.zeros_like(xi)
    shift[axis] = step
    return (_nested_difference(fn, xi + shift, rest) - _nested_difference(fn, xi - shift, rest)) / (2 * step)


def _trend_flag(radius: np.ndarray, values: np.ndarray) -> bool:
    """Growth toward either end of the sample, judged by the log-log slope over the outer decade."""
    if not np.all(np.isfinite(values)):
        return True
    r_min, r_max = radius.min(), radius.max()
    floor = 1e-300
    flags = []
    for mask, sign in ((radius >= r_max / 10.0, 1.0), (radius <= r_min * 10.0, -1.0)):
        r, v = radius[mask], values[mask]
        if len(r) < 2 or np.max(v) <= 1e-12 * max(1.0, float(np.max(values))):
            flags.append(False)
            continue
        slope = np.polyfit(np.log(r), np.log(np.maximum(v, floor)), 1)[0]
        flags.append(sign * slope > TREND_SLOPE)
    return any(flags)


def mikhlin_functional_scalar(
    psi: Callable[[np.ndarray], complex],
    q: float,
    p: float,
    d: int = 1,
    sample: Optional[np.ndarray] = None,
    dpsi: Optional[Callable[[np.ndarray, MultiIndex], complex]] = None,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> MikhlinReport:
    """sup |xi|^{|alpha| + d(1/q - 1/p)} |D^alpha psi(xi)| for each alpha <= (1, ..., 1).

    psi and dpsi receive one frequency as an array of length d; without dpsi
    the derivatives come from central differences.
    """
    log = logger or structlog.get_logger(LOGGER_NAME)
    pts = xi_sample(d) if sample is None else np.asarray(sample, dtype=float).reshape(-1, d)
    radius = np.linalg.norm(pts, axis=1)
    values = np.array([complex(psi(x)) for x in pts])
    if not np.all(np.isfinite(values)):
        raise MikhlinError("symbol is not finite on the frequency sample")
    per_alpha: Dict[MultiIndex, float] = {}
    diverging: Dict[MultiIndex, bool] = {}
    for alpha in _multi_indices(d):
        if not any(alpha):
            deriv = values
        elif dpsi is not None:
            deriv = np.array([complex(dpsi(x, alpha)) for x in pts])
        else:
            deriv = np.array([complex(_nested_difference(lambda z: complex(psi(z)), x, alpha)) for x in pts])
        weighted = radius ** _weight_exponent(alpha, q, p, d) * np.abs(deriv)
        per_alpha[alpha] = float(np.max(weighted))
        diverging[alpha] = _trend_flag(radius, weighted)
    report = MikhlinReport(per_alpha, q, p, d, diverging, mode="scalar")
    log.debug("Scalar Mikhlin functional evaluated", overall_sup=report.overall_sup, finite=report.finite)
    return report


def _operator_derivative(symbol: MultiplierSymbol, xi: np.ndarray, alpha: MultiIndex) -> np.ndarray:
    if not any(alpha):
        return symbol.evaluate(xi)
    if sum(alpha) == 1:
        analytic = symbol.derivative(xi, alpha.index(1))
        if analytic is not None:
            return analytic
    return _nested_difference(symbol.evaluate, xi, alpha)


def mikhlin_functional_operator(
    symbol: MultiplierSymbol,
    q: float,
    p: float,
    d: Optional[int] = None,
    sample: Optional[np.ndarray] = None,
    mode: str = "norm-sup",
    trials: int = 100,
    seed: int = 0,
    workers: int = 1,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> MikhlinReport:
    """Weighted Mikhlin functional of an operator-valued symbol.

    ``norm-sup`` takes the sup of weighted spectral norms; ``rbound-sample``
    estimates the R-bound of the weighted family on at most 64 frequencies.
    """
    log = logger or structlog.get_logger(LOGGER_NAME)
    if mode not in ("norm-sup", "rbound-sample"):
        raise ValueError(f"unknown Mikhlin mode {mode!r}")
    dim = symbol.dim if d is None else d
    pts = xi_sample(dim) if sample is None else np.asarray(sample, dtype=float).reshape(-1, dim)
    radius = np.linalg.norm(pts, axis=1)
    per_alpha: Dict[MultiIndex, float] = {}
    diverging: Dict[MultiIndex, bool] = {}
    for alpha in _multi_indices(dim):
        weight = radius ** _weight_exponent(alpha, q, p, dim)
        mats = [w * _operator_derivative(symbol, x, alpha) for w, x in zip(weight, pts)]
        norms = np.array([np.linalg.norm(m, 2) for m in mats])
        if not np.all(np.isfinite(norms)):
            raise MikhlinError(f"weighted symbol is not finite for alpha={alpha}")
        diverging[alpha] = _trend_flag(radius, norms)
        if mode == "norm-sup":
            per_alpha[alpha] = float(norms.max())
            continue
        picks = np.unique(np.linspace(0, len(mats) - 1, min(RBOUND_SAMPLE, len(mats))).astype(int))
        family = OperatorFamily([mats[i] for i in picks], [tuple(pts[i]) for i in picks])
        draw = min(8, 4 * len(family))
        per_alpha[alpha] = estimate_R_bound(family, 2.0, trials, draw, seed, workers).value
    report = MikhlinReport(per_alpha, q, p, dim, diverging, mode=mode)
    log.info(
        "Operator Mikhlin functional evaluated",
        symbol=symbol.name,
        mode=mode,
        overall_sup=report.overall_sup,
        finite=report.finite,
    )
    return report


def weighted_scalar(
    psi: Callable[[np.ndarray], complex], q: float, p: float, d: int = 1
) -> Callable[[np.ndarray], complex]:
    """s(xi) psi(xi) with s = |xi|^{d(1/q - 1/p)}."""
    exponent = d * (1.0 / q - 1.0 / p)

    def weighted(xi: np.ndarray) -> complex:
        return float(np.linalg.norm(xi)) ** exponent * complex(psi(xi))

    return weighted