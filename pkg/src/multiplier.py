from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import (
    TYPE_CHECKING,
    Callable,
    Dict,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import structlog

from .sectorial import (
    SectorError,
    SectorialOperator,
    SingularResolventError,
    resolvent_apply,
    resolvent_matrix,
)

if TYPE_CHECKING:  # pragma: no cover
    from .conditions import EllipticCoefficients, ParabolicCoefficients

LOGGER_NAME = "fmlab.multiplier"

ZERO_LIMIT = "limit"
ZERO_PROJECT = "project"

ZeroRule = Union[str, np.ndarray]


class MultiplierError(ValueError):
    def __init__(self, message: str, xi: Optional[np.ndarray] = None):
        super().__init__(message)
        self.xi = xi


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [-L, L)^d with N points per axis."""

    d: int = 1
    N: int = 1024
    L: float = 32.0

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise MultiplierError(f"grid dimension must be 1 or 2, got {self.d}")
        if self.N < 8 or self.N & (self.N - 1):
            raise MultiplierError(f"N must be a power of two >= 8, got {self.N}")
        if not self.L > 0:
            raise MultiplierError(f"L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def cell_measure(self) -> float:
        return self.h**self.d

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** self.d

    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    def points(self) -> np.ndarray:
        """Node coordinates with shape grid.shape + (d,)."""
        axes = np.meshgrid(*([self.axis()] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)

    def mode_indices(self) -> np.ndarray:
        return np.fft.fftfreq(self.N, 1.0 / self.N).astype(int)

    def frequencies(self) -> np.ndarray:
        """Discrete frequencies xi_k = pi k / L in FFT order, shape grid.shape + (d,)."""
        axis = np.pi * self.mode_indices() / self.L
        axes = np.meshgrid(*([axis] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)

    def _phase(self) -> np.ndarray:
        k = self.mode_indices()
        sign = np.where(k % 2 == 0, 1.0, -1.0)
        out = sign
        for _ in range(self.d - 1):
            out = np.multiply.outer(out, sign)
        return out

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.d, self.N * factor, self.L)

    def enlarged(self, factor: int = 2) -> "Grid":
        return Grid(self.d, self.N * factor, self.L * factor)

    def format(self) -> str:
        return f"grid(d={self.d}, N={self.N}, L={self.L!r})"


def parse_grid(text: str) -> Grid:
    """Parse `grid(d=1, N=1024, L=32.0)`; omitted keys keep their defaults."""
    src = text.strip()
    if not (src.startswith("grid(") and src.endswith(")")):
        raise MultiplierError(f"grid literal must look like grid(d=, N=, L=), got {text!r}")
    values: Dict[str, float] = {}
    for part in filter(None, (p.strip() for p in src[5:-1].split(","))):
        key, sep, raw = part.partition("=")
        key = key.strip()
        if not sep or key not in ("d", "N", "L"):
            raise MultiplierError(f"unknown grid key in {part!r}")
        try:
            values[key] = float(raw)
        except ValueError as exc:
            raise MultiplierError(f"grid value {raw!r} is not a number") from exc
    return Grid(int(values.get("d", 1)), int(values.get("N", 1024)), values.get("L", 32.0))


@dataclass(frozen=True)
class ENorm:
    """Norm on E = C^n: Euclidean, or weighted l_r for discretized L_r(G) spaces."""

    kind: str = "euclidean"
    exponent: float = 2.0
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("euclidean", "lp"):
            raise MultiplierError(f"unknown E-norm kind {self.kind!r}")
        if self.kind == "lp" and not self.exponent >= 1:
            raise MultiplierError("E-norm exponent must be >= 1")

    def __call__(self, values: np.ndarray) -> np.ndarray:
        mags = np.abs(values)
        if self.kind == "euclidean":
            return np.sqrt(self.weight * np.sum(mags**2, axis=-1))
        r = self.exponent
        return (self.weight * np.sum(mags**r, axis=-1)) ** (1.0 / r)


EUCLIDEAN = ENorm()


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray
    e_norm: ENorm = EUCLIDEAN

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=complex)
        if vals.ndim == self.grid.d:
            vals = vals[..., None]
        if vals.shape[:-1] != self.grid.shape:
            raise MultiplierError(
                f"values of shape {vals.shape} do not fit grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise MultiplierError("grid function has non-finite entries")
        self.values = vals

    @property
    def e_dim(self) -> int:
        return int(self.values.shape[-1])

    @classmethod
    def zeros(cls, grid: Grid, e_dim: int = 1, e_norm: ENorm = EUCLIDEAN) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape + (e_dim,), dtype=complex), e_norm)

    @classmethod
    def from_callable(
        cls,
        grid: Grid,
        fn: Callable[[np.ndarray], np.ndarray],
        e_norm: ENorm = EUCLIDEAN,
    ) -> "GridFunction":
        pts = grid.points()
        arg = pts[..., 0] if grid.d == 1 else pts
        return cls(grid, np.asarray(fn(arg), dtype=complex), e_norm)

    def map_values(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return GridFunction(self.grid, fn(self.values), self.e_norm)

    def with_norm(self, e_norm: ENorm) -> "GridFunction":
        return GridFunction(self.grid, self.values, e_norm)

    def _check_compatible(self, other: "GridFunction") -> None:
        if other.grid != self.grid or other.e_dim != self.e_dim:
            raise MultiplierError("grid functions live on different grids or spaces")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check_compatible(other)
        return GridFunction(self.grid, self.values + other.values, self.e_norm)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check_compatible(other)
        return GridFunction(self.grid, self.values - other.values, self.e_norm)

    def __mul__(self, scalar: complex) -> "GridFunction":
        return GridFunction(self.grid, complex(scalar) * self.values, self.e_norm)

    __rmul__ = __mul__


@dataclass
class Spectrum:
    grid: Grid
    coefficients: np.ndarray
    e_norm: ENorm = EUCLIDEAN


def dft(f: GridFunction) -> Spectrum:
    """Coefficients h^d sum_j exp(-i xi_k x_j) f_j, approximating the continuum transform."""
    axes = tuple(range(f.grid.d))
    raw = np.fft.fftn(f.values, axes=axes)
    phase = f.grid._phase()[..., None]
    return Spectrum(f.grid, raw * phase * f.grid.cell_measure, f.e_norm)


def idft(spectrum: Spectrum) -> GridFunction:
    grid = spectrum.grid
    axes = tuple(range(grid.d))
    phase = grid._phase()[..., None]
    values = np.fft.ifftn(spectrum.coefficients * phase / grid.cell_measure, axes=axes)
    return GridFunction(grid, values, spectrum.e_norm)


def lp_norm(f: GridFunction, p: float) -> float:
    """Rectangle-rule L_p norm (sum h^d ||f(x)||_E^p)^{1/p}."""
    if not (1.0 < p < math.inf):
        raise MultiplierError(f"exponent must lie in (1, inf), got {p}")
    pointwise = f.e_norm(f.values)
    return float((f.grid.cell_measure * np.sum(pointwise**p)) ** (1.0 / p))


def spectral_l2_norm(spectrum: Spectrum) -> float:
    """Coefficient-side 2-norm matching lp_norm(., 2) by Parseval."""
    norms = spectrum.e_norm(spectrum.coefficients)
    return float(np.sqrt(np.sum(norms**2) / spectrum.grid.volume))


@dataclass
class ScalarField:
    """Scalar function of xi with optional first partials."""

    value: Callable[[np.ndarray], complex]
    partial: Optional[Callable[[np.ndarray, int], complex]] = None


def _constant_field(c: complex) -> ScalarField:
    return ScalarField(lambda xi: c, lambda xi, axis: 0.0)


class MultiplierSymbol:
    """Operator-valued symbol xi -> B(E) on R^d \\ {0}."""

    name = "symbol"

    def __init__(self, e_dim: int, dim: int = 1, zero_frequency_rule: ZeroRule = ZERO_LIMIT):
        self.e_dim = e_dim
        self.dim = dim
        self.zero_frequency_rule = zero_frequency_rule

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, xi: np.ndarray, axis: int) -> Optional[np.ndarray]:
        return None

    def apply(self, xi: np.ndarray, vectors: np.ndarray) -> np.ndarray:
        return self.evaluate(xi) @ vectors

    def apply_zero(self, vectors: np.ndarray) -> np.ndarray:
        rule = self.zero_frequency_rule
        if isinstance(rule, np.ndarray):
            return rule @ vectors
        if rule == ZERO_PROJECT:
            return np.zeros_like(vectors)
        return self.apply(np.zeros(self.dim), vectors)


class ConstantSymbol(MultiplierSymbol):
    name = "constant"

    def __init__(self, matrix: np.ndarray, dim: int = 1):
        mat = np.atleast_2d(np.asarray(matrix, dtype=complex))
        super().__init__(mat.shape[0], dim)
        self.matrix = mat

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        return self.matrix

    def derivative(self, xi: np.ndarray, axis: int) -> Optional[np.ndarray]:
        return np.zeros_like(self.matrix)


class ScalarSymbol(MultiplierSymbol):
    """psi(xi) * I on C^n."""

    name = "scalar"

    def __init__(
        self,
        psi: Callable[[np.ndarray], complex],
        dpsi: Optional[Callable[[np.ndarray, int], complex]] = None,
        e_dim: int = 1,
        dim: int = 1,
        zero_frequency_rule: ZeroRule = ZERO_LIMIT,
    ):
        super().__init__(e_dim, dim, zero_frequency_rule)
        self.psi = psi
        self.dpsi = dpsi

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        return complex(self.psi(np.asarray(xi, dtype=float))) * np.eye(self.e_dim)

    def derivative(self, xi: np.ndarray, axis: int) -> Optional[np.ndarray]:
        if self.dpsi is None:
            return None
        return complex(self.dpsi(np.asarray(xi, dtype=float), axis)) * np.eye(self.e_dim)

    def apply(self, xi: np.ndarray, vectors: np.ndarray) -> np.ndarray:
        return complex(self.psi(np.asarray(xi, dtype=float))) * vectors


class ResolventSymbol(MultiplierSymbol):
    """M(xi) = s(xi) (A + eta(xi))^{-1} + t(xi) I.

    Every symbol built here has this shape, so all of them share the LU factors
    of A + eta(xi) held by the operator.
    """

    def __init__(
        self,
        op: SectorialOperator,
        eta: ScalarField,
        scale: ScalarField,
        shift: Optional[ScalarField] = None,
        dim: int = 1,
        name: str = "resolvent",
        check_sector: bool = True,
    ):
        rule = ZERO_LIMIT if op.invertible else ZERO_PROJECT
        super().__init__(op.n, dim, rule)
        self.op = op
        self.eta = eta
        self.scale = scale
        self.shift = shift or _constant_field(0.0)
        self.name = name
        self.check_sector = check_sector

    def _coefficients(self, xi: np.ndarray) -> Tuple[complex, complex, complex]:
        return (
            complex(self.eta.value(xi)),
            complex(self.scale.value(xi)),
            complex(self.shift.value(xi)),
        )

    def _fail(self, xi: np.ndarray, exc: Exception) -> MultiplierError:
        return MultiplierError(f"symbol {self.name} failed at xi={np.round(xi, 12).tolist()}: {exc}", xi)

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        eta, s, t = self._coefficients(xi)
        out = t * np.eye(self.e_dim, dtype=complex)
        if s != 0:
            try:
                out = out + s * resolvent_matrix(self.op, eta, self.check_sector)
            except (SingularResolventError, SectorError) as exc:
                raise self._fail(xi, exc) from exc
        return out

    def apply(self, xi: np.ndarray, vectors: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        eta, s, t = self._coefficients(xi)
        out = t * vectors
        if s != 0:
            try:
                out = out + s * resolvent_apply(self.op, eta, vectors, self.check_sector)
            except (SingularResolventError, SectorError) as exc:
                raise self._fail(xi, exc) from exc
        return out

    def derivative(self, xi: np.ndarray, axis: int) -> Optional[np.ndarray]:
        fields = (self.eta, self.scale, self.shift)
        if any(f.partial is None for f in fields):
            return None
        xi = np.asarray(xi, dtype=float)
        eta, s, _ = self._coefficients(xi)
        d_eta = complex(self.eta.partial(xi, axis))  # type: ignore[misc]
        d_s = complex(self.scale.partial(xi, axis))  # type: ignore[misc]
        d_t = complex(self.shift.partial(xi, axis))  # type: ignore[misc]
        try:
            res = resolvent_matrix(self.op, eta, self.check_sector)
        except (SingularResolventError, SectorError) as exc:
            raise self._fail(xi, exc) from exc
        # d/dxi (A+eta)^{-1} = -eta' (A+eta)^{-2}
        return d_s * res - s * d_eta * (res @ res) + d_t * np.eye(self.e_dim)


class AffineSymbol(MultiplierSymbol):
    """s(xi) A + t(xi) I: the forward operator of an equation, used for residuals."""

    def __init__(
        self,
        op: SectorialOperator,
        scale: ScalarField,
        shift: ScalarField,
        dim: int = 1,
        name: str = "affine",
    ):
        super().__init__(op.n, dim)
        self.op = op
        self.scale = scale
        self.shift = shift
        self.name = name

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        s, t = complex(self.scale.value(xi)), complex(self.shift.value(xi))
        return s * self.op.matrix + t * np.eye(self.e_dim)

    def apply(self, xi: np.ndarray, vectors: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        s, t = complex(self.scale.value(xi)), complex(self.shift.value(xi))
        return s * (self.op.matrix @ vectors) + t * vectors


def symbol_norm_profile(symbol: MultiplierSymbol, xi_sample: np.ndarray) -> np.ndarray:
    pts = np.asarray(xi_sample, dtype=float).reshape(-1, symbol.dim)
    return np.array([np.linalg.norm(symbol.evaluate(x), 2) for x in pts])


def _kernel_parts(kernel, xi: np.ndarray, axis: Optional[int] = None) -> complex:
    point = xi[0] if len(xi) == 1 else xi
    if axis is None:
        return complex(kernel.transform(point))
    alpha = [0] * len(xi)
    alpha[axis] = 1
    return complex(kernel.transform_derivative(point, alpha))


def elliptic_symbol(coeffs: "EllipticCoefficients", op: SectorialOperator) -> ResolventSymbol:
    """sigma(xi) = mu(xi) (A + N(xi) mu(xi))^{-1}, mu = 1/(b1^ + b0)."""
    d = coeffs.d
    c = coeffs.c

    def mu(xi: np.ndarray) -> complex:
        return 1.0 / (coeffs.b0 + _kernel_parts(coeffs.b1, xi))

    def d_mu(xi: np.ndarray, axis: int) -> complex:
        return -_kernel_parts(coeffs.b1, xi, axis) * mu(xi) ** 2

    def big_n(xi: np.ndarray) -> complex:
        total = 0j
        for k in range(d):
            for j in range(d):
                total += (c[k, j] + _kernel_parts(coeffs.a[k][j], xi)) * xi[k] * xi[j]
        return total

    def d_big_n(xi: np.ndarray, axis: int) -> complex:
        total = 0j
        for k in range(d):
            for j in range(d):
                coef = c[k, j] + _kernel_parts(coeffs.a[k][j], xi)
                total += _kernel_parts(coeffs.a[k][j], xi, axis) * xi[k] * xi[j]
                if k == axis:
                    total += coef * xi[j]
                if j == axis:
                    total += coef * xi[k]
        return total

    eta = ScalarField(
        lambda xi: big_n(xi) * mu(xi),
        lambda xi, axis: d_big_n(xi, axis) * mu(xi) + big_n(xi) * d_mu(xi, axis),
    )
    return ResolventSymbol(op, eta, ScalarField(mu, d_mu), dim=d, name="sigma")


@dataclass
class ParabolicSymbols:
    m0: ResolventSymbol
    m1: ResolventSymbol
    m2: ResolventSymbol
    m3: ResolventSymbol
    m4: ResolventSymbol

    def as_dict(self) -> Dict[str, ResolventSymbol]:
        return {"m0": self.m0, "m1": self.m1, "m2": self.m2, "m3": self.m3, "m4": self.m4}


def parabolic_symbols(coeffs: "ParabolicCoefficients", op: SectorialOperator) -> ParabolicSymbols:
    """m0..m4 of a0 u' + a1*u' + b0 Au + b1*Au = f, sharing eta = i xi (a1^ + a0) mu."""
    a0, b0, a1, b1 = coeffs.a0, coeffs.b0, coeffs.a1, coeffs.b1

    def a_hat(xi):
        return _kernel_parts(a1, xi)

    def da_hat(xi):
        return _kernel_parts(a1, xi, 0)

    def b_hat(xi):
        return _kernel_parts(b1, xi)

    def db_hat(xi):
        return _kernel_parts(b1, xi, 0)

    def mu(xi):
        return 1.0 / (b0 + b_hat(xi))

    def d_mu(xi, axis=0):
        return -db_hat(xi) * mu(xi) ** 2

    def eta_value(xi):
        return 1j * xi[0] * (a_hat(xi) + a0) * mu(xi)

    def d_eta(xi, axis=0):
        w = xi[0]
        return 1j * (a_hat(xi) + a0) * mu(xi) + 1j * w * da_hat(xi) * mu(xi) + 1j * w * (
            a_hat(xi) + a0
        ) * d_mu(xi)

    def beta(xi):
        return b_hat(xi) * mu(xi)

    def d_beta(xi, axis=0):
        return db_hat(xi) * mu(xi) + b_hat(xi) * d_mu(xi)

    eta = ScalarField(eta_value, d_eta)
    m0 = ResolventSymbol(op, eta, ScalarField(mu, d_mu), name="m0")
    m1 = ResolventSymbol(
        op,
        eta,
        ScalarField(lambda xi: 1j * xi[0] * mu(xi), lambda xi, axis: 1j * mu(xi) + 1j * xi[0] * d_mu(xi)),
        name="m1",
    )
    m2 = ResolventSymbol(
        op,
        eta,
        ScalarField(
            lambda xi: 1j * xi[0] * a_hat(xi) * mu(xi),
            lambda xi, axis: 1j * a_hat(xi) * mu(xi)
            + 1j * xi[0] * da_hat(xi) * mu(xi)
            + 1j * xi[0] * a_hat(xi) * d_mu(xi),
        ),
        name="m2",
    )
    # A (A+eta)^{-1} = I - eta (A+eta)^{-1}
    m3 = ResolventSymbol(
        op,
        eta,
        ScalarField(
            lambda xi: -mu(xi) * eta_value(xi),
            lambda xi, axis: -(d_mu(xi) * eta_value(xi) + mu(xi) * d_eta(xi)),
        ),
        ScalarField(mu, d_mu),
        name="m3",
    )
    m4 = ResolventSymbol(
        op,
        eta,
        ScalarField(
            lambda xi: -beta(xi) * eta_value(xi),
            lambda xi, axis: -(d_beta(xi) * eta_value(xi) + beta(xi) * d_eta(xi)),
        ),
        ScalarField(beta, d_beta),
        name="m4",
    )
    return ParabolicSymbols(m0, m1, m2, m3, m4)


@dataclass
class CauchySymbols:
    m0: ResolventSymbol
    m1: ResolventSymbol
    u_prime: ResolventSymbol
    sigma0: ResolventSymbol
    sigma1: ResolventSymbol
    sigma2: ResolventSymbol
    sigma3: ResolventSymbol

    def as_dict(self) -> Dict[str, ResolventSymbol]:
        return {
            "m0": self.m0,
            "m1": self.m1,
            "u_prime": self.u_prime,
            "sigma0": self.sigma0,
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "sigma3": self.sigma3,
        }


def cauchy_symbols(op: SectorialOperator) -> CauchySymbols:
    """Symbols of u' + Au = f (R(it,A) family) and -u'' + Au = f ((A+xi^2)^{-1} family)."""
    it = ScalarField(lambda xi: 1j * xi[0], lambda xi, axis: 1j)
    square = ScalarField(lambda xi: xi[0] ** 2, lambda xi, axis: 2.0 * xi[0])
    one = _constant_field(1.0)
    return CauchySymbols(
        m0=ResolventSymbol(op, it, one, name="cauchy_m0"),
        m1=ResolventSymbol(op, it, it, _constant_field(-1.0), name="cauchy_m1"),
        u_prime=ResolventSymbol(op, it, it, name="cauchy_u_prime"),
        sigma0=ResolventSymbol(op, square, one, name="sigma0"),
        sigma1=ResolventSymbol(
            op, square, ScalarField(lambda xi: xi[0], lambda xi, axis: 1.0), name="sigma1"
        ),
        sigma2=ResolventSymbol(op, square, square, name="sigma2"),
        sigma3=ResolventSymbol(
            op,
            square,
            ScalarField(lambda xi: -xi[0] ** 2, lambda xi, axis: -2.0 * xi[0]),
            one,
            name="sigma3",
        ),
    )


def elliptic_operator_symbol(coeffs: "EllipticCoefficients", op: SectorialOperator) -> AffineSymbol:
    """N(xi) I + (b0 + b1^(xi)) A."""

    def big_n(xi: np.ndarray) -> complex:
        total = 0j
        for k in range(coeffs.d):
            for j in range(coeffs.d):
                total += (coeffs.c[k, j] + _kernel_parts(coeffs.a[k][j], xi)) * xi[k] * xi[j]
        return total

    return AffineSymbol(
        op,
        ScalarField(lambda xi: coeffs.b0 + _kernel_parts(coeffs.b1, xi)),
        ScalarField(big_n),
        dim=coeffs.d,
        name="elliptic_operator",
    )


def parabolic_operator_symbol(coeffs: "ParabolicCoefficients", op: SectorialOperator) -> AffineSymbol:
    """i xi (a0 + a1^(xi)) I + (b0 + b1^(xi)) A."""
    return AffineSymbol(
        op,
        ScalarField(lambda xi: coeffs.b0 + _kernel_parts(coeffs.b1, xi)),
        ScalarField(lambda xi: 1j * xi[0] * (coeffs.a0 + _kernel_parts(coeffs.a1, xi))),
        name="parabolic_operator",
    )


def cauchy_operator_symbol(op: SectorialOperator) -> AffineSymbol:
    return AffineSymbol(op, _constant_field(1.0), ScalarField(lambda xi: 1j * xi[0]), name="cauchy_operator")


def doe_operator_symbol(op: SectorialOperator) -> AffineSymbol:
    return AffineSymbol(op, _constant_field(1.0), ScalarField(lambda xi: xi[0] ** 2), name="doe_operator")


def _chunks(count: int, workers: int) -> List[range]:
    workers = max(1, min(workers, count))
    bounds = np.linspace(0, count, workers + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(workers)]


def _apply_columns(
    symbol: MultiplierSymbol, grid: Grid, columns: np.ndarray, workers: int
) -> np.ndarray:
    """columns: (K, n, m) spectral data in flattened FFT order."""
    xis = grid.frequencies().reshape(-1, grid.d)
    out = np.empty_like(columns)

    def work(indices: range) -> None:
        for idx in indices:
            if idx == 0:
                out[0] = symbol.apply_zero(columns[0])
            else:
                out[idx] = symbol.apply(xis[idx], columns[idx])

    ranges = _chunks(columns.shape[0], workers)
    if len(ranges) == 1:
        work(ranges[0])
    else:
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            list(pool.map(work, ranges))
    return out


def apply_multiplier_batch(
    symbol: MultiplierSymbol, fs: Sequence[GridFunction], workers: int = 1
) -> List[GridFunction]:
    """T_M applied to several inputs, one symbol evaluation per frequency."""
    if not fs:
        return []
    grid = fs[0].grid
    for f in fs:
        if f.grid != grid:
            raise MultiplierError("batched inputs must share one grid")
        if f.e_dim != symbol.e_dim:
            raise MultiplierError(
                f"symbol acts on C^{symbol.e_dim}, input has E-dimension {f.e_dim}"
            )
    spectra = [dft(f) for f in fs]
    columns = np.stack([s.coefficients.reshape(-1, symbol.e_dim) for s in spectra], axis=-1)
    mapped = _apply_columns(symbol, grid, columns, workers)
    results = []
    for i, f in enumerate(fs):
        coeffs = mapped[..., i].reshape(grid.shape + (symbol.e_dim,))
        results.append(idft(Spectrum(grid, coeffs, f.e_norm)))
    return results


def apply_multiplier(symbol: MultiplierSymbol, f: GridFunction, workers: int = 1) -> GridFunction:
    """T_M f = F^{-1}[M(.) f^(.)] on the torus."""
    return apply_multiplier_batch(symbol, [f], workers)[0]


def band_limited_function(
    grid: Grid,
    seed: int,
    e_dim: int = 1,
    max_mode: Optional[int] = None,
    e_norm: ENorm = EUCLIDEAN,
) -> GridFunction:
    """Random trigonometric polynomial with modes |k| <= max_mode.

    Coefficients are drawn in a fixed mode order, so a given seed yields the
    same function on every grid with the same L and N >= 4 max_mode.
    """
    limit = grid.N // 4 if max_mode is None else max_mode
    if limit > grid.N // 4:
        raise MultiplierError(f"max_mode {limit} exceeds N/4 = {grid.N // 4}")
    rng = np.random.default_rng(seed)
    modes = np.arange(-limit, limit + 1)
    count = (2 * limit + 1) ** grid.d
    draws = rng.standard_normal((count, e_dim)) + 1j * rng.standard_normal((count, e_dim))
    coeffs = np.zeros(grid.shape + (e_dim,), dtype=complex)
    scale = grid.volume / math.sqrt(count * e_dim)
    if grid.d == 1:
        coeffs[modes % grid.N] = scale * draws
    else:
        k1, k2 = np.meshgrid(modes, modes, indexing="ij")
        coeffs[k1.ravel() % grid.N, k2.ravel() % grid.N] = scale * draws
    return idft(Spectrum(grid, coeffs, e_norm))


def gaussian_packets(
    grid: Grid,
    seed: int,
    e_dim: int = 1,
    count: int = 4,
    center_range: float = 4.0,
    widths: Tuple[float, float] = (0.75, 1.5),
    max_frequency: float = 2.0,
    e_norm: ENorm = EUCLIDEAN,
) -> GridFunction:
    """Seeded sum of modulated Gaussian packets, independent of N and L."""
    rng = np.random.default_rng(seed)
    pts = grid.points()
    values = np.zeros(grid.shape + (e_dim,), dtype=complex)
    for _ in range(count):
        center = rng.uniform(-center_range, center_range, size=grid.d)
        width = rng.uniform(*widths)
        omega = rng.uniform(-max_frequency, max_frequency, size=grid.d)
        amp = rng.standard_normal(e_dim) + 1j * rng.standard_normal(e_dim)
        offset = pts - center
        envelope = np.exp(-np.sum(offset**2, axis=-1) / (2.0 * width**2))
        carrier = np.exp(1j * (pts @ omega))
        values += (envelope * carrier)[..., None] * amp
    return GridFunction(grid, values, e_norm)


def periodic_bump(grid: Grid, width: float, e_dim: int = 1) -> GridFunction:
    pts = grid.points()
    envelope = np.exp(-np.sum(pts**2, axis=-1) / (2.0 * width**2))
    values = np.zeros(grid.shape + (e_dim,), dtype=complex)
    values[..., 0] = envelope
    return GridFunction(grid, values)


def causal_pulses(
    grid: Grid,
    seed: int,
    e_dim: int = 1,
    count: int = 3,
    window: Tuple[float, float] = (0.5, 12.0),
    widths: Tuple[float, float] = (1.5, 3.0),
    e_norm: ENorm = EUCLIDEAN,
) -> GridFunction:
    """Seeded smooth compactly supported bumps inside [window[0], window[1]] on t >= 0."""
    if grid.d != 1:
        raise MultiplierError("causal pulses live on a time grid (d=1)")
    if window[1] > grid.L:
        raise MultiplierError(f"pulse window ends at {window[1]} beyond L={grid.L}")
    rng = np.random.default_rng(seed)
    t = grid.axis()
    values = np.zeros((grid.N, e_dim), dtype=complex)
    for _ in range(count):
        width = rng.uniform(*widths)
        center = rng.uniform(window[0] + width, max(window[0] + width, window[1] - width))
        amp = rng.standard_normal(e_dim) + 1j * rng.standard_normal(e_dim)
        s = (t - center) / width
        inside = np.abs(s) < 1
        bump = np.zeros_like(t)
        bump[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        values += bump[:, None] * amp
    return GridFunction(grid, values, e_norm)


def project_mean(f: GridFunction) -> GridFunction:
    """f with its zero mode removed."""
    spectrum = dft(f)
    coeffs = spectrum.coefficients.copy()
    coeffs[(0,) * f.grid.d] = 0.0
    return idft(Spectrum(f.grid, coeffs, f.e_norm))


def norm_ensemble(grid: Grid, e_dim: int, ensemble_size: int, seed: int) -> List[GridFunction]:
    """Constant, a grid-scale bump, then seeded band-limited members."""
    members: List[GridFunction] = []
    constant = np.zeros(grid.shape + (e_dim,), dtype=complex)
    constant[..., 0] = 1.0
    members.append(GridFunction(grid, constant))
    if ensemble_size > 1:
        members.append(periodic_bump(grid, 2.0 * grid.h, e_dim))
    seeds = np.random.SeedSequence(seed).generate_state(max(ensemble_size - 2, 0))
    for s in seeds:
        members.append(band_limited_function(grid, int(s), e_dim))
    return members[:ensemble_size]


def estimate_Lq_to_Lp_norm(
    symbol: MultiplierSymbol,
    q: float,
    p: float,
    grid: Grid,
    ensemble_size: int = 16,
    seed: int = 0,
    workers: int = 1,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> float:
    """Empirical lower bound of ||T_M||_{L_q -> L_p}: max ratio over a seeded ensemble."""
    from .conditions import GapConditionError, check_gap

    log = logger or structlog.get_logger(LOGGER_NAME)
    if not check_gap(q, p, grid.d):
        raise GapConditionError(f"gap condition 1/q - 1/p <= 2/d fails for q={q}, p={p}, d={grid.d}")
    if ensemble_size < 1:
        raise MultiplierError("ensemble needs at least one member")
    members = norm_ensemble(grid, symbol.e_dim, ensemble_size, seed)
    images = apply_multiplier_batch(symbol, members, workers)
    ratios = [lp_norm(tf, p) / lp_norm(f, q) for f, tf in zip(members, images)]
    estimate = max(ratios)
    log.info(
        "Norm estimate complete",
        symbol=symbol.name,
        q=q,
        p=p,
        N=grid.N,
        L=grid.L,
        members=len(members),
        estimate=estimate,
    )
    return float(estimate)
