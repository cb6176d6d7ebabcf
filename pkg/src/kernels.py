from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy.integrate import simpson

LOGGER_NAME = "fmlab.kernels"

ArrayLike = Union[float, Sequence[float], np.ndarray]
MultiIndex = Tuple[int, ...]

_EXP_RE = re.compile(r"^exp\(\s*m\s*=\s*([^)]+)\)$")
_GAUSS_RE = re.compile(r"^gauss\(\s*s\s*=\s*([^)]+)\)$")


class KernelError(ValueError):
    """Raised for invalid kernel parameters, multi-indices or literals."""


def _as_points(x: ArrayLike, dim: int) -> Tuple[np.ndarray, bool]:
    """Return points with shape (K, dim) and whether the input was a single point."""
    arr = np.asarray(x, dtype=float)
    if dim == 1:
        if arr.ndim == 0:
            return arr.reshape(1, 1), True
        if arr.ndim == 2 and arr.shape[1] == 1:
            return arr, False
        if arr.ndim == 1:
            return arr.reshape(-1, 1), False
    else:
        if arr.ndim == 1 and arr.shape[0] == dim:
            return arr.reshape(1, dim), True
        if arr.ndim == 2 and arr.shape[1] == dim:
            return arr, False
    raise KernelError(f"expected points of dimension {dim}, got shape {arr.shape}")


def _finish(values: np.ndarray, single: bool) -> Union[complex, np.ndarray]:
    if single:
        return complex(values[0])
    return values


def _check_alpha(alpha: Sequence[int], dim: int) -> MultiIndex:
    idx = tuple(int(a) for a in alpha)
    if len(idx) != dim:
        raise KernelError(f"multi-index {idx} does not match dimension {dim}")
    if any(a not in (0, 1) for a in idx):
        raise KernelError(f"multi-index {idx} has a component outside {{0, 1}}")
    return idx


@dataclass(frozen=True)
class Kernel:
    dim: int = 1

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise KernelError(f"kernel dimension must be 1 or 2, got {self.dim}")

    def _values(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _transform(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _transform_derivative(self, pts: np.ndarray, alpha: MultiIndex) -> np.ndarray:
        raise NotImplementedError

    def decay_rate(self) -> float:
        """Exponential rate governing the tail of the profile (inf for Zero)."""
        raise NotImplementedError

    def value(self, t: ArrayLike) -> Union[complex, np.ndarray]:
        pts, single = _as_points(t, self.dim)
        return _finish(self._values(pts).astype(complex), single)

    def transform(self, xi: ArrayLike) -> Union[complex, np.ndarray]:
        pts, single = _as_points(xi, self.dim)
        return _finish(self._transform(pts).astype(complex), single)

    def transform_derivative(
        self, xi: ArrayLike, alpha: Sequence[int]
    ) -> Union[complex, np.ndarray]:
        idx = _check_alpha(alpha, self.dim)
        pts, single = _as_points(xi, self.dim)
        if not any(idx):
            return _finish(self._transform(pts).astype(complex), single)
        return _finish(self._transform_derivative(pts, idx).astype(complex), single)


@dataclass(frozen=True)
class ZeroKernel(Kernel):
    def _values(self, pts: np.ndarray) -> np.ndarray:
        return np.zeros(pts.shape[0])

    def _transform(self, pts: np.ndarray) -> np.ndarray:
        return np.zeros(pts.shape[0])

    def _transform_derivative(self, pts: np.ndarray, alpha: MultiIndex) -> np.ndarray:
        return np.zeros(pts.shape[0])

    def decay_rate(self) -> float:
        return math.inf


@dataclass(frozen=True)
class ExponentialKernel(Kernel):
    """Profile e^{-m|t|} with Euclidean |t|."""

    m: float = 1.0

    def __post_init__(self) -> None:
        super().__post_init__()
        if not (self.m > 0 and math.isfinite(self.m)):
            raise KernelError(f"exponential decay rate must be positive, got {self.m}")

    @property
    def _nu(self) -> float:
        return (self.dim + 1) / 2.0

    @property
    def _scale(self) -> float:
        # Gamma((d+1)/2) 2^d pi^((d-1)/2)
        d = self.dim
        return math.gamma((d + 1) / 2.0) * 2.0**d * math.pi ** ((d - 1) / 2.0)

    def _values(self, pts: np.ndarray) -> np.ndarray:
        return np.exp(-self.m * np.linalg.norm(pts, axis=1))

    def _transform(self, pts: np.ndarray) -> np.ndarray:
        r2 = self.m**2 + np.sum(pts**2, axis=1)
        return self._scale * self.m * r2 ** (-self._nu)

    def _transform_derivative(self, pts: np.ndarray, alpha: MultiIndex) -> np.ndarray:
        r2 = self.m**2 + np.sum(pts**2, axis=1)
        nu = self._nu
        base = self._scale * self.m
        order = sum(alpha)
        monomial = np.prod(pts[:, [j for j, a in enumerate(alpha) if a]], axis=1)
        if order == 1:
            return -2.0 * nu * base * monomial * r2 ** (-nu - 1.0)
        return 4.0 * nu * (nu + 1.0) * base * monomial * r2 ** (-nu - 2.0)

    def decay_rate(self) -> float:
        return self.m


@dataclass(frozen=True)
class GaussianKernel(Kernel):
    """Profile exp(-|t|^2 / (2 s^2))."""

    s: float = 1.0

    def __post_init__(self) -> None:
        super().__post_init__()
        if not (self.s > 0 and math.isfinite(self.s)):
            raise KernelError(f"gaussian width must be positive, got {self.s}")

    def _values(self, pts: np.ndarray) -> np.ndarray:
        return np.exp(-np.sum(pts**2, axis=1) / (2.0 * self.s**2))

    def _transform(self, pts: np.ndarray) -> np.ndarray:
        norm = (2.0 * math.pi * self.s**2) ** (self.dim / 2.0)
        return norm * np.exp(-(self.s**2) * np.sum(pts**2, axis=1) / 2.0)

    def _transform_derivative(self, pts: np.ndarray, alpha: MultiIndex) -> np.ndarray:
        g = self._transform(pts)
        cols = [j for j, a in enumerate(alpha) if a]
        monomial = np.prod(pts[:, cols], axis=1)
        return (-(self.s**2)) ** len(cols) * monomial * g

    def decay_rate(self) -> float:
        return 1.0 / self.s


@dataclass(frozen=True)
class ScaledSumKernel(Kernel):
    terms: Tuple[Tuple[complex, Kernel], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        super().__post_init__()
        flat: List[Tuple[complex, Kernel]] = []
        for coef, kernel in self.terms:
            if kernel.dim != self.dim:
                raise KernelError("scaled sum terms must share the kernel dimension")
            if isinstance(kernel, ScaledSumKernel):
                flat.extend((complex(coef) * c, k) for c, k in kernel.terms)
            else:
                flat.append((complex(coef), kernel))
        object.__setattr__(self, "terms", tuple(flat))

    def _combine(self, parts: Iterable[np.ndarray], count: int) -> np.ndarray:
        out = np.zeros(count, dtype=complex)
        for (coef, _), part in zip(self.terms, parts):
            out += coef * part
        return out

    def _values(self, pts: np.ndarray) -> np.ndarray:
        return self._combine((k._values(pts) for _, k in self.terms), pts.shape[0])

    def _transform(self, pts: np.ndarray) -> np.ndarray:
        return self._combine((k._transform(pts) for _, k in self.terms), pts.shape[0])

    def _transform_derivative(self, pts: np.ndarray, alpha: MultiIndex) -> np.ndarray:
        return self._combine(
            (k._transform_derivative(pts, alpha) for _, k in self.terms), pts.shape[0]
        )

    def decay_rate(self) -> float:
        rates = [k.decay_rate() for c, k in self.terms if c != 0]
        return min(rates) if rates else math.inf


def eval_kernel(k: Kernel, t: ArrayLike) -> Union[complex, np.ndarray]:
    return k.value(t)


def kernel_transform(k: Kernel, xi: ArrayLike) -> Union[complex, np.ndarray]:
    """Closed-form transform under f^(xi) = ∫ exp(-i xi.s) f(s) ds."""
    return k.transform(xi)


def kernel_transform_derivative(
    k: Kernel, xi: ArrayLike, alpha: Sequence[int]
) -> Union[complex, np.ndarray]:
    return k.transform_derivative(xi, alpha)


def numeric_transform_oracle(
    k: Kernel, xi: ArrayLike, halfwidth: float, panels: int
) -> complex:
    """Composite Simpson quadrature of the transform on [-halfwidth, halfwidth]^d.

    ``panels`` counts subintervals per axis. The origin is a node and a panel
    boundary, so the kink of the exponential profile does not spoil the rule.
    """
    if halfwidth <= 0:
        raise KernelError("halfwidth must be positive")
    if panels < 16 or panels % 4:
        raise KernelError("panels must be a multiple of 4, at least 16")
    pts, _ = _as_points(xi, k.dim)
    if pts.shape[0] != 1:
        raise KernelError("oracle evaluates one frequency at a time")
    freq = pts[0]
    axis = np.linspace(-halfwidth, halfwidth, panels + 1)
    if k.dim == 1:
        integrand = k._values(axis.reshape(-1, 1)) * np.exp(-1j * freq[0] * axis)
        return complex(simpson(integrand, x=axis))
    tx, ty = np.meshgrid(axis, axis, indexing="ij")
    grid = np.stack([tx.ravel(), ty.ravel()], axis=1)
    phase = np.exp(-1j * (grid @ freq))
    integrand = (k._values(grid) * phase).reshape(tx.shape)
    inner = simpson(integrand, x=axis, axis=1)
    return complex(simpson(inner, x=axis))


def _split_top_level(text: str, sep: str) -> List[str]:
    parts: List[str] = []
    depth = 0
    start = 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == sep and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return parts


def _parse_positive(raw: str, name: str) -> float:
    try:
        value = float(raw)
    except ValueError as exc:
        raise KernelError(f"{name} must be a number, got {raw!r}") from exc
    if not (value > 0 and math.isfinite(value)):
        raise KernelError(f"{name} must be positive and finite, got {raw!r}")
    return value


def parse_kernel(text: str, dim: int = 1) -> Kernel:
    """Parse `zero`, `exp(m=..)`, `gauss(s=..)` or `sum(<coef>*<kernel>, ...)`."""
    src = text.strip()
    if src == "zero":
        return ZeroKernel(dim=dim)
    match = _EXP_RE.match(src)
    if match:
        return ExponentialKernel(dim=dim, m=_parse_positive(match.group(1), "m"))
    match = _GAUSS_RE.match(src)
    if match:
        return GaussianKernel(dim=dim, s=_parse_positive(match.group(1), "s"))
    if src.startswith("sum(") and src.endswith(")"):
        body = src[4:-1].strip()
        if not body:
            raise KernelError("sum() needs at least one term")
        terms: List[Tuple[complex, Kernel]] = []
        for raw_term in _split_top_level(body, ","):
            pieces = _split_top_level(raw_term.strip(), "*")
            if len(pieces) == 1:
                coef, kernel_text = complex(1.0), pieces[0]
            elif len(pieces) == 2:
                try:
                    coef = complex(pieces[0].strip().replace(" ", ""))
                except ValueError as exc:
                    raise KernelError(f"bad coefficient {pieces[0]!r}") from exc
                kernel_text = pieces[1]
            else:
                raise KernelError(f"bad sum term {raw_term!r}")
            terms.append((coef, parse_kernel(kernel_text, dim)))
        return ScaledSumKernel(dim=dim, terms=tuple(terms))
    raise KernelError(f"unrecognized kernel literal {text!r}")


def format_kernel(k: Kernel) -> str:
    if isinstance(k, ZeroKernel):
        return "zero"
    if isinstance(k, ExponentialKernel):
        return f"exp(m={k.m!r})"
    if isinstance(k, GaussianKernel):
        return f"gauss(s={k.s!r})"
    if isinstance(k, ScaledSumKernel):
        inner = ", ".join(f"{c!r}*{format_kernel(t)}" for c, t in k.terms)
        return f"sum({inner})"
    raise KernelError(f"cannot format {type(k).__name__}")


def default_half_length(kernels: Iterable[Kernel], floor: float = 16.0) -> float:
    """Box half-length 32/(smallest decay rate), so kernel tails are below 1e-12."""
    rates = [k.decay_rate() for k in kernels]
    finite = [r for r in rates if math.isfinite(r)]
    if not finite:
        return floor
    length = max(floor, 32.0 / min(finite))
    structlog.get_logger(LOGGER_NAME).debug("Box half-length chosen", rates=finite, L=length)
    return length
