from __future__ import annotations

import cmath
import math
import re
import threading
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy import linalg as spla

if TYPE_CHECKING:  # pragma: no cover
    from .multiplier import GridFunction

LOGGER_NAME = "fmlab.sectorial"

ANGLE_TOL = 1e-10
SINGULAR_RCOND = 1e-14
DEFAULT_PHI = 0.75 * math.pi
DEFAULT_CACHE_SIZE = 16384
DEFAULT_RADII = tuple(np.logspace(-4, 6, 40))
DEFAULT_ANGLES = 17

_CALL_RE = re.compile(r"^(\w+)\((.*)\)$")


class OperatorError(ValueError):
    """Raised for malformed operators, operator strings or dimension mismatches."""


class SectorError(ValueError):
    """Raised when a resolvent point lies outside the operator's sector."""


class SingularResolventError(ArithmeticError):
    def __init__(self, lam: complex, rcond: float):
        super().__init__(
            f"A + lambda is numerically singular at lambda={lam!r} (rcond={rcond:.3e})"
        )
        self.lam = lam
        self.rcond = rcond


@dataclass(frozen=True)
class Sector:
    phi: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.phi < math.pi):
            raise OperatorError(f"sector angle must lie in [0, pi), got {self.phi}")

    def contains(self, z: complex) -> bool:
        if z == 0:
            return True
        return abs(cmath.phase(z)) <= self.phi + ANGLE_TOL


class _FactorizationCache:
    """Bounded LRU of LU factors of A + lambda keyed by lambda."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._entries: "OrderedDict[complex, Tuple[np.ndarray, np.ndarray]]" = (
            OrderedDict()
        )
        self._lock = threading.Lock()
        self.factorizations = 0
        self.hits = 0

    def get(self, lam: complex) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        with self._lock:
            entry = self._entries.get(lam)
            if entry is not None:
                self._entries.move_to_end(lam)
                self.hits += 1
            return entry

    def put(self, lam: complex, factors: Tuple[np.ndarray, np.ndarray]) -> None:
        with self._lock:
            self._entries[lam] = factors
            self._entries.move_to_end(lam)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def count(self) -> None:
        with self._lock:
            self.factorizations += 1

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self.factorizations = 0
            self.hits = 0


@dataclass(frozen=True, eq=False)
class SectorialOperator:
    """Dense realization of a phi-positive operator A on E = C^n."""

    matrix: np.ndarray
    phi: float = DEFAULT_PHI
    bound_M: Optional[float] = None
    use_cache: bool = True
    cache_size: int = DEFAULT_CACHE_SIZE
    label: str = ""
    _cache: _FactorizationCache = field(init=False, repr=False, compare=False)
    _spectral: Dict[str, np.ndarray] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        mat = np.array(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
            raise OperatorError(f"operator must be a square matrix, got {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise OperatorError("operator has non-finite entries")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        Sector(self.phi)
        object.__setattr__(self, "_cache", _FactorizationCache(self.cache_size))

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def sector(self) -> Sector:
        return Sector(self.phi)

    @property
    def invertible(self) -> bool:
        return bool(spla.svdvals(self.matrix)[-1] > 1e-12)

    @property
    def is_hermitian(self) -> bool:
        return bool(np.allclose(self.matrix, self.matrix.conj().T, atol=0, rtol=1e-14))

    @property
    def factorizations(self) -> int:
        return self._cache.factorizations

    def certified(self, report: "PositivityReport") -> "SectorialOperator":
        """Copy of the operator carrying the measured positivity bound."""
        if not report.passed:
            raise OperatorError("cannot certify an operator whose positivity check failed")
        return replace(self, phi=report.phi, bound_M=report.measured_M)

    def without_cache(self) -> "SectorialOperator":
        return replace(self, use_cache=False)

    def clear_cache(self) -> None:
        self._cache.clear()

    def factor(self, lam: complex) -> Tuple[np.ndarray, np.ndarray]:
        lam = complex(lam)
        if self.use_cache:
            cached = self._cache.get(lam)
            if cached is not None:
                return cached
        shifted = self.matrix + lam * np.eye(self.n)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.LinAlgWarning)
            lu, piv = spla.lu_factor(shifted, check_finite=False)
        self._cache.count()
        anorm = np.linalg.norm(shifted, 1)
        if anorm == 0:
            raise SingularResolventError(lam, 0.0)
        (gecon,) = spla.get_lapack_funcs(("gecon",), (lu,))
        rcond, _ = gecon(lu, anorm, norm="1")
        if not rcond > SINGULAR_RCOND:
            raise SingularResolventError(lam, float(rcond))
        if self.use_cache:
            self._cache.put(lam, (lu, piv))
        return lu, piv

    def eigensystem(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Eigenvalues, eigenvectors and the inverse eigenvector matrix."""
        if "values" not in self._spectral:
            if self.is_hermitian:
                values, vectors = spla.eigh(self.matrix)
                inverse = vectors.conj().T
            else:
                values, vectors = spla.eig(self.matrix)
                if np.linalg.cond(vectors) > 1e8:
                    raise OperatorError("operator is not safely diagonalizable")
                inverse = np.linalg.inv(vectors)
            self._spectral.update(
                values=np.asarray(values, dtype=complex),
                vectors=np.asarray(vectors, dtype=complex),
                inverse=np.asarray(inverse, dtype=complex),
            )
        return (
            self._spectral["values"],
            self._spectral["vectors"],
            self._spectral["inverse"],
        )


@dataclass
class PositivityReport:
    phi: float
    sampled_lambdas: List[complex]
    measured_M: float
    passed: bool
    offending_lambda: Optional[complex] = None


def build_dirichlet_laplacian(
    n: int, length: float, shift_c: float = 0.0, phi: float = DEFAULT_PHI
) -> SectorialOperator:
    """Three-point -d^2/dx^2 + c on (0, length) with Dirichlet ends, h = length/(n+1)."""
    if n < 2:
        raise OperatorError("laplacian needs at least 2 interior points")
    if length <= 0:
        raise OperatorError("length must be positive")
    if shift_c < 0:
        raise OperatorError("shift c must be non-negative")
    h = length / (n + 1)
    main = np.full(n, 2.0 / h**2 + shift_c)
    off = np.full(n - 1, -1.0 / h**2)
    matrix = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
    return SectorialOperator(
        matrix, phi=phi, label=f"laplacian(n={n}, length={length!r}, c={shift_c!r})"
    )


def laplacian_eigenvalues(n: int, length: float, shift_c: float = 0.0) -> np.ndarray:
    h = length / (n + 1)
    k = np.arange(1, n + 1)
    return shift_c + (4.0 / h**2) * np.sin(k * np.pi / (2 * (n + 1))) ** 2


def diagonal_operator(values: Sequence[complex], phi: float = DEFAULT_PHI) -> SectorialOperator:
    vals = [complex(v) for v in values]
    label = "diag(" + ", ".join(repr(v.real) if v.imag == 0 else repr(v) for v in vals) + ")"
    return SectorialOperator(np.diag(vals), phi=phi, label=label)


def scalar_operator(value: complex, phi: float = DEFAULT_PHI) -> SectorialOperator:
    return SectorialOperator(
        np.array([[complex(value)]]), phi=phi, label=f"scalar({complex(value)!r})"
    )


def block_diagonal(op: SectorialOperator, copies: int) -> SectorialOperator:
    """I_K (x) A, the truncated operator of a decoupled system."""
    if copies < 1:
        raise OperatorError("block count must be positive")
    matrix = np.kron(np.eye(copies), op.matrix)
    return SectorialOperator(matrix, phi=op.phi, label=f"block({copies}, {op.label})")


def _keyword_args(body: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for part in body.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise OperatorError(f"expected key=value, got {part.strip()!r}")
        key, value = part.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_operator(text: str, phi: float = DEFAULT_PHI) -> SectorialOperator:
    """Parse `laplacian(n=, length=, c=)`, `diag(v, ...)` or `scalar(z)`."""
    match = _CALL_RE.match(text.strip())
    if not match:
        raise OperatorError(f"unrecognized operator literal {text!r}")
    name, body = match.group(1), match.group(2)
    try:
        if name == "laplacian":
            kwargs = _keyword_args(body)
            unknown = set(kwargs) - {"n", "length", "c"}
            if unknown:
                raise OperatorError(f"unknown laplacian keys {sorted(unknown)}")
            return build_dirichlet_laplacian(
                int(kwargs.get("n", "32")),
                float(kwargs.get("length", "1.0")),
                float(kwargs.get("c", "0.0")),
                phi=phi,
            )
        if name == "diag":
            values = [complex(v.strip().replace(" ", "")) for v in body.split(",") if v.strip()]
            if not values:
                raise OperatorError("diag() needs at least one entry")
            return diagonal_operator(values, phi=phi)
        if name == "scalar":
            return scalar_operator(complex(body.strip().replace(" ", "")), phi=phi)
    except ValueError as exc:
        if isinstance(exc, OperatorError):
            raise
        raise OperatorError(f"bad operator literal {text!r}: {exc}") from exc
    raise OperatorError(f"unknown operator {name!r}")


def resolvent_apply(
    op: SectorialOperator,
    lam: complex,
    b: np.ndarray,
    check_sector: bool = True,
) -> np.ndarray:
    """Solve (A + lambda) x = b, reusing the cached LU factors of A + lambda."""
    lam = complex(lam)
    if check_sector and not op.sector.contains(lam):
        raise SectorError(f"lambda={lam!r} lies outside S_phi with phi={op.phi}")
    rhs = np.asarray(b, dtype=complex)
    if rhs.shape[0] != op.n:
        raise OperatorError(f"right-hand side has {rhs.shape[0]} rows, operator has {op.n}")
    factors = op.factor(lam)
    return spla.lu_solve(factors, rhs, check_finite=False)


def resolvent_matrix(op: SectorialOperator, lam: complex, check_sector: bool = True) -> np.ndarray:
    return resolvent_apply(op, lam, np.eye(op.n, dtype=complex), check_sector=check_sector)


def check_positivity(
    op: SectorialOperator,
    phi: Optional[float] = None,
    radii: Sequence[float] = DEFAULT_RADII,
    angles_per_radius: int = DEFAULT_ANGLES,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> PositivityReport:
    """Measure M = max (1+|lambda|) ||(A+lambda)^{-1}|| over lambda = r e^{i theta}, |theta| <= phi."""
    log = logger or structlog.get_logger(LOGGER_NAME)
    angle = op.phi if phi is None else phi
    Sector(angle)
    if angles_per_radius < 8:
        raise OperatorError("need at least 8 angles per radius")
    thetas = np.linspace(-angle, angle, angles_per_radius) if angle > 0 else np.zeros(1)
    lambdas: List[complex] = []
    measured = 0.0
    identity = np.eye(op.n)
    for r in radii:
        for theta in np.unique(thetas):
            lam = complex(r * cmath.exp(1j * theta))
            lambdas.append(lam)
            sv = spla.svdvals(op.matrix + lam * identity)
            if not sv[-1] > SINGULAR_RCOND * max(sv[0], 1.0):
                log.warning("Positivity check hit a singular resolvent", lam=str(lam))
                return PositivityReport(angle, lambdas, math.inf, False, lam)
            measured = max(measured, (1.0 + abs(lam)) / sv[-1])
    log.info(
        "Positivity check complete",
        phi=angle,
        samples=len(lambdas),
        measured_M=measured,
        operator=op.label,
    )
    return PositivityReport(angle, lambdas, measured, True)


def graph_norm(op: SectorialOperator, u: "GridFunction", p: float) -> float:
    """(||u||_p^p + ||Au||_p^p)^{1/p}, the norm of E(A)-valued L_p."""
    from .multiplier import lp_norm

    if u.e_dim != op.n:
        raise OperatorError(f"grid function has E-dimension {u.e_dim}, operator has {op.n}")
    au = u.map_values(lambda v: v @ op.matrix.T)
    return float((lp_norm(u, p) ** p + lp_norm(au, p) ** p) ** (1.0 / p))


def semigroup_apply(op: SectorialOperator, t: float, b: np.ndarray) -> np.ndarray:
    """e^{-At} b by eigendecomposition, or scaling-and-squaring when A is not normal."""
    if t < 0:
        raise OperatorError("semigroup time must be non-negative")
    vec = np.asarray(b, dtype=complex)
    if t == 0:
        return vec.copy()
    if op.is_hermitian:
        values, vectors, inverse = op.eigensystem()
        cols = vec.reshape(op.n, -1)
        out = vectors @ (np.exp(-values * t)[:, None] * (inverse @ cols))
        return out.reshape(vec.shape)
    return spla.expm(-t * op.matrix) @ vec


def uniform_resolvent_constant(op: SectorialOperator, etas: np.ndarray) -> float:
    """sup over the given eta of (1+|eta|) ||(A+eta)^{-1}||."""
    best = 0.0
    identity = np.eye(op.n)
    for eta in np.asarray(etas, dtype=complex).ravel():
        sv = spla.svdvals(op.matrix + eta * identity)
        if not sv[-1] > 0:
            return math.inf
        best = max(best, (1.0 + abs(eta)) / sv[-1])
    return best
