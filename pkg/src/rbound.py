from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import structlog

from .sectorial import DEFAULT_ANGLES, SectorialOperator, resolvent_matrix

LOGGER_NAME = "fmlab.rbound"

EXHAUSTIVE_LIMIT = 12
SAMPLED_SIGNS = 4096
MIN_TRIALS = 100
CALCULUS_TOLERANCE = 0.05


class RBoundError(ValueError):
    """Raised for dimension mismatches and violated estimator preconditions."""


@dataclass
class OperatorFamily:
    members: List[np.ndarray]
    labels: List[object] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.members:
            raise RBoundError("operator family is empty")
        mats = [np.atleast_2d(np.asarray(m, dtype=complex)) for m in self.members]
        shape = mats[0].shape
        if shape[0] != shape[1]:
            raise RBoundError(f"members must be square, got {shape}")
        for m in mats:
            if m.shape != shape:
                raise RBoundError(f"member of shape {m.shape} does not match {shape}")
        self.members = mats
        if not self.labels:
            self.labels = list(range(len(mats)))
        elif len(self.labels) != len(mats):
            raise RBoundError("labels and members differ in length")

    @property
    def n(self) -> int:
        return int(self.members[0].shape[0])

    def __len__(self) -> int:
        return len(self.members)

    def sup_norm(self) -> float:
        return max(float(np.linalg.norm(m, 2)) for m in self.members)

    @classmethod
    def scalars(cls, values: Sequence[complex], n: int = 1) -> "OperatorFamily":
        return cls([complex(v) * np.eye(n) for v in values], list(values))


@dataclass
class RBoundEstimate:
    """Largest Rademacher ratio seen; a lower bound for the true R-bound."""

    value: float
    p: float
    trials: int
    draw_size_N: int
    seed: int
    sup_norm: float
    exhaustive: bool
    trial_ratios: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


@dataclass
class KahaneResult:
    passed: bool
    ratio: float
    constant: float


@dataclass
class CalculusReport:
    r1: RBoundEstimate
    r2: RBoundEstimate
    r_sum: RBoundEstimate
    r_product: RBoundEstimate
    sum_passed: bool
    product_passed: bool

    @property
    def passed(self) -> bool:
        return self.sum_passed and self.product_passed


def _sign_patterns(count: int, rng: Optional[np.random.Generator]) -> np.ndarray:
    if count <= EXHAUSTIVE_LIMIT:
        return np.array(list(itertools.product((1.0, -1.0), repeat=count)))
    assert rng is not None
    return rng.choice((1.0, -1.0), size=(SAMPLED_SIGNS, count))


def rademacher_norm(signs: np.ndarray, vectors: np.ndarray, p: float) -> float:
    """(mean over sign patterns of ||sum_j r_j v_j||^p)^{1/p}."""
    sums = signs @ vectors
    norms = np.linalg.norm(sums, axis=1)
    return float(np.mean(norms**p) ** (1.0 / p))


def _unit_vectors(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    z = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _ratio(members: Sequence[np.ndarray], xs: np.ndarray, signs: np.ndarray, p: float) -> float:
    ys = np.stack([t @ x for t, x in zip(members, xs)])
    den = rademacher_norm(signs, xs, p)
    if den == 0:
        return 0.0
    return rademacher_norm(signs, ys, p) / den


def _witness_ratio(member: np.ndarray, p: float) -> float:
    _, _, vh = np.linalg.svd(member)
    x = vh[0].conj()[None, :]
    return _ratio([member], x, _sign_patterns(1, None), p)


def estimate_R_bound(
    family: OperatorFamily,
    p: float = 2.0,
    trials: int = MIN_TRIALS,
    draw_size_N: int = 4,
    seed: int = 0,
    workers: int = 1,
    logger: Optional[structlog.stdlib.BoundLogger] = None,
) -> RBoundEstimate:
    """Monte-Carlo lower estimate of R_p(family).

    Each trial draws N members with replacement and N unit vectors from the
    stream seeded by (seed, trial). Signs are enumerated exhaustively for
    N <= 12 and sampled otherwise. Every member is also evaluated alone on
    its top singular vector, so the result never drops below the sup norm.
    """
    log = logger or structlog.get_logger(LOGGER_NAME)
    if not p >= 1:
        raise RBoundError(f"exponent must be >= 1, got {p}")
    if trials < MIN_TRIALS:
        raise RBoundError(f"need at least {MIN_TRIALS} trials, got {trials}")
    if not 1 <= draw_size_N <= 4 * len(family):
        raise RBoundError(
            f"draw size {draw_size_N} outside [1, {4 * len(family)}] for a family of {len(family)}"
        )
    ratios = np.zeros(trials)
    exhaustive = draw_size_N <= EXHAUSTIVE_LIMIT
    fixed_signs = _sign_patterns(draw_size_N, None) if exhaustive else None

    def work(indices: range) -> None:
        for trial in indices:
            rng = np.random.default_rng([seed, trial])
            picks = rng.integers(0, len(family), size=draw_size_N)
            xs = _unit_vectors(rng, draw_size_N, family.n)
            signs = fixed_signs if fixed_signs is not None else _sign_patterns(draw_size_N, rng)
            ratios[trial] = _ratio([family.members[i] for i in picks], xs, signs, p)

    workers = max(1, min(workers, trials))
    bounds = np.linspace(0, trials, workers + 1).astype(int)
    chunks = [range(bounds[i], bounds[i + 1]) for i in range(workers)]
    if workers == 1:
        work(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, chunks))

    witness = max(_witness_ratio(m, p) for m in family.members)
    value = max(float(ratios.max()), witness)
    sup = family.sup_norm()
    log.debug(
        "R-bound estimate complete",
        members=len(family),
        p=p,
        trials=trials,
        draw_size=draw_size_N,
        exhaustive=exhaustive,
        value=value,
        sup_norm=sup,
    )
    return RBoundEstimate(value, p, trials, draw_size_N, seed, sup, exhaustive, ratios)


def check_kahane(
    alphas: Sequence[complex],
    betas: Sequence[complex],
    vectors: Sequence[Sequence[complex]],
    p: float = 2.0,
) -> KahaneResult:
    """Exhaustive check of ||sum a_j r_j x_j|| <= C ||sum b_j r_j x_j|| for |a_j| <= |b_j|.

    C is 1 when every coefficient is real and 2 otherwise.
    """
    a = np.asarray(alphas, dtype=complex)
    b = np.asarray(betas, dtype=complex)
    xs = np.atleast_2d(np.asarray(vectors, dtype=complex))
    if not (len(a) == len(b) == xs.shape[0]):
        raise RBoundError("coefficient and vector lists differ in length")
    if len(a) == 0 or len(a) > EXHAUSTIVE_LIMIT:
        raise RBoundError(f"need between 1 and {EXHAUSTIVE_LIMIT} terms")
    if np.any(np.abs(a) > np.abs(b) * (1 + 1e-12)):
        raise RBoundError("premise |alpha_j| <= |beta_j| is violated")
    real = bool(np.all(a.imag == 0) and np.all(b.imag == 0))
    constant = 1.0 if real else 2.0
    signs = _sign_patterns(len(a), None)
    num = rademacher_norm(signs, a[:, None] * xs, p)
    den = rademacher_norm(signs, b[:, None] * xs, p)
    if den == 0:
        return KahaneResult(num == 0, 0.0, constant)
    ratio = num / den
    return KahaneResult(ratio <= constant * (1 + 1e-12), ratio, constant)


def _combine(f1: OperatorFamily, f2: OperatorFamily, product: bool) -> OperatorFamily:
    if f1.n != f2.n:
        what = "composition" if product else "sum"
        raise RBoundError(f"families act on C^{f1.n} and C^{f2.n}; {what} undefined")
    members = []
    labels = []
    for (t1, l1), (t2, l2) in itertools.product(zip(f1.members, f1.labels), zip(f2.members, f2.labels)):
        members.append(t1 @ t2 if product else t1 + t2)
        labels.append((l1, l2))
    return OperatorFamily(members, labels)


def check_calculus_d_e(
    family1: OperatorFamily,
    family2: OperatorFamily,
    p: float = 2.0,
    trials: int = MIN_TRIALS,
    seed: int = 0,
    draw_size_N: int = 4,
    workers: int = 1,
) -> CalculusReport:
    """R(t1 + t2) <= R(t1) + R(t2) and R(t1 t2) <= R(t1) R(t2) within 5%."""
    summed = _combine(family1, family2, product=False)
    composed = _combine(family1, family2, product=True)

    def estimate(fam: OperatorFamily) -> RBoundEstimate:
        size = min(draw_size_N, 4 * len(fam))
        return estimate_R_bound(fam, p, trials, size, seed, workers)

    r1, r2 = estimate(family1), estimate(family2)
    r_sum, r_product = estimate(summed), estimate(composed)
    slack = 1.0 + CALCULUS_TOLERANCE
    return CalculusReport(
        r1,
        r2,
        r_sum,
        r_product,
        sum_passed=r_sum.value <= (r1.value + r2.value) * slack + 1e-12,
        product_passed=r_product.value <= r1.value * r2.value * slack + 1e-12,
    )


def r_positivity_family(
    op: SectorialOperator,
    phi: Optional[float] = None,
    radii: Sequence[float] = tuple(np.logspace(-3, 4, 15)),
    angles: int = DEFAULT_ANGLES,
) -> OperatorFamily:
    """{(1 + lambda)(A + lambda)^{-1}} sampled on the sector, for R-positivity estimates."""
    angle = op.phi if phi is None else phi
    thetas = np.unique(np.linspace(-angle, angle, angles))
    members = []
    labels = []
    for r in radii:
        for theta in thetas:
            lam = complex(r * math.cos(theta), r * math.sin(theta))
            members.append((1.0 + lam) * resolvent_matrix(op, lam, check_sector=False))
            labels.append(lam)
    return OperatorFamily(members, labels)


def parse_family(text: str, operator: Optional[Callable[[], SectorialOperator]] = None) -> OperatorFamily:
    """Parse `scalars(v, ...)`, `diag(d11, d12; d21, d22)`, `identity(n)`, `zero(n)` or `rpositive`."""
    src = text.strip()
    if src == "rpositive":
        if operator is None:
            raise RBoundError("rpositive needs an operator")
        return r_positivity_family(operator())
    name, _, rest = src.partition("(")
    if not rest.endswith(")"):
        raise RBoundError(f"unrecognized family literal {text!r}")
    body = rest[:-1]
    try:
        if name == "scalars":
            return OperatorFamily.scalars([complex(v.replace(" ", "")) for v in body.split(",")])
        if name == "diag":
            groups = [g for g in body.split(";") if g.strip()]
            members = [np.diag([complex(v.replace(" ", "")) for v in g.split(",")]) for g in groups]
            return OperatorFamily(members)
        if name in ("identity", "zero"):
            n = int(body)
            return OperatorFamily([np.eye(n) if name == "identity" else np.zeros((n, n))])
    except ValueError as exc:
        if isinstance(exc, RBoundError):
            raise
        raise RBoundError(f"bad family literal {text!r}: {exc}") from exc
    raise RBoundError(f"unknown family {name!r}")
