from __future__ import annotations

import argparse
import configparser
import math
import os
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv

from .conditions import GapConditionError, check_gap
from .kernels import Kernel, KernelError, parse_kernel
from .rbound import OperatorFamily, RBoundError, parse_family
from .sectorial import OperatorError, SectorialOperator, parse_operator

SUBCOMMANDS = (
    "solve-elliptic",
    "solve-parabolic",
    "solve-cauchy",
    "solve-elliptic-doe",
    "check",
    "mikhlin",
    "rbound",
    "estimate-norm",
    "demo-fading-memory",
    "demo-diffusion",
    "negative-m1",
)

SYMBOLS = (
    "identity",
    "sigma",
    "m0",
    "m1",
    "m2",
    "m3",
    "m4",
    "cauchy_m0",
    "cauchy_m1",
    "u_prime",
    "sigma0",
    "sigma1",
    "sigma2",
    "sigma3",
)

DEFAULT_OUTPUT_DIR = "fmlab-output"


class ConfigError(ValueError):
    """Raised when configuration parsing or validation fails."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError(message)


def _section(name: str) -> Dict[str, str]:
    return {"section": name}


@dataclass
class RunConfig:
    subcommand: str = field(default="check", metadata=_section("run"))
    seed: int = field(default=0, metadata=_section("run"))
    output_dir: str = field(default=DEFAULT_OUTPUT_DIR, metadata=_section("run"))
    threads: int = field(default=1, metadata=_section("run"))
    log_level: str = field(default="INFO", metadata=_section("run"))

    problem: str = field(default="parabolic", metadata=_section("problem"))
    c: str = field(default="1", metadata=_section("problem"))
    a: str = field(default="zero", metadata=_section("problem"))
    a0: complex = field(default=1 + 0j, metadata=_section("problem"))
    a1: str = field(default="zero", metadata=_section("problem"))
    b0: complex = field(default=1 + 0j, metadata=_section("problem"))
    b1: str = field(default="zero", metadata=_section("problem"))
    operator: str = field(default="scalar(1.0)", metadata=_section("problem"))
    phi: float = field(default=0.75 * math.pi, metadata=_section("problem"))

    d: int = field(default=1, metadata=_section("grid"))
    N: int = field(default=1024, metadata=_section("grid"))
    L: float = field(default=0.0, metadata=_section("grid"))

    p: float = field(default=2.0, metadata=_section("exponents"))
    q: float = field(default=2.0, metadata=_section("exponents"))
    theta: float = field(default=4.0, metadata=_section("exponents"))

    family: str = field(default="scalars(1, 2)", metadata=_section("estimator"))
    trials: int = field(default=100, metadata=_section("estimator"))
    draw_size: int = field(default=4, metadata=_section("estimator"))
    ensemble_size: int = field(default=50, metadata=_section("estimator"))
    symbol: str = field(default="m0", metadata=_section("estimator"))
    mikhlin_mode: str = field(default="norm-sup", metadata=_section("estimator"))

    m: float = field(default=1.0, metadata=_section("demo"))
    k: float = field(default=1.0, metadata=_section("demo"))
    heat_c: float = field(default=1.0, metadata=_section("demo"))
    n_x: int = field(default=32, metadata=_section("demo"))
    K: int = field(default=4, metadata=_section("demo"))
    p_inner: float = field(default=2.0, metadata=_section("demo"))
    q_spatial: float = field(default=2.0, metadata=_section("demo"))
    T_list: str = field(default="100, 1000, 10000, 100000", metadata=_section("demo"))

    residual_tol: float = field(default=1e-8, metadata=_section("tolerance"))
    drift_tol: float = field(default=0.05, metadata=_section("tolerance"))

    def c_matrix(self) -> np.ndarray:
        rows = [r for r in self.c.split(";") if r.strip()]
        try:
            mat = np.array([[complex(v.replace(" ", "")) for v in r.replace(",", " ").split()] for r in rows])
        except ValueError as exc:
            raise ConfigError(f"c must be a matrix literal like '1' or '1 0; 0 1', got {self.c!r}") from exc
        if mat.shape != (self.d, self.d):
            raise ConfigError(f"c must be {self.d}x{self.d}, got shape {mat.shape}")
        return mat

    def kernel(self, name: str) -> Kernel:
        dim = self.d if name in ("a", "b1") and self.problem == "elliptic" else 1
        try:
            return parse_kernel(getattr(self, name), dim)
        except KernelError as exc:
            raise ConfigError(f"{name}: {exc}") from exc

    def build_operator(self) -> SectorialOperator:
        try:
            return parse_operator(self.operator, self.phi)
        except OperatorError as exc:
            raise ConfigError(f"operator: {exc}") from exc

    def build_family(self) -> OperatorFamily:
        try:
            return parse_family(self.family, self.build_operator)
        except (RBoundError, OperatorError) as exc:
            raise ConfigError(f"family: {exc}") from exc

    def horizons(self) -> List[float]:
        try:
            return [float(v) for v in self.T_list.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"T_list must be comma-separated numbers, got {self.T_list!r}") from exc


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, raw: Any) -> Any:
    kind = type(getattr(RunConfig(), name))
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is complex:
            return complex(text.replace(" ", ""))
    except ValueError as exc:
        raise ConfigError(f"{name} must be of type {kind.__name__}, got {raw!r}") from exc
    return text


def _env_defaults() -> Dict[str, Any]:
    load_dotenv()
    values: Dict[str, Any] = {}
    if os.getenv("FMLAB_OUTPUT_DIR"):
        values["output_dir"] = os.environ["FMLAB_OUTPUT_DIR"]
    if os.getenv("FMLAB_THREADS"):
        values["threads"] = _coerce("threads", os.environ["FMLAB_THREADS"])
    if os.getenv("LOG_LEVEL"):
        values["log_level"] = os.environ["LOG_LEVEL"].upper()
    return values


def _file_values(text: str) -> Dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # type: ignore[assignment]
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config file is malformed: {exc}") from exc
    values: Dict[str, Any] = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            entry = _FIELDS.get(key)
            if entry is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if entry.metadata["section"] != section:
                raise ConfigError(f"key {key!r} belongs in [{entry.metadata['section']}], not [{section}]")
            values[key] = _coerce(key, raw)
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="fmlab",
        description="Fourier-multiplier laboratory for convolution operator equations.",
    )
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", dest="config_path", default=argparse.SUPPRESS)
    for entry in fields(RunConfig):
        if entry.name == "subcommand":
            continue
        flag = "--" + entry.name.replace("_", "-")
        common.add_argument(flag, dest=entry.name, default=argparse.SUPPRESS, metavar=entry.name.upper())
    subparsers = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        subparsers.add_parser(name, parents=[common])
    return parser


def _validate(cfg: RunConfig) -> None:
    if cfg.subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {cfg.subcommand!r}")
    if cfg.problem not in ("elliptic", "parabolic"):
        raise ConfigError(f"problem must be elliptic or parabolic, got {cfg.problem!r}")
    if not (cfg.q > 1.0 and 1.0 < cfg.p < math.inf):
        raise ConfigError(f"exponents must satisfy q > 1 and 1 < p < inf, got q={cfg.q}, p={cfg.p}")
    if cfg.theta < cfg.q:
        raise ConfigError(f"theta must be >= q, got theta={cfg.theta}, q={cfg.q}")
    if cfg.d not in (1, 2):
        raise ConfigError(f"d must be 1 or 2, got {cfg.d}")
    if not check_gap(cfg.q, cfg.p, cfg.d):
        raise GapConditionError(f"gap condition 1/q - 1/p <= 2/d fails for q={cfg.q}, p={cfg.p}, d={cfg.d}")
    if cfg.N < 8 or cfg.N & (cfg.N - 1):
        raise ConfigError(f"N must be a power of two >= 8, got {cfg.N}")
    if cfg.L < 0:
        raise ConfigError("L must be non-negative (0 selects the kernel-based default)")
    if not 0.0 <= cfg.phi < math.pi:
        raise ConfigError(f"phi must lie in [0, pi), got {cfg.phi}")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.n_x < 2:
        raise ConfigError("n_x must be >= 2")
    if cfg.K < 1:
        raise ConfigError("K must be >= 1")
    if cfg.trials < 100:
        raise ConfigError("trials must be >= 100")
    if cfg.ensemble_size < 1 or cfg.draw_size < 1:
        raise ConfigError("ensemble_size and draw_size must be positive")
    if min(cfg.m, cfg.k, cfg.heat_c) <= 0:
        raise ConfigError("decay rates m, k and the shift heat_c must be positive")
    if cfg.p_inner < 1 or cfg.q_spatial < 1:
        raise ConfigError("spatial exponents must be >= 1")
    if cfg.symbol not in SYMBOLS:
        raise ConfigError(f"symbol must be one of {', '.join(SYMBOLS)}")
    if cfg.mikhlin_mode not in ("norm-sup", "rbound-sample"):
        raise ConfigError("mikhlin_mode must be norm-sup or rbound-sample")
    if cfg.subcommand in ("mikhlin", "estimate-norm"):
        if cfg.symbol == "sigma" and cfg.problem != "elliptic":
            raise ConfigError("symbol sigma needs --problem elliptic")
        if cfg.symbol in ("m0", "m1", "m2", "m3", "m4") and cfg.problem != "parabolic":
            raise ConfigError(f"symbol {cfg.symbol} needs --problem parabolic")
    if cfg.problem == "parabolic" and cfg.d != 1 and cfg.subcommand in ("check", "solve-parabolic"):
        raise ConfigError("parabolic problems are one-dimensional")
    cfg.c_matrix()
    for name in ("a", "a1", "b1"):
        cfg.kernel(name)
    cfg.build_operator()
    if cfg.subcommand == "rbound":
        cfg.build_family()
    horizons = cfg.horizons()
    if len(horizons) < 2 or any(t <= 0 for t in horizons):
        raise ConfigError("T_list needs at least two positive horizons")


def parse_config(args: Sequence[str], config_text: Optional[str] = None) -> RunConfig:
    """Defaults, then environment, then config file, then explicit flags."""
    namespace = build_parser().parse_args(list(args))
    explicit = {k: v for k, v in vars(namespace).items() if v is not None}
    config_path = explicit.pop("config_path", None)
    if config_text is None and config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as handle:
                config_text = handle.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc

    values: Dict[str, Any] = {}
    values.update(_env_defaults())
    if config_text:
        values.update(_file_values(config_text))
    for key, raw in explicit.items():
        values[key] = _coerce(key, raw)
    if "subcommand" not in values:
        raise ConfigError("no subcommand given")
    cfg = RunConfig(**values)
    cfg.log_level = cfg.log_level.upper()
    _validate(cfg)
    return cfg


def _format_value(value: Any) -> str:
    if isinstance(value, complex):
        return repr(value).strip("()")
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """INI text that parse_config([], text) turns back into an equal RunConfig."""
    sections: Dict[str, List[Tuple[str, str]]] = {}
    for entry in fields(RunConfig):
        sections.setdefault(entry.metadata["section"], []).append(
            (entry.name, _format_value(getattr(cfg, entry.name)))
        )
    lines: List[str] = []
    for name, items in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{key} = {value}" for key, value in items)
        lines.append("")
    return "\n".join(lines)
