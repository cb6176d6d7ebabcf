from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import structlog

from .multiplier import Grid, Spectrum

LOGGER_NAME = "fmlab.reports"


class ReportError(ValueError):
    """Raised when a report path would leave the output directory."""


def format_number(value: object) -> str:
    """Fixed rendering so identical runs write identical bytes."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (complex, np.complexfloating)):
        z = complex(value)
        return f"{z.real:.17g}{z.imag:+.17g}j"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def comment_block(text: str) -> str:
    return "\n".join(f"# {line}" if line else "#" for line in text.splitlines())


class ReportWriter:
    """Writes report text, CSV tables and plot data under one directory."""

    def __init__(self, output_dir: str, logger: Optional[structlog.stdlib.BoundLogger] = None):
        self.root = Path(output_dir).resolve()
        self.logger = logger or structlog.get_logger(LOGGER_NAME)
        self.written: List[Path] = []

    def path(self, name: str) -> Path:
        target = (self.root / name).resolve()
        if not target.is_relative_to(self.root) or target == self.root:
            raise ReportError(f"{name!r} resolves outside {self.root}")
        return target

    def _write(self, name: str, text: str) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8", newline="\n")
        self.written.append(target)
        self.logger.debug("Report file written", path=str(target), size=len(text))
        return target

    def write_report(self, name: str, config_text: str, body: str) -> Path:
        """Config header followed by the body as comment lines.

        The whole file stays readable by parse_config, so a report can be
        fed back with --config to repeat the run.
        """
        return self._write(name, config_text.rstrip("\n") + "\n\n" + comment_block(body) + "\n")

    def write_csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ReportError(f"row of length {len(row)} does not match {len(columns)} columns")
            writer.writerow([format_number(v) for v in row])
        return self._write(name, buffer.getvalue())

    def write_plot(self, name: str, x_label: str, y_label: str, x: np.ndarray, y: np.ndarray) -> Path:
        x, y = np.asarray(x), np.asarray(y)
        if x.shape[0] != y.shape[0]:
            raise ReportError("plot axes differ in length")
        return self.write_csv(name, (x_label, y_label), zip(x.tolist(), y.tolist()))

    def write_spectrum(self, name: str, spectrum: Spectrum) -> Path:
        """Columns k0[, k1], re_0, im_0, ... with modes in FFT order."""
        grid = spectrum.grid
        e_dim = spectrum.coefficients.shape[-1]
        columns = [f"k{i}" for i in range(grid.d)]
        for j in range(e_dim):
            columns += [f"re_{j}", f"im_{j}"]
        modes = grid.mode_indices()
        index = np.stack(np.meshgrid(*([modes] * grid.d), indexing="ij"), axis=-1).reshape(-1, grid.d)
        coeffs = spectrum.coefficients.reshape(-1, e_dim)
        rows = []
        for ks, c in zip(index, coeffs):
            row: List[object] = [int(k) for k in ks]
            for z in c:
                row += [float(z.real), float(z.imag)]
            rows.append(row)
        return self.write_csv(name, columns, rows)


def read_spectrum(text: str, grid: Grid) -> Spectrum:
    """Inverse of ReportWriter.write_spectrum for a known grid."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration as exc:
        raise ReportError("spectrum CSV is empty") from exc
    if header[: grid.d] != [f"k{i}" for i in range(grid.d)]:
        raise ReportError(f"spectrum CSV header {header[:grid.d]} does not match d={grid.d}")
    e_dim = (len(header) - grid.d) // 2
    if e_dim < 1 or len(header) != grid.d + 2 * e_dim:
        raise ReportError("spectrum CSV must carry re/im pairs per component")
    coeffs = np.zeros(grid.shape + (e_dim,), dtype=complex)
    seen = 0
    for row in reader:
        ks = tuple(int(k) % grid.N for k in row[: grid.d])
        parts = [float(v) for v in row[grid.d:]]
        coeffs[ks] = np.array(parts[0::2]) + 1j * np.array(parts[1::2])
        seen += 1
    if seen != grid.N**grid.d:
        raise ReportError(f"expected {grid.N ** grid.d} modes, found {seen}")
    return Spectrum(grid, coeffs)
