"""Synthetic field generation, CSV ingestion, and field sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter


class CsvParseError(ValueError):
    """Raised on malformed field or readings CSV input.

    Carries the 1-based line number of the offending row when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FieldGrid:
    """An a x b grid of physical-quantity values for one round."""

    rows: int
    cols: int
    values: np.ndarray
    round_index: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.rows, self.cols):
            raise ValueError(
                f"values shape {values.shape} does not match ({self.rows}, {self.cols})"
            )
        if self.rows * self.cols < 1:
            raise ValueError("grid must contain at least one cell")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        if self.round_index < 0:
            raise ValueError("round_index must be non-negative")
        object.__setattr__(self, "values", _freeze(values))


@dataclass(frozen=True)
class ReadingSeries:
    """Per-node readings across rounds; values has shape (len(rounds), len(node_ids))."""

    node_ids: tuple
    rounds: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.rounds), len(self.node_ids)):
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"({len(self.rounds)}, {len(self.node_ids)})"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("readings must be finite")
        if len(set(self.node_ids)) != len(self.node_ids):
            raise ValueError("duplicate node ids")
        if len(set(self.rounds)) != len(self.rounds):
            raise ValueError("duplicate round indices")
        object.__setattr__(self, "node_ids", tuple(int(i) for i in self.node_ids))
        object.__setattr__(self, "rounds", tuple(int(r) for r in self.rounds))
        object.__setattr__(self, "values", _freeze(values))


def generate_peaks_field(rows: int, cols: int) -> FieldGrid:
    """Evaluate the classic three-Gaussian peaks surface over [-3, 3]^2.

    Cell (i, j) takes the surface value at the cell center; the result is
    deterministic.
    """
    if rows < 2 or cols < 2:
        raise ValueError("peaks field needs at least a 2x2 grid")
    y = -3.0 + (np.arange(rows) + 0.5) * 6.0 / rows
    x = -3.0 + (np.arange(cols) + 0.5) * 6.0 / cols
    X, Y = np.meshgrid(x, y)
    z = (
        3.0 * (1.0 - X) ** 2 * np.exp(-(X**2) - (Y + 1.0) ** 2)
        - 10.0 * (X / 5.0 - X**3 - Y**5) * np.exp(-(X**2) - Y**2)
        - (1.0 / 3.0) * np.exp(-((X + 1.0) ** 2) - Y**2)
    )
    return FieldGrid(rows=rows, cols=cols, values=z)


def generate_smooth_random_field(
    rows: int, cols: int, correlation_length: float, seed: int
) -> FieldGrid:
    """Gaussian-blurred white noise; reproducible from seed.

    Larger correlation_length yields a smoother surface with lower numerical
    rank. The blur kernel is truncated at 4 correlation lengths.
    """
    if rows < 2 or cols < 2:
        raise ValueError("smooth field needs at least a 2x2 grid")
    if correlation_length <= 0:
        raise ValueError("correlation_length must be positive")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((rows, cols))
    smooth = gaussian_filter(noise, sigma=correlation_length, truncate=4.0, mode="nearest")
    # rescale to unit std so field magnitude is independent of the blur
    sd = smooth.std()
    if sd > 0:
        smooth = smooth / sd
    return FieldGrid(rows=rows, cols=cols, values=smooth)


def save_field_csv(field: FieldGrid, path) -> None:
    """Write one row per grid row, 17 significant digits (bit-exact round-trip)."""
    with open(path, "w") as fh:
        for i in range(field.rows):
            fh.write(",".join(f"{v:.17g}" for v in field.values[i]))
            fh.write("\n")


def load_field_csv(path) -> FieldGrid:
    """Read a field grid; lines starting with '#' are skipped."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise CsvParseError(
                    f"row has {len(parts)} values, expected {width}", line=lineno
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise CsvParseError("non-numeric cell", line=lineno) from None
    if not rows:
        raise CsvParseError("no data rows")
    values = np.array(rows)
    return FieldGrid(rows=values.shape[0], cols=values.shape[1], values=values)


def save_readings_csv(series: ReadingSeries, path) -> None:
    with open(path, "w") as fh:
        fh.write("round,node_id,value\n")
        for ri, r in enumerate(series.rounds):
            for ni, node in enumerate(series.node_ids):
                fh.write(f"{r},{node},{series.values[ri, ni]:.17g}\n")


def load_readings_csv(path) -> ReadingSeries:
    """Read a `round,node_id,value` CSV into a dense rounds x nodes matrix."""
    triples = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "round,node_id,value":
            raise CsvParseError(
                f"expected header 'round,node_id,value', got {header!r}", line=1
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise CsvParseError(
                    f"expected 3 fields, got {len(parts)}", line=lineno
                )
            try:
                r, node, value = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise CsvParseError("non-numeric cell", line=lineno) from None
            if (r, node) in triples:
                raise CsvParseError(
                    f"duplicate reading for round {r}, node {node}", line=lineno
                )
            triples[(r, node)] = value
    if not triples:
        raise CsvParseError("no data rows")
    rounds = sorted({r for r, _ in triples})
    node_ids = sorted({node for _, node in triples})
    values = np.empty((len(rounds), len(node_ids)))
    for ri, r in enumerate(rounds):
        for ni, node in enumerate(node_ids):
            if (r, node) not in triples:
                raise CsvParseError(f"missing reading for round {r}, node {node}")
            values[ri, ni] = triples[(r, node)]
    return ReadingSeries(node_ids=tuple(node_ids), rounds=tuple(rounds), values=values)


def sample_field(field: FieldGrid, deployment) -> np.ndarray:
    """Return u with u_i = field value at node i's cell, ordered by node id."""
    cells = np.asarray(deployment.node_cells)
    if cells.size and (
        cells[:, 0].min() < 0
        or cells[:, 1].min() < 0
        or cells[:, 0].max() >= field.rows
        or cells[:, 1].max() >= field.cols
    ):
        raise ValueError("deployment contains out-of-grid nodes")
    return field.values[cells[:, 0], cells[:, 1]].copy()
