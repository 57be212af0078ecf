"""Embedded reference datasets and CSV input/output for lifetime pairs."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import DataError, Dataset, partition

# 30 (failure time in days, warranty servicing time) pairs from four nuclear sites.
NUCLEAR_ROWS = (
    (353.04, 4.37), (334.72, 1.91), (80.04, 2.04), (6.49, 1.72), (1.34, 0.29),
    (467.19, 1.93), (0.35, 1.82), (398.86, 1.77), (1048.23, 9.61), (829.39, 3.80),
    (227.20, 2.86), (260.14, 0.31), (14.00, 0.85), (14.15, 2.04), (38.96, 2.73),
    (30.27, 3.63), (117.37, 2.73), (126.27, 2.55), (56.45, 0.72), (45.28, 3.69),
    (267.31, 0.36), (615.64, 10.63), (115.37, 11.24), (359.76, 9.70), (412.30, 3.31),
    (276.69, 4.96), (601.04, 2.99), (1021.01, 2.36), (192.17, 1.63), (0.36, 0.26),
)

# 200 systems simulated from Weibull(2)/Gamma(1.5) baselines, PFR parameters
# (0.25, 0.5, 0.75, 1) and GG(k=1.5, beta=1.5) frailty. Row 97 is a tie.
SIMULATED_GFBGG_ROWS = (
    (0.55, 0.44), (5.77, 1.30), (1.86, 0.77), (3.66, 0.31), (4.51, 1.64),
    (1.15, 4.30), (0.79, 2.96), (1.89, 1.87), (0.83, 1.37), (1.36, 1.27),
    (3.90, 1.35), (2.52, 1.37), (1.83, 4.37), (1.95, 0.88), (1.10, 1.89),
    (1.07, 1.19), (0.67, 0.22), (2.69, 3.04), (1.74, 1.21), (0.61, 3.57),
    (1.22, 1.14), (1.77, 1.28), (1.00, 1.19), (3.86, 1.02), (1.14, 0.86),
    (1.30, 3.42), (1.70, 1.04), (3.05, 0.57), (4.70, 1.04), (3.79, 0.62),
    (1.06, 0.57), (3.30, 4.94), (0.44, 1.18), (0.70, 2.70), (4.96, 2.62),
    (1.73, 1.68), (11.32, 0.94), (2.68, 0.53), (1.67, 1.06), (1.18, 5.93),
    (0.89, 1.43), (1.67, 0.65), (5.70, 2.70), (10.17, 2.17), (3.61, 1.04),
    (1.29, 7.00), (0.22, 2.08), (2.11, 6.11), (10.95, 0.95), (1.11, 1.77),
    (1.11, 0.95), (0.58, 1.30), (1.77, 2.88), (2.13, 1.47), (5.31, 1.60),
    (2.74, 1.47), (1.77, 1.48), (2.57, 1.29), (1.55, 1.28), (0.37, 1.34),
    (9.32, 1.83), (0.19, 1.25), (9.55, 4.45), (1.09, 0.63), (1.86, 1.45),
    (1.16, 0.61), (1.43, 0.95), (4.38, 0.24), (0.56, 1.80), (0.79, 0.37),
    (8.57, 4.46), (1.39, 5.69), (2.23, 0.52), (2.88, 0.83), (0.98, 1.56),
    (1.15, 3.02), (36.40, 4.03), (2.71, 3.36), (0.82, 1.24), (12.17, 0.66),
    (0.72, 0.79), (0.93, 1.01), (2.51, 0.54), (0.66, 0.69), (2.19, 0.73),
    (1.73, 8.69), (3.25, 0.19), (2.62, 1.13), (1.79, 1.42), (1.29, 3.70),
    (0.96, 1.06), (0.70, 0.31), (1.13, 1.21), (0.95, 3.19), (8.02, 0.54),
    (1.11, 2.12), (2.23, 2.23), (1.50, 0.56), (1.39, 0.22), (2.66, 1.30),
    (0.52, 1.45), (4.96, 1.58), (0.94, 0.72), (0.34, 1.84), (7.91, 1.77),
    (2.61, 0.33), (1.82, 0.90), (3.35, 1.31), (5.00, 0.28), (1.85, 8.25),
    (1.73, 4.73), (2.39, 1.12), (3.18, 0.88), (0.93, 1.57), (1.45, 3.94),
    (0.65, 0.24), (0.99, 1.55), (4.16, 1.29), (1.15, 0.87), (0.50, 0.53),
    (0.45, 0.76), (0.83, 2.19), (1.63, 0.62), (0.54, 0.22), (1.80, 0.65),
    (6.89, 0.57), (5.72, 1.50), (4.04, 1.38), (0.94, 4.43), (3.08, 0.88),
    (3.12, 2.63), (0.95, 0.85), (1.44, 1.69), (0.52, 5.25), (0.55, 1.04),
    (0.90, 2.12), (2.47, 1.53), (1.24, 2.07), (2.43, 1.49), (1.44, 0.53),
    (0.63, 1.06), (0.92, 2.88), (1.35, 0.87), (1.10, 0.68), (0.54, 3.58),
    (2.39, 0.21), (1.76, 0.08), (1.94, 1.24), (3.51, 0.99), (2.13, 0.75),
    (2.19, 1.40), (0.91, 1.64), (1.62, 1.78), (0.96, 0.86), (5.73, 0.98),
    (3.82, 1.72), (4.51, 1.17), (2.12, 3.65), (1.43, 2.61), (1.76, 1.44),
    (3.48, 1.69), (0.91, 0.73), (0.64, 6.09), (0.04, 0.60), (0.77, 1.95),
    (8.23, 2.24), (1.31, 2.63), (7.52, 1.04), (4.62, 0.65), (0.37, 1.09),
    (1.19, 0.77), (0.10, 1.01), (2.30, 2.39), (1.25, 0.59), (1.08, 1.17),
    (6.64, 1.47), (3.35, 0.52), (1.09, 1.04), (1.53, 2.04), (5.59, 0.98),
    (0.17, 0.65), (1.66, 0.62), (2.52, 0.95), (1.12, 1.27), (3.76, 0.75),
    (1.39, 0.68), (1.75, 0.47), (1.00, 1.81), (3.18, 3.06), (1.94, 0.89),
    (2.87, 1.08), (2.10, 0.98), (1.20, 0.88), (1.83, 1.36), (1.74, 1.43),
    (1.06, 0.66), (5.53, 2.09), (1.83, 0.72), (3.84, 0.94), (1.10, 0.48),
)

# half the reported resolution of 0.01; splits the single tie in the simulated table
SIMULATED_TIE_JITTER = 0.005


@dataclass(frozen=True)
class EmbeddedDataset:
    id: str
    rows: tuple[tuple[float, float], ...]
    provenance: str

    @property
    def n(self) -> int:
        return len(self.rows)


EMBEDDED = {
    "nuclear": EmbeddedDataset(
        "nuclear",
        NUCLEAR_ROWS,
        "Park and Kim (2014): failure times Y1 (days) and warranty servicing times Y2 of nuclear power plants",
    ),
    "simulated-gfbgg": EmbeddedDataset(
        "simulated-gfbgg",
        SIMULATED_GFBGG_ROWS,
        "simulated: Weibull(2)/Gamma(1.5) baselines, theta=(0.25, 0.5, 0.75, 1), GG(1.5, 1.5) frailty, n=200",
    ),
}


def load_embedded(
    name: str,
    *,
    scale_y1: float | None = None,
    scale_y2: float | None = None,
    jitter_ties: float | None = None,
    tie_side: str = "y2",
) -> Dataset:
    """Embedded dataset as a :class:`Dataset`.

    ``scale_y1``/``scale_y2`` divide the columns. For ``nuclear`` they default
    to 365 and 1 (failure times in years, servicing times as given); for
    ``simulated-gfbgg`` the tie jitter defaults to :data:`SIMULATED_TIE_JITTER`.
    """
    try:
        ds = EMBEDDED[name]
    except KeyError:
        raise DataError(f"unknown embedded dataset {name!r}; choose from {sorted(EMBEDDED)}") from None
    if name == "nuclear":
        scale_y1 = 365.0 if scale_y1 is None else scale_y1
    if name == "simulated-gfbgg" and jitter_ties is None:
        jitter_ties = SIMULATED_TIE_JITTER
    arr = np.array(ds.rows, dtype=np.float64)
    for col, s in ((0, scale_y1), (1, scale_y2)):
        if s is not None:
            if not s > 0:
                raise DataError("scale divisors must be positive")
            arr[:, col] = arr[:, col] / s
    return partition(arr, jitter_ties=jitter_ties, tie_side=tie_side)


def parse_csv_text(text: str, *, jitter_ties: float | None = None, tie_side: str = "y2") -> Dataset:
    """Parse comma-separated ``y1,y2`` rows with an optional header line.

    Errors name the 1-based line number of the offending row.
    """
    rows = []
    for lineno, rec in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not rec or all(not f.strip() for f in rec):
            continue
        if lineno == 1 and [f.strip().lower() for f in rec] == ["y1", "y2"]:
            continue
        if len(rec) != 2:
            raise DataError(f"line {lineno}: expected 2 columns, got {len(rec)}", lineno)
        try:
            y1, y2 = float(rec[0]), float(rec[1])
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric value in {rec!r}", lineno) from None
        if not (np.isfinite(y1) and np.isfinite(y2) and y1 > 0 and y2 > 0):
            raise DataError(f"line {lineno}: lifetimes must be positive and finite, got {rec!r}", lineno)
        if y1 == y2 and jitter_ties is None:
            raise DataError(f"line {lineno}: tied lifetimes y1 == y2 == {y1} (use jitter_ties)", lineno)
        rows.append((y1, y2))
    if not rows:
        raise DataError("no data rows found")
    return partition(rows, jitter_ties=jitter_ties, tie_side=tie_side)


def ingest_csv(path: str | Path, *, jitter_ties: float | None = None, tie_side: str = "y2") -> Dataset:
    return parse_csv_text(Path(path).read_text(), jitter_ties=jitter_ties, tie_side=tie_side)


def dataset_to_csv(d: Dataset) -> str:
    """CSV text with header; ``repr`` floats so a round trip is exact."""
    lines = ["y1,y2"]
    lines.extend(f"{a!r},{b!r}" for a, b in zip(d.y1.tolist(), d.y2.tolist()))
    return "\n".join(lines) + "\n"
