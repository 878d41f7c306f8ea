"""Time-ordered sample tables and their CSV form."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def format_float(v: float) -> str:
    # repr-exact and platform independent, keeps CSV outputs byte-stable
    return f"{float(v):.17g}"


@dataclass
class Trajectory:
    """Columns of float samples, one row per sample time.

    ``meta`` carries run-level facts (termination reason, aborting step, ...)
    that do not belong in the table.
    """

    columns: list[str]
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64).reshape(-1, len(self.columns))

    @classmethod
    def from_rows(cls, columns, rows, meta=None) -> "Trajectory":
        data = np.array(rows, dtype=np.float64).reshape(-1, len(columns))
        return cls(list(columns), data, dict(meta or {}))

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.data:
                fh.write(",".join(format_float(v) for v in row) + "\n")
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "Trajectory":
        with open(path) as fh:
            columns = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        return cls(columns, data.reshape(-1, len(columns)))
