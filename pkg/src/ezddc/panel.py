"""Bus-month panel: storage, validation and CSV round-trip."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

HEADER = ("bus_id", "month", "x_bin", "decision", "delta_bin")


class PanelValidationError(ValueError):
    """Rows that break the panel rules; ``bad_rows`` holds 0-based row indices."""

    def __init__(self, message: str, bad_rows=()):
        self.bad_rows = list(bad_rows)
        shown = ", ".join(str(r) for r in self.bad_rows[:10])
        super().__init__(f"{message} (first bad rows: {shown})" if self.bad_rows else message)


@dataclass(frozen=True, eq=False)
class PanelDataset:
    bus_id: np.ndarray
    month: np.ndarray
    x: np.ndarray
    d: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        cols = [np.asarray(getattr(self, k), dtype=np.int64) for k in ("bus_id", "month", "x", "d", "delta")]
        if len({c.shape for c in cols}) != 1 or cols[0].ndim != 1:
            raise PanelValidationError("panel columns must be 1-D and of equal length")
        for name, c in zip(("bus_id", "month", "x", "d", "delta"), cols):
            c.setflags(write=False)
            object.__setattr__(self, name, c)

    def __len__(self):
        return len(self.x)

    @property
    def n_obs(self) -> int:
        return len(self.x)

    def validate(self, n_bins: Optional[int] = None) -> "PanelDataset":
        """Check decisions, bins, month contiguity and the mileage update.

        With ``n_bins`` given, the update may be capped at the top bin.
        """
        if len(self) == 0:
            raise PanelValidationError("panel is empty")
        bad = np.flatnonzero((self.d != 0) & (self.d != 1))
        if bad.size:
            raise PanelValidationError("decision must be 0 or 1", bad)
        bad = np.flatnonzero((self.x < 0) | (self.delta < 0))
        if bad.size:
            raise PanelValidationError("x_bin and delta_bin must be nonnegative", bad)
        if n_bins is not None:
            bad = np.flatnonzero(self.x >= n_bins)
            if bad.size:
                raise PanelValidationError(f"x_bin must be below {n_bins}", bad)
        order = np.lexsort((self.month, self.bus_id))
        if not np.array_equal(order, np.arange(len(self))):
            raise PanelValidationError("rows must be sorted by bus_id then month",
                                       np.flatnonzero(order != np.arange(len(self))))
        same = self.bus_id[1:] == self.bus_id[:-1]
        bad = np.flatnonzero(same & (self.month[1:] != self.month[:-1] + 1)) + 1
        if bad.size:
            raise PanelValidationError("months within a bus must be consecutive", bad)
        implied = (1 - self.d[:-1]) * self.x[:-1] + self.delta[:-1]
        if n_bins is not None:
            implied = np.minimum(implied, n_bins - 1)
        bad = np.flatnonzero(same & (self.x[1:] != implied)) + 1
        if bad.size:
            raise PanelValidationError("x_bin does not follow (1 - d) x + delta from the previous month", bad)
        return self

    def duplicate_buses(self, copies: int = 2) -> "PanelDataset":
        """Stack ``copies`` relabelled copies of every bus."""
        span = int(self.bus_id.max()) + 1
        parts = [(self.bus_id + i * span, self.month, self.x, self.d, self.delta) for i in range(copies)]
        return PanelDataset(*(np.concatenate(cols) for cols in zip(*parts)))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(HEADER) + "\n")
        for row in zip(self.bus_id, self.month, self.x, self.d, self.delta):
            buf.write("%d,%d,%d,%d,%d\n" % row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_bytes(text.encode("utf-8"))
        return text

    @classmethod
    def from_csv(cls, path, n_bins: Optional[int] = None) -> "PanelDataset":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.splitlines()
        if not lines or tuple(h.strip() for h in lines[0].split(",")) != HEADER:
            raise PanelValidationError(f"CSV header must be {','.join(HEADER)}")
        rows, bad = [], []
        for i, line in enumerate(lines[1:]):
            if not line.strip():
                continue
            parts = line.split(",")
            try:
                if len(parts) != 5:
                    raise ValueError
                rows.append([int(p) for p in parts])
            except ValueError:
                bad.append(i)
        if bad:
            raise PanelValidationError("rows must hold five integers", bad)
        arr = np.array(rows, dtype=np.int64).reshape(-1, 5)
        return cls(*arr.T).validate(n_bins)
