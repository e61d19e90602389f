"""Tabular container for matched keypoint pairs.

One row per match: ``x, y, phi, s, x', y', phi', s', snn`` plus an optional
tenth column holding a learned matching score.  Angles are radians, scales
and coordinates pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLUMNS = ("x1", "y1", "phi1", "s1", "x2", "y2", "phi2", "s2", "snn")
SCORE_COLUMN = "score"

X1, Y1, PHI1, S1, X2, Y2, PHI2, S2, SNN, SCORE = range(10)


@dataclass(frozen=True)
class Correspondence:
    x1: float
    y1: float
    phi1: float
    s1: float
    x2: float
    y2: float
    phi2: float
    s2: float
    snn: float = 0.0
    score: float | None = None

    def __post_init__(self):
        if self.s1 <= 0 or self.s2 <= 0:
            raise ValueError("keypoint scales must be positive")
        if not 0.0 <= self.snn <= 1.0:
            raise ValueError("SNN ratio must lie in [0, 1]")


class Correspondences:
    """Array-backed set of correspondences, shape ``(N, 9)`` or ``(N, 10)``."""

    def __init__(self, data):
        data = np.asarray(data, dtype=float)
        if data.ndim == 1 and data.size == 0:
            data = data.reshape(0, 9)
        if data.ndim != 2 or data.shape[1] not in (9, 10):
            raise ValueError(f"expected (N, 9) or (N, 10) array, got shape {data.shape}")
        self.data = data

    @classmethod
    def from_items(cls, items):
        rows = []
        has_score = any(c.score is not None for c in items)
        for c in items:
            row = [c.x1, c.y1, c.phi1, c.s1, c.x2, c.y2, c.phi2, c.s2, c.snn]
            if has_score:
                row.append(np.nan if c.score is None else c.score)
            rows.append(row)
        width = 10 if has_score else 9
        return cls(np.array(rows, dtype=float).reshape(-1, width))

    @classmethod
    def from_points(cls, pts1, pts2, *, scales1=None, scales2=None, phi1=None, phi2=None, snn=None):
        """Build a set from bare point pairs; missing attributes get neutral values."""
        pts1 = np.asarray(pts1, dtype=float).reshape(-1, 2)
        pts2 = np.asarray(pts2, dtype=float).reshape(-1, 2)
        n = len(pts1)

        def col(v, default):
            return np.full(n, default) if v is None else np.asarray(v, dtype=float).reshape(n)

        data = np.column_stack([
            pts1, col(phi1, 0.0), col(scales1, 1.0),
            pts2, col(phi2, 0.0), col(scales2, 1.0),
            col(snn, 0.0),
        ])
        return cls(data)

    def __len__(self):
        return len(self.data)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            row = self.data[idx]
            score = float(row[SCORE]) if self.has_score else None
            return Correspondence(*map(float, row[:9]), score=score)
        return Correspondences(self.data[idx])

    def __eq__(self, other):
        if not isinstance(other, Correspondences):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data, equal_nan=True)

    def __repr__(self):
        return f"Correspondences(n={len(self)}, score={self.has_score})"

    @property
    def has_score(self):
        return self.data.shape[1] == 10

    @property
    def pts1(self):
        return self.data[:, [X1, Y1]]

    @property
    def pts2(self):
        return self.data[:, [X2, Y2]]

    @property
    def phi1(self):
        return self.data[:, PHI1]

    @property
    def phi2(self):
        return self.data[:, PHI2]

    @property
    def s1(self):
        return self.data[:, S1]

    @property
    def s2(self):
        return self.data[:, S2]

    @property
    def snn(self):
        return self.data[:, SNN]

    @property
    def score(self):
        if not self.has_score:
            raise KeyError("correspondences carry no score column")
        return self.data[:, SCORE]

    def subset(self, idx):
        return Correspondences(self.data[np.asarray(idx)])
