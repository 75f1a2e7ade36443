"""Data containers and Gaussian building blocks shared by the pipeline.

Everything here works on diagonal-covariance Gaussians. Cluster statistics
without trimming are accumulated with Welford's recurrence so that the batch
fit and the streaming update used during sequential assignment perform the
exact same floating point operations in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))

# relative variance floor, scaled by each dimension's squared data range
VAR_FLOOR_REL = 1e-12
# used when a dimension has zero range
VAR_FLOOR_ABS = 1e-12


class DegenerateInputError(ValueError):
    """Raised when there are too few (or too uniform) points for an estimate."""


@dataclass(frozen=True)
class DataMatrix:
    """An ``n x p`` matrix of finite observations with opaque row identifiers."""

    values: np.ndarray
    row_ids: tuple = field(default=None)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-d matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("data matrix contains NaN or Inf")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        ids = self.row_ids
        if ids is None:
            ids = tuple(range(values.shape[0]))
        else:
            ids = tuple(ids)
        if len(ids) != values.shape[0]:
            raise ValueError("row_ids length does not match number of rows")
        if len(set(ids)) != len(ids):
            raise ValueError("row_ids must be unique")
        object.__setattr__(self, "row_ids", ids)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @cached_property
    def var_floor(self) -> np.ndarray:
        return variance_floor(self.values)


def as_values(Y) -> np.ndarray:
    """Return the float matrix behind ``Y`` (a DataMatrix or array-like)."""
    if isinstance(Y, DataMatrix):
        return Y.values
    arr = np.asarray(Y, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def variance_floor(values: np.ndarray) -> np.ndarray:
    """Per-dimension lower bound on variances: 1e-12 times the squared range."""
    values = as_values(values)
    span = values.max(axis=0) - values.min(axis=0)
    floor = VAR_FLOOR_REL * span**2
    floor[floor <= 0] = VAR_FLOOR_ABS
    return floor


@dataclass(frozen=True)
class Partition:
    """Cluster labels for ``n`` points. Label 0 is noise, clusters are 1..K."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        present = np.unique(labels[labels > 0])
        if present.size and not np.array_equal(present, np.arange(1, present.size + 1)):
            raise ValueError("cluster labels must be contiguous 1..K")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def relabel(cls, labels: Sequence[int]) -> "Partition":
        """Build a partition from arbitrary non-negative labels, mapping the
        non-zero ones to 1..K in order of first appearance."""
        labels = np.asarray(labels, dtype=np.int64)
        out = np.zeros_like(labels)
        mapping: dict[int, int] = {}
        for i, lab in enumerate(labels.tolist()):
            if lab == 0:
                continue
            if lab not in mapping:
                mapping[lab] = len(mapping) + 1
            out[i] = mapping[lab]
        return cls(out)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def K(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0

    @property
    def sizes(self) -> np.ndarray:
        """Cluster sizes N_1..N_K (noise excluded)."""
        return np.bincount(self.labels, minlength=self.K + 1)[1:]

    @property
    def noise(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 0)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


@dataclass(frozen=True)
class DiagGaussian:
    """A mixture component with diagonal covariance."""

    mean: np.ndarray
    var: np.ndarray
    size: int
    weight: float = float("nan")

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.var, dtype=float)
        if mean.shape != var.shape or mean.ndim != 1:
            raise ValueError("mean and var must be p-vectors of equal length")
        if np.any(var <= 0):
            raise ValueError("variances must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def p(self) -> int:
        return self.mean.size

    def with_weight(self, weight: float) -> "DiagGaussian":
        return DiagGaussian(self.mean, self.var, self.size, float(weight))


@dataclass(frozen=True)
class BackgroundModel:
    """Single Gaussian fitted to all of the data; stands in for noise."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.var) <= 0):
            raise ValueError("background variances must be strictly positive")

    @property
    def p(self) -> int:
        return np.asarray(self.mean).size


def fit_background(Y) -> BackgroundModel:
    """Overall mean and unbiased per-dimension variance of every row of ``Y``."""
    values = as_values(Y)
    n = values.shape[0]
    if n < 2:
        raise DegenerateInputError("background model needs at least 2 points")
    floor = Y.var_floor if isinstance(Y, DataMatrix) else variance_floor(values)
    mean = values.mean(axis=0)
    var = ((values - mean) ** 2).sum(axis=0) / (n - 1)
    return BackgroundModel(mean, np.maximum(var, floor))


def welford_push(mean: np.ndarray, m2: np.ndarray, count: int, row: np.ndarray) -> int:
    """Fold one row into running (mean, m2) in place; returns the new count."""
    count += 1
    delta = row - mean
    mean += delta / count
    m2 += delta * (row - mean)
    return count


def welford_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run :func:`welford_push` over ``rows`` in order. Returns (mean, m2)."""
    p = rows.shape[1]
    mean = np.zeros(p)
    m2 = np.zeros(p)
    count = 0
    for row in rows:
        count = welford_push(mean, m2, count, row)
    return mean, m2


def trimmed_stats(rows: np.ndarray, trim_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension trimmed mean and variance.

    ``floor(trim_fraction / 2 * N)`` values are dropped from each end of every
    dimension. A dimension is left untrimmed when fewer than two values would
    remain.
    """
    N = rows.shape[0]
    cut = int(np.floor(trim_fraction / 2.0 * N))
    if cut == 0 or N - 2 * cut < 2:
        kept = rows
    else:
        kept = np.sort(rows, axis=0)[cut : N - cut]
    mean = kept.mean(axis=0)
    var = ((kept - mean) ** 2).sum(axis=0) / (kept.shape[0] - 1)
    return mean, var


def component_stats(
    rows: np.ndarray, trim_fraction: float, floor: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and floored variance of a block of member rows."""
    N = rows.shape[0]
    if N < 2:
        raise DegenerateInputError(f"component needs at least 2 members, got {N}")
    if trim_fraction > 0:
        mean, var = trimmed_stats(rows, trim_fraction)
    else:
        mean, m2 = welford_rows(rows)
        var = m2 / (N - 1)
    return mean, np.maximum(var, floor)


def fit_component(
    Y,
    members: Sequence[int],
    trim_fraction: float = 0.0,
    var_floor: np.ndarray | None = None,
) -> DiagGaussian:
    """Fit a diagonal Gaussian to ``Y[members]``.

    Parameters
    ----------
    Y : DataMatrix or array_like
        Full data matrix.
    members : sequence of int
        Row indices of the cluster, at least two.
    trim_fraction : float
        Total fraction alpha in [0, 0.5) to trim; half from each tail of each
        dimension. The caller decides whether the cluster is large enough.
    var_floor : ndarray, optional
        Variance floor; computed from ``Y`` when omitted.

    Returns
    -------
    DiagGaussian
        Component with its weight left unset (NaN).
    """
    if not 0.0 <= trim_fraction < 0.5:
        raise ValueError("trim_fraction must lie in [0, 0.5)")
    values = as_values(Y)
    if var_floor is None:
        var_floor = Y.var_floor if isinstance(Y, DataMatrix) else variance_floor(values)
    idx = np.asarray(members, dtype=np.int64)
    mean, var = component_stats(values[idx], trim_fraction, var_floor)
    return DiagGaussian(mean, var, int(idx.size))


def log_density_diag(y, g) -> float:
    """log N_p(y; g.mean, diag(g.var)), without any mixture weight."""
    y = np.asarray(y, dtype=float)
    if y.shape != np.shape(g.mean):
        raise ValueError(f"dimension mismatch: {y.shape} vs {np.shape(g.mean)}")
    var = np.asarray(g.var)
    return float(-0.5 * np.sum(LOG_2PI + np.log(var) + (y - g.mean) ** 2 / var))


def log_density_rows(rows: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Vectorised :func:`log_density_diag` over the rows of ``rows``."""
    const = -0.5 * np.sum(LOG_2PI + np.log(var))
    return const - 0.5 * np.sum((rows - mean) ** 2 / var, axis=-1)
