"""Adjusted Rand indices for partitions with a noise class.

ARI_c scores only the points placed in estimated clusters; ARI_n collapses the
table to clustered-vs-noise and ignores noise absorbed into clusters, which
ARI_c already penalizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Partition


@dataclass(frozen=True)
class ContingencyTable:
    """Counts with estimated clusters on rows and true clusters on columns.

    The last row is estimated noise and the last column true noise.
    """

    counts: np.ndarray

    @property
    def K(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def R(self) -> int:
        return self.counts.shape[1] - 1

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def _labels(x) -> np.ndarray:
    return x.labels if isinstance(x, Partition) else np.asarray(x, dtype=np.int64)


def contingency(truth, est) -> ContingencyTable:
    t = _labels(truth)
    e = _labels(est)
    if t.shape != e.shape:
        raise ValueError(f"partitions differ in length: {t.size} vs {e.size}")
    R = int(t.max()) if t.size else 0
    K = int(e.max()) if e.size else 0
    rows = np.where(e == 0, K, e - 1)
    cols = np.where(t == 0, R, t - 1)
    counts = np.zeros((K + 1, R + 1), dtype=np.int64)
    np.add.at(counts, (rows, cols), 1)
    return ContingencyTable(counts)


def _h(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1) / 2.0


def _same_partition(counts: np.ndarray) -> bool:
    nz = counts > 0
    return bool(np.all(nz.sum(axis=1) <= 1) and np.all(nz.sum(axis=0) <= 1))


def ari(table) -> float:
    """Hubert-Arabie adjusted Rand index of a contingency table.

    When the expected and maximal index coincide (both partitions trivial) the
    result is 1 for identical partitions and 0 otherwise.
    """
    counts = table.counts if isinstance(table, ContingencyTable) else np.asarray(table)
    n = counts.sum()
    h1 = float(_h(counts.sum(axis=1)).sum())
    h2 = float(_h(counts.sum(axis=0)).sum())
    hn = float(_h(n))
    index = float(_h(counts).sum())
    expected = h1 * h2 / hn if hn > 0 else 0.0
    denom = 0.5 * (h1 + h2) - expected
    if denom == 0:
        return 1.0 if _same_partition(counts) else 0.0
    return (index - expected) / denom


def ari_c(truth, est) -> float | None:
    """ARI over the estimated-cluster rows only; None when no cluster was found."""
    table = contingency(truth, est)
    if table.K == 0:
        return None
    return ari(table.counts[:-1])


def noise_table(table: ContingencyTable) -> np.ndarray:
    """2x2 clustered/noise table with the cluster-noise cell forced to zero."""
    c = table.counts
    cc = c[:-1, :-1].sum()
    nc = c[-1, :-1].sum()
    nn = c[-1, -1]
    return np.array([[cc, 0], [nc, nn]], dtype=np.int64)


def ari_n(truth, est) -> float:
    return ari(noise_table(contingency(truth, est)))


def report(truth, est) -> dict:
    table = contingency(truth, est)
    return {
        "ari": ari(table),
        "ari_c": ari_c(truth, est),
        "ari_n": ari(noise_table(table)),
        "k_est": table.K,
        "k_true": table.R,
        "contingency": table.counts.tolist(),
    }
