"""Variance tests that decide whether a candidate cluster is real.

A cluster is compared dimension by dimension with the background model: under
the null its scaled sample variance is chi-square with N_k - 1 degrees of
freedom, and small values are evidence of a tight cluster. Benjamini-Hochberg
counts how many dimensions are significant at FDR ``beta``; the cluster is
kept when that count reaches ``eta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammainc

from .model import BackgroundModel, DegenerateInputError, as_values, component_stats, variance_floor


@dataclass(frozen=True)
class ValidationConfig:
    eta: int
    beta: float = 0.01

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if int(self.eta) != self.eta or self.eta < 2:
            raise ValueError("eta must be an integer > 1")

    def check_dimension(self, p: int) -> None:
        if not 1 < self.eta < p:
            raise ValueError(f"eta must satisfy 1 < eta < p (eta={self.eta}, p={p})")


def variance_statistic(s2_km, s2_0m, N_k: int):
    """F = (N_k - 1) s2_km / s2_0m."""
    if N_k < 2:
        raise DegenerateInputError("variance test needs a cluster of size >= 2")
    return (N_k - 1) * np.asarray(s2_km, dtype=float) / np.asarray(s2_0m, dtype=float)


def chi_square_lower_p(F, df):
    """Pr(chi2_df <= F), the regularized lower incomplete gamma P(df/2, F/2)."""
    F = np.asarray(F, dtype=float)
    if np.any(F < 0):
        raise ValueError("F must be non-negative")
    out = gammainc(np.asarray(df, dtype=float) / 2.0, F / 2.0)
    return out[()] if np.ndim(out) == 0 else out


def bh_count(p_values: Sequence[float], beta: float) -> int:
    """Largest m with P_(m) <= (m / p) beta, or 0 when none qualifies."""
    p_sorted = np.sort(np.asarray(p_values, dtype=float))
    p = p_sorted.size
    if p == 0:
        return 0
    ok = np.flatnonzero(p_sorted <= np.arange(1, p + 1) / p * beta)
    return int(ok[-1] + 1) if ok.size else 0


def cluster_p_values(rows: np.ndarray, bg: BackgroundModel, floor: np.ndarray) -> np.ndarray:
    N = rows.shape[0]
    _, s2 = component_stats(rows, 0.0, floor)
    return chi_square_lower_p(variance_statistic(s2, bg.var, N), N - 1)


def validate_cluster(
    members: Sequence[int],
    Y,
    bg: BackgroundModel,
    cfg: ValidationConfig,
    var_floor: np.ndarray | None = None,
) -> tuple[bool, int]:
    """Return ``(keep, m_star)`` for the cluster ``Y[members]``.

    Always uses untrimmed variances. Clusters with fewer than two members are
    discarded with ``m_star = 0``.
    """
    idx = np.asarray(members, dtype=np.int64)
    if idx.size < 2:
        return False, 0
    values = as_values(Y)
    if var_floor is None:
        var_floor = getattr(Y, "var_floor", None)
        if var_floor is None:
            var_floor = variance_floor(values)
    pv = cluster_p_values(values[idx], bg, var_floor)
    m_star = bh_count(pv, cfg.beta)
    return m_star >= cfg.eta, m_star
