"""Sequential likelihood-ratio assignment of held-out points.

Each test point is compared under the current cluster mixture and under the
background model. If the mixture is at least ``c`` times as likely the point
joins the component with the largest weighted density, and that component's
statistics are refreshed before the next point is scored.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ._kernels import assign_stream
from .model import (
    BackgroundModel,
    DegenerateInputError,
    DiagGaussian,
    LOG_2PI,
    as_values,
    trimmed_stats,
    variance_floor,
    welford_push,
)


class MixtureModel:
    """Diagonal Gaussian mixture over clusters of the full data set.

    The model is mutable: :meth:`accept` appends a point to a component and
    refreshes it. Untrimmed statistics are kept with Welford's recurrence in
    member order, which reproduces :func:`~isspc.model.fit_component` on the
    same member list bit for bit. Components with more than
    ``trim_size_threshold`` members use trimmed estimates when
    ``trim_fraction > 0``.
    """

    def __init__(
        self,
        Y,
        member_lists: Sequence[Sequence[int]],
        trim_fraction: float = 0.0,
        trim_size_threshold: int = 30,
        var_floor: np.ndarray | None = None,
    ):
        if not 0.0 <= trim_fraction < 0.5:
            raise ValueError("trim_fraction must lie in [0, 0.5)")
        self._values = as_values(Y)
        if var_floor is None:
            var_floor = getattr(Y, "var_floor", None)
            if var_floor is None:
                var_floor = variance_floor(self._values)
        self.var_floor = var_floor
        self.trim_fraction = float(trim_fraction)
        self.trim_size_threshold = int(trim_size_threshold)

        K = len(member_lists)
        p = self._values.shape[1]
        self.members: list[list[int]] = []
        self._wmean = np.zeros((K, p))
        self._wm2 = np.zeros((K, p))
        self._count = np.zeros(K, dtype=np.int64)
        self._rows: list[np.ndarray] = []
        self.means = np.zeros((K, p))
        self.vars = np.ones((K, p))
        self._lognorm = np.zeros(K)
        for k, members in enumerate(member_lists):
            members = [int(i) for i in members]
            if len(members) < 2:
                raise DegenerateInputError("every component needs at least 2 members")
            self.members.append(members)
            for i in members:
                self._count[k] = welford_push(self._wmean[k], self._wm2[k], int(self._count[k]), self._values[i])
            if self.trim_fraction > 0:
                buf = np.empty((max(16, 2 * len(members)), p))
                buf[: len(members)] = self._values[members]
                self._rows.append(buf)
            self._refresh(k)
        self._update_weights()

    @property
    def K(self) -> int:
        return len(self.members)

    @property
    def p(self) -> int:
        return self._values.shape[1]

    @property
    def sizes(self) -> np.ndarray:
        return self._count.copy()

    @property
    def weights(self) -> np.ndarray:
        return self._weights.copy()

    def component(self, k: int) -> DiagGaussian:
        """Component ``k`` (0-based) as an immutable DiagGaussian."""
        return DiagGaussian(self.means[k].copy(), self.vars[k].copy(), int(self._count[k]), float(self._weights[k]))

    @property
    def components(self) -> list[DiagGaussian]:
        return [self.component(k) for k in range(self.K)]

    def effective_trim(self, k: int) -> float:
        return self.trim_fraction if self._count[k] > self.trim_size_threshold else 0.0

    def _refresh(self, k: int) -> None:
        N = int(self._count[k])
        if self.effective_trim(k) > 0:
            mean, var = trimmed_stats(self._rows[k][:N], self.trim_fraction)
        else:
            mean, var = self._wmean[k].copy(), self._wm2[k] / (N - 1)
        var = np.maximum(var, self.var_floor)
        self.means[k] = mean
        self.vars[k] = var
        self._lognorm[k] = -0.5 * np.sum(LOG_2PI + np.log(var))

    def _update_weights(self) -> None:
        total = self._count.sum()
        self._weights = self._count / total if total else np.zeros(0)
        with np.errstate(divide="ignore"):
            self._logw = np.log(self._weights)

    def component_log_scores(self, y: np.ndarray) -> np.ndarray:
        """log pi_k + log N(y; mu_k, Sigma_k) for every component."""
        return self._logw + self._lognorm - 0.5 * np.sum((y - self.means) ** 2 / self.vars, axis=1)

    def accept(self, index: int, k: int) -> None:
        """Add data row ``index`` to component ``k`` (1-based); 0 is a no-op."""
        if k == 0:
            return
        if not 1 <= k <= self.K:
            raise ValueError(f"component {k} out of range 1..{self.K}")
        j = k - 1
        row = self._values[index]
        self.members[j].append(int(index))
        self._count[j] = welford_push(self._wmean[j], self._wm2[j], int(self._count[j]), row)
        if self.trim_fraction > 0:
            N = int(self._count[j])
            buf = self._rows[j]
            if N > buf.shape[0]:
                grown = np.empty((2 * buf.shape[0], buf.shape[1]))
                grown[: N - 1] = buf[: N - 1]
                self._rows[j] = buf = grown
            buf[N - 1] = row
        self._refresh(j)
        self._update_weights()


def _logsumexp(a: np.ndarray) -> float:
    top = np.max(a)
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.sum(np.exp(a - top))))


def log_background(y, bg: BackgroundModel) -> float:
    # same operation order as MixtureModel scores, so a component equal to
    # the background gives a log ratio of exactly zero
    var = np.asarray(bg.var, dtype=float)
    lognorm = -0.5 * np.sum(LOG_2PI + np.log(var))
    return float(lognorm - 0.5 * np.sum((np.asarray(y) - bg.mean) ** 2 / var))


def log_mixture_likelihood(y, mix: MixtureModel) -> float:
    """log sum_k pi_k N(y; mu_k, Sigma_k), evaluated with a log-sum-exp shift."""
    if mix.K == 0:
        return float("-inf")
    return _logsumexp(mix.component_log_scores(np.asarray(y, dtype=float)))


def log_likelihood_ratio(y, mix: MixtureModel, bg: BackgroundModel) -> float:
    y = np.asarray(y, dtype=float)
    if y.size != mix.p or y.size != bg.p:
        raise ValueError("dimension mismatch")
    return log_mixture_likelihood(y, mix) - log_background(y, bg)


def assign_point(y, mix: MixtureModel, bg: BackgroundModel, c: float = 1.0) -> int:
    """Cluster label in 1..K for ``y``, or 0 when the likelihood ratio is below ``c``.

    The winning component maximizes the weighted density; ties go to the lowest
    index.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    if mix.K == 0:
        return 0
    y = np.asarray(y, dtype=float)
    scores = mix.component_log_scores(y)
    if _logsumexp(scores) - log_background(y, bg) >= np.log(c):
        return int(np.argmax(scores)) + 1
    return 0


def accept_assignment(mix: MixtureModel, y_index: int, k: int) -> MixtureModel:
    """Record ``y_index`` in component ``k`` (no-op for k = 0); returns ``mix``."""
    mix.accept(y_index, k)
    return mix


def sequential_assign(T, Y, mix: MixtureModel, bg: BackgroundModel, c: float = 1.0):
    """Assign the rows ``T`` one at a time, in the order given.

    Returns the labels (aligned with ``T``) and the updated mixture. Without
    trimming the loop runs in a compiled kernel; its Welford updates match
    :meth:`MixtureModel.accept` exactly, while the scores may differ from
    :func:`assign_point` in the last bits because of summation order.
    """
    values = as_values(Y)
    T = np.asarray(T, dtype=np.int64)
    labels = np.zeros(T.size, dtype=np.int64)
    if mix.K == 0:
        return labels, mix
    if c <= 0:
        raise ValueError("c must be positive")
    if mix.trim_fraction == 0:
        return _assign_untrimmed(T, values, mix, bg, c)
    for pos, i in enumerate(T.tolist()):
        k = assign_point(values[i], mix, bg, c)
        if k:
            labels[pos] = k
            mix.accept(i, k)
    return labels, mix


def _assign_untrimmed(T, values, mix: MixtureModel, bg: BackgroundModel, c: float):
    labels = assign_stream(
        values, T, mix._wmean, mix._wm2, mix._count,
        np.broadcast_to(np.asarray(mix.var_floor, dtype=float), (mix.p,)).copy(),
        np.asarray(bg.mean, dtype=float),
        np.asarray(bg.var, dtype=float), float(np.log(c)),
    )
    for i, k in zip(T.tolist(), labels.tolist()):
        if k:
            mix.members[k - 1].append(i)
    for k in range(mix.K):
        mix._refresh(k)
    mix._update_weights()
    return labels, mix
