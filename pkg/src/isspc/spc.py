"""Solution path clustering on a (sub)sample.

Centers start at the data points and are pulled together by a minimax concave
penalty (MCP) on their pairwise distances. For a fixed penalty the loss is
minimized by majorization-minimization: the MCP is replaced by its tangent
line and each distance by a quadratic upper bound, which gives a closed-form
update for every center in a cyclic pass. The penalty scale is then raised to
a quantile of the surviving center distances and the solve is warm-started,
producing a short path of partitions with fewer and fewer clusters.

Points whose centers come within ``merge_tol`` are fused into one block and
move together from then on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import pdist

from . import _kernels
from .model import DegenerateInputError, Partition, as_values

log = logging.getLogger(__name__)

# minimum relative growth of the penalty threshold between path steps
PATH_GROWTH = 1.1


class PathExhausted(Exception):
    """Fewer than two distinct centers are left; the path cannot continue."""


@dataclass(frozen=True)
class PenaltyParams:
    lam: float
    delta: float

    def __post_init__(self):
        if not (self.lam > 0 and self.delta > 0):
            raise ValueError("lambda and delta must be positive")

    @property
    def threshold(self) -> float:
        """lambda * delta, where the MCP goes flat."""
        return self.lam * self.delta


@dataclass(frozen=True)
class SpcConfig:
    """Settings for one SPC path.

    ``merge_tol=None`` means 1e-6 times the median pairwise distance of the
    subsample.
    """

    omega: float = 0.1
    n0: int = 3
    merge_tol: float | None = None
    conv_tol: float = 1e-8
    max_mm_iters: int = 500
    max_path_len: int = 30

    def __post_init__(self):
        if not 0 < self.omega < 1:
            raise ValueError("omega must lie in (0, 1)")
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if self.merge_tol is not None and self.merge_tol <= 0:
            raise ValueError("merge_tol must be positive")
        if self.conv_tol <= 0 or self.max_mm_iters < 1 or self.max_path_len < 1:
            raise ValueError("conv_tol, max_mm_iters and max_path_len must be positive")


@dataclass(frozen=True)
class SpcSolution:
    """One clustering on the path.

    ``params`` is None only for the trivial solution returned when every
    point coincides.
    """

    partition: Partition
    centers: np.ndarray
    params: PenaltyParams | None
    objective: float
    n_iter: int = 0
    converged: bool = True

    @property
    def K(self) -> int:
        return self.partition.K


@dataclass
class SolutionPath:
    solutions: list[SpcSolution] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.solutions)

    def __iter__(self):
        return iter(self.solutions)

    def __getitem__(self, i):
        return self.solutions[i]

    @property
    def cluster_counts(self) -> list[int]:
        return [s.K for s in self.solutions]


# -- penalty ---------------------------------------------------------------


def mcp(t, params: PenaltyParams):
    """Minimax concave penalty rho(t); works elementwise on arrays."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("mcp is defined for t >= 0")
    ld = params.threshold
    out = np.where(t < ld, t - t**2 / (2.0 * ld), 0.5 * ld)
    return out[()] if out.ndim == 0 else out


def mcp_derivative(t, params: PenaltyParams):
    """rho'(t) = (1 - t / (lambda delta))_+."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("mcp_derivative is defined for t >= 0")
    out = np.maximum(1.0 - t / params.threshold, 0.0)
    return out[()] if out.ndim == 0 else out


def objective(Y_sub, centers, params: PenaltyParams | None) -> float:
    """sum_i ||y_i - theta_i||^2 + lambda sum_{i<j} rho(||theta_i - theta_j||).

    ``params=None`` drops the penalty (the lambda = 0 case).
    """
    Y = as_values(Y_sub)
    theta = as_values(centers)
    if Y.shape != theta.shape:
        raise ValueError("need one center per data row")
    loss = float(np.sum((Y - theta) ** 2))
    if params is None or theta.shape[0] < 2:
        return loss
    return loss + params.lam * float(np.sum(mcp(pdist(theta), params)))


# -- fused groups ------------------------------------------------------------


@dataclass
class _Groups:
    assign: np.ndarray  # point -> group
    size: np.ndarray  # float sizes
    ybar: np.ndarray
    theta: np.ndarray
    within: float  # sum_i ||y_i - ybar_group(i)||^2

    @property
    def G(self) -> int:
        return self.size.size

    def point_centers(self) -> np.ndarray:
        return self.theta[self.assign].copy()

    def objective(self, params: PenaltyParams | None) -> float:
        lam, ld = _lam_pair(params)
        return _kernels.group_objective(self.theta, self.ybar, self.size, self.within, lam, ld)


def _lam_pair(params: PenaltyParams | None) -> tuple[float, float]:
    """(lambda, lambda * delta) with None standing for no penalty."""
    return (0.0, 1.0) if params is None else (params.lam, params.threshold)


def _group_by(Y: np.ndarray, centers: np.ndarray, assign: np.ndarray) -> _Groups:
    """Collapse points into groups given ``assign`` (ids 0..G-1). A group's
    center is the mean of its members' centers, or the shared center itself
    when they all coincide."""
    G = int(assign.max()) + 1
    size = np.bincount(assign, minlength=G).astype(float)
    p = Y.shape[1]
    ysum = np.zeros((G, p))
    np.add.at(ysum, assign, Y)
    tsum = np.zeros((G, p))
    np.add.at(tsum, assign, centers)
    ybar = ysum / size[:, None]
    theta = tsum / size[:, None]
    first = np.full(G, -1)
    for i, g in enumerate(assign.tolist()):
        if first[g] < 0:
            first[g] = i
    spread = np.zeros(G)
    np.maximum.at(spread, assign, np.abs(centers - centers[first[assign]]).max(axis=1))
    same = spread == 0
    theta[same] = centers[first[same]]
    within = float(np.sum((Y - ybar[assign]) ** 2))
    return _Groups(assign, size, ybar, theta, within)


def _fuse(groups: _Groups, comp: np.ndarray) -> _Groups:
    """Merge groups according to component ids ``comp`` (one per group)."""
    G = int(comp.max()) + 1
    size = np.bincount(comp, weights=groups.size, minlength=G)
    p = groups.theta.shape[1]
    ysum = np.zeros((G, p))
    np.add.at(ysum, comp, groups.ybar * groups.size[:, None])
    tsum = np.zeros((G, p))
    np.add.at(tsum, comp, groups.theta * groups.size[:, None])
    ybar = ysum / size[:, None]
    theta = tsum / size[:, None]
    shift = groups.size * np.sum((groups.ybar - ybar[comp]) ** 2, axis=1)
    return _Groups(comp[groups.assign], size, ybar, theta, groups.within + float(shift.sum()))


def _try_fuse(groups: _Groups, params: PenaltyParams, tol: float, f_now: float):
    """Fuse groups within ``tol`` unless doing so would raise the objective."""
    if groups.G < 2:
        return groups, f_now
    comp = _kernels.close_components(groups.theta, tol)
    if comp.max() + 1 == groups.G:
        return groups, f_now
    fused = _fuse(groups, comp)
    f_fused = fused.objective(params)
    if f_fused <= f_now:
        return fused, f_fused
    return groups, f_now


def _exact_groups(Y: np.ndarray, centers: np.ndarray) -> _Groups:
    # groups come out in lexicographic order of their centers, so the sweep
    # order does not depend on the order of the rows
    _, assign = np.unique(centers, axis=0, return_inverse=True)
    return _group_by(Y, centers, np.asarray(assign).reshape(-1))


def default_merge_tol(Y_sub) -> float:
    Y = as_values(Y_sub)
    if Y.shape[0] < 2:
        return 1e-12
    med = float(np.median(pdist(Y)))
    return 1e-6 * med if med > 0 else 1e-12


# -- MM solver ---------------------------------------------------------------


def mm_sweep(Y_sub, centers, params: PenaltyParams | None, merge_tol: float = 0.0) -> np.ndarray:
    """One majorization at ``centers`` followed by one cyclic update pass.

    Coincident centers (and, when it does not raise the loss, centers within
    ``merge_tol``) are moved as a single block. ``params=None`` means no
    penalty. Returns new per-point centers.
    """
    Y = as_values(Y_sub)
    theta = np.array(as_values(centers), dtype=float)
    groups = _exact_groups(Y, theta)
    f = groups.objective(params)
    if merge_tol > 0:
        groups, f = _try_fuse(groups, params, merge_tol, f)
    _kernels.mm_sweep_groups(groups.theta, groups.ybar, groups.size, *_lam_pair(params))
    return groups.point_centers()


@dataclass(frozen=True)
class SolveResult:
    centers: np.ndarray
    objective: float
    n_iter: int
    converged: bool


def _solve_groups(groups: _Groups, params: PenaltyParams, merge_tol, conv_tol, max_iter):
    f = groups.objective(params)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        groups, f = _try_fuse(groups, params, merge_tol, f)
        _kernels.mm_sweep_groups(groups.theta, groups.ybar, groups.size, *_lam_pair(params))
        f_new = groups.objective(params)
        change = abs(f - f_new)
        f = f_new
        if change <= conv_tol * max(abs(f), 1e-300) or groups.G == 1:
            converged = True
            break
    groups, f = _try_fuse(groups, params, merge_tol, f)
    return groups, f, it, converged


def solve_fixed_penalty(
    Y_sub,
    centers_init,
    params: PenaltyParams | None,
    conv_tol: float = 1e-8,
    max_mm_iters: int = 500,
    merge_tol: float | None = None,
) -> SolveResult:
    """Repeat :func:`mm_sweep` until the relative objective change drops below
    ``conv_tol`` or ``max_mm_iters`` sweeps have run."""
    Y = as_values(Y_sub)
    theta = np.array(as_values(centers_init), dtype=float)
    if merge_tol is None:
        merge_tol = default_merge_tol(Y)
    groups = _exact_groups(Y, theta)
    groups, f, it, conv = _solve_groups(groups, params, merge_tol, conv_tol, max_mm_iters)
    return SolveResult(groups.point_centers(), f, it, conv)


# -- partitions and the path -------------------------------------------------


def extract_partition(centers, merge_tol: float) -> tuple[Partition, np.ndarray]:
    """Connected components of centers within ``merge_tol`` of each other.

    Clusters are numbered 1..K by decreasing size, ties broken by the lowest
    member index. Returns the partition and one mean center per cluster.
    """
    theta = as_values(centers)
    n = theta.shape[0]
    if n == 1:
        return Partition(np.ones(1, dtype=np.int64)), theta.copy()
    _, uniq_inv = np.unique(theta, axis=0, return_inverse=True)
    uniq_inv = np.asarray(uniq_inv).reshape(-1)
    # distances only among distinct centers; duplicates join via uniq_inv
    U = int(uniq_inv.max()) + 1
    reps = np.zeros(U, dtype=np.int64)
    reps[uniq_inv[::-1]] = np.arange(n)[::-1]
    comp_u = _kernels.close_components(theta[reps], float(merge_tol))
    comp = comp_u[uniq_inv]
    ncomp = int(comp.max()) + 1
    sizes = np.bincount(comp, minlength=ncomp)
    first = np.full(ncomp, n)
    np.minimum.at(first, comp, np.arange(n))
    order = np.lexsort((first, -sizes))
    rank = np.empty(ncomp, dtype=np.int64)
    rank[order] = np.arange(ncomp)
    labels = rank[comp] + 1
    csum = np.zeros((ncomp, theta.shape[1]))
    np.add.at(csum, labels - 1, theta)
    cluster_centers = csum / sizes[order][:, None]
    return Partition(labels), cluster_centers


def select_penalty(centers, omega: float) -> PenaltyParams:
    """lambda = omega-quantile of nonzero distances among distinct centers, delta = 1."""
    theta = np.unique(as_values(centers), axis=0)
    if theta.shape[0] < 2:
        raise PathExhausted("fewer than two distinct centers")
    d = pdist(theta)
    d = d[d > 0]
    if d.size == 0:
        raise PathExhausted("fewer than two distinct centers")
    t = float(np.quantile(d, omega))
    return PenaltyParams(t, 1.0)


def run_spc(Y_sub, config: SpcConfig = SpcConfig()) -> SolutionPath:
    """Build the SPC solution path for ``Y_sub``.

    Each step raises the penalty threshold to the ``omega`` quantile of the
    current center distances (and at least ``PATH_GROWTH`` times the previous
    threshold), re-solves from the previous centers and records the merged
    partition. Stops once one cluster is left, the path is ``max_path_len``
    long, or no distinct centers remain.
    """
    Y = as_values(Y_sub)
    n = Y.shape[0]
    if n < 2:
        raise DegenerateInputError("SPC needs at least 2 points")
    merge_tol = config.merge_tol if config.merge_tol is not None else default_merge_tol(Y)
    path = SolutionPath()

    groups = _exact_groups(Y, Y.copy())
    if groups.G == 1:
        part, cc = extract_partition(groups.point_centers(), merge_tol)
        path.solutions.append(SpcSolution(part, cc, None, objective(Y, groups.point_centers(), None)))
        return path

    prev_t = 0.0
    while len(path) < config.max_path_len:
        try:
            q = select_penalty(groups.theta, config.omega)
        except PathExhausted:
            break
        t = max(q.lam, PATH_GROWTH * prev_t)
        params = PenaltyParams(t, 1.0)
        groups, f, it, conv = _solve_groups(
            groups, params, merge_tol, config.conv_tol, config.max_mm_iters
        )
        centers = groups.point_centers()
        part, cc = extract_partition(centers, merge_tol)
        # warm start keeps every merge made by the partition
        groups = _fuse(groups, _first_appearance(part.labels[_group_reps(groups)] - 1))
        path.solutions.append(SpcSolution(part, cc, params, f, it, conv))
        log.debug("spc step %d: threshold %.4g, K=%d, %d sweeps", len(path), t, part.K, it)
        prev_t = t
        if part.K == 1:
            break
    return path


def _group_reps(groups: _Groups) -> np.ndarray:
    reps = np.zeros(groups.G, dtype=np.int64)
    n = groups.assign.size
    reps[groups.assign[::-1]] = np.arange(n)[::-1]
    return reps


def _first_appearance(ids: np.ndarray) -> np.ndarray:
    _, first = np.unique(ids, return_index=True)
    order = np.argsort(np.argsort(first))
    _, inv = np.unique(ids, return_inverse=True)
    return order[np.asarray(inv).reshape(-1)]


def select_solution(path: SolutionPath, n0: int = 3) -> SpcSolution:
    """Earliest solution with the most clusters of size > ``n0``.

    Clusters of size <= ``n0`` in the chosen solution become noise (label 0)
    and the rest are renumbered 1..K' keeping their size order.
    """
    if len(path) == 0:
        raise ValueError("empty solution path")
    counts = [int(np.sum(s.partition.sizes > n0)) for s in path]
    best = path[int(np.argmax(counts))]
    sizes = best.partition.sizes
    keep = np.flatnonzero(sizes > n0) + 1
    mapping = np.zeros(best.K + 1, dtype=np.int64)
    mapping[keep] = np.arange(1, keep.size + 1)
    labels = mapping[best.partition.labels]
    return replace(best, partition=Partition(labels), centers=best.centers[keep - 1])
