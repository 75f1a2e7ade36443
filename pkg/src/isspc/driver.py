"""Iterative subsampling SPC.

Each iteration clusters a small random subsample of the points still labelled
noise, keeps the candidate clusters that pass the variance test, and then
streams the rest of the noise set through the likelihood-ratio assigner. The
loop stops when no candidate survives or too few noise points are left to
draw a subsample.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .assign import MixtureModel, sequential_assign
from .model import DataMatrix, Partition, fit_background, fit_component
from .spc import SpcConfig, run_spc, select_solution
from .validate import ValidationConfig, validate_cluster

log = logging.getLogger(__name__)

# sub-stream ids mixed into the seed; one per consumer of randomness
STREAM_SUBSAMPLE = 1
STREAM_ASSIGN = 2


class ConfigError(ValueError):
    """Invalid run configuration."""


class SubsampleExhausted(Exception):
    """Fewer points remain than the subsample size."""


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for a named consumer of the run seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), stream]))


@dataclass(frozen=True)
class IsspcConfig:
    """Run settings.

    ``nu`` is the subsample size; when it is None, ``a`` gives
    ``nu = ceil(a * sqrt(n))``.
    """

    eta: int = 10
    omega1: float = 0.02
    omega_later: float = 0.005
    nu: int | None = None
    a: float = 2.0
    beta: float = 0.01
    c: float = 1.0
    n0: int = 3
    trim_fraction: float = 0.0
    seed: int = 0
    max_outer_iters: int = 50

    def __post_init__(self):
        for name in ("omega1", "omega_later"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.nu is not None and self.nu < 2:
            raise ConfigError("nu must be >= 2")
        if self.nu is None and not self.a > 0:
            raise ConfigError("a must be positive")
        if not 0 < self.beta < 1:
            raise ConfigError("beta must lie in (0, 1)")
        if not self.c > 0:
            raise ConfigError("c must be positive")
        if self.n0 < 1:
            raise ConfigError("n0 must be >= 1")
        if not 0 <= self.trim_fraction <= 0.25:
            raise ConfigError("trim_fraction must lie in [0, 0.25]")
        if self.max_outer_iters < 1:
            raise ConfigError("max_outer_iters must be >= 1")
        if int(self.eta) != self.eta or self.eta < 2:
            raise ConfigError("eta must be an integer > 1")

    def subsample_size(self, n: int) -> int:
        return int(self.nu) if self.nu is not None else int(math.ceil(self.a * math.sqrt(n)))

    @property
    def trim_size_threshold(self) -> int:
        return 10 * self.n0


@dataclass
class ClusterInfo:
    label: int
    iteration: int
    seed_size: int
    size: int
    m_star: int


@dataclass
class IterationTrace:
    iteration: int
    subsample: list[int]
    path_counts: list[int]
    accepted: list[ClusterInfo] = field(default_factory=list)
    rejected: int = 0
    assigned_to_clusters: int = 0
    assigned_to_noise: int = 0
    residual_noise: int = 0
    seconds_spc: float = 0.0
    seconds_validate: float = 0.0
    seconds_assign: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IsspcResult:
    partition: Partition
    traces: list[IterationTrace]
    nu: int

    @property
    def K(self) -> int:
        return self.partition.K


def subsample(indices, nu: int, rng: np.random.Generator):
    """Split ``indices`` into a uniform size-``nu`` sample D and the rest T."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size < nu:
        raise SubsampleExhausted(f"{indices.size} points left, need {nu}")
    perm = rng.permutation(indices.size)
    return np.sort(indices[perm[:nu]]), np.sort(indices[perm[nu:]])


def run_isspc(Y, cfg: IsspcConfig = IsspcConfig()) -> IsspcResult:
    """Cluster ``Y`` and return the final partition with per-iteration traces."""
    data = Y if isinstance(Y, DataMatrix) else DataMatrix(Y)
    values = data.values
    n, p = values.shape
    nu = cfg.subsample_size(n)
    if n <= nu:
        raise ConfigError(f"need n > nu (n={n}, nu={nu})")
    val_cfg = ValidationConfig(eta=int(cfg.eta), beta=cfg.beta)
    try:
        val_cfg.check_dimension(p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    rng_sub = stream_rng(cfg.seed, STREAM_SUBSAMPLE)
    rng_assign = stream_rng(cfg.seed, STREAM_ASSIGN)
    bg = fit_background(data)
    floor = data.var_floor

    labels = np.zeros(n, dtype=np.int64)
    residual = np.arange(n, dtype=np.int64)
    traces: list[IterationTrace] = []
    next_label = 1

    for b in range(1, cfg.max_outer_iters + 1):
        try:
            D, T = subsample(residual, nu, rng_sub)
        except SubsampleExhausted:
            break
        omega = cfg.omega1 if b == 1 else cfg.omega_later

        t0 = time.perf_counter()
        path = run_spc(values[D], SpcConfig(omega=omega, n0=cfg.n0))
        sol = select_solution(path, cfg.n0)
        t1 = time.perf_counter()
        trace = IterationTrace(b, D.tolist(), path.cluster_counts, seconds_spc=t1 - t0)
        traces.append(trace)

        kept: list[np.ndarray] = []
        kept_mstar: list[int] = []
        for k in range(1, sol.K + 1):
            members = D[sol.partition.labels == k]
            keep, m_star = validate_cluster(members, data, bg, val_cfg, floor)
            if keep:
                kept.append(members)
                kept_mstar.append(m_star)
            else:
                trace.rejected += 1
        trace.seconds_validate = time.perf_counter() - t1
        if not kept:
            trace.residual_noise = int(residual.size)
            log.info("iteration %d: no valid clusters, stopping", b)
            break

        t2 = time.perf_counter()
        mix = MixtureModel(
            data,
            [m.tolist() for m in kept],
            trim_fraction=cfg.trim_fraction,
            trim_size_threshold=cfg.trim_size_threshold,
            var_floor=floor,
        )
        order = T[rng_assign.permutation(T.size)]
        t_labels, mix = sequential_assign(order, data, mix, bg, cfg.c)
        trace.seconds_assign = time.perf_counter() - t2
        trace.assigned_to_clusters = int(np.count_nonzero(t_labels))
        trace.assigned_to_noise = int(t_labels.size - trace.assigned_to_clusters)

        sizes = mix.sizes
        for j in sorted(range(mix.K), key=lambda j: (-sizes[j], j)):
            labels[mix.members[j]] = next_label
            trace.accepted.append(
                ClusterInfo(next_label, b, int(kept[j].size), int(sizes[j]), kept_mstar[j])
            )
            next_label += 1
        residual = np.flatnonzero(labels == 0)
        trace.residual_noise = int(residual.size)
        log.info(
            "iteration %d: %d clusters kept, %d rejected, %d noise left",
            b, mix.K, trace.rejected, residual.size,
        )

    return IsspcResult(Partition(labels), traces, nu)


def cluster_summary(data: DataMatrix, partition: Partition) -> list[dict]:
    """Size, mean and variance of every final cluster."""
    out = []
    for k in range(1, partition.K + 1):
        members = partition.members(k)
        if members.size >= 2:
            g = fit_component(data, members)
            mean, var = g.mean.tolist(), g.var.tolist()
        else:
            mean, var = data.values[members[0]].tolist(), [0.0] * data.p
        out.append({"label": k, "size": int(members.size), "mean": mean, "var": var})
    return out
