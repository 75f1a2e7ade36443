"""Synthetic Gaussian mixtures with uniform background noise.

Noise is drawn uniformly on ``[-box, box]^p`` and rejected whenever it falls
inside the radius of any cluster, a cluster's radius being the largest
distance from its center to one of its points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DataMatrix, Partition

# fractions of the clustered points for the 10-cluster correlated design
CORRELATED_SIZES = (0.3, 0.2, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05)
MIN_ACCEPT_RATE = 1e-4
_MIN_DRAWS = 100_000


class InfeasibleSpecError(ValueError):
    """The requested design cannot be generated (e.g. no room for noise)."""


@dataclass(frozen=True)
class SimSpec:
    n: int = 10_000
    p: int = 20
    K: int = 10
    noise_fraction: float = 0.1
    variant: str = "spherical"
    box_halfwidth: float = 5.0
    cluster_sd: float = 0.5
    seed: int = 0
    rho_high: float = 0.5
    rho_low: float = 0.3

    def __post_init__(self):
        if self.variant not in ("spherical", "correlated"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.n < 1 or self.p < 1 or self.K < 1:
            raise ValueError("n, p and K must be positive")
        if not 0 <= self.noise_fraction < 1:
            raise ValueError("noise_fraction must lie in [0, 1)")
        if self.n_clustered < self.K:
            raise InfeasibleSpecError("fewer clustered points than clusters")
        if self.box_halfwidth <= 0 or self.cluster_sd <= 0:
            raise ValueError("box_halfwidth and cluster_sd must be positive")
        for rho in (self.rho_high, self.rho_low):
            if not 0 <= rho < 1:
                raise ValueError("correlations must lie in [0, 1)")

    @property
    def n_noise(self) -> int:
        return int(round(self.noise_fraction * self.n))

    @property
    def n_clustered(self) -> int:
        return self.n - self.n_noise


@dataclass(frozen=True)
class SimData:
    data: DataMatrix
    truth: Partition
    centers: np.ndarray
    radii: np.ndarray


def equal_sizes(total: int, K: int) -> np.ndarray:
    """Split ``total`` into K near-equal parts, remainder handed out round-robin."""
    sizes = np.full(K, total // K)
    sizes[: total % K] += 1
    return sizes


def preset_sizes(total: int, fractions) -> np.ndarray:
    sizes = np.floor(np.asarray(fractions) * total).astype(int)
    rest = total - sizes.sum()
    for k in range(rest):
        sizes[k % sizes.size] += 1
    return sizes


def place_centers(K: int, p: int, box: float, min_dist: float, rng, max_tries: int = 10_000):
    """Uniform centers in ``[-0.8 box, 0.8 box]^p`` at least ``min_dist`` apart."""
    lim = 0.8 * box
    centers = np.empty((K, p))
    for k in range(K):
        for _ in range(max_tries):
            c = rng.uniform(-lim, lim, size=p)
            if k == 0 or np.min(np.linalg.norm(centers[:k] - c, axis=1)) >= min_dist:
                centers[k] = c
                break
        else:
            raise InfeasibleSpecError("could not place separated cluster centers")
    return centers


def draw_noise(count: int, centers, radii, p: int, box: float, rng) -> np.ndarray:
    """Uniform points on the box lying outside every cluster radius."""
    out = [np.empty((0, p))]
    have = drawn = 0
    while have < count:
        batch = max(1000, 2 * (count - have))
        pts = rng.uniform(-box, box, size=(batch, p))
        drawn += batch
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        ok = np.all(d2 > radii**2, axis=1)
        pts = pts[ok]
        out.append(pts)
        have += pts.shape[0]
        if drawn >= _MIN_DRAWS and have / drawn < MIN_ACCEPT_RATE:
            raise InfeasibleSpecError(
                f"noise acceptance rate {have / drawn:.2e} is below {MIN_ACCEPT_RATE:g}; "
                "clusters fill the box"
            )
    return np.concatenate(out)[:count]


def _finish(spec: SimSpec, blocks, centers, rng) -> SimData:
    radii = np.array([np.linalg.norm(b - c, axis=1).max() for b, c in zip(blocks, centers)])
    noise = draw_noise(spec.n_noise, centers, radii, spec.p, spec.box_halfwidth, rng)
    values = np.concatenate(blocks + [noise])
    labels = np.concatenate(
        [np.full(b.shape[0], k + 1) for k, b in enumerate(blocks)] + [np.zeros(noise.shape[0], int)]
    )
    perm = rng.permutation(spec.n)
    return SimData(DataMatrix(values[perm]), Partition(labels[perm]), centers, radii)


def gen_spherical(spec: SimSpec) -> SimData:
    """K equal-size spherical clusters N(center, sd^2 I) plus uniform noise."""
    rng = np.random.default_rng(spec.seed)
    centers = place_centers(spec.K, spec.p, spec.box_halfwidth, 6 * spec.cluster_sd, rng)
    sizes = equal_sizes(spec.n_clustered, spec.K)
    blocks = [c + spec.cluster_sd * rng.standard_normal((m, spec.p)) for c, m in zip(centers, sizes)]
    return _finish(spec, blocks, centers, rng)


def equicorrelated(center, sd: float, rho: float, m: int, rng) -> np.ndarray:
    """m draws from N(center, sd^2 [(1 - rho) I + rho 11^T])."""
    p = center.size
    z = rng.standard_normal((m, p))
    common = rng.standard_normal((m, 1))
    return center + sd * (np.sqrt(1 - rho) * z + np.sqrt(rho) * common)


def gen_correlated(spec: SimSpec) -> SimData:
    """Equicorrelated clusters; with K = 10 the unequal preset sizes are used.

    The first ``round(0.4 K)`` clusters (the four largest when K = 10) get
    correlation ``rho_high``, the rest ``rho_low``.
    """
    rng = np.random.default_rng(spec.seed)
    centers = place_centers(spec.K, spec.p, spec.box_halfwidth, 6 * spec.cluster_sd, rng)
    if spec.K == 10:
        sizes = preset_sizes(spec.n_clustered, CORRELATED_SIZES)
    else:
        sizes = equal_sizes(spec.n_clustered, spec.K)
    n_high = int(round(0.4 * spec.K))
    blocks = []
    for k, (c, m) in enumerate(zip(centers, sizes)):
        rho = spec.rho_high if k < n_high else spec.rho_low
        blocks.append(equicorrelated(c, spec.cluster_sd, rho, int(m), rng))
    return _finish(spec, blocks, centers, rng)


def generate(spec: SimSpec) -> SimData:
    return gen_spherical(spec) if spec.variant == "spherical" else gen_correlated(spec)
