import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from isspc.model import DegenerateInputError, Partition
from isspc.simulate import SimSpec, gen_spherical
from isspc.spc import (
    PathExhausted,
    PenaltyParams,
    SolutionPath,
    SpcConfig,
    SpcSolution,
    extract_partition,
    mcp,
    mcp_derivative,
    mm_sweep,
    objective,
    run_spc,
    select_penalty,
    select_solution,
    solve_fixed_penalty,
)

P12 = PenaltyParams(1.0, 2.0)


def co_membership(labels):
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    return same & (labels[:, None] > 0)


# -- penalty ---------------------------------------------------------------


class TestMcp:
    def test_flat_branch(self):
        assert mcp(3.0, P12) == 1.0

    def test_zero(self):
        assert mcp(0.0, P12) == 0.0

    def test_quadrature(self):
        # rho(t) is the integral of (1 - x / (lambda delta))_+ from 0 to t
        for t in (0.3, 1.0, 1.7, 2.0, 5.0):
            want, _ = quad(lambda x: max(1 - x / 2.0, 0.0), 0, t, points=[2.0])
            assert mcp(t, P12) == pytest.approx(want, abs=1e-12)
        assert mcp(1.0, P12) == pytest.approx(0.75)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            mcp(-0.1, P12)
        with pytest.raises(ValueError):
            mcp_derivative(-0.1, P12)

    def test_derivative_examples(self):
        assert mcp_derivative(0.0, P12) == 1.0
        assert mcp_derivative(2.0, P12) == 0.0
        assert mcp_derivative(1.0, P12) == 0.5

    @given(st.floats(0.01, 10), st.floats(0.01, 10))
    def test_shape(self, lam, delta):
        pp = PenaltyParams(lam, delta)
        t = np.linspace(0, 3 * lam * delta, 301)
        r = mcp(t, pp)
        assert np.all(np.diff(r) >= -1e-12)
        h = t[1] - t[0]
        assert np.all(np.diff(r, 2) <= 1e-9 * max(1.0, h))
        assert np.all(r <= lam * delta / 2 + 1e-12)

    @given(st.floats(0.05, 5), st.floats(0.05, 5), st.floats(0, 20), st.floats(0, 20))
    def test_tangent_majorizes(self, lam, delta, t0, t):
        pp = PenaltyParams(lam, delta)
        line = lambda x: mcp(t0, pp) + mcp_derivative(t0, pp) * (x - t0)
        assert line(t0) == pytest.approx(mcp(t0, pp), abs=1e-12)
        assert line(t) >= mcp(t, pp) - 1e-10

    def test_params_positive(self):
        with pytest.raises(ValueError):
            PenaltyParams(0.0, 1.0)


# -- objective and MM ------------------------------------------------------


class TestObjective:
    def test_zero_loss_no_penalty(self, rng):
        y = rng.normal(size=(6, 3))
        assert objective(y, y, None) == 0.0

    def test_fully_merged(self, rng):
        y = rng.normal(size=(6, 3))
        theta = np.tile(y.mean(axis=0), (6, 1))
        assert objective(y, theta, P12) == pytest.approx(np.sum((y - y.mean(axis=0)) ** 2))

    def test_two_points(self):
        y = np.array([[0.0], [2.0]])
        assert objective(y, y, P12) == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            objective(np.zeros((3, 2)), np.zeros((2, 2)), P12)


def random_instance(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 40))
    p = int(r.integers(1, 8))
    y = r.normal(size=(n, p)) * r.uniform(0.1, 3)
    # some planted duplicates
    if n > 4:
        y[1] = y[0]
    theta = y + r.normal(scale=r.uniform(0, 1), size=y.shape)
    pp = PenaltyParams(float(r.uniform(0.05, 5)), float(r.uniform(0.2, 3)))
    return y, theta, pp


class TestMmSweep:
    def test_no_penalty_returns_data(self, rng):
        y = rng.normal(size=(8, 2))
        np.testing.assert_array_equal(mm_sweep(y, y + 1.0, None), y)

    def test_identical_points_stay_together(self):
        y = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 1.0]])
        out = mm_sweep(y, y, PenaltyParams(2.0, 1.0))
        np.testing.assert_array_equal(out[0], out[1])

    def test_ten_points_fifty_sweeps(self, rng):
        y = rng.normal(size=(10, 3))
        pp = PenaltyParams(1.5, 1.0)
        theta = y.copy()
        f = objective(y, theta, pp)
        for _ in range(50):
            theta = mm_sweep(y, theta, pp)
            f_new = objective(y, theta, pp)
            assert f_new <= f + 1e-10
            f = f_new

    @given(st.integers(0, 2**32 - 1))
    def test_descent_property(self, seed):
        y, theta, pp = random_instance(seed)
        f0 = objective(y, theta, pp)
        f1 = objective(y, mm_sweep(y, theta, pp), pp)
        assert f1 <= f0 + 1e-10

    def test_descent_many_instances(self):
        for seed in range(150):
            y, theta, pp = random_instance(10_000 + seed)
            for _ in range(3):
                nxt = mm_sweep(y, theta, pp, merge_tol=1e-6)
                assert objective(y, nxt, pp) <= objective(y, theta, pp) + 1e-10
                theta = nxt


class TestSolveFixedPenalty:
    def test_no_penalty(self, rng):
        y = rng.normal(size=(7, 2))
        res = solve_fixed_penalty(y, y + 0.5, None)
        np.testing.assert_allclose(res.centers, y, atol=1e-14)

    def test_far_clusters_no_attraction(self):
        y = np.array([[0.0, 0.0]] * 3 + [[10.0, 0.0]] * 3)
        res = solve_fixed_penalty(y, y, PenaltyParams(4.0, 1.0))
        np.testing.assert_array_equal(res.centers, y)

    def test_two_points_fuse_at_midpoint(self):
        y = np.array([[0.0, 0.0], [1.0, 0.5]])
        res = solve_fixed_penalty(y, y, PenaltyParams(10.0, 1.0))
        mid = y.mean(axis=0)
        np.testing.assert_allclose(res.centers, [mid, mid], atol=1e-9)
        assert res.converged

    def test_objective_not_above_start(self, rng):
        y = rng.normal(size=(30, 4))
        pp = PenaltyParams(1.0, 1.0)
        res = solve_fixed_penalty(y, y, pp)
        assert res.objective <= objective(y, y, pp) + 1e-10
        assert res.objective == pytest.approx(objective(y, res.centers, pp), rel=1e-9)


# -- partitions -------------------------------------------------------------


def uf_oracle(theta, tol):
    adj = squareform(pdist(theta)) <= tol
    _, lab = connected_components(csr_matrix(adj), directed=False)
    return lab


class TestExtractPartition:
    def test_all_equal(self):
        part, cc = extract_partition(np.ones((5, 2)), 1e-6)
        assert part.K == 1
        np.testing.assert_array_equal(cc, [[1.0, 1.0]])

    def test_all_far(self, rng):
        theta = np.arange(6, dtype=float)[:, None] * 10
        part, _ = extract_partition(theta, 1e-3)
        assert part.K == 6

    def test_chain(self):
        eps = 0.4
        part, _ = extract_partition(np.array([[0.0], [eps], [2 * eps]]), 0.5)
        assert part.labels.tolist() == [1, 1, 1]

    def test_size_then_index_order(self):
        theta = np.array([[0.0], [5.0], [5.0], [9.0], [9.0], [9.0]])
        part, cc = extract_partition(theta, 1e-9)
        assert part.labels.tolist() == [3, 2, 2, 1, 1, 1]
        np.testing.assert_array_equal(cc[:, 0], [9.0, 5.0, 0.0])

    @given(st.integers(0, 2**32 - 1))
    def test_matches_union_find_oracle(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(1, 51))
        theta = r.integers(0, 6, size=(n, 2)).astype(float) + r.uniform(0, 0.3, size=(n, 2))
        tol = float(r.uniform(0.05, 1.5))
        part, _ = extract_partition(theta, tol)
        oracle = uf_oracle(theta, tol) + 1
        np.testing.assert_array_equal(co_membership(part.labels), co_membership(oracle))


class TestSelectPenalty:
    def test_single_distance(self):
        pp = select_penalty(np.array([[0.0, 0.0], [0.0, 4.0]]), 0.3)
        assert pp.threshold == pytest.approx(4.0)
        assert pp.delta == 1.0

    def test_median_midpoint(self):
        # no point set has exactly the distances {1, 2, 3, 4}; the hand
        # quantile on that list is checked in test_type7_oracle_hand_case
        theta = np.array([[0.0], [1.0], [3.0], [6.0]])
        d = np.sort(pdist(theta))  # 1,2,3,3,5,6
        pp = select_penalty(theta, 0.5)
        assert pp.lam == pytest.approx(3.0)
        assert pp.lam == pytest.approx(type7(d, 0.5))

    def test_coincident(self):
        with pytest.raises(PathExhausted):
            select_penalty(np.zeros((4, 2)), 0.1)

    def test_duplicates_ignored(self):
        theta = np.array([[0.0], [0.0], [4.0], [4.0]])
        assert select_penalty(theta, 0.9).lam == pytest.approx(4.0)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
    def test_quantile_oracle(self, seed, omega):
        r = np.random.default_rng(seed)
        theta = r.normal(size=(int(r.integers(2, 25)), 3))
        d = pdist(theta)
        assert select_penalty(theta, omega).lam == pytest.approx(type7(np.sort(d), omega), rel=1e-12)


def type7(sorted_d, q):
    h = (len(sorted_d) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(sorted_d) - 1)
    return sorted_d[lo] + (h - lo) * (sorted_d[hi] - sorted_d[lo])


def test_type7_oracle_hand_case():
    assert type7(np.array([1.0, 2.0, 3.0, 4.0]), 0.5) == 2.5


# -- the path ----------------------------------------------------------------


def best_two_split(y):
    n = y.shape[0]
    best, arg = np.inf, None
    for mask in itertools.product([0, 1], repeat=n - 1):
        lab = np.array((0,) + mask)
        if lab.min() == lab.max():
            continue
        ss = sum(np.sum((y[lab == g] - y[lab == g].mean(axis=0)) ** 2) for g in (0, 1))
        if ss < best:
            best, arg = ss, lab
    return arg


class TestRunSpc:
    def test_two_tight_pairs(self):
        y = np.array([[0.0, 0.0], [10.0, 10.0], [0.1, 0.0], [10.0, 10.1]])
        path = run_spc(y, SpcConfig(omega=0.2))
        two = [s for s in path if s.K == 2]
        assert two
        want = co_membership(best_two_split(y) + 1)
        np.testing.assert_array_equal(co_membership(two[0].partition.labels), want)

    def test_identical_points(self):
        path = run_spc(np.ones((6, 3)), SpcConfig())
        assert len(path) == 1
        assert path[0].K == 1
        assert path[0].params is None

    def test_too_few_points(self):
        with pytest.raises(DegenerateInputError):
            run_spc(np.zeros((1, 2)))

    def test_planted_clusters(self):
        sim = gen_spherical(SimSpec(n=2000, noise_fraction=0.1, seed=3))
        idx = np.random.default_rng(0).choice(2000, 200, replace=False)
        truth = sim.truth.labels[idx]
        path = run_spc(sim.data.values[idx], SpcConfig(omega=0.02))
        recovered = []
        for sol in path:
            hit = 0
            for r in range(1, 11):
                in_r = truth == r
                for k in range(1, sol.K + 1):
                    mem = sol.partition.labels == k
                    if np.sum(mem & in_r) > 0.5 * in_r.sum() and np.sum(mem & in_r) >= 0.8 * mem.sum():
                        hit += 1
                        break
            recovered.append(hit)
        assert max(recovered) >= 8

    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.02, 0.1, 0.3]))
    def test_monotone_counts(self, seed, omega):
        r = np.random.default_rng(seed)
        y = np.concatenate([r.normal(c, 0.3, size=(8, 3)) for c in r.uniform(-5, 5, size=(4, 3))])
        counts = run_spc(y, SpcConfig(omega=omega)).cluster_counts
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert counts[-1] >= 1

    def test_permutation_equivariance(self, rng):
        centers = rng.uniform(-6, 6, size=(5, 4))
        y = np.concatenate([rng.normal(c, 0.2, size=(10, 4)) for c in centers])
        perm = rng.permutation(y.shape[0])
        a = run_spc(y, SpcConfig(omega=0.05))
        b = run_spc(y[perm], SpcConfig(omega=0.05))
        assert a.cluster_counts == b.cluster_counts
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(
                co_membership(sa.partition.labels)[np.ix_(perm, perm)],
                co_membership(sb.partition.labels),
            )


def fake_path(size_lists):
    sols = []
    for sizes in size_lists:
        labels = np.concatenate([np.full(s, k + 1) for k, s in enumerate(sizes)])
        part = Partition(labels)
        sols.append(SpcSolution(part, np.zeros((len(sizes), 1)), PenaltyParams(1, 1), 0.0))
    return SolutionPath(sols)


class TestSelectSolution:
    def test_first_maximum(self):
        path = fake_path([[5] * 5 + [1] * 15, [4] * 7 + [1] * 12, [4] * 7 + [3, 2], [20, 10, 10]])
        counts = [int(np.sum(s.partition.sizes > 3)) for s in path]
        assert counts == [5, 7, 7, 3]
        sol = select_solution(path, 3)
        assert sol is not path[1] and sol.objective == path[1].objective
        assert sol.K == 7
        np.testing.assert_array_equal(sol.partition.labels[28:], 0)

    def test_small_clusters_become_noise(self):
        sol = select_solution(fake_path([[50, 3, 2]]), 3)
        assert sol.K == 1
        assert sol.partition.sizes.tolist() == [50]
        assert sol.partition.noise.size == 5
        assert sol.centers.shape == (1, 1)

    def test_all_small(self):
        sol = select_solution(fake_path([[2, 2, 1], [3, 2]]), 3)
        assert sol.K == 0
        assert np.all(sol.partition.labels == 0)
        assert sol.partition.labels.size == 5

    def test_empty(self):
        with pytest.raises(ValueError):
            select_solution(SolutionPath(), 3)
