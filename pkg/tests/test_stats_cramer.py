import numpy as np
import pytest

from improvnet.stats import cramer_statistic, cramer_test, ks_uniform_distance
from improvnet.stats.cramer import CramerError


def brute_force(x, y):
    """Double-sum statistic with phi(z) = z, by explicit loops."""
    m, n = len(x), len(y)
    xy = sum(np.linalg.norm(a - b) for a in x for b in y)
    xx = sum(np.linalg.norm(a - b) for a in x for b in x)
    yy = sum(np.linalg.norm(a - b) for a in y for b in y)
    return m * n / (m + n) * (2 * xy / (m * n) - xx / m ** 2 - yy / n ** 2)


class TestStatistic:
    def test_hand_example(self):
        # m = n = 2, every cross distance 1, within-sample distances 0: (4/4) * 2 = 2
        assert cramer_statistic([[0.0], [0.0]], [[1.0], [1.0]]) == pytest.approx(2.0)

    @pytest.mark.parametrize("m,n,d", [(5, 7, 1), (20, 13, 3), (50, 50, 13)])
    def test_brute_force_oracle(self, rng, m, n, d):
        x, y = rng.normal(size=(m, d)), rng.normal(0.3, 1.5, size=(n, d))
        assert abs(cramer_statistic(x, y) - brute_force(x, y)) < 1e-10

    def test_identical_samples_zero(self, rng):
        x = rng.normal(size=(40, 13))
        r = cramer_test(x, x.copy(), replicates=199)
        assert r.statistic == 0.0
        assert r.p_value == 1.0

    def test_kernels(self, rng):
        x, y = rng.normal(size=(10, 2)), rng.normal(size=(12, 2))
        assert cramer_statistic(x, y, "cramer") == pytest.approx(cramer_statistic(x, y) / 2)

    def test_errors(self, rng):
        with pytest.raises(CramerError, match="dimension"):
            cramer_test(rng.normal(size=(5, 2)), rng.normal(size=(5, 3)))
        with pytest.raises(CramerError, match="replicates"):
            cramer_test(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), replicates=50)


class TestPermutation:
    def test_observed_matches_statistic(self, rng):
        x, y = rng.normal(size=(30, 4)), rng.normal(size=(25, 4))
        assert cramer_test(x, y, 99).statistic == pytest.approx(cramer_statistic(x, y), rel=1e-12)

    def test_detects_shift(self, rng):
        x, y = rng.normal(size=(60, 3)), rng.normal(1.0, size=(60, 3))
        assert cramer_test(x, y, 499, seed=2).p_value == pytest.approx(1 / 500)

    def test_null_uniform(self):
        gen = np.random.default_rng(99)
        ps = [cramer_test(gen.normal(size=(20, 3)), gen.normal(size=(20, 3)), 199, seed=i).p_value
              for i in range(500)]
        assert ks_uniform_distance(ps) < 0.05

    def test_reproducible(self, rng):
        x, y = rng.normal(size=(15, 2)), rng.normal(size=(15, 2))
        assert cramer_test(x, y, 99, seed=5).p_value == cramer_test(x, y, 99, seed=5).p_value

    def test_blocks(self, rng):
        x, y = rng.normal(size=(250, 2)), rng.normal(size=(90, 2))
        r = cramer_test(x, y, 99, subset_size=100)
        # x splits into 3 blocks; y fits in one and is reused
        assert [(b.m, b.n) for b in r.blocks] == [(100, 90), (100, 90), (50, 90)]
        r = cramer_test(x, rng.normal(size=(230, 2)), 99, subset_size=100)
        assert [(b.m, b.n) for b in r.blocks] == [(100, 100), (100, 100), (50, 30)]
