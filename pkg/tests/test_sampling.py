import numpy as np
import pytest
from hypothesis import given, strategies as st

from todlab import nnet
from todlab.discrepancy import DiscrepancyScore, cod_scores
from todlab.errors import ArgumentError, ConfigurationError
from todlab.nnet import NetworkSpec
from todlab.sampling import AcquisitionStrategy, acquire, select_random, select_top_b


def scores(values, indices=None):
    indices = range(len(values)) if indices is None else indices
    return [DiscrepancyScore(int(i), float(v)) for i, v in zip(indices, values)]


class TestTopB:
    def test_ordering(self):
        assert set(select_top_b(scores([0.2, 0.9, 0.4]), 2).chosen) == {1, 2}

    def test_tie_lowest_index(self):
        assert select_top_b(scores([0.9, 0.9, 0.1]), 1).chosen == (0,)

    def test_seeded_shuffle_tie(self):
        picks = {select_top_b(scores([0.5] * 10), 1, "seeded_shuffle", seed=s).chosen for s in range(30)}
        assert len(picks) > 1
        assert select_top_b(scores([0.5] * 10), 3, "seeded_shuffle", 4) == select_top_b(scores([0.5] * 10), 3, "seeded_shuffle", 4)

    def test_budget_exceeds_pool(self):
        assert set(select_top_b(scores([0.1, 0.2]), 5).chosen) == {0, 1}

    def test_zero_budget(self):
        with pytest.raises(ArgumentError):
            select_top_b(scores([0.1]), 0)

    def test_matches_full_sort_oracle(self, rng):
        vals = rng.random(1000)
        idx = rng.permutation(5000)[:1000]
        sc = scores(vals, idx)
        for b in (1, 7, 100, 999, 1000):
            ranked = sorted(sc, key=lambda s: s.value, reverse=True)
            assert set(select_top_b(sc, b).chosen) == {s.sample_index for s in ranked[:b]}

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=50, unique=True), st.floats(0.01, 100), st.integers(1, 60))
    def test_scale_equivariant(self, vals, k, b):
        a = select_top_b(scores(vals), b).chosen
        c = select_top_b(scores([v * k for v in vals]), b).chosen
        assert set(a) == set(c)


class TestRandom:
    def test_whole_pool(self):
        assert sorted(select_random([4, 8, 15], 3, seed=0).chosen) == [4, 8, 15]

    def test_deterministic(self):
        assert select_random(range(100), 10, 5) == select_random(range(100), 10, 5)

    def test_empty(self):
        with pytest.raises(ArgumentError):
            select_random([], 1, 0)

    def test_uniform_frequencies(self):
        counts = np.zeros(10)
        for seed in range(10000):
            counts[select_random(range(10), 1, seed).chosen[0]] += 1
        sigma = np.sqrt(10000 * 0.1 * 0.9)
        assert np.all(np.abs(counts - 1000) < 3 * sigma)

    def test_no_duplicates(self):
        chosen = select_random(range(50), 20, 1).chosen
        assert len(set(chosen)) == 20


class TestAcquire:
    spec = NetworkSpec((2, 6, 3))

    def test_random_ignores_models(self, rng):
        X = rng.normal(size=(40, 2))
        res = acquire(AcquisitionStrategy("random"), range(40), None, None, X, 5, seed=9)
        assert res == select_random(range(40), 5, 9)

    def test_degenerate_scores_follow_tie_rule(self, rng):
        s = nnet.init_network(self.spec, 0)
        X = rng.normal(size=(40, 2))
        pool = list(range(10, 40))
        res = acquire(AcquisitionStrategy("cod"), pool, s, s, X, 5, seed=0)
        assert res.chosen == (10, 11, 12, 13, 14)

    def test_cod_is_top_b_of_cod_scores(self, rng):
        a, b = nnet.init_network(self.spec, 0), nnet.init_network(self.spec, 1)
        X = rng.normal(size=(200, 2))
        pool = rng.choice(200, 120, replace=False)
        res = acquire(AcquisitionStrategy("cod"), pool, a, b, X, 15, seed=0)
        assert res.chosen == select_top_b(cod_scores(a, b, X, pool), 15).chosen
        assert set(res.chosen) <= set(pool.tolist())

    def test_missing_comparison(self, rng):
        s = nnet.init_network(self.spec, 0)
        with pytest.raises(ConfigurationError):
            acquire(AcquisitionStrategy("emaod"), [0, 1], s, None, rng.normal(size=(2, 2)), 1, 0)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError, match="random, cod, emaod"):
            AcquisitionStrategy("coreset")
