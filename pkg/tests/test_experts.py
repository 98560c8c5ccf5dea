import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markovwaa.errors import InvalidArgumentError, ResourceLimitError
from markovwaa.experts import (
    ExpertPool,
    PredictionGrid,
    enumerate_pool,
    hierarchical_log_priors,
    nearest_expert,
    predict_expert,
    value_distance,
)
from markovwaa.losses import LossFunction
from markovwaa.measures import FiniteMeasure, lift
from markovwaa.spaces import ApproximationStructure, SignalSpace


def brute_nearest(pool, rule, loss):
    """Scan every level-m expert; ties keep the first (lowest index)."""
    m = int(math.log2(len(rule)))
    block = pool.block(m)
    best = None
    for local in range(block.count):
        k = block.offset + local + 1
        d = max(value_distance(loss, r, v) for r, v in zip(rule, pool.table(k)))
        if best is None or d < best[1] - 1e-15:
            best = (k, d)
    return best


class TestPredictionGrid:
    def test_uniform(self):
        assert PredictionGrid.uniform(3).values == (0.0, 0.5, 1.0)
        assert PredictionGrid.uniform(1).values == (0.5,)

    def test_rejects_unsorted(self):
        with pytest.raises(InvalidArgumentError):
            PredictionGrid((0.5, 0.0))

    def test_measures(self):
        grid = PredictionGrid.of_measures([0.0, 1.0], 2)
        assert grid.size == 3
        assert grid.values[0] == lift(1.0)
        assert grid.values[1].atoms == ((0.0, 0.5), (1.0, 0.5))
        np.testing.assert_array_equal(grid.mass_matrix(), [[0, 1], [0.5, 0.5], [1, 0]])


class TestEnumeration:
    def test_pool_sizes(self, interval):
        grid = PredictionGrid((0.0, 1.0))
        assert len(enumerate_pool(interval, grid, 1)) == 4
        assert len(enumerate_pool(interval, grid, 2)) == 20
        assert len(enumerate_pool(interval, PredictionGrid.uniform(1), 1)) == 1

    @pytest.mark.parametrize("g,m_max", [(2, 1), (2, 3), (3, 2), (4, 3)])
    def test_priors_sum_to_one(self, interval, g, m_max):
        pool = ExpertPool(interval, PredictionGrid.uniform(g), m_max)
        assert np.all(np.isfinite(pool.log_priors))
        assert math.isclose(float(np.exp(pool.log_priors).sum()), 1.0, rel_tol=1e-12)

    def test_hierarchical_formula(self):
        # level 1 of a single-level pool with G = 3: (1/2 / (1/2)) / 3^2
        assert math.isclose(math.exp(hierarchical_log_priors(1, 3)[0]), 1 / 9)

    def test_lexicographic_order(self, interval):
        pool = ExpertPool(interval, PredictionGrid.uniform(3), 2)
        tables = [tuple(pool.table_indices(k)) for k in range(1, 10)]
        assert tables == list(itertools.product(range(3), repeat=2))
        assert pool.table_indices(10) == [0, 0, 0, 0]
        assert pool.table_indices(len(pool)) == [2, 2, 2, 2]
        for k in (1, 5, 10, 37, len(pool)):
            m = pool.level_of(k)
            assert pool.index_of_table(m, pool.table_indices(k)) == k

    def test_cap_names_level(self, interval):
        with pytest.raises(ResourceLimitError, match="m=3"):
            ExpertPool(interval, PredictionGrid.uniform(4), 3, cap=1000)

    def test_prior_overrides(self, interval):
        grid = PredictionGrid.uniform(2)
        pool = ExpertPool(interval, grid, 1, prior_overrides={1: 0.01})
        assert math.isclose(pool.prior(1), 0.01)
        with pytest.raises(InvalidArgumentError):
            ExpertPool(interval, grid, 1, prior_overrides={1: 0.0})
        with pytest.raises(InvalidArgumentError):
            ExpertPool(interval, grid, 1, prior_overrides={1: 0.9, 2: 0.9})
        with pytest.raises(InvalidArgumentError):
            ExpertPool(interval, grid, 1, prior_overrides={9: 0.1})

    def test_serialization_reproducible(self, interval):
        a = ExpertPool(interval, PredictionGrid.uniform(3), 2).to_json()
        b = ExpertPool(interval, PredictionGrid.uniform(3), 2).to_json()
        assert a == b
        assert a != ExpertPool(interval, PredictionGrid.uniform(3), 2, prior_scheme="uniform").to_json()


class TestPredict:
    def test_table_lookup(self, interval):
        pool = ExpertPool(interval, PredictionGrid((0.0, 1.0)), 1)
        k = pool.index_of_table(1, [0, 1])
        assert predict_expert(pool, k, 0.7) == 1.0
        assert predict_expert(pool, k, 0.2) == 0.0

    def test_constant_expert(self, interval):
        pool = ExpertPool(interval, PredictionGrid((0.0, 0.4)), 2)
        k = pool.index_of_table(2, [1, 1, 1, 1])
        assert all(pool.predict(k, x) == 0.4 for x in np.linspace(0, 1, 9))

    @given(x=st.floats(0, 1), k=st.integers(1, 20))
    def test_factors_through_quantizer(self, x, k):
        s = ApproximationStructure(SignalSpace.unit_interval(), 4)
        pool = ExpertPool(s, PredictionGrid((0.0, 1.0)), 2)
        assert pool.predict(k, x) == pool.predict(k, s.quantize(pool.level_of(k), x))

    def test_index_errors(self, interval):
        pool = ExpertPool(interval, PredictionGrid((0.0, 1.0)), 1)
        for bad in (0, 5):
            with pytest.raises(InvalidArgumentError):
                pool.predict(bad, 0.3)


class TestNearestExpert:
    def test_member_rule(self, interval, square):
        pool = ExpertPool(interval, PredictionGrid.uniform(3), 2)
        k, d = nearest_expert(pool, [0.5, 1.0, 0.0, 0.5], square)
        assert d == 0.0
        assert pool.table(k) == [0.5, 1.0, 0.0, 0.5]

    def test_constant_off_grid(self, interval, square):
        pool = ExpertPool(interval, PredictionGrid((0.0, 1.0)), 1)
        k, d = nearest_expert(pool, [0.3, 0.3], square)
        assert pool.table(k) == [0.0, 0.0]
        assert math.isclose(d, square.pseudo_metric(0.3, 0.0))
        assert (k, d) == brute_nearest(pool, [0.3, 0.3], square)

    def test_single_value_grid(self, interval, absolute):
        pool = ExpertPool(interval, PredictionGrid.uniform(1), 1)
        assert nearest_expert(pool, [0.1, 0.8], absolute) == (1, pytest.approx(0.4))

    def test_missing_level(self, interval, square):
        pool = ExpertPool(interval, PredictionGrid.uniform(2), 1)
        with pytest.raises(InvalidArgumentError):
            nearest_expert(pool, [0.0] * 4, square)

    @settings(max_examples=40, deadline=None)
    @given(rule=st.lists(st.floats(0, 1), min_size=4, max_size=4), g=st.integers(1, 4))
    def test_matches_exhaustive_scan(self, rule, g):
        s = ApproximationStructure(SignalSpace.unit_interval(), 2)
        pool = ExpertPool(s, PredictionGrid.uniform(g), 2)
        for loss in (LossFunction.square(), LossFunction.absolute()):
            k, d = nearest_expert(pool, rule, loss)
            bk, bd = brute_nearest(pool, rule, loss)
            assert math.isclose(d, bd, abs_tol=1e-15)
            assert k == bk

    def test_measure_rule(self, interval, zero_one):
        grid = PredictionGrid.of_measures([0.0, 1.0], 2)
        pool = ExpertPool(interval, grid, 1)
        rule = [FiniteMeasure(((0.0, 0.4), (1.0, 0.6))), lift(1.0)]
        k, d = nearest_expert(pool, rule, zero_one)
        assert (k, pytest.approx(d, abs=1e-9)) == brute_nearest(pool, rule, zero_one)
        assert pool.table(k) == [grid.values[1], grid.values[0]]


class TestExplicitPools:
    def test_nearest_scans_listed_tables(self, interval, absolute):
        grid = PredictionGrid.uniform(3)
        pool = ExpertPool.from_tables(interval, grid, [(1, [2, 2]), (1, [0, 1]), (1, [1, 1])], [0.2, 0.3, 0.4])
        assert nearest_expert(pool, [0.1, 0.4], absolute) == (2, pytest.approx(0.1))
        assert nearest_expert(pool, [0.5, 0.5], absolute) == (3, 0.0)


class TestPoolInvariants:
    def test_every_expert_is_m_elementary(self, interval):
        pool = ExpertPool(interval, PredictionGrid.uniform(3), 2)
        rng = np.random.default_rng(0)
        xs = rng.random(1000)
        for k in rng.choice(np.arange(1, len(pool) + 1), size=20, replace=False):
            m = pool.level_of(int(k))
            for x in xs:
                assert pool.predict(int(k), float(x)) == pool.predict(int(k), interval.quantize(m, float(x)))

    @settings(max_examples=50, deadline=None)
    @given(idx=st.lists(st.integers(0, 4), min_size=2, max_size=2), off=st.floats(0.01, 0.2))
    def test_zero_distance_iff_on_grid(self, idx, off):
        s = ApproximationStructure(SignalSpace.unit_interval(), 1)
        grid = PredictionGrid.uniform(5)
        pool = ExpertPool(s, grid, 1)
        loss = LossFunction.absolute()
        on = [grid.values[i] for i in idx]
        assert nearest_expert(pool, on, loss)[1] == 0.0
        shifted = [on[0], min(1.0, abs(on[1] - off))]
        assert (nearest_expert(pool, shifted, loss)[1] == 0.0) == (shifted[1] in grid.values)
