import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markovwaa.errors import DomainError, InvalidArgumentError
from markovwaa.spaces import ApproximationStructure, SignalSpace, cube_bits


unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


class TestUnitInterval:
    def test_quantize_truncates(self, interval):
        # floor(0.7 * 4) / 4
        assert interval.quantize(2, 0.7) == 0.5

    def test_zero_is_fixed(self, interval):
        assert interval.quantize(3, 0.0) == 0.0

    def test_right_endpoint_joins_last_cell(self, interval):
        assert interval.quantize(3, 1.0) == 0.875

    def test_image(self, interval):
        assert interval.image(1) == [0.0, 0.5]
        assert len(interval.image(2)) == 4

    def test_half_diameters(self, interval):
        assert interval.half_max_cell_diameter(1) == 0.25
        assert interval.half_max_cell_diameter(3) == 0.0625

    @pytest.mark.parametrize("m", range(1, 11))
    def test_level_suite(self, interval, m):
        image = interval.image(m)
        assert len(image) == 2**m
        assert len(set(image)) == 2**m
        assert [interval.quantize(m, p) for p in image] == image
        assert interval.half_max_cell_diameter(m) == 2.0 ** -(m + 1)

    @given(x=unit, m=st.integers(1, 10))
    def test_idempotent(self, x, m):
        s = ApproximationStructure(SignalSpace.unit_interval(), 10)
        q = s.quantize(m, x)
        assert s.quantize(m, q) == q
        assert s.cell_index(m, x) == s.cell_index(m, q)

    @given(x=unit, m=st.integers(1, 10))
    def test_quantization_error_within_cell(self, x, m):
        s = ApproximationStructure(SignalSpace.unit_interval(), 10)
        assert abs(x - s.quantize(m, x)) <= 2 * s.half_max_cell_diameter(m)

    def test_errors(self, interval):
        with pytest.raises(InvalidArgumentError):
            interval.quantize(0, 0.3)
        with pytest.raises(InvalidArgumentError):
            interval.quantize(11, 0.3)
        with pytest.raises(DomainError):
            interval.quantize(2, 1.5)
        with pytest.raises(InvalidArgumentError):
            ApproximationStructure(SignalSpace.unit_interval(), 0)


class TestUnitCube:
    def test_bit_split(self):
        assert cube_bits(5, 2) == [3, 2]
        assert cube_bits(4, 2) == [2, 2]
        assert cube_bits(1, 3) == [1, 0, 0]

    def test_image_cardinality_and_idempotence(self):
        s = ApproximationStructure(SignalSpace.unit_cube(2), 8)
        for m in range(1, 9):
            image = s.image(m)
            assert len(set(image)) == 2**m
            assert all(s.quantize(m, p) == p for p in image)
            assert [s.cell_index(m, p) for p in image] == list(range(2**m))

    def test_sup_metric_error_bound(self):
        s = ApproximationStructure(SignalSpace.unit_cube(3), 9)
        rng = np.random.default_rng(0)
        for m in range(1, 10):
            for x in rng.random((50, 3)):
                x = tuple(x)
                assert s.space.distance(x, s.quantize(m, x)) <= 2 * s.half_max_cell_diameter(m)

    def test_wrong_dimension(self):
        s = ApproximationStructure(SignalSpace.unit_cube(2), 4)
        with pytest.raises(DomainError):
            s.quantize(2, (0.1, 0.2, 0.3))


class TestFiniteSet:
    def test_exact_size_is_identity(self):
        labels = list("abcdefgh")
        s = ApproximationStructure(SignalSpace.finite_set(labels), 3)
        assert s.image(3) == labels
        assert s.half_max_cell_diameter(3) == 0.0
        assert all(s.quantize(3, a) == a for a in labels)

    def test_blocks_are_contiguous(self):
        s = ApproximationStructure(SignalSpace.finite_set(range(6)), 2)
        cells = [s.cell_index(2, i) for i in range(6)]
        assert cells == sorted(cells)
        assert set(cells) == {0, 1, 2, 3}
        assert s.half_max_cell_diameter(2) == 0.5
        for m in (1, 2):
            assert len(s.image(m)) == 2**m
            assert all(s.quantize(m, p) == p for p in s.image(m))

    def test_levels_limited_by_size(self):
        with pytest.raises(InvalidArgumentError):
            ApproximationStructure(SignalSpace.finite_set(range(6)), 3)

    def test_unknown_label(self):
        s = ApproximationStructure(SignalSpace.finite_set("abcd"), 2)
        with pytest.raises(DomainError):
            s.quantize(1, "z")


def test_max_level_for_continuous_spaces():
    assert SignalSpace.unit_interval().max_level == 52
    assert math.isclose(ApproximationStructure(SignalSpace.unit_interval(), 52).quantize(52, 1 / 3), 1 / 3)


class TestIdempotenceSweep:
    def test_continuous_spaces_sampled(self):
        rng = np.random.default_rng(17)
        interval = ApproximationStructure(SignalSpace.unit_interval(), 12)
        cube = ApproximationStructure(SignalSpace.unit_cube(2), 12)
        xs = rng.random(10**4)
        pts = [tuple(p) for p in rng.random((10**4, 2))]
        for m in (1, 3, 7, 12):
            for x in xs:
                q = interval.quantize(m, float(x))
                assert interval.quantize(m, q) == q
            for p in pts:
                q = cube.quantize(m, p)
                assert cube.quantize(m, q) == q

    def test_finite_set_exhaustive(self):
        for n in (2, 5, 8, 13):
            s = ApproximationStructure(SignalSpace.finite_set(range(n)), int(math.log2(n)))
            for m in range(1, s.levels + 1):
                assert len(s.image(m)) == 2**m
                for x in range(n):
                    assert s.quantize(m, s.quantize(m, x)) == s.quantize(m, x)
