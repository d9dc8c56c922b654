"""Vector primitive contracts: hand-checked values and exactness properties."""

import numpy as np
import pytest

from fedscalar.linalg import as_param_vector, axpy, inner, norm_sq, outer


def v(*values):
    return np.array(values, dtype=np.float64)


class TestInner:
    def test_hand_values(self):
        assert inner(v(1.0, 2.0), v(1.0, -1.0)) == -1.0
        assert inner(v(0.0, 0.0, 0.0), v(5.0, -2.0, 7.0)) == 0.0
        assert inner(v(3.0, 4.0), v(3.0, 4.0)) == 25.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            inner(v(1.0), v(1.0, 2.0))

    def test_symmetry_is_bitwise(self):
        # Products commute exactly and the reduction order is fixed, so the
        # two argument orders agree bit for bit.
        gen = np.random.default_rng(7)
        for _ in range(50):
            d = int(gen.integers(1, 300))
            a = gen.standard_normal(d) * 10.0 ** gen.integers(-3, 4)
            b = gen.standard_normal(d)
            assert inner(a, b) == inner(b, a)


class TestAxpy:
    def test_hand_values(self):
        np.testing.assert_array_equal(axpy(2.0, v(1.0, -1.0), v(0.0, 10.0)), v(2.0, 8.0))
        np.testing.assert_array_equal(axpy(0.0, v(9.0, 9.0), v(1.0, 2.0)), v(1.0, 2.0))

    def test_inputs_not_mutated(self):
        x, y = v(1.0, 2.0), v(3.0, 4.0)
        axpy(5.0, x, y)
        np.testing.assert_array_equal(x, v(1.0, 2.0))
        np.testing.assert_array_equal(y, v(3.0, 4.0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            axpy(1.0, v(1.0), v(1.0, 2.0))

    def test_add_then_subtract_within_one_ulp(self):
        gen = np.random.default_rng(11)
        for _ in range(20):
            d = int(gen.integers(1, 100))
            x = gen.standard_normal(d)
            y = gen.standard_normal(d) * 100.0
            round_trip = axpy(-1.0, x, axpy(1.0, x, y))
            assert np.all(np.abs(round_trip - y) <= np.spacing(np.abs(y)))


class TestOuter:
    def test_hand_value(self):
        np.testing.assert_array_equal(
            outer(v(1.0, 2.0), v(3.0, 4.0)), np.array([[3.0, 4.0], [6.0, 8.0]])
        )

    def test_entries_are_exact_products(self):
        gen = np.random.default_rng(3)
        a, b = gen.standard_normal(17), gen.standard_normal(9)
        result = outer(a, b)
        assert result.shape == (17, 9)
        for i in range(17):
            for j in range(9):
                assert result[i, j] == a[i] * b[j]


class TestNormSq:
    def test_hand_values(self):
        assert norm_sq(v(3.0, 4.0)) == 25.0
        assert norm_sq(v(0.0, 0.0, 0.0)) == 0.0

    def test_nonnegative(self):
        gen = np.random.default_rng(5)
        for _ in range(100):
            assert norm_sq(gen.standard_normal(int(gen.integers(1, 50)))) >= 0.0

    def test_matches_self_inner(self):
        gen = np.random.default_rng(6)
        a = gen.standard_normal(259)
        assert norm_sq(a) == inner(a, a)


class TestAsParamVector:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            as_param_vector([1.0, np.nan])
        with pytest.raises(ValueError, match="non-finite"):
            as_param_vector([np.inf, 0.0])

    def test_rejects_matrices(self):
        with pytest.raises(ValueError, match="flat vector"):
            as_param_vector(np.zeros((2, 2)))

    def test_coerces_to_float64(self):
        vec = as_param_vector([1, 2, 3])
        assert vec.dtype == np.float64
