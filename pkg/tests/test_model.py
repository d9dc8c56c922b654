"""Model contracts: parameter layout, loss values checked by hand, exact
gradients checked against central finite differences, and local SGD
mechanics.
"""

import math

import numpy as np
import pytest

from fedscalar.linalg import norm_sq
from fedscalar.model import (
    LabeledSample,
    MlpSpec,
    grad,
    init_params,
    local_sgd,
    loss,
)
from fedscalar.randomness import RngStream


def finite_difference_grad(spec, params, batch, step=1e-5):
    """Independent gradient oracle: central differences, one coordinate at a time."""
    out = np.zeros_like(params)
    for i in range(len(params)):
        plus = params.copy()
        plus[i] += step
        minus = params.copy()
        minus[i] -= step
        out[i] = (loss(spec, plus, batch) - loss(spec, minus, batch)) / (2.0 * step)
    return out


def max_relative_error(exact, approx):
    """Max |a - b| / max(1, |a|): absolute near zero, relative when large."""
    return float((np.abs(exact - approx) / np.maximum(1.0, np.abs(exact))).max())


def random_batch(gen, in_dim, out_dim, size):
    return gen.uniform(0.0, 1.0, size=(size, in_dim)), gen.integers(0, out_dim, size=size)


class TestSpec:
    def test_param_count_reference_architecture(self):
        # 64*3+3 + 3*3+3 + 3*3+3 + 3*10+10 = 259
        assert MlpSpec((64, 3, 3, 3, 10)).param_count == 259

    def test_param_count_minimal(self):
        assert MlpSpec((2, 2)).param_count == 6

    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            MlpSpec((5,))
        with pytest.raises(ValueError):
            MlpSpec((5, 0, 2))


class TestInit:
    def test_bias_entries_are_zero(self):
        spec = MlpSpec((2, 2))
        params = init_params(spec, RngStream(1, "init"))
        np.testing.assert_array_equal(params[4:6], np.zeros(2))

    def test_same_stream_state_is_bitwise_identical(self):
        spec = MlpSpec((64, 3, 3, 3, 10))
        a = init_params(spec, RngStream(5, "init"))
        b = init_params(spec, RngStream(5, "init"))
        np.testing.assert_array_equal(a, b)
        assert len(a) == 259 and np.all(np.isfinite(a))

    def test_weight_scale_tracks_fan_in(self):
        # std 2/fan_in: wide layer -> per-weight std sqrt(2/400) = 0.0707.
        spec = MlpSpec((400, 300, 10))
        params = init_params(spec, RngStream(7, "init"))
        first_weights = params[: 400 * 300]
        assert abs(first_weights.std() - math.sqrt(2.0 / 400)) < 0.002


class TestLoss:
    def test_zero_params_give_log_class_count(self):
        # All-zero parameters produce identical logits, so the softmax is
        # uniform and the loss is exactly ln(10) regardless of input.
        spec = MlpSpec((64, 3, 3, 3, 10))
        gen = np.random.default_rng(0)
        batch = random_batch(gen, 64, 10, 7)
        assert loss(spec, np.zeros(259), batch) == pytest.approx(math.log(10.0), rel=1e-12)

    def test_saturated_correct_logit_has_tiny_loss(self):
        # One linear layer, zero input: logits equal the biases.  A +50
        # margin on the true class drives the loss to ~e^-50 without overflow.
        spec = MlpSpec((1, 2))
        params = np.array([0.0, 0.0, 50.0, 0.0])  # weights, then biases
        batch = (np.zeros((1, 1)), np.array([0]))
        assert loss(spec, params, batch) < 1e-20

    def test_extreme_logits_stay_finite(self):
        spec = MlpSpec((1, 2))
        params = np.array([0.0, 0.0, 1e4, -1e4])
        batch = (np.zeros((1, 1)), np.array([1]))
        value = loss(spec, params, batch)
        assert np.isfinite(value) and value == pytest.approx(2e4)

    def test_batch_loss_is_mean_of_singletons(self):
        spec = MlpSpec((4, 3, 10))
        gen = np.random.default_rng(1)
        params = gen.standard_normal(spec.param_count)
        features, labels = random_batch(gen, 4, 10, 3)
        singles = [loss(spec, params, (features[i : i + 1], labels[i : i + 1])) for i in range(3)]
        assert loss(spec, params, (features, labels)) == pytest.approx(np.mean(singles), rel=1e-12)

    def test_accepts_labeled_samples(self):
        spec = MlpSpec((4, 10))
        gen = np.random.default_rng(2)
        params = gen.standard_normal(spec.param_count)
        features, labels = random_batch(gen, 4, 10, 5)
        as_samples = [LabeledSample(features[i], int(labels[i])) for i in range(5)]
        assert loss(spec, params, as_samples) == loss(spec, params, (features, labels))

    def test_rejects_mismatched_shapes(self):
        spec = MlpSpec((4, 10))
        with pytest.raises(ValueError, match="parameters"):
            loss(spec, np.zeros(3), (np.zeros((1, 4)), np.array([0])))
        with pytest.raises(ValueError, match="feature dimension"):
            loss(spec, np.zeros(spec.param_count), (np.zeros((1, 5)), np.array([0])))
        with pytest.raises(ValueError, match="labels"):
            loss(spec, np.zeros(spec.param_count), (np.zeros((1, 4)), np.array([11])))


class TestGrad:
    def test_matches_finite_differences_on_random_triples(self):
        # 20 random (architecture, parameters, batch) triples.
        gen = np.random.default_rng(2024)
        for _ in range(20):
            depth = int(gen.integers(2, 5))
            sizes = tuple(int(gen.integers(2, 9)) for _ in range(depth))
            spec = MlpSpec(sizes)
            params = gen.standard_normal(spec.param_count)
            batch = random_batch(gen, sizes[0], sizes[-1], int(gen.integers(3, 6)))
            err = max_relative_error(grad(spec, params, batch), finite_difference_grad(spec, params, batch))
            assert err < 1e-5, f"gradient mismatch {err:.2e} for sizes {sizes}"

    def test_zero_gradient_at_symmetric_optimum(self):
        # Zero weights, zero inputs, balanced labels: the loss is flat at the
        # uniform softmax, so every partial derivative vanishes.
        spec = MlpSpec((1, 2))
        batch = (np.zeros((2, 1)), np.array([0, 1]))
        np.testing.assert_array_equal(grad(spec, np.zeros(4), batch), np.zeros(4))

    def test_batch_grad_is_mean_of_singletons(self):
        spec = MlpSpec((5, 4, 10))
        gen = np.random.default_rng(3)
        params = gen.standard_normal(spec.param_count)
        features, labels = random_batch(gen, 5, 10, 3)
        singles = np.mean(
            [grad(spec, params, (features[i : i + 1], labels[i : i + 1])) for i in range(3)], axis=0
        )
        np.testing.assert_allclose(grad(spec, params, (features, labels)), singles, atol=1e-14)

    def test_output_bias_shift_invariance(self):
        # Adding a constant to every output bias leaves the softmax, and
        # hence the loss, unchanged.
        spec = MlpSpec((4, 3, 10))
        gen = np.random.default_rng(4)
        params = gen.standard_normal(spec.param_count)
        shifted = params.copy()
        shifted[-10:] += 3.7
        batch = random_batch(gen, 4, 10, 6)
        assert abs(loss(spec, params, batch) - loss(spec, shifted, batch)) < 1e-12


class TestLocalSgd:
    def setup_method(self):
        self.spec = MlpSpec((4, 3, 10))
        gen = np.random.default_rng(5)
        self.start = gen.standard_normal(self.spec.param_count)
        self.data = random_batch(gen, 4, 10, 12)

    def test_single_full_batch_step_is_one_gradient_step(self):
        end, delta = local_sgd(
            self.spec, self.start, self.data, steps=1, alpha=0.05,
            batch_size=12, stream=RngStream(1, "batch:1"),
        )
        expected = -0.05 * grad(self.spec, self.start, self.data)
        tol = np.spacing(np.maximum(np.abs(self.start), np.abs(expected)))
        assert np.all(np.abs(delta - expected) <= tol)
        np.testing.assert_array_equal(end, self.start + delta)

    def test_zero_alpha_gives_exact_zero_drift(self):
        _, delta = local_sgd(
            self.spec, self.start, self.data, steps=5, alpha=0.0,
            batch_size=4, stream=RngStream(1, "batch:1"),
        )
        np.testing.assert_array_equal(delta, np.zeros(self.spec.param_count))

    def test_start_is_not_mutated(self):
        before = self.start.copy()
        local_sgd(
            self.spec, self.start, self.data, steps=3, alpha=0.1,
            batch_size=4, stream=RngStream(2, "batch:1"),
        )
        np.testing.assert_array_equal(self.start, before)

    def test_same_stream_state_is_bitwise_identical(self):
        runs = [
            local_sgd(
                self.spec, self.start, self.data, steps=5, alpha=0.01,
                batch_size=4, stream=RngStream(9, "batch:3:round:0"),
            )
            for _ in range(2)
        ]
        np.testing.assert_array_equal(runs[0][0], runs[1][0])
        np.testing.assert_array_equal(runs[0][1], runs[1][1])

    def test_reports_stochastic_gradient_norms(self):
        seen: list[float] = []
        local_sgd(
            self.spec, self.start, self.data, steps=5, alpha=0.01,
            batch_size=4, stream=RngStream(9, "batch:1"), grad_sq_out=seen,
        )
        assert len(seen) == 5
        assert all(val >= 0.0 and np.isfinite(val) for val in seen)

    def test_drift_is_end_minus_start(self):
        end, delta = local_sgd(
            self.spec, self.start, self.data, steps=5, alpha=0.02,
            batch_size=6, stream=RngStream(10, "batch:1"),
        )
        np.testing.assert_array_equal(delta, end - self.start)
        assert norm_sq(delta) > 0.0
