import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distill_lab import Tape, Tensor, backward
from distill_lab import autodiff as ad
from distill_lab.errors import NumericError

from oracles import finite_difference_gradient, max_relative_error


def weighted_sum_grad(apply_op, x0, weight):
    """d/dx of sum(weight * op(x)) via the tape."""
    x = Tensor(np.array(x0, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_all(ad.mul(apply_op(x), weight))
        backward(tape, loss)
    return x.grad


class TestSoftmaxTemperature:
    def test_uniform_logits_any_tau(self):
        logits = Tensor(np.ones((3, 4)))
        for tau in (0.5, 1.0, 4.0):
            out = ad.softmax_temperature(logits, tau)
            assert np.allclose(out.data, 0.25, atol=1e-12)

    def test_two_class_example(self):
        out = ad.softmax_temperature(Tensor([[2.0, 0.0]]), 1.0)
        assert abs(out.data[0, 0] - 0.8808) < 1e-4
        assert abs(out.data[0, 1] - 0.1192) < 1e-4

    def test_higher_tau_flattens(self):
        sharp = ad.softmax_temperature(Tensor([[2.0, 0.0]]), 1.0)
        flat = ad.softmax_temperature(Tensor([[2.0, 0.0]]), 4.0)
        assert flat.data[0, 0] < sharp.data[0, 0]

    def test_rows_sum_to_one_with_large_logits(self, np_rng):
        logits = Tensor(np_rng.uniform(-1e3, 1e3, (20, 10)))
        out = ad.softmax_temperature(logits, 4.0)
        assert np.max(np.abs(out.data.sum(axis=1) - 1.0)) < 1e-9

    @given(st.integers(0, 2**32 - 1), st.floats(0.25, 8.0))
    @settings(max_examples=30, deadline=None)
    def test_argmax_invariant_under_tau(self, seed, tau):
        logits = np.random.default_rng(seed).normal(size=(4, 6))
        p = ad.softmax_temperature(Tensor(logits), tau)
        assert (p.data.argmax(axis=1) == logits.argmax(axis=1)).all()

    def test_nonpositive_tau_rejected(self):
        with pytest.raises(ValueError):
            ad.softmax_temperature(Tensor([[1.0, 2.0]]), 0.0)

    def test_nan_logits_rejected(self):
        with pytest.raises(NumericError):
            ad.softmax_temperature(Tensor([[np.nan, 1.0]]), 1.0)

    def test_gradient_matches_finite_differences(self, np_rng):
        x0 = np_rng.normal(size=(3, 5))
        w = np_rng.normal(size=(3, 5))

        def f(x):
            z = x / 2.5
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            return float((w * e / e.sum(axis=1, keepdims=True)).sum())

        analytic = weighted_sum_grad(lambda t: ad.softmax_temperature(t, 2.5), x0, w)
        numeric = finite_difference_gradient(f, x0.copy())
        assert max_relative_error(analytic, numeric) < 1e-6


class TestCrossEntropy:
    def test_uniform_prediction_is_log_c(self):
        logits = Tensor(np.zeros((4, 10)))
        loss = ad.cross_entropy(logits, np.array([0, 3, 7, 9]))
        assert abs(loss.item() - math.log(10)) < 1e-12

    def test_confident_correct_prediction_near_zero(self):
        logits = np.zeros((2, 5))
        logits[0, 1] = 30.0
        logits[1, 4] = 30.0
        loss = ad.cross_entropy(Tensor(logits), np.array([1, 4]))
        assert loss.item() < 1e-9

    def test_out_of_range_label_rejected(self):
        with pytest.raises(ValueError, match="label"):
            ad.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_gradient_matches_finite_differences(self, np_rng):
        x0 = np_rng.normal(size=(4, 5))
        labels = np.array([0, 2, 4, 1])

        def f(x):
            z = x - x.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            return float(-logp[np.arange(4), labels].mean())

        x = Tensor(x0.copy(), requires_grad=True)
        with Tape() as tape:
            backward(tape, ad.cross_entropy(x, labels))
        numeric = finite_difference_gradient(f, x0.copy())
        assert max_relative_error(x.grad, numeric) < 1e-6


class TestKlDivergence:
    def test_identical_distributions_zero(self, np_rng):
        p = np_rng.dirichlet(np.ones(6), size=5)
        kl = ad.kl_divergence(p, Tensor(np.log(p)))
        assert abs(kl.item()) < 1e-12

    def test_hard_target_against_uniform(self):
        p = np.array([[1.0, 0.0]])
        kl = ad.kl_divergence(p, Tensor(np.log(np.array([[0.5, 0.5]]))))
        assert abs(kl.item() - math.log(2)) < 1e-12

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_nonnegative_on_random_simplex_pairs(self, seed):
        gen = np.random.default_rng(seed)
        p = gen.dirichlet(np.ones(5), size=3)
        q = gen.dirichlet(np.ones(5), size=3)
        assert ad.kl_divergence(p, Tensor(np.log(q))).item() >= 0.0

    def test_malformed_target_rejected(self):
        bad = np.array([[0.6, 0.6]])
        with pytest.raises(ValueError, match="sum to 1"):
            ad.kl_divergence(bad, Tensor(np.log(np.array([[0.5, 0.5]]))))

    def test_malformed_log_probs_rejected(self):
        with pytest.raises(ValueError, match="log_probs"):
            ad.kl_divergence(np.array([[0.5, 0.5]]), Tensor(np.array([[0.0, 0.0]])))

    def test_gradient_through_log_softmax_matches_finite_differences(self, np_rng):
        p = np_rng.dirichlet(np.ones(5), size=3)
        x0 = np_rng.normal(size=(3, 5))
        tau = 4.0

        def f(x):
            z = x / tau
            z = z - z.max(axis=1, keepdims=True)
            logq = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
            return float((plogp - p * logq).sum(axis=1).mean())

        x = Tensor(x0.copy(), requires_grad=True)
        with Tape() as tape:
            backward(tape, ad.kl_divergence(p, ad.log_softmax(x, tau)))
        numeric = finite_difference_gradient(f, x0.copy())
        assert max_relative_error(x.grad, numeric) < 1e-6


class TestLayerPrimitives:
    def test_linear_identity(self):
        x = Tensor(np.arange(12, dtype=np.float64).reshape(3, 4))
        out = ad.linear_forward(x, Tensor(np.eye(4)), Tensor(np.zeros(4)))
        assert np.array_equal(out.data, x.data)

    def test_conv_1x1_ones_kernel_identity(self, np_rng):
        x = Tensor(np_rng.uniform(0, 1, (2, 1, 5, 5)))
        out = ad.conv2d_forward(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)), padding=0)
        assert np.allclose(out.data, x.data, atol=1e-15)

    def test_conv_channel_mismatch_rejected(self, np_rng):
        x = Tensor(np_rng.normal(size=(2, 3, 5, 5)))
        w = Tensor(np_rng.normal(size=(4, 2, 3, 3)))
        with pytest.raises(ValueError, match="channel mismatch"):
            ad.conv2d_forward(x, w, Tensor(np.zeros(4)))

    def test_avg_pool_requires_divisible_dims(self, np_rng):
        with pytest.raises(ValueError, match="divisible"):
            ad.avg_pool(Tensor(np_rng.normal(size=(1, 1, 5, 4))), 2)

    @pytest.mark.parametrize("primitive", ["linear", "conv", "relu", "pool", "flatten"])
    def test_gradients_match_finite_differences(self, primitive, np_rng):
        if primitive == "linear":
            x0 = np_rng.normal(size=(3, 4))
            wt, b = np_rng.normal(size=(4, 2)), np_rng.normal(size=2)
            apply_ad = lambda t: ad.linear_forward(t, Tensor(wt), Tensor(b))
        elif primitive == "conv":
            x0 = np_rng.normal(size=(2, 2, 4, 4))
            wt, b = np_rng.normal(size=(3, 2, 3, 3)), np_rng.normal(size=3)
            apply_ad = lambda t: ad.conv2d_forward(t, Tensor(wt), Tensor(b), padding=1)
        elif primitive == "relu":
            x0 = np_rng.normal(size=(3, 6))
            x0[np.abs(x0) < 0.1] += 0.2  # keep clear of the kink
            apply_ad = ad.relu
        elif primitive == "pool":
            x0 = np_rng.normal(size=(2, 3, 4, 4))
            apply_ad = ad.avg_pool
        else:
            x0 = np_rng.normal(size=(2, 3, 2, 2))
            apply_ad = ad.flatten

        probe = apply_ad(Tensor(x0))
        w_out = np_rng.normal(size=probe.shape)
        analytic = weighted_sum_grad(apply_ad, x0, w_out)

        def f(xv):
            return float((apply_ad(Tensor(xv)).data * w_out).sum())

        numeric = finite_difference_gradient(f, x0.copy())
        assert max_relative_error(analytic, numeric) < 1e-5

    def test_conv_weight_and_bias_gradients(self, np_rng):
        x = np_rng.normal(size=(2, 2, 4, 4))
        w0 = np_rng.normal(size=(3, 2, 3, 3))
        b0 = np_rng.normal(size=3)
        w = Tensor(w0.copy(), requires_grad=True)
        b = Tensor(b0.copy(), requires_grad=True)
        weight = np_rng.normal(size=(2, 3, 4, 4))
        with Tape() as tape:
            out = ad.conv2d_forward(Tensor(x), w, b, padding=1)
            backward(tape, ad.sum_all(ad.mul(out, weight)))

        def f_w(wv):
            return float((ad.conv2d_forward(Tensor(x), Tensor(wv), Tensor(b0), padding=1).data * weight).sum())

        def f_b(bv):
            return float((ad.conv2d_forward(Tensor(x), Tensor(w0), Tensor(bv), padding=1).data * weight).sum())

        assert max_relative_error(w.grad, finite_difference_gradient(f_w, w0.copy())) < 1e-5
        assert max_relative_error(b.grad, finite_difference_gradient(f_b, b0.copy())) < 1e-5


class TestBackward:
    def test_sum_of_params_gives_unit_gradients(self, np_rng):
        p = Tensor(np_rng.normal(size=(4, 3)), requires_grad=True)
        with Tape() as tape:
            backward(tape, ad.sum_all(p))
        assert np.array_equal(p.grad, np.ones((4, 3)))

    def test_half_squared_norm_gradient_is_params(self, np_rng):
        v0 = np_rng.normal(size=(1, 5))
        p = Tensor(v0.copy(), requires_grad=True)
        with Tape() as tape:
            backward(tape, ad.scale(ad.sum_all(ad.mul(p, p)), 0.5))
        assert np.allclose(p.grad, v0, atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        t = Tensor(np.zeros((2, 2)), requires_grad=True)
        with Tape() as tape:
            out = ad.scale(t, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            backward(tape, out)

    def test_disconnected_branches_get_no_gradient(self, np_rng):
        a = Tensor(np_rng.normal(size=(2, 4)), requires_grad=True)
        b = Tensor(np_rng.normal(size=(2, 2)), requires_grad=True)
        with Tape() as tape:
            used = ad.cross_entropy(a, np.array([0, 1]))
            _unused = ad.scale(b, 3.0)
            backward(tape, used)
        assert a.grad is not None
        assert b.grad is None

    def test_gradient_accumulates_across_shared_input(self, np_rng):
        x0 = np_rng.normal(size=(2, 3))
        x = Tensor(x0.copy(), requires_grad=True)
        with Tape() as tape:
            backward(tape, ad.sum_all(ad.add(x, x)))
        assert np.allclose(x.grad, 2.0 * np.ones_like(x0), atol=1e-15)


class TestSgdMomentumStep:
    def test_zero_momentum_is_plain_sgd(self):
        p = [np.array([1.0, 2.0])]
        v = [np.zeros(2)]
        ad.sgd_momentum_step(p, [np.array([0.5, -0.5])], v, lr=0.1, momentum=0.0)
        assert np.allclose(p[0], [0.95, 2.05], atol=1e-15)

    def test_two_step_hand_recurrence(self):
        # v1 = 1, p1 = -0.1; v2 = 1.9, p2 = -0.1 - 0.19 = -0.29
        p = [np.array([0.0])]
        v = [np.zeros(1)]
        ad.sgd_momentum_step(p, [np.array([1.0])], v, lr=0.1, momentum=0.9)
        ad.sgd_momentum_step(p, [np.array([1.0])], v, lr=0.1, momentum=0.9)
        assert abs(p[0][0] - (-0.29)) < 1e-12

    def test_zero_gradient_decays_velocity_only(self):
        p = [np.array([1.0])]
        v = [np.array([2.0])]
        ad.sgd_momentum_step(p, [np.array([0.0])], v, lr=0.5, momentum=0.9)
        assert abs(v[0][0] - 1.8) < 1e-15
        assert abs(p[0][0] - (1.0 - 0.5 * 1.8)) < 1e-15

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            ad.sgd_momentum_step([np.zeros(2)], [np.zeros(3)], [np.zeros(2)], 0.1, 0.9)

    @pytest.mark.parametrize("lr,momentum", [(0.0, 0.5), (-1.0, 0.5), (0.1, 1.0), (0.1, -0.1)])
    def test_bad_hyperparameters_rejected(self, lr, momentum):
        with pytest.raises(ValueError):
            ad.sgd_momentum_step([np.zeros(1)], [np.zeros(1)], [np.zeros(1)], lr, momentum)
