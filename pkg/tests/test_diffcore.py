import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from altssl.diffcore import (
    NesterovSGD,
    OptimizerState,
    ShapeError,
    Tensor,
    backward,
    conv2d,
    cross_entropy,
    flatten,
    forward_op,
    kl_divergence,
    linear,
    log_softmax,
    max_pool2d,
    avg_pool2d,
    mean_all,
    mul,
    nesterov_step,
    relu,
    softmax,
    step_decay_lr,
    sum_all,
)
from altssl.models import build_mlp, build_small_cnn

from conftest import central_difference, max_relative_error


class TestForwardOps:
    def test_relu(self):
        assert forward_op("relu", [Tensor([-1.0, 0.0, 2.0])]).data.tolist() == [0, 0, 2]

    def test_softmax_symmetric(self):
        np.testing.assert_array_equal(forward_op("softmax", [Tensor([[0.0, 0.0]])]).data, [[0.5, 0.5]])

    def test_matmul_shape(self, rng):
        out = forward_op("matmul", [Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(3, 4)))])
        assert out.shape == (2, 4)

    def test_matmul_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 4\)"):
            forward_op("matmul", [Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 4)))])

    def test_unknown_op(self):
        with pytest.raises(ValueError, match="unknown op"):
            forward_op("tanh", [Tensor([1.0])])

    def test_conv_matches_direct_loop(self, rng):
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((2, 4, 3, 3))
        for n in range(2):
            for o in range(4):
                for i in range(3):
                    for j in range(3):
                        ref[n, o, i, j] = (xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]).sum() + b[o]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_pooling_values(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        np.testing.assert_array_equal(max_pool2d(x).data[0, 0], [[5, 7], [13, 15]])
        np.testing.assert_array_equal(avg_pool2d(x).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_softmax_rows_sum_to_one_and_log_consistent(self, rng):
        z = rng.uniform(-30, 30, size=(50, 7))
        p = softmax(Tensor(z)).data
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(log_softmax(Tensor(z)).data, np.log(p), atol=1e-9)

    def test_deterministic(self, rng):
        x = rng.normal(size=(3, 2, 8, 8))
        w = rng.normal(size=(5, 2, 3, 3))
        a = conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(5)), padding=1).data
        b = conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(5)), padding=1).data
        assert a.tobytes() == b.tobytes()


class TestBackward:
    def test_sum_gives_ones(self, leaf, rng):
        x = leaf(rng.normal(size=(3, 4)))
        sum_all(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_relu_flat_region(self, leaf):
        x = leaf([-3.0])
        sum_all(relu(x)).backward()
        assert x.grad.tolist() == [0.0]

    def test_non_scalar_rejected(self, leaf):
        with pytest.raises(ShapeError):
            relu(leaf([1.0, 2.0])).backward()

    def test_unused_tensor_gets_zero(self, leaf):
        x, unused = leaf([1.0, 2.0]), leaf([[5.0]])
        gx, gu = backward(sum_all(x), wrt=[x, unused])
        assert gx.tolist() == [1.0, 1.0]
        assert gu.tolist() == [[0.0]]

    def test_shared_subexpression(self, leaf):
        x = leaf([3.0])
        y = mul(x, x)
        sum_all(y + y).backward()
        assert x.grad.tolist() == [12.0]

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_conv_pool_composite(self, rng, leaf, stride, padding):
        x = leaf(rng.normal(size=(2, 2, 6, 6)))
        w = leaf(rng.normal(size=(3, 2, 3, 3)))
        b = leaf(rng.normal(size=3))
        c = leaf(rng.normal(size=(2, 2)))

        def f():
            h = relu(conv2d(x, w, b, stride=stride, padding=padding))
            if h.shape[2] % 2 == 0:
                h = max_pool2d(h)
            else:
                h = avg_pool2d(h, 1)
            z = flatten(h)
            return sum_all(mul(log_softmax(linear(z, Tensor(rng_w[:, : z.shape[1]]), Tensor(np.zeros(2)))), c))

        rng_w = np.random.default_rng(5).normal(size=(2, 200))
        f().backward()
        analytic = [x.grad, w.grad, b.grad]
        numeric = central_difference(lambda: f().item(), [x.data, w.data, b.data])
        for a, n in zip(analytic, numeric):
            assert max_relative_error(a, n) < 1e-4


def _model_gradcheck(model, x, y):
    params = model.parameters()

    def loss():
        return cross_entropy(model.forward(x), y).tensor

    grads = backward(loss(), wrt=params)
    numeric = central_difference(lambda: loss().item(), [p.data for p in params])
    return max(max_relative_error(a, n) for a, n in zip(grads, numeric))


def test_gradcheck_mlp(rng):
    model = build_mlp(3, [5, 4], 3, seed=7)
    x = rng.normal(size=(6, 3))
    y = rng.integers(0, 3, size=6)
    assert _model_gradcheck(model, x, y) < 1e-4


def test_gradcheck_small_cnn(rng):
    model = build_small_cnn(1, 3, image_size=8, channels=(2, 3), seed=3)
    x = rng.normal(size=(2, 1, 8, 8))
    y = np.array([0, 2])
    assert _model_gradcheck(model, x, y) < 1e-4


class TestCrossEntropy:
    def test_two_class_uniform(self):
        assert abs(cross_entropy(Tensor([[0.0, 0.0]]), np.array([0])).scalar - math.log(2)) < 1e-9

    def test_four_class_uniform(self):
        assert abs(cross_entropy(Tensor([[0.0] * 4]), np.array([2])).scalar - math.log(4)) < 1e-9

    def test_soft_target_entropy(self):
        assert abs(cross_entropy(Tensor([[0.0, 0.0]]), np.array([[0.5, 0.5]])).scalar - math.log(2)) < 1e-9

    def test_large_margin_near_zero(self):
        assert cross_entropy(Tensor([[40.0, 0.0, 0.0]]), np.array([0])).scalar < 1e-6

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            cross_entropy(Tensor([[0.0, 0.0]]), np.array([2]))

    def test_bad_soft_row(self):
        with pytest.raises(ValueError, match="sums to"):
            cross_entropy(Tensor([[0.0, 0.0]]), np.array([[0.5, 0.6]]))

    def test_stable_for_huge_logits(self):
        v = cross_entropy(Tensor([[1000.0, -1000.0]]), np.array([1])).scalar
        assert abs(v - 2000.0) < 1e-9

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 5), elements=st.floats(-20, 20)), st.lists(st.integers(0, 4), min_size=4, max_size=4))
    def test_nonnegative(self, z, y):
        assert cross_entropy(Tensor(z), np.array(y)).scalar >= 0


def _kl_oracle(p, z):
    """High-precision KL(p || softmax(z)) for one row."""
    mpmath.mp.dps = 50
    zs = [mpmath.mpf(float(v)) for v in z]
    lse = mpmath.log(mpmath.fsum(mpmath.exp(v) for v in zs))
    return mpmath.fsum(
        mpmath.mpf(float(pk)) * (mpmath.log(mpmath.mpf(float(pk))) - (zk - lse))
        for pk, zk in zip(p, zs)
        if pk > 0
    )


class TestKL:
    def test_zero_at_match(self, rng):
        z = rng.normal(size=(5, 4))
        p = softmax(Tensor(z)).data
        assert abs(kl_divergence(p, Tensor(z)).scalar) < 1e-12

    def test_point_mass_vs_uniform(self):
        assert abs(kl_divergence(np.array([[1.0, 0.0]]), Tensor([[0.0, 0.0]])).scalar - math.log(2)) < 1e-9

    def test_bad_row(self):
        with pytest.raises(ValueError):
            kl_divergence(np.array([[0.7, 0.7]]), Tensor([[0.0, 0.0]]))

    def test_random_pairs_nonnegative_and_match_oracle(self, rng):
        for _ in range(1000):
            k = int(rng.integers(2, 6))
            p = rng.dirichlet(np.ones(k))
            if rng.random() < 0.2:
                p[rng.integers(k)] = 0.0
                p = p / p.sum()
            z = rng.normal(scale=3.0, size=k)
            v = kl_divergence(p[None], Tensor(z[None])).scalar
            assert v >= -1e-9
            assert abs(v - float(_kl_oracle(p, z))) < 1e-9

    def test_reference_gets_no_gradient(self, leaf):
        z = leaf([[0.3, -0.2]])
        kl_divergence(np.array([[0.4, 0.6]]), z).backward()
        num = central_difference(
            lambda: kl_divergence(np.array([[0.4, 0.6]]), Tensor(z.data)).scalar, [z.data]
        )[0]
        assert max_relative_error(z.grad, num) < 1e-6


class TestNesterov:
    def test_hand_example(self):
        (w,), st_ = nesterov_step([np.array(1.0)], [np.array(1.0)], OptimizerState(0.1, 0.9))
        assert abs(st_.velocity[0] - (-0.1)) < 1e-15
        assert abs(w - 0.81) < 1e-12

    def test_zero_momentum_is_sgd_bit_exact(self, rng):
        w = rng.normal(size=10)
        g = rng.normal(size=10)
        (w2,), _ = nesterov_step([w], [g], OptimizerState(0.05, 0.0))
        assert w2.tobytes() == (w - 0.05 * g).tobytes()
        t = Tensor(w, requires_grad=True)
        t.grad = g
        NesterovSGD([t], lr=0.05, momentum=0.0).step()
        assert t.data.tobytes() == (w - 0.05 * g).tobytes()

    def test_quadratic_descent(self):
        w = Tensor([1.0], requires_grad=True)
        opt = NesterovSGD([w], lr=0.05, momentum=0.9)
        for _ in range(100):
            opt.zero_grad()
            sum_all(mul(w, w)).backward()
            opt.step()
        assert abs(w.data[0]) < 1e-3

    def test_inplace_matches_functional(self, rng):
        w0 = rng.normal(size=(3, 2))
        t = Tensor(w0, requires_grad=True)
        opt = NesterovSGD([t], lr=0.1, momentum=0.9)
        state = OptimizerState(0.1, 0.9)
        w = w0.copy()
        for _ in range(5):
            g = rng.normal(size=(3, 2))
            t.grad = g
            opt.step()
            (w,), state = nesterov_step([w], [g], state)
        assert t.data.tobytes() == w.tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nesterov_step([np.zeros(2)], [np.zeros(3)], OptimizerState(0.1, 0.9))


class TestStepDecay:
    def test_values(self):
        ms = [60, 120, 160]
        assert step_decay_lr(0, 0.1, ms) == 0.1
        assert abs(step_decay_lr(60, 0.1, ms) - 0.01) < 1e-15
        assert abs(step_decay_lr(200, 0.1, ms) - 1e-4) < 1e-15
        assert abs(step_decay_lr(59, 0.1, ms) - 0.1) < 1e-15

    def test_milestones_must_increase(self):
        with pytest.raises(ValueError):
            step_decay_lr(0, 0.1, [10, 10])
