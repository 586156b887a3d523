"""Gradient correctness for the reverse-mode engine.

Every differentiable op gets a central-finite-difference check of its
backward pass at a modest relative tolerance.  Expected values for the
worked examples were computed by hand or with plain numpy.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avamo import autodiff as ad


# ---------------------------------------------------------------------------
# finite-difference harness


def numeric_grad(fn, arrays, index, h=1e-6):
    """Central differences of scalar fn w.r.t. arrays[index]."""
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[index])
    flat = grad.reshape(-1)
    target = base[index].reshape(-1)
    for i in range(target.size):
        orig = target[i]
        target[i] = orig + h
        hi = fn(*base)
        target[i] = orig - h
        lo = fn(*base)
        target[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def check_op(build, arrays, rel=1e-5, h=1e-6):
    """build(tensors...) -> scalar Tensor; compare analytic vs numeric."""
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    assert loss.data.size == 1
    loss.backward()

    def scalar_fn(*arrs):
        consts = [ad.Tensor(a) for a in arrs]
        return build(*consts).item()

    for i, t in enumerate(tensors):
        got = t.grad
        assert got is not None, f"no gradient for input {i}"
        want = numeric_grad(scalar_fn, arrays, i, h=h)
        denom = np.maximum(np.abs(want), 1.0)
        err = np.max(np.abs(got - want) / denom)
        assert err < rel, f"input {i}: max rel err {err:.3e}"


def weighted(x):
    """Deterministic non-uniform scalar readout so grads aren't constant."""
    w = np.cos(np.arange(x.data.size)).reshape(x.data.shape)
    return ad.tsum(ad.mul(x, ad.constant(w)))


RNG = np.random.default_rng(42)


# ---------------------------------------------------------------------------
# elementwise and broadcasting


class TestElementwise:
    def test_add_same_shape(self):
        check_op(lambda a, b: weighted(ad.add(a, b)),
                 [RNG.standard_normal((3, 4)), RNG.standard_normal((3, 4))])

    def test_add_broadcast_row(self):
        check_op(lambda a, b: weighted(ad.add(a, b)),
                 [RNG.standard_normal((3, 4)), RNG.standard_normal(4)])

    def test_add_broadcast_scalar(self):
        check_op(lambda a, b: weighted(ad.add(a, b)),
                 [RNG.standard_normal((2, 3)), RNG.standard_normal(())])

    def test_sub(self):
        check_op(lambda a, b: weighted(ad.sub(a, b)),
                 [RNG.standard_normal((3, 4)), RNG.standard_normal(4)])

    def test_mul_broadcast(self):
        check_op(lambda a, b: weighted(ad.mul(a, b)),
                 [RNG.standard_normal((3, 4)), RNG.standard_normal((1, 4))])

    def test_operator_sugar_matches_functions(self):
        a = ad.Tensor(RNG.standard_normal((2, 2)), requires_grad=True)
        out = (-a) * 2.0 + 1.0 - 0.5
        expect = -a.data * 2.0 + 1.0 - 0.5
        np.testing.assert_allclose(out.data, expect, atol=0, rtol=0)
        ad.tsum(out).backward()
        np.testing.assert_allclose(a.grad, np.full((2, 2), -2.0))

    def test_reused_node_accumulates(self):
        # y = x*x + x  =>  dy/dx = 2x + 1
        x = ad.Tensor(np.array([1.5, -2.0]), requires_grad=True)
        y = ad.tsum(ad.add(ad.mul(x, x), x))
        y.backward()
        np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0)


# ---------------------------------------------------------------------------
# linear algebra / shape


class TestLinAlg:
    def test_matmul_2d(self):
        check_op(lambda a, b: weighted(ad.matmul(a, b)),
                 [RNG.standard_normal((3, 5)), RNG.standard_normal((5, 2))])

    def test_matmul_3d_batched(self):
        check_op(lambda a, b: weighted(ad.matmul(a, b)),
                 [RNG.standard_normal((2, 3, 4)), RNG.standard_normal((2, 4, 3))])

    def test_matmul_rejects_mixed_rank(self):
        with pytest.raises(ValueError, match="matmul"):
            ad.matmul(np.zeros((2, 3, 4)), np.zeros((4, 2)))

    def test_matmul_rejects_batch_mismatch(self):
        with pytest.raises(ValueError, match="batch"):
            ad.matmul(np.zeros((2, 3, 4)), np.zeros((3, 4, 2)))

    def test_transpose(self):
        check_op(lambda a: weighted(ad.transpose(a, (1, 2, 0))),
                 [RNG.standard_normal((2, 3, 4))])

    def test_reshape(self):
        check_op(lambda a: weighted(ad.reshape(a, (6, 2))),
                 [RNG.standard_normal((3, 4))])

    def test_tsum_all(self):
        check_op(lambda a: ad.tsum(a), [RNG.standard_normal((3, 4))])

    def test_tsum_axis_keepdims(self):
        check_op(lambda a: weighted(ad.tsum(a, axis=1, keepdims=True)),
                 [RNG.standard_normal((3, 4))])

    def test_tsum_axis_nokeep(self):
        check_op(lambda a: weighted(ad.tsum(a, axis=0)),
                 [RNG.standard_normal((3, 4))])

    def test_tmean_matches_manual(self):
        a = RNG.standard_normal((4, 6))
        out = ad.tmean(ad.Tensor(a), axis=1)
        np.testing.assert_allclose(out.data, a.mean(axis=1), rtol=1e-12)
        check_op(lambda t: weighted(ad.tmean(t, axis=0)), [a])


# ---------------------------------------------------------------------------
# fused kernels


class TestFusedOps:
    def test_softmax_rows_sum_to_one(self):
        x = RNG.standard_normal((5, 7)) * 3
        y = ad.softmax(ad.Tensor(x))
        np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(5), rtol=1e-12)

    def test_softmax_shift_invariant(self):
        x = RNG.standard_normal((2, 6))
        a = ad.softmax(ad.Tensor(x)).data
        b = ad.softmax(ad.Tensor(x + 123.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_softmax_grad(self):
        check_op(lambda a: weighted(ad.softmax(a)),
                 [RNG.standard_normal((3, 5))])

    def test_softmax_3d_grad(self):
        check_op(lambda a: weighted(ad.softmax(a)),
                 [RNG.standard_normal((2, 3, 4))])

    def test_layer_norm_stats(self):
        x = RNG.standard_normal((4, 16)) * 5 + 3
        gain = np.ones(16)
        bias = np.zeros(16)
        y = ad.layer_norm(ad.Tensor(x), ad.Tensor(gain), ad.Tensor(bias)).data
        np.testing.assert_allclose(y.mean(axis=-1), np.zeros(4), atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), np.ones(4), rtol=1e-3)

    def test_layer_norm_grad_all_inputs(self):
        check_op(
            lambda x, g, b: weighted(ad.layer_norm(x, g, b)),
            [RNG.standard_normal((3, 8)),
             RNG.standard_normal(8) * 0.5 + 1.0,
             RNG.standard_normal(8) * 0.1],
            rel=1e-4,
        )

    def test_gelu_known_points(self):
        y = ad.gelu(ad.Tensor(np.array([0.0]))).data
        np.testing.assert_allclose(y, [0.0], atol=1e-15)
        big = ad.gelu(ad.Tensor(np.array([20.0]))).data
        np.testing.assert_allclose(big, [20.0], rtol=1e-9)

    def test_gelu_grad(self):
        check_op(lambda a: weighted(ad.gelu(a)),
                 [RNG.standard_normal((4, 5)) * 2], rel=1e-4)

    def test_depthwise_conv_identity_kernel(self):
        # center-tap-only kernel (weights are [taps, channels]) with zero
        # bias reproduces the input
        x = RNG.standard_normal((6, 3))
        w = np.zeros((3, 3))
        w[1, :] = 1.0
        y = ad.depthwise_conv_time(ad.Tensor(x), ad.Tensor(w),
                                   ad.Tensor(np.zeros(3))).data
        np.testing.assert_allclose(y, x, atol=1e-15)

    def test_depthwise_conv_grad(self):
        check_op(
            lambda x, w, b: weighted(ad.depthwise_conv_time(x, w, b)),
            [RNG.standard_normal((7, 3)),
             RNG.standard_normal((5, 3)) * 0.3,
             RNG.standard_normal(3) * 0.1],
            rel=1e-4,
        )

    def test_conv_hidden_zero_params_zero_output(self):
        x = RNG.standard_normal((4, 9))
        y = ad.conv_hidden(ad.Tensor(x), ad.Tensor(np.zeros(3)),
                           ad.Tensor(np.asarray(0.0))).data
        assert np.all(y == 0.0)

    def test_conv_hidden_rejects_vector_bias(self):
        with pytest.raises(ValueError, match="scalar"):
            ad.conv_hidden(np.zeros((4, 9)), np.zeros(3), np.zeros(2))

    def test_conv_hidden_grad(self):
        check_op(
            lambda x, w, b: weighted(ad.conv_hidden(x, w, b)),
            [RNG.standard_normal((3, 8)),
             RNG.standard_normal(5) * 0.3,
             np.asarray(RNG.standard_normal() * 0.1)],
            rel=1e-4,
        )


# ---------------------------------------------------------------------------
# loss primitives


class TestLosses:
    def test_bce_zero_logits_is_ln2(self):
        logits = ad.Tensor(np.zeros(8))
        targets = ad.constant((np.arange(8) % 2).astype(float))
        out = ad.bce_with_logits_mean(logits, targets)
        assert out.item() == pytest.approx(np.log(2.0), rel=1e-15)

    def test_bce_matches_manual(self):
        z = RNG.standard_normal(10) * 2
        y = (RNG.random(10) > 0.5).astype(float)
        out = ad.bce_with_logits_mean(ad.Tensor(z), ad.Tensor(y)).item()
        manual = np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))
        assert out == pytest.approx(manual, rel=1e-12)

    def test_bce_grad(self):
        y = (RNG.random(6) > 0.5).astype(float)
        check_op(lambda z: ad.bce_with_logits_mean(z, ad.constant(y)),
                 [RNG.standard_normal(6)], rel=1e-5)

    def test_bce_extreme_logits_finite(self):
        z = ad.Tensor(np.array([500.0, -500.0]))
        y = ad.constant(np.array([0.0, 1.0]))
        out = ad.bce_with_logits_mean(z, y)
        assert np.isfinite(out.item())
        assert out.item() == pytest.approx(500.0, rel=1e-9)

    def test_cross_entropy_uniform_logits(self):
        out = ad.cross_entropy_logits(ad.Tensor(np.zeros(3)), 1)
        assert out.item() == pytest.approx(np.log(3.0), rel=1e-15)

    def test_cross_entropy_grad(self):
        check_op(lambda z: ad.cross_entropy_logits(z, 2),
                 [RNG.standard_normal(5)], rel=1e-5)


# ---------------------------------------------------------------------------
# graph mechanics


class TestGraph:
    def test_backward_rejects_non_scalar(self):
        t = ad.Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (t + 1.0).backward()

    def test_no_grad_blocks_graph(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            y = ad.tsum(ad.mul(x, x))
        assert y.requires_grad is False
        assert y._backward is None

    def test_no_grad_restores_on_exit(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            pass
        y = ad.tsum(x)
        y.backward()
        np.testing.assert_allclose(x.grad, np.ones(3))

    def test_constant_gets_no_grad(self):
        c = ad.constant(np.ones(4))
        x = ad.Tensor(np.ones(4), requires_grad=True)
        ad.tsum(ad.mul(c, x)).backward()
        assert c.grad is None
        np.testing.assert_allclose(x.grad, np.ones(4))

    def test_deep_chain_no_recursion_limit(self):
        # topological ordering is iterative, so long chains must work
        x = ad.Tensor(np.array([1.0]), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        ad.tsum(y).backward()
        np.testing.assert_allclose(x.grad, [1.0])


# ---------------------------------------------------------------------------
# property-based spot checks


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=5),
    m=st.integers(min_value=1, max_value=5),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_mul_grad_is_other_operand(n, m, seed):
    rng = np.random.default_rng(seed)
    a = ad.Tensor(rng.standard_normal((n, m)), requires_grad=True)
    b = ad.Tensor(rng.standard_normal((n, m)), requires_grad=True)
    ad.tsum(ad.mul(a, b)).backward()
    np.testing.assert_allclose(a.grad, b.data, rtol=1e-12)
    np.testing.assert_allclose(b.grad, a.data, rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    rows=st.integers(min_value=1, max_value=4),
    cols=st.integers(min_value=2, max_value=8),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_softmax_simplex(rows, cols, seed):
    rng = np.random.default_rng(seed)
    y = ad.softmax(ad.Tensor(rng.standard_normal((rows, cols)) * 4)).data
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=-1), np.ones(rows), rtol=1e-10)
