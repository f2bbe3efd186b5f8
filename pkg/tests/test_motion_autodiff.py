"""Finite-difference checks for every autodiff primitive."""

import numpy as np
import pytest

from roomagent.motion.autodiff import (
    Tensor, concat, fused_attention, layer_norm, no_grad, parameter,
)

RNG = np.random.default_rng(0)
EPS = 1e-6
TOL = 1e-6


def fd_check(build, params, samples=6, rng=None):
    """Compare analytic gradients of a scalar loss against central FD."""
    rng = rng or np.random.default_rng(1)
    loss = build()
    loss.backward()
    grads = {id(p): p.grad.copy() for p in params}
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        idx_pool = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        for idx in idx_pool:
            orig = flat[idx]
            flat[idx] = orig + EPS
            lp = float(build().data)
            flat[idx] = orig - EPS
            lm = float(build().data)
            flat[idx] = orig
            fd = (lp - lm) / (2 * EPS)
            ag = grads[id(p)].reshape(-1)[idx]
            worst = max(worst, abs(fd - ag) / max(abs(fd), abs(ag), 1e-8))
        p.zero_grad()
    return worst


class TestElementwise:
    def test_add_mul_broadcast(self):
        a = parameter(RNG.standard_normal((3, 4)))
        b = parameter(RNG.standard_normal(4))
        assert fd_check(lambda: ((a + b) * a).sum(), [a, b]) < TOL

    def test_pow_div(self):
        a = parameter(RNG.standard_normal((2, 3)) + 3.0)
        b = parameter(RNG.standard_normal((2, 3)) + 3.0)
        assert fd_check(lambda: (a ** 1.7 / b).sum(), [a, b]) < TOL

    def test_exp_log(self):
        a = parameter(RNG.standard_normal((5,)) * 0.5 + 2.0)
        assert fd_check(lambda: (a.exp().log() * a).mean(), [a]) < TOL

    def test_gelu(self):
        a = parameter(RNG.standard_normal((4, 4)))
        assert fd_check(lambda: a.gelu().sum(), [a]) < TOL

    def test_softmax(self):
        a = parameter(RNG.standard_normal((3, 5)))
        w = RNG.standard_normal((3, 5))
        assert fd_check(lambda: (a.softmax() * Tensor(w)).sum(), [a]) < TOL


class TestShapes:
    def test_reshape_swapaxes(self):
        a = parameter(RNG.standard_normal((2, 3, 4)))
        w = RNG.standard_normal((2, 4, 3))
        assert fd_check(
            lambda: (a.swapaxes(1, 2).reshape(2, 4, 3) * Tensor(w)).sum(), [a]
        ) < TOL

    def test_getitem(self):
        a = parameter(RNG.standard_normal((4, 6)))
        assert fd_check(lambda: (a[1:3, ::2] ** 2.0).sum(), [a]) < TOL

    def test_concat(self):
        a = parameter(RNG.standard_normal((2, 3)))
        b = parameter(RNG.standard_normal((2, 2)))
        assert fd_check(lambda: (concat([a, b], axis=1) ** 2.0).sum(), [a, b]) < TOL

    def test_sum_mean_axes(self):
        a = parameter(RNG.standard_normal((3, 4, 2)))
        assert fd_check(lambda: a.sum(axis=1).mean(), [a]) < TOL
        assert fd_check(lambda: a.mean(axis=-1, keepdims=True).sum(), [a]) < TOL


class TestMatmul:
    def test_plain(self):
        a = parameter(RNG.standard_normal((3, 4)))
        b = parameter(RNG.standard_normal((4, 5)))
        assert fd_check(lambda: (a @ b).sum(), [a, b]) < TOL

    def test_batched_broadcast(self):
        a = parameter(RNG.standard_normal((2, 2, 3, 4)))
        b = parameter(RNG.standard_normal((4, 5)))
        assert fd_check(lambda: ((a @ b) ** 2.0).mean(), [a, b]) < TOL

    def test_vector_operand_rejected(self):
        with pytest.raises(ValueError):
            Tensor(np.ones(3)) @ Tensor(np.ones((3, 2)))


class TestFusedOps:
    def test_layer_norm(self):
        x = parameter(RNG.standard_normal((2, 5, 8)))
        g = parameter(np.ones(8) + 0.1 * RNG.standard_normal(8))
        b = parameter(0.1 * RNG.standard_normal(8))
        w = RNG.standard_normal((2, 5, 8))
        assert fd_check(
            lambda: (layer_norm(x, g, b) * Tensor(w)).sum(), [x, g, b]
        ) < 1e-5

    def test_fused_attention_unmasked(self):
        q = parameter(RNG.standard_normal((1, 2, 4, 3)))
        k = parameter(RNG.standard_normal((1, 2, 5, 3)))
        v = parameter(RNG.standard_normal((1, 2, 5, 3)))
        w = RNG.standard_normal((1, 2, 4, 3))
        assert fd_check(
            lambda: (fused_attention(q, k, v, None, 0.6) * Tensor(w)).sum(),
            [q, k, v],
        ) < 1e-5

    def test_fused_attention_masked_zero_weight(self):
        from roomagent.motion.nn import MASK_NEG

        q = Tensor(RNG.standard_normal((1, 1, 2, 3)))
        k = Tensor(RNG.standard_normal((1, 1, 4, 3)))
        v = Tensor(RNG.standard_normal((1, 1, 4, 3)))
        mask = np.array([[0.0, MASK_NEG, MASK_NEG, MASK_NEG],
                         [0.0, 0.0, MASK_NEG, MASK_NEG]])
        out = fused_attention(q, k, v, mask, 1.0)
        # row 0 attends only to key 0: output equals v[0] exactly
        assert np.array_equal(out.data[0, 0, 0], v.data[0, 0, 0])

    def test_masked_gradients(self):
        from roomagent.motion.nn import MASK_NEG

        q = parameter(RNG.standard_normal((1, 1, 3, 2)))
        k = parameter(RNG.standard_normal((1, 1, 3, 2)))
        v = parameter(RNG.standard_normal((1, 1, 3, 2)))
        mask = np.triu(np.full((3, 3), MASK_NEG), k=1)
        w = RNG.standard_normal((1, 1, 3, 2))
        assert fd_check(
            lambda: (fused_attention(q, k, v, mask, 0.7) * Tensor(w)).sum(),
            [q, k, v],
        ) < 1e-5


class TestGraphMechanics:
    def test_no_grad_blocks_graph(self):
        a = parameter(np.ones((2, 2)))
        with no_grad():
            out = (a * 3.0).sum()
        assert out._backward is None

    def test_grad_accumulates_across_uses(self):
        a = parameter(np.array([[2.0]]))
        loss = (a * a + a).sum()
        loss.backward()
        assert a.grad[0, 0] == pytest.approx(2 * 2.0 + 1.0)

    def test_backward_needs_scalar(self):
        a = parameter(np.ones((2, 2)))
        with pytest.raises(ValueError):
            (a * 2.0).backward()

    def test_dropout_scales_kept_values(self):
        rng = np.random.default_rng(0)
        a = Tensor(np.ones((1000,)))
        out = a.dropout(0.25, rng)
        kept = out.data[out.data > 0]
        assert np.allclose(kept, 1.0 / 0.75)
        assert abs(out.data.mean() - 1.0) < 0.1
