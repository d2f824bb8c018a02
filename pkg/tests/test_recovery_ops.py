"""Differentiable primitives: forward oracles and adjoint/gradient checks."""

import numpy as np
import pytest

from uwhalo.radial import LightCenter, psi_array
from uwhalo.recovery import ops
from uwhalo.recovery.gradcheck import all_passed, run_all


class TestConvForward:
    def test_identity_1x1(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 1, 6, 6))
        w = np.ones((1, 1, 1, 1))
        b = np.zeros(1)
        assert np.allclose(ops.conv2d(x, w, b), x)

    def test_ones_3x3_interior_sum(self):
        c = 0.7
        x = np.full((1, 1, 8, 8), c)
        w = np.ones((1, 1, 3, 3))
        out = ops.conv2d(x, w, np.zeros(1))
        assert out[0, 0, 4, 4] == pytest.approx(9 * c, abs=1e-12)
        assert out[0, 0, 0, 0] == pytest.approx(4 * c, abs=1e-12)  # zero padding

    def test_six_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 4, 6, 6))
        w = rng.normal(size=(2, 4, 3, 3))
        b = rng.normal(size=2)
        out = ops.conv2d(x, w, b)
        n, co, h, wd = out.shape
        expected = np.zeros_like(out)
        for o in range(co):
            for y in range(h):
                for xx in range(wd):
                    acc = b[o]
                    for ci in range(4):
                        for ky in range(3):
                            for kx in range(3):
                                yy, xxx = y + ky - 1, xx + kx - 1
                                if 0 <= yy < h and 0 <= xxx < wd:
                                    acc += x[0, ci, yy, xxx] * w[o, ci, ky, kx]
                    expected[0, o, y, xx] = acc
        assert np.abs(out - expected).max() <= 1e-10


class TestAttention:
    def test_zero_weights_halve(self):
        from uwhalo.recovery.network import _attention_forward

        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 4, 5, 5))
        tensors = {
            "a.squeeze.w": np.zeros((2, 4, 1, 1)),
            "a.squeeze.b": np.zeros(2),
            "a.excite.w": np.zeros((4, 2, 1, 1)),
            "a.excite.b": np.zeros(4),
        }
        out, _ = _attention_forward(tensors, "a", x)
        assert np.allclose(out, x / 2)

    def test_output_bounded_by_input(self):
        from uwhalo.recovery.network import _attention_forward

        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 4, 6, 6))
        tensors = {
            "a.squeeze.w": rng.normal(size=(2, 4, 1, 1)),
            "a.squeeze.b": rng.normal(size=2),
            "a.excite.w": rng.normal(size=(4, 2, 1, 1)),
            "a.excite.b": rng.normal(size=4),
        }
        out, _ = _attention_forward(tensors, "a", x)
        assert np.all(np.abs(out) <= np.abs(x) + 1e-15)

    def test_loop_oracle(self):
        from uwhalo.recovery.network import _attention_forward

        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 4, 3, 3))
        tensors = {
            "a.squeeze.w": rng.normal(size=(2, 4, 1, 1)),
            "a.squeeze.b": rng.normal(size=2),
            "a.excite.w": rng.normal(size=(4, 2, 1, 1)),
            "a.excite.b": rng.normal(size=4),
        }
        out, _ = _attention_forward(tensors, "a", x)
        pooled = x[0].mean(axis=(1, 2))
        z1 = tensors["a.squeeze.w"][:, :, 0, 0] @ pooled + tensors["a.squeeze.b"]
        a1 = np.maximum(z1, 0)
        z2 = tensors["a.excite.w"][:, :, 0, 0] @ a1 + tensors["a.excite.b"]
        s = 1 / (1 + np.exp(-z2))
        expected = x[0] * s[:, None, None]
        assert np.abs(out[0] - expected).max() <= 1e-10


class TestLinearOpAgreement:
    def test_grad_hw_matches_numpy_gradient(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 3, 9, 11))
        gy, gx = ops.grad_hw(x)
        for n in range(2):
            for c in range(3):
                ny, nx = np.gradient(x[n, c])
                assert np.abs(gy[n, c] - ny).max() <= 1e-14
                assert np.abs(gx[n, c] - nx).max() <= 1e-14

    def test_psi_apply_matches_radial(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 10, 12))
        center = LightCenter(5.3, 4.2)
        got = ops.psi_apply(x, center)
        for c in range(2):
            assert np.abs(got[c] - psi_array(x[c], center)).max() <= 1e-14

    def test_resize_matches_imgcore(self):
        from uwhalo.imgcore import ImageF, resize_bilinear

        rng = np.random.default_rng(7)
        x = rng.uniform(0, 1, size=(1, 3, 12, 10))
        out = ops.resize(x, 7, 15)
        ref = resize_bilinear(ImageF(x[0]), 7, 15)
        assert np.abs(out[0] - ref.data).max() <= 1e-14


class TestAdjoints:
    """<u, A v> == <A* u, v> for the linear operators."""

    def test_resize_adjoint(self):
        rng = np.random.default_rng(8)
        v = rng.normal(size=(1, 2, 9, 7))
        u = rng.normal(size=(1, 2, 13, 5))
        lhs = np.sum(u * ops.resize(v, 13, 5))
        rhs = np.sum(ops.resize_backward(u, 9, 7) * v)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_grad_adjoint(self):
        rng = np.random.default_rng(9)
        v = rng.normal(size=(1, 1, 8, 9))
        uy = rng.normal(size=v.shape)
        ux = rng.normal(size=v.shape)
        gy, gx = ops.grad_hw(v)
        lhs = np.sum(uy * gy) + np.sum(ux * gx)
        rhs = np.sum(ops.grad_hw_adjoint(uy, ux) * v)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_psi_adjoint(self):
        rng = np.random.default_rng(10)
        center = LightCenter(3.7, 4.4)
        v = rng.normal(size=(2, 9, 8))
        u = rng.normal(size=v.shape)
        lhs = np.sum(u * ops.psi_apply(v, center))
        rhs = np.sum(ops.psi_adjoint(u, center) * v)
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_ssim_forward_matches_metric():
    from uwhalo.imgcore import ImageF
    from uwhalo.metrics import ssim

    rng = np.random.default_rng(11)
    x = rng.uniform(0, 1, size=(16, 16))
    y = rng.uniform(0, 1, size=(16, 16))
    val, _ = ops.ssim_forward(x, y)
    assert val == pytest.approx(ssim(ImageF(x[None]), ImageF(y[None])), abs=1e-12)


def test_full_gradient_check_suite():
    results = run_all(seed=0)
    names = [n for n, _ in results]
    assert len(names) == len(set(names))
    assert all_passed(results), results


def test_gradient_check_corrupt_hook():
    results = run_all(seed=0, corrupt=True)
    assert not all_passed(results)
