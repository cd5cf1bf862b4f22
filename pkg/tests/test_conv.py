"""Convolution operators: oracle agreement, shape algebra, adjoint pairing,
gradients, and kernel-backend parity."""

import numpy as np
import pytest

from denoisekd import kernels
from denoisekd import tensor as tt
from denoisekd.errors import ShapeError
from denoisekd.gradcheck import check_gradients
from denoisekd.tensor import Tensor


def conv2d_oracle(x, w, bias, stride, padding):
    """Direct nested-loop convolution used as the independent reference."""
    c_out, c_in, kh, kw = w.shape
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    oh = (xp.shape[1] - kh) // stride[0] + 1
    ow = (xp.shape[2] - kw) // stride[1] + 1
    out = np.zeros((c_out, oh, ow))
    for co in range(c_out):
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, i * stride[0] : i * stride[0] + kh,
                           j * stride[1] : j * stride[1] + kw]
                out[co, i, j] = np.sum(patch * w[co]) + (bias[co] if bias is not None else 0.0)
    return out


class TestConv2dForward:
    def test_all_ones_kernel_local_sums(self, rng):
        x = rng.normal(size=(1, 4, 4))
        w = np.ones((1, 1, 3, 3))
        got = tt.conv2d(Tensor(x), Tensor(w)).data
        assert got.shape == (1, 2, 2)
        for i in range(2):
            for j in range(2):
                assert got[0, i, j] == pytest.approx(x[0, i : i + 3, j : j + 3].sum(), abs=1e-12)

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(1, 5, 6))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        got = tt.conv2d(Tensor(x), Tensor(w), stride=(1, 1), padding=(1, 1)).data
        np.testing.assert_allclose(got, x, atol=1e-14)

    def test_spectrogram_shape_formula(self, rng):
        x = rng.normal(size=(1, 126, 256))
        w = rng.normal(size=(4, 1, 5, 5))
        got = tt.conv2d(Tensor(x), Tensor(w), stride=(1, 2), padding=(2, 2))
        assert got.shape == (4, 126, 128)

    @pytest.mark.parametrize("stride,padding", [((1, 1), (0, 0)), ((2, 1), (1, 2)), ((2, 2), (2, 2))])
    def test_matches_nested_loop_oracle(self, rng, stride, padding):
        x = rng.normal(size=(3, 8, 9))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        got = tt.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding).data
        np.testing.assert_allclose(got, conv2d_oracle(x, w, b, stride, padding), atol=1e-12)

    def test_batched_matches_per_example(self, rng):
        x = rng.normal(size=(3, 2, 6, 7))
        w = rng.normal(size=(4, 2, 3, 3))
        b = rng.normal(size=4)
        batched = tt.conv2d(Tensor(x), Tensor(w), Tensor(b), (1, 2), (1, 1)).data
        for n in range(3):
            single = tt.conv2d(Tensor(x[n]), Tensor(w), Tensor(b), (1, 2), (1, 1)).data
            np.testing.assert_array_equal(batched[n], single)

    def test_kernel_larger_than_padded_input_raises(self, rng):
        with pytest.raises(ShapeError, match="larger than padded"):
            tt.conv2d(Tensor(rng.normal(size=(1, 2, 2))), Tensor(rng.normal(size=(1, 1, 5, 5))))

    def test_channel_mismatch_raises(self, rng):
        with pytest.raises(ShapeError, match="channels"):
            tt.conv2d(Tensor(rng.normal(size=(2, 4, 4))), Tensor(rng.normal(size=(1, 3, 3, 3))))


class TestConvTranspose:
    def test_upsampling_shape(self, rng):
        x = rng.normal(size=(1, 2, 2))
        w = rng.normal(size=(1, 1, 2, 2))
        got = tt.conv2d_transpose(Tensor(x), Tensor(w), stride=(2, 2))
        assert got.shape == (1, 4, 4)

    def test_negative_extent_raises(self, rng):
        with pytest.raises(ShapeError, match="not positive"):
            tt.conv2d_transpose(Tensor(rng.normal(size=(1, 1, 1))),
                                Tensor(rng.normal(size=(1, 1, 2, 2))), padding=(3, 3))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_adjoint_pairing_identity(self, seed):
        """dot(conv2d(x, k), y) == dot(x, conv2d_transpose(y, k))."""
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 8, 10))
        k = rng.normal(size=(5, 3, 3, 3))
        stride, padding = (2, 2), (1, 1)
        fwd = tt.conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding).data
        y = rng.normal(size=fwd.shape)
        # output_padding restores the exact input extent
        op = tuple(
            x.shape[1 + a] - ((fwd.shape[1 + a] - 1) * stride[a] - 2 * padding[a] + 3)
            for a in range(2)
        )
        back = tt.conv2d_transpose(Tensor(y), Tensor(k), stride=stride,
                                   padding=padding, output_padding=op).data
        lhs = float(np.sum(fwd * y))
        rhs = float(np.sum(x * back))
        assert lhs == pytest.approx(rhs, rel=1e-6)

    def test_student_decoder_restores_input_extent(self):
        """Mirrored s2 configuration walks 2x5 latents back to 126x256."""
        from denoisekd.models import build_model, preset_config

        model = build_model(preset_config("s2"), seed=0)
        rng = np.random.default_rng(0)
        mask, latent = model.forward(rng.uniform(0.1, 1.0, size=(126, 256)))
        assert latent.shape == (32, 2, 5)
        assert mask.shape == (126, 256)


class TestConvGradients:
    def test_conv2d_finite_differences(self, rng):
        x = rng.normal(size=(2, 5, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        weight = Tensor(rng.normal(size=(3, 3, 6)))
        err = check_gradients(
            lambda ts: tt.tsum(tt.mul(tt.conv2d(ts[0], ts[1], ts[2], (2, 1), (1, 1)), weight)),
            [x, w, b])
        assert err <= 1e-4

    def test_conv2d_transpose_finite_differences(self, rng):
        x = rng.normal(size=(3, 3, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=2)
        weight = Tensor(rng.normal(size=(2, 6, 8)))
        err = check_gradients(
            lambda ts: tt.tsum(tt.mul(
                tt.conv2d_transpose(ts[0], ts[1], ts[2], (2, 2), (1, 1), (1, 1)), weight)),
            [x, w, b])
        assert err <= 1e-4


class TestKernelBackends:
    """Compiled and numpy backends must agree bit-for-bit."""

    @pytest.fixture
    def backends(self):
        b = kernels.get_backends()
        if len(b) < 2:
            pytest.skip("compiled backend not built")
        return b

    def test_im2col_parity(self, backends, rng):
        x = np.ascontiguousarray(rng.normal(size=(2, 3, 9, 11)))
        args = (3, 2, 2, 1, 4, 10)
        np.testing.assert_array_equal(
            backends["numpy"].im2col(x, *args), backends["compiled"].im2col(x, *args))

    def test_col2im_parity(self, backends, rng):
        cols = np.ascontiguousarray(rng.normal(size=(2, 18, 40)))
        args = (3, 9, 11, 3, 2, 2, 1, 4, 10)
        np.testing.assert_array_equal(
            backends["numpy"].col2im(cols, *args), backends["compiled"].col2im(cols, *args))

    def test_col2im_is_im2col_adjoint(self, backends, rng):
        x = np.ascontiguousarray(rng.normal(size=(1, 2, 7, 8)))
        cols_shape = (1, 2 * 3 * 3, 3 * 3)
        y = np.ascontiguousarray(rng.normal(size=cols_shape))
        for impl in backends.values():
            cols = impl.im2col(x, 3, 3, 2, 2, 3, 3)
            back = impl.col2im(y, 2, 7, 8, 3, 3, 2, 2, 3, 3)
            assert float(np.sum(cols * y)) == pytest.approx(float(np.sum(x * back)), rel=1e-12)

    def test_selected_backend_exported(self):
        assert kernels.BACKEND in ("numpy", "compiled")
        assert callable(kernels.im2col) and callable(kernels.col2im)
