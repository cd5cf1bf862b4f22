"""Loss functions: hand-computed anchors, invariances, and gradients."""

import numpy as np
import pytest

from denoisekd import losses, metrics
from denoisekd import tensor as tt
from denoisekd.errors import NumericsError, ShapeError
from denoisekd.gradcheck import check_gradients
from denoisekd.losses import (LossWeights, batched_cosine_distance,
                              cosine_distance, joint_loss, si_snr_loss)
from denoisekd.tensor import Tensor, backward


class TestCosineDistance:
    def test_identical_direction_zero(self, rng):
        a = rng.normal(size=(3, 4))
        assert cosine_distance(a, a).item() == pytest.approx(0.0, abs=1e-12)

    def test_opposite_direction_two(self, rng):
        a = rng.normal(size=10)
        assert cosine_distance(a, -a).item() == pytest.approx(2.0, abs=1e-12)

    def test_orthogonal_one_hots(self):
        e1, e2 = np.zeros(5), np.zeros(5)
        e1[0] = e2[1] = 1.0
        assert cosine_distance(e1, e2).item() == pytest.approx(1.0, abs=1e-12)

    def test_scale_invariance(self, rng):
        for _ in range(10):
            a, b = rng.normal(size=(2, 6)), rng.normal(size=(2, 6))
            base = cosine_distance(a, b).item()
            scaled = cosine_distance(3.0 * a, 7.0 * b).item()
            assert abs(scaled - base) <= 1e-12

    def test_range_bounds(self, rng):
        for _ in range(50):
            v = cosine_distance(rng.normal(size=8), rng.normal(size=8)).item()
            assert -1e-12 <= v <= 2.0 + 1e-12

    def test_zero_norm_raises(self, rng):
        with pytest.raises(NumericsError, match="zero-norm"):
            cosine_distance(np.zeros(4), rng.normal(size=4))

    def test_element_count_mismatch(self, rng):
        with pytest.raises(ShapeError):
            cosine_distance(rng.normal(size=4), rng.normal(size=5))

    def test_gradient_both_inputs(self, rng):
        err = check_gradients(
            lambda ts: cosine_distance(ts[0], ts[1]),
            [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))])
        assert err <= 1e-4

    def test_batched_matches_mean_of_scalars(self, rng):
        a, b = rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 3, 2))
        batched = batched_cosine_distance(Tensor(a), Tensor(b)).item()
        manual = np.mean([cosine_distance(a[i], b[i]).item() for i in range(4)])
        assert batched == pytest.approx(manual, abs=1e-12)

    def test_flattening_is_row_major(self, rng):
        """Whole-tensor dot product: reshaping operands must not change it."""
        a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
        v1 = cosine_distance(a, b).item()
        v2 = cosine_distance(a.reshape(-1), b.reshape(-1)).item()
        assert v1 == pytest.approx(v2, abs=1e-15)


class TestSiSnrLoss:
    def test_hand_example_zero_db(self):
        # x=[1,1], xhat=[1,0]: alpha=1/2, ratio 0.5/0.5 -> 0 dB
        loss = si_snr_loss(np.array([1.0, 1.0]), Tensor(np.array([1.0, 0.0])))
        assert loss.item() == pytest.approx(0.0, abs=1e-9)

    def test_perfect_estimate_hits_cap_floor(self, rng):
        x = rng.normal(size=100)
        assert si_snr_loss(x, Tensor(x.copy())).item() == pytest.approx(-120.0)

    def test_matches_metric(self, rng):
        x = rng.normal(size=500)
        y = x + 0.3 * rng.normal(size=500)
        assert si_snr_loss(x, Tensor(y)).item() == pytest.approx(-metrics.si_snr(x, y), abs=1e-9)

    def test_gradient(self, rng):
        tgt = rng.normal(size=64)
        err = check_gradients(lambda ts: si_snr_loss(tgt, ts[0]),
                              [tgt + 0.3 * rng.normal(size=64)])
        assert err <= 1e-4

    def test_batched_is_mean(self, rng):
        x = rng.normal(size=(3, 100))
        y = x + 0.2 * rng.normal(size=(3, 100))
        batched = si_snr_loss(x, Tensor(y)).item()
        singles = [si_snr_loss(x[i], Tensor(y[i])).item() for i in range(3)]
        assert batched == pytest.approx(np.mean(singles), abs=1e-9)

    def test_zero_target_raises(self, rng):
        with pytest.raises(NumericsError, match="zero-power"):
            si_snr_loss(np.zeros(10), Tensor(rng.normal(size=10)))

    def test_gradient_flows_to_estimate_only(self, rng):
        tgt = Tensor(rng.normal(size=32), requires_grad=True)
        est = Tensor(tgt.data + 0.5 * rng.normal(size=32), requires_grad=True)
        backward(si_snr_loss(tgt, est))
        assert est.grad is not None
        assert tgt.grad is None  # target treated as constant


class TestJointLoss:
    def test_weighted_sum_hand_value(self):
        assert joint_loss(0.4, 1.2, LossWeights(1.0, 1.0)) == pytest.approx(1.6)

    def test_kd_ablation(self):
        assert joint_loss(123.4, 5.0, LossWeights(0.0, 1.0)) == pytest.approx(5.0)

    def test_default_weights_are_one(self):
        w = LossWeights()
        assert w.lambda_kd == 1.0 and w.lambda_out == 1.0
        assert joint_loss(2.0, 3.0) == pytest.approx(5.0)

    def test_linearity(self, rng):
        w = LossWeights(0.7, 1.3)
        a, b, c, d = rng.normal(size=4)
        assert joint_loss(a, b, w) + joint_loss(c, d, w) == pytest.approx(
            joint_loss(a + c, b + d, w), rel=1e-12)

    def test_tensor_operands_stay_differentiable(self, rng):
        kd = Tensor(np.array(0.5), requires_grad=True)
        out = Tensor(np.array(2.0), requires_grad=True)
        total = joint_loss(kd, out, LossWeights(2.0, 0.5))
        backward(total)
        assert total.item() == pytest.approx(2.0)
        assert kd.grad == pytest.approx(2.0) and out.grad == pytest.approx(0.5)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            LossWeights(-0.1, 1.0)
