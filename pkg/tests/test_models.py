"""Model realization: published shapes, accounting, mask behavior, bottleneck
algebra, and the checkpoint container."""

import numpy as np
import pytest

from denoisekd import models
from denoisekd import tensor as tt
from denoisekd.errors import CheckpointError, ConfigError, ShapeError
from denoisekd.models import (BottleneckAdapter, LatentShape, ModelConfig,
                              build_bottleneck, build_model, count_mops,
                              count_params, load_checkpoint, preset_config,
                              save_checkpoint)
from denoisekd.tensor import Tensor


PUBLISHED_LATENTS = {
    "t1": (128, 126, 5),
    "t2": (128, 126, 17),
    "s1": (32, 126, 5),
    "s2": (32, 2, 5),
}


class TestShapes:
    @pytest.mark.parametrize("name,latent", sorted(PUBLISHED_LATENTS.items()))
    def test_published_latent_shapes_exact(self, name, latent):
        assert preset_config(name).latent_shape().as_tuple() == latent

    def test_one_block_same_padding_preserves_shape(self):
        cfg = ModelConfig("toy", (8, 8), (3, 3), [4], [(1, 1)], [(1, 1)])
        assert cfg.latent_shape().as_tuple() == (4, 8, 8)

    def test_non_positive_extent_names_block(self):
        cfg = ModelConfig("bad", (8, 8), (5, 5), [2, 2], [(2, 2), (2, 2)], [(0, 0), (0, 0)])
        with pytest.raises(ConfigError, match="block 2"):
            cfg.latent_shape()

    def test_decoder_output_matches_input_shape(self, rng):
        for name in ("s2", "micro-t1", "micro-s2"):
            model = build_model(preset_config(name), seed=0)
            mask, _ = model.forward(rng.uniform(0.1, 1.0, size=(126, 256)))
            assert mask.shape == (126, 256)

    def test_schedule_length_mismatch_raises(self):
        with pytest.raises(ConfigError, match="schedule lengths"):
            ModelConfig("bad", (8, 8), (3, 3), [2, 4], [(1, 1)], [(1, 1)]).validate()


class TestAccounting:
    def test_parameter_counts_within_bands(self):
        bands = {"t1": 1.35e6, "t2": 2.04e6, "s1": 37e3, "s2": 37e3}
        for name, target in bands.items():
            n = count_params(build_model(preset_config(name), seed=0))
            assert abs(n - target) / target <= 0.15, (name, n)

    def test_student_counts_equal_exactly(self):
        s1 = count_params(build_model(preset_config("s1"), seed=0))
        s2 = count_params(build_model(preset_config("s2"), seed=1))
        assert s1 == s2

    def test_mops_strict_ordering(self):
        mops = {n: count_mops(build_model(preset_config(n), seed=0))
                for n in ("t1", "t2", "s1", "s2")}
        assert mops["s2"] < mops["s1"] < mops["t1"] < mops["t2"]

    def test_count_params_matches_manual_walk(self):
        model = build_model(preset_config("micro-s1"), seed=0)
        manual = sum(p.data.size for _, p in model.parameters())
        assert count_params(model) == manual


class TestForward:
    def test_mask_strictly_inside_unit_interval(self, rng):
        model = build_model(preset_config("micro-s1"), seed=2)
        mask, latent = model.forward(rng.uniform(0.0, 2.0, size=(126, 256)))
        assert mask.data.min() > 0.0 and mask.data.max() < 1.0
        assert latent.shape == model.latent_shape.as_tuple()

    def test_zero_input_stays_finite(self):
        model = build_model(preset_config("micro-s1"), seed=2)
        mask, latent = model.forward(np.zeros((126, 256)))
        assert np.all(np.isfinite(mask.data)) and np.all(np.isfinite(latent.data))

    def test_forward_deterministic(self, rng):
        model = build_model(preset_config("micro-s2"), seed=4)
        x = rng.uniform(0.0, 1.0, size=(126, 256))
        m1, l1 = model.forward(x)
        m2, l2 = model.forward(x)
        np.testing.assert_array_equal(m1.data, m2.data)
        np.testing.assert_array_equal(l1.data, l2.data)

    def test_same_seed_same_init(self):
        a = build_model(preset_config("micro-s1"), seed=9)
        b = build_model(preset_config("micro-s1"), seed=9)
        for (_, pa), (_, pb) in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_input_shape_mismatch_raises(self):
        model = build_model(preset_config("micro-s1"), seed=0)
        with pytest.raises(ShapeError, match="expected input"):
            model.forward(np.zeros((100, 100)))

    def test_batched_forward_matches_single(self, rng):
        model = build_model(preset_config("micro-s2"), seed=5)
        x = rng.uniform(0.1, 1.0, size=(2, 1, 126, 256))
        masks, latents = model.forward(Tensor(x))
        for n in range(2):
            m, l = model.forward(x[n, 0])
            np.testing.assert_array_equal(masks.data[n, 0], m.data)
            np.testing.assert_array_equal(latents.data[n], l.data)


class TestBottleneck:
    def test_scenario_map_axes(self):
        cases = [
            ("t1", "s1", ("C",)),
            ("t1", "s2", ("C", "H")),
            ("t2", "s2", ("C", "H", "W")),
        ]
        for tname, sname, axes in cases:
            adapter = build_bottleneck(preset_config(tname).latent_shape(),
                                       preset_config(sname).latent_shape())
            assert adapter.matched_axes == axes

    def test_output_shape_equals_student_latent(self, rng):
        for tname, sname in (("t1", "s1"), ("t1", "s2"), ("t2", "s2")):
            t = preset_config(tname).latent_shape()
            s = preset_config(sname).latent_shape()
            adapter = build_bottleneck(t, s, seed=1)
            out = adapter.forward(rng.normal(size=t.as_tuple()))
            assert out.shape == s.as_tuple()

    def test_zero_input_zero_bias_zero_output(self):
        adapter = build_bottleneck((4, 3, 3), (2, 3, 3), seed=0)
        for m in adapter.maps:
            m["bias"].data = np.zeros_like(m["bias"].data)
        out = adapter.forward(np.zeros((4, 3, 3)))
        assert np.all(out.data == 0.0)

    def test_affine_superposition_with_zero_bias(self, rng):
        adapter = build_bottleneck((4, 5, 6), (2, 3, 6), seed=3)
        for m in adapter.maps:
            m["bias"].data = np.zeros_like(m["bias"].data)
        x = rng.normal(size=(4, 5, 6))
        y = rng.normal(size=(4, 5, 6))
        lhs = adapter.forward(2.0 * x + 3.0 * y).data
        rhs = 2.0 * adapter.forward(x).data + 3.0 * adapter.forward(y).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_bias_consistent_scaling_residual(self, rng):
        adapter = build_bottleneck((3, 4, 4), (2, 4, 4), seed=5)
        b = rng.normal(size=2)
        adapter.maps[0]["bias"].data = b.copy()
        x = rng.normal(size=(3, 4, 4))
        resid = adapter.forward(2.0 * x).data - 2.0 * adapter.forward(x).data
        # adapter(2x) - 2 adapter(x) = -bias exactly, for a single stacked map
        np.testing.assert_allclose(resid, -b[:, None, None] * np.ones((2, 4, 4)), atol=1e-12)
        adapter.maps[0]["bias"].data = np.zeros(2)
        zero_resid = adapter.forward(2.0 * x).data - 2.0 * adapter.forward(x).data
        np.testing.assert_allclose(zero_resid, 0.0, atol=1e-12)

    def test_axis_map_equals_dense_matmul(self, rng):
        """Each per-axis map is an explicit matrix product along that axis."""
        t, s = LatentShape(4, 5, 6), LatentShape(3, 5, 6)
        adapter = build_bottleneck(t, s, seed=7)
        x = rng.normal(size=t.as_tuple())
        w = adapter.maps[0]["weight"].data
        b = adapter.maps[0]["bias"].data
        oracle = np.einsum("ij,jhw->ihw", w, x) + b[:, None, None]
        np.testing.assert_allclose(adapter.forward(x).data, oracle, atol=1e-12)

    def test_wrong_input_shape_raises(self, rng):
        adapter = build_bottleneck((4, 3, 3), (2, 3, 3))
        with pytest.raises(ShapeError, match="teacher latent"):
            adapter.forward(rng.normal(size=(5, 3, 3)))

    def test_invalid_shapes_raise(self):
        with pytest.raises(ShapeError, match="positive"):
            build_bottleneck((0, 2, 2), (1, 2, 2))


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        model = build_model(preset_config("micro-s1"), seed=11)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, extra={"seed": 11})
        loaded, extra = load_checkpoint(path)
        assert extra == {"seed": 11}
        for (na, pa), (nb, pb) in zip(model.parameters(), loaded.parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_save_is_deterministic(self, tmp_path):
        model = build_model(preset_config("micro-s2"), seed=3)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, model)
        save_checkpoint(p2, model)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_payload_reports_mismatch(self, tmp_path):
        model = build_model(preset_config("micro-s1"), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(CheckpointError, match="manifest declares"):
            load_checkpoint(path)

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_bottleneck_checkpoint_round_trip(self, tmp_path):
        adapter = build_bottleneck((4, 5, 6), (2, 3, 6), seed=2)
        path = tmp_path / "adapter.ckpt"
        save_checkpoint(path, adapter, kind="bottleneck")
        loaded, _ = load_checkpoint(path)
        assert isinstance(loaded, BottleneckAdapter)
        for (_, pa), (_, pb) in zip(adapter.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)
