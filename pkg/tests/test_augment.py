import numpy as np
import pytest

from iars_ssl.augment import CropPlan, apply_crop, mask_latent, sample_crop
from iars_ssl.dataio import Batch
from iars_ssl.numerics import Tensor


def _batch(n=3, d=2, length=8, seed=0):
    rng = np.random.default_rng(seed)
    return Batch(values=Tensor(rng.normal(size=(n, d, length))), indices=np.arange(n))


class TestCropPlan:
    def test_derived_overlap_fields(self):
        plan = CropPlan(a_start=0, a_end=5, b_start=2, b_end=8)
        assert plan.overlap_start == 2
        assert plan.overlap_end == 5
        assert plan.overlap_length == 3

    def test_invalid_ordering_rejected(self):
        with pytest.raises(ValueError):
            CropPlan(a_start=3, a_end=5, b_start=2, b_end=8)
        with pytest.raises(ValueError):
            CropPlan(a_start=0, a_end=2, b_start=2, b_end=8)  # empty overlap


class TestSampleCrop:
    def test_length_two_is_forced(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            plan = sample_crop(2, rng=rng)
            assert (plan.a_start, plan.a_end, plan.b_start, plan.b_end) == (0, 2, 0, 2)

    def test_invariants_over_many_draws(self):
        rng = np.random.default_rng(123)
        for _ in range(10_000):
            plan = sample_crop(100, rng=rng)
            assert 0 <= plan.a_start <= plan.b_start < plan.a_end <= plan.b_end <= 100
            assert plan.overlap_length >= 2

    def test_nonempty_overlap_for_several_lengths(self):
        rng = np.random.default_rng(7)
        for length in (2, 3, 5, 17, 64):
            for _ in range(100_000 // 5):
                assert sample_crop(length, rng=rng).overlap_length >= 1

    def test_min_overlap_pow_bound(self):
        rng = np.random.default_rng(3)
        for _ in range(2000):
            assert sample_crop(64, min_overlap_pow=3, rng=rng).overlap_length >= 16

    def test_too_short_errors(self):
        with pytest.raises(ValueError):
            sample_crop(1, rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_crop(8, min_overlap_pow=3, rng=np.random.default_rng(0))


class TestApplyCrop:
    def test_full_range_views_equal_batch(self):
        batch = _batch(length=6)
        plan = CropPlan(0, 6, 0, 6)
        va, vb = apply_crop(batch, plan)
        assert np.array_equal(va.data, batch.values.data)
        assert np.array_equal(vb.data, batch.values.data)

    def test_shifted_views(self):
        batch = Batch(values=Tensor(np.arange(4, dtype=np.float64).reshape(1, 1, 4)),
                      indices=np.arange(1))
        va, vb = apply_crop(batch, CropPlan(0, 3, 1, 4))
        assert np.array_equal(va.data, [[[0.0, 1.0, 2.0]]])
        assert np.array_equal(vb.data, [[[1.0, 2.0, 3.0]]])

    def test_overlap_region_identity(self):
        rng = np.random.default_rng(11)
        batch = _batch(length=20, seed=5)
        for _ in range(200)[:200]:
            plan = sample_crop(20, rng=rng)
            va, vb = apply_crop(batch, plan)
            ov_a = va.data[:, :, plan.overlap_start - plan.a_start:
                           plan.overlap_end - plan.a_start]
            ov_b = vb.data[:, :, plan.overlap_start - plan.b_start:
                           plan.overlap_end - plan.b_start]
            assert np.array_equal(ov_a, ov_b)

    def test_out_of_range_plan(self):
        with pytest.raises(ValueError):
            apply_crop(_batch(length=4), CropPlan(0, 3, 1, 6))


class TestMaskLatent:
    def test_p_zero_is_identity(self):
        f = Tensor(np.random.default_rng(0).normal(size=(2, 4, 8)))
        out = mask_latent(f, 0.0, np.random.default_rng(1), training=True)
        assert out.data.tobytes() == f.data.tobytes()

    def test_eval_mode_is_identity(self):
        f = Tensor(np.random.default_rng(0).normal(size=(2, 4, 8)))
        out = mask_latent(f, 0.9, training=False)
        assert out.data.tobytes() == f.data.tobytes()

    def test_whole_columns_zeroed_and_rest_bit_identical(self):
        f = Tensor(np.random.default_rng(2).normal(size=(4, 6, 50)))
        out = mask_latent(f, 0.5, np.random.default_rng(3), training=True)
        dropped = np.all(out.data == 0.0, axis=1)
        kept = ~dropped
        assert dropped.any()
        # masked positions: the entire K-dim column is exactly zero
        assert np.all(out.data[:, :, :] * dropped[:, None, :] == 0.0)
        # unmasked positions: bit-identical
        assert np.array_equal(out.data[kept.nonzero()[0], :, kept.nonzero()[1]],
                              f.data[kept.nonzero()[0], :, kept.nonzero()[1]])

    def test_empirical_drop_rate(self):
        f = Tensor(np.ones((100, 2, 1000)))
        out = mask_latent(f, 0.5, np.random.default_rng(4), training=True)
        drop_rate = np.mean(np.all(out.data == 0.0, axis=1))
        assert abs(drop_rate - 0.5) <= 0.01  # 1e5 timestep draws

    def test_invalid_probability(self):
        f = Tensor(np.ones((1, 1, 4)))
        with pytest.raises(ValueError):
            mask_latent(f, 1.0, np.random.default_rng(0), training=True)
        with pytest.raises(ValueError):
            mask_latent(f, -0.1, np.random.default_rng(0), training=True)
