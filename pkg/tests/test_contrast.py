import math

import numpy as np
import pytest

from iars_ssl.bench_oracles import (
    oracle_hierarchical_loss,
    oracle_instance_loss,
    oracle_temporal_loss,
)
from iars_ssl.contrast import (
    LossConfig,
    PyramidLevel,
    build_pyramid,
    combined_loss,
    hierarchical_loss,
    instance_loss,
    temporal_loss,
)
from iars_ssl.numerics import Tensor

from util import check_gradients


def _level(fa, fb):
    fa = Tensor(np.asarray(fa, dtype=np.float64))
    fb = Tensor(np.asarray(fb, dtype=np.float64))
    length = fa.shape[2]
    return PyramidLevel(f_o=fa, f_o_prime=fb, pooled_length=length,
                        canonical_index=int(length - 1).bit_length())


def _random_pair(rng, b, k, length, scale=0.6):
    return (rng.normal(size=(b, k, length)) * scale,
            rng.normal(size=(b, k, length)) * scale)


class TestBuildPyramid:
    def _maps(self, length):
        rng = np.random.default_rng(0)
        return Tensor(rng.normal(size=(2, 3, length))), Tensor(rng.normal(size=(2, 3, length)))

    def test_halving_chain(self):
        levels = build_pyramid(*self._maps(8), LossConfig())
        assert [lv.pooled_length for lv in levels] == [8, 4, 2, 1]
        assert [lv.canonical_index for lv in levels] == [3, 2, 1, 0]

    def test_length_one(self):
        levels = build_pyramid(*self._maps(1), LossConfig())
        assert [lv.pooled_length for lv in levels] == [1]

    def test_ceil_halving(self):
        levels = build_pyramid(*self._maps(5), LossConfig())
        assert [lv.pooled_length for lv in levels] == [5, 3, 2, 1]

    def test_exclude_unpooled(self):
        cfg = LossConfig(include_unpooled=False)
        levels = build_pyramid(*self._maps(8), cfg)
        assert [lv.pooled_length for lv in levels] == [4, 2, 1]
        assert [lv.pooled_length for lv in build_pyramid(*self._maps(1), cfg)] == [1]

    def test_extent_mismatch(self):
        a, _ = self._maps(8)
        b, _ = self._maps(4)
        with pytest.raises(ValueError):
            build_pyramid(a, b, LossConfig())

    def test_avg_mode_pools_with_mean(self):
        a = Tensor(np.array([[[1.0, 3.0, 5.0, 7.0]]]))
        levels = build_pyramid(a, a, LossConfig(pool_mode="avg"))
        assert np.array_equal(levels[1].f_o.data, [[[2.0, 6.0]]])


class TestTemporalLoss:
    def test_single_timestep_is_zero(self):
        rng = np.random.default_rng(1)
        level = _level(*_random_pair(rng, 3, 4, 1))
        assert temporal_loss(level).item() == 0.0

    def test_identical_constant_vectors_closed_form(self):
        for length in (2, 4, 7):
            v = np.tile(np.array([0.3, -0.2, 0.5])[None, :, None], (2, 1, length))
            level = _level(v, v)
            expected = math.log(2 * length - 1)
            assert abs(temporal_loss(level).item() - expected) <= 1e-12
            assert abs(oracle_temporal_loss(v, v) - expected) <= 1e-12

    def test_random_matches_bruteforce(self):
        rng = np.random.default_rng(2)
        fa, fb = _random_pair(rng, 4, 8, 16)
        got = temporal_loss(_level(fa, fb)).item()
        assert abs(got - oracle_temporal_loss(fa, fb)) <= 1e-9

    def test_nan_rejected(self):
        fa, fb = _random_pair(np.random.default_rng(3), 2, 3, 4)
        fa[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            temporal_loss(_level(fa, fb))


class TestInstanceLoss:
    def test_single_instance_is_zero(self):
        rng = np.random.default_rng(4)
        level = _level(*_random_pair(rng, 1, 4, 6))
        assert instance_loss(level).item() == 0.0

    def test_two_identical_instances_log3(self):
        v = np.tile(np.array([0.4, 0.1])[None, :, None], (2, 1, 5))
        level = _level(v, v)
        assert abs(instance_loss(level).item() - math.log(3)) <= 1e-12
        assert abs(oracle_instance_loss(v, v) - math.log(3)) <= 1e-12

    def test_random_matches_bruteforce(self):
        rng = np.random.default_rng(5)
        fa, fb = _random_pair(rng, 4, 8, 16)
        got = instance_loss(_level(fa, fb)).item()
        assert abs(got - oracle_instance_loss(fa, fb)) <= 1e-9


class TestCombinedLoss:
    def test_alpha_extremes(self):
        rng = np.random.default_rng(6)
        fa, fb = _random_pair(rng, 3, 4, 8)
        level = _level(fa, fb)
        assert combined_loss(level, 1.0).item() == pytest.approx(
            temporal_loss(_level(fa, fb)).item(), abs=0)
        level2 = _level(fa, fb)
        assert combined_loss(level2, 0.0).item() == pytest.approx(
            instance_loss(_level(fa, fb)).item(), abs=0)

    def test_affine_arithmetic(self):
        level = _level(np.zeros((1, 1, 1)), np.zeros((1, 1, 1)))
        level.temporal_loss = Tensor(2.0)
        level.instance_loss = Tensor(4.0)
        assert combined_loss(level, 0.5).item() == 3.0


class TestHierarchicalLoss:
    def test_single_level_equals_combined(self):
        rng = np.random.default_rng(7)
        fa, fb = _random_pair(rng, 2, 3, 1)
        pyramid = build_pyramid(Tensor(fa), Tensor(fb), LossConfig())
        total = hierarchical_loss(pyramid, 0.5)
        assert total.item() == pyramid[0].combined_loss.item()

    def test_additivity_bitwise(self):
        rng = np.random.default_rng(8)
        fa, fb = _random_pair(rng, 3, 4, 4)
        pyramid = build_pyramid(Tensor(fa), Tensor(fb), LossConfig())
        assert len(pyramid) == 3
        total = hierarchical_loss(pyramid, 0.5)
        manual = pyramid[0].combined_loss.item()
        for lv in pyramid[1:]:
            manual = manual + lv.combined_loss.item()
        assert total.item() == manual  # same accumulation order, exact

    def test_zero_level_leaves_value_unchanged(self):
        rng = np.random.default_rng(9)
        fa, fb = _random_pair(rng, 2, 3, 2)
        pyramid = build_pyramid(Tensor(fa), Tensor(fb), LossConfig())
        before = hierarchical_loss(pyramid, 0.5).item()
        zero = _level(np.zeros((1, 1, 1)), np.zeros((1, 1, 1)))
        zero.combined_loss = Tensor(0.0)
        assert hierarchical_loss(pyramid + [zero], 0.5).item() == before

    def test_empty_pyramid_rejected(self):
        with pytest.raises(ValueError):
            hierarchical_loss([], 0.5)

    def test_matches_oracle_with_its_own_pooling(self):
        rng = np.random.default_rng(10)
        for pool_mode in ("max", "avg"):
            fa, fb = _random_pair(rng, 3, 5, 11)
            pyramid = build_pyramid(Tensor(fa), Tensor(fb), LossConfig(pool_mode=pool_mode))
            got = hierarchical_loss(pyramid, 0.5).item()
            want = oracle_hierarchical_loss(fa, fb, 0.5, pool_mode=pool_mode)
            assert abs(got - want) <= 1e-9


class TestInvariants:
    def test_losses_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            b = int(rng.integers(1, 6))
            k = int(rng.integers(1, 8))
            length = int(rng.integers(1, 12))
            fa, fb = _random_pair(rng, b, k, length, scale=1.5)
            level = _level(fa, fb)
            assert temporal_loss(level).item() >= 0.0
            assert instance_loss(level).item() >= 0.0

    def test_vectorized_equals_bruteforce_sweep(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            b = int(rng.integers(2, 9))
            k = int(rng.integers(1, 17))
            length = int(rng.integers(2, 33))
            fa, fb = _random_pair(rng, b, k, length)
            level = _level(fa, fb)
            assert abs(temporal_loss(level).item() - oracle_temporal_loss(fa, fb)) <= 1e-9
            assert abs(instance_loss(level).item() - oracle_instance_loss(fa, fb)) <= 1e-9

    def test_permutation_invariance(self):
        rng = np.random.default_rng(13)
        fa, fb = _random_pair(rng, 5, 4, 6)
        perm = rng.permutation(5)
        base_t = temporal_loss(_level(fa, fb)).item()
        base_i = instance_loss(_level(fa, fb)).item()
        assert abs(temporal_loss(_level(fa[perm], fb[perm])).item() - base_t) <= 1e-10
        assert abs(instance_loss(_level(fa[perm], fb[perm])).item() - base_i) <= 1e-10

    def test_view_order_invariance(self):
        rng = np.random.default_rng(14)
        fa, fb = _random_pair(rng, 3, 4, 7)
        assert temporal_loss(_level(fa, fb)).item() == pytest.approx(
            temporal_loss(_level(fb, fa)).item(), abs=1e-12)
        assert instance_loss(_level(fa, fb)).item() == pytest.approx(
            instance_loss(_level(fb, fa)).item(), abs=1e-12)

    def test_loss_gradients_match_finite_differences(self):
        rng = np.random.default_rng(15)
        fa = Tensor(rng.normal(size=(3, 4, 5)) * 0.5, requires_grad=True)
        fb = Tensor(rng.normal(size=(3, 4, 5)) * 0.5, requires_grad=True)

        def build_t():
            return temporal_loss(_level_from(fa, fb))

        def build_i():
            return instance_loss(_level_from(fa, fb))

        def _level_from(a, b):
            return PyramidLevel(f_o=a, f_o_prime=b, pooled_length=a.shape[2],
                                canonical_index=3)

        check_gradients(build_t, [fa, fb], tol=1e-4)
        check_gradients(build_i, [fa, fb], tol=1e-4)

    def test_combined_gradient_through_pyramid(self):
        rng = np.random.default_rng(16)
        fa = Tensor(rng.normal(size=(2, 3, 6)) * 0.5, requires_grad=True)
        fb = Tensor(rng.normal(size=(2, 3, 6)) * 0.5, requires_grad=True)

        def build():
            pyramid = build_pyramid(fa, fb, LossConfig())
            return hierarchical_loss(pyramid, 0.4)

        check_gradients(build, [fa, fb], tol=1e-4)
