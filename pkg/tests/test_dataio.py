from pathlib import Path

import numpy as np
import pytest

from iars_ssl.dataio import (
    DataError,
    TimeSeriesDataset,
    batches,
    parse_ts,
    parse_ucr_delimited,
    synth_classification,
    write_ts,
    zscore,
)
from iars_ssl.numerics import Tensor

FIXTURES = Path(__file__).parent / "fixtures"


class TestParseTs:
    def test_fixture_exact_values(self):
        ds = parse_ts((FIXTURES / "sample2d.ts").read_text())
        assert ds.values.shape == (2, 2, 3)
        expected = np.array([[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
                             [[-1.5, 0.25, 7.0], [0.0, -2.0, 3.5]]])
        assert np.array_equal(ds.values.data, expected)
        assert ds.name == "sample2d"

    def test_labels_resolved_by_declared_order(self):
        ds = parse_ts((FIXTURES / "sample2d.ts").read_text())
        assert ds.class_names == ["1", "2"]
        assert np.array_equal(ds.labels, [0, 1])

    def test_ragged_dimensions_error_names_line(self):
        with pytest.raises(DataError, match="line 4.*ragged"):
            parse_ts((FIXTURES / "malformed_ragged.ts").read_text())

    def test_unknown_class_label(self):
        with pytest.raises(DataError, match="unknown class label"):
            parse_ts((FIXTURES / "malformed_label.ts").read_text())

    def test_missing_values_are_a_hard_error(self):
        with pytest.raises(DataError, match="missing"):
            parse_ts((FIXTURES / "missing_values.ts").read_text())

    def test_missing_values_fill_flag_interpolates(self):
        ds = parse_ts((FIXTURES / "missing_values.ts").read_text(), fill_missing=True)
        assert ds.values.data[0, 0, 1] == 2.0  # linear between 1.0 and 3.0

    def test_roundtrip_is_exact(self):
        ds = parse_ts((FIXTURES / "sample2d.ts").read_text())
        again = parse_ts(write_ts(ds))
        assert np.array_equal(ds.values.data, again.values.data)
        assert np.array_equal(ds.labels, again.labels)
        assert again.class_names == ds.class_names

    def test_roundtrip_awkward_floats(self):
        rng = np.random.default_rng(9)
        ds = TimeSeriesDataset(values=Tensor(rng.normal(size=(3, 2, 5)) * 1e-7),
                               labels=np.array([0, 1, 0]), class_names=["a", "b"],
                               name="awkward")
        again = parse_ts(write_ts(ds))
        assert np.array_equal(ds.values.data, again.values.data)


class TestParseUcrDelimited:
    def test_basic(self):
        ds = parse_ucr_delimited("1,0.0,1.0\n2,1.0,0.0", delimiter=",")
        assert (ds.n, ds.d, ds.length) == (2, 1, 2)
        assert np.array_equal(ds.labels, [0, 1])

    def test_empty_text_errors(self):
        with pytest.raises(DataError, match="empty"):
            parse_ucr_delimited("", delimiter=",")

    def test_inconsistent_line_lengths(self):
        with pytest.raises(DataError, match="line 2"):
            parse_ucr_delimited("1,0.0,1.0\n2,1.0", delimiter=",")

    def test_non_numeric_field_locates_row_and_column(self):
        with pytest.raises(DataError, match="line 1, column 3"):
            parse_ucr_delimited("1\t0.5\toops", delimiter="\t")


class TestZscore:
    def _dataset(self, values):
        return TimeSeriesDataset(values=Tensor(np.asarray(values, dtype=np.float64)))

    def test_constant_channel_becomes_zero(self):
        ds = self._dataset(np.full((4, 1, 6), 3.25))
        out = zscore(ds, ds)
        assert np.all(out.values.data == 0.0)

    def test_idempotent_up_to_fp(self):
        rng = np.random.default_rng(4)
        ds = self._dataset(rng.normal(size=(8, 2, 32)))
        once = zscore(ds, ds)
        x = once.values.data
        assert abs(x.mean()) <= 1e-9
        assert abs(x.std() - 1.0) <= 1e-9
        twice = zscore(once, once)
        assert np.allclose(twice.values.data, x, atol=1e-9)

    def test_train_stats_applied_to_test(self):
        rng = np.random.default_rng(5)
        train = self._dataset(rng.normal(size=(16, 1, 20)))
        test = self._dataset(rng.normal(loc=5.0, size=(16, 1, 20)))
        out = zscore(train, test)
        # no re-fitting on the test split: its mean stays far from 0
        assert abs(out.values.data.mean()) > 1.0

    def test_channel_mismatch(self):
        with pytest.raises(DataError, match="channel"):
            zscore(self._dataset(np.ones((2, 2, 4))), self._dataset(np.ones((2, 3, 4))))


class TestSynthClassification:
    def test_shapes_and_balance(self):
        ds = synth_classification(10, 1, 128, 3, seed=7)
        assert (ds.n, ds.d, ds.length) == (30, 1, 128)
        assert np.array_equal(np.bincount(ds.labels), [10, 10, 10])

    def test_deterministic_per_seed(self):
        a = synth_classification(5, 2, 64, 2, seed=3)
        b = synth_classification(5, 2, 64, 2, seed=3)
        assert a.values.data.tobytes() == b.values.data.tobytes()
        c = synth_classification(5, 2, 64, 2, seed=4)
        assert a.values.data.tobytes() != c.values.data.tobytes()

    def test_noiseless_templates_are_periodic(self):
        ds = synth_classification(3, 1, 128, 2, seed=1, noise_sigma=0.0)
        x = ds.values.data
        for i in range(ds.n):
            period = 128 // (4 * (int(ds.labels[i]) + 1))
            assert np.allclose(x[i, 0, :-period], x[i, 0, period:], atol=1e-9)

    def test_too_short_errors(self):
        with pytest.raises(DataError):
            synth_classification(2, 1, 7, 2, seed=0)


class TestBatches:
    def _dataset(self, n=10):
        return TimeSeriesDataset(values=Tensor(np.arange(n * 4, dtype=np.float64).reshape(n, 1, 4)))

    def test_sizes_with_partial_tail(self):
        out = batches(self._dataset(10), 4)
        assert [len(b.indices) for b in out] == [4, 4, 2]

    def test_no_shuffle_keeps_file_order(self):
        out = batches(self._dataset(6), 4, shuffle=False)
        assert np.array_equal(np.concatenate([b.indices for b in out]), np.arange(6))

    def test_same_seed_same_permutation(self):
        a = batches(self._dataset(10), 3, seed=5, shuffle=True)
        b = batches(self._dataset(10), 3, seed=5, shuffle=True)
        for x, y in zip(a, b):
            assert np.array_equal(x.indices, y.indices)

    def test_partition_property(self):
        for n, bs, seed in ((10, 3, 0), (7, 7, 1), (5, 1, 2), (12, 5, 3)):
            out = batches(self._dataset(n), bs, seed=seed, shuffle=True)
            seen = np.sort(np.concatenate([b.indices for b in out]))
            assert np.array_equal(seen, np.arange(n))

    def test_values_follow_indices(self):
        ds = self._dataset(6)
        out = batches(ds, 4, seed=9, shuffle=True)
        for b in out:
            assert np.array_equal(b.values.data, ds.values.data[b.indices])
