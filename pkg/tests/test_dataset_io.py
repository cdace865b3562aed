import dataclasses
import json

import numpy as np
import pytest

from drtsad.dataset_io import (
    KNOWN_MANIFESTS,
    MSL,
    SMAP,
    SWAT,
    DatasetManifest,
    SyntheticSpec,
    TimeSeriesDataset,
    WindowConfig,
    generate_synthetic,
    load_dataset,
    make_windows,
    standardize,
    validate_directory,
    validate_manifest,
    write_dataset,
)
from drtsad.errors import ManifestMismatch, ParseError, PreconditionError, SeriesTooShort
from drtsad.evaluation import _segments
from drtsad.numerics import pearson_correlation


def tiny_dataset(train_rows=12, test_rows=10, d=3, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.zeros(test_rows, dtype=np.int8)
    labels[2:4] = 1
    manifest = DatasetManifest("tiny", d, train_rows, test_rows, float(labels.mean()))
    return TimeSeriesDataset(manifest, rng.normal(size=(train_rows, d)), rng.normal(size=(test_rows, d)), labels)


class TestManifests:
    def test_published_sizes(self):
        assert (MSL.train_rows, MSL.test_rows, MSL.n_dims, MSL.anomaly_fraction) == (58317, 73729, 55, 0.1072)
        assert (SMAP.train_rows, SMAP.test_rows, SMAP.n_dims, SMAP.anomaly_fraction) == (135183, 427617, 25, 0.1313)
        assert (SWAT.train_rows, SWAT.test_rows, SWAT.n_dims, SWAT.anomaly_fraction) == (495000, 449919, 51, 0.1198)
        assert set(KNOWN_MANIFESTS) == {"MSL", "SMAP", "SWaT"}

    def test_round_trip(self):
        m = dataclasses.replace(MSL, concat_order=("M-1", "M-2"))
        assert DatasetManifest.from_dict(json.loads(json.dumps(m.to_dict()))) == m

    @pytest.mark.parametrize("frac", [0.0, 1.0])
    def test_fraction_bounds(self, frac):
        with pytest.raises(PreconditionError):
            DatasetManifest("x", 2, 10, 10, frac)


class TestLoad:
    def test_round_trip_bit_identical(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(n_dims=4, train_length=300, test_length=600, spike_count=2,
                                              corr_break_count=1, level_shift_count=1, min_gap=5))
        write_dataset(ds, tmp_path)
        back = load_dataset(tmp_path)
        np.testing.assert_array_equal(back.train, ds.train)
        np.testing.assert_array_equal(back.test, ds.test)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.manifest == ds.manifest

    def test_missing_column(self, tmp_path):
        ds = tiny_dataset()
        write_dataset(ds, tmp_path)
        np.savetxt(tmp_path / "test.csv", ds.test[:, :2], delimiter=",")
        with pytest.raises(ManifestMismatch) as info:
            load_dataset(tmp_path)
        assert info.value.field == "n_dims"

    def test_manifest_row_mismatch(self, tmp_path):
        write_dataset(tiny_dataset(), tmp_path)
        wrong = dataclasses.replace(tiny_dataset().manifest, train_rows=13)
        with pytest.raises(ManifestMismatch, match="train_rows"):
            load_dataset(tmp_path, wrong)

    def test_parse_error_location(self, tmp_path):
        write_dataset(tiny_dataset(), tmp_path)
        lines = (tmp_path / "train.csv").read_text().splitlines()
        cells = lines[4].split(",")
        cells[1] = "abc"
        lines[4] = ",".join(cells)
        (tmp_path / "train.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as info:
            load_dataset(tmp_path)
        assert (info.value.row, info.value.col) == (4, 1)

    def test_ragged_row(self, tmp_path):
        write_dataset(tiny_dataset(), tmp_path)
        lines = (tmp_path / "train.csv").read_text().splitlines()
        lines[3] = ",".join(lines[3].split(",")[:2])
        (tmp_path / "train.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(ManifestMismatch):
            load_dataset(tmp_path)


class TestValidate:
    def test_self_consistent_synthetic(self):
        assert validate_manifest(generate_synthetic(SyntheticSpec())).passed

    def test_truncated_test_split(self, tmp_path):
        ds = tiny_dataset()
        write_dataset(ds, tmp_path)
        np.savetxt(tmp_path / "test.csv", ds.test[:-1], delimiter=",")
        np.savetxt(tmp_path / "labels.csv", ds.labels[:-1], fmt="%d")
        report = validate_directory(tmp_path)
        assert not report.passed
        assert not report.fields["test_rows"]["pass"]
        assert report.fields["train_rows"]["pass"]
        assert any(line.startswith("FAIL tiny.test_rows") for line in report.lines())

    def test_smap_shaped_report(self):
        # the report only looks at shapes and the label mean, so a lightweight
        # stand-in with SMAP's shape and label count exercises every field
        labels = np.zeros(SMAP.test_rows, dtype=np.int8)
        labels[: round(SMAP.anomaly_fraction * SMAP.test_rows)] = 1
        train = np.broadcast_to(np.zeros(1), (SMAP.train_rows, SMAP.n_dims))
        test = np.broadcast_to(np.zeros(1), (SMAP.test_rows, SMAP.n_dims))
        report = validate_manifest(TimeSeriesDataset(SMAP, train, test, labels))
        assert report.passed, report.lines()


class TestStandardize:
    def test_zscore_train_stats(self):
        rng = np.random.default_rng(0)
        train = np.column_stack([5 + 2 * rng.normal(size=200), np.full(200, 3.0)])
        test = rng.normal(size=(10, 2))
        ds = TimeSeriesDataset(DatasetManifest("s", 2, 200, 10, 0.1), train, test, np.eye(10, dtype=np.int8)[0])
        out, scaling = standardize(ds)
        np.testing.assert_allclose(out.train[:, 0].mean(), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.train[:, 0].std(), 1.0, atol=1e-9)
        # constant column: centered, scale 1
        np.testing.assert_array_equal(out.train[:, 1], 0.0)
        assert scaling.scale[1] == 1.0
        # test uses the train statistics, recomputed by hand
        mu, sd = train[:, 0].mean(), train[:, 0].std()
        np.testing.assert_allclose(out.test[:, 0], (test[:, 0] - mu) / sd, atol=1e-14)
        np.testing.assert_allclose(out.test[:, 1], test[:, 1] - 3.0, atol=1e-14)

    @pytest.mark.parametrize("method", ["zscore", "minmax", "none"])
    def test_idempotent_on_train(self, method):
        once, _ = standardize(tiny_dataset(), method)
        twice, _ = standardize(once, method)
        np.testing.assert_allclose(twice.train, once.train, atol=1e-9)

    def test_minmax_range(self):
        out, _ = standardize(tiny_dataset(), "minmax")
        np.testing.assert_allclose(out.train.min(axis=0), 0.0, atol=1e-15)
        np.testing.assert_allclose(out.train.max(axis=0), 1.0, atol=1e-15)

    def test_unknown_method(self):
        with pytest.raises(PreconditionError):
            standardize(tiny_dataset(), "robust")


class TestWindows:
    @pytest.mark.parametrize("stride,count", [(1, 6), (5, 2), (2, 3)])
    def test_counts(self, stride, count):
        m = np.arange(20.0).reshape(10, 2)
        w, starts = make_windows(m, WindowConfig(5, stride))
        assert w.shape == (count, 5, 2)
        assert len(starts) == (10 - 5) // stride + 1
        for win, s in zip(w, starts):
            np.testing.assert_array_equal(win, m[s : s + 5])

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            make_windows(np.zeros((4, 2)), WindowConfig(5, 1))

    def test_stride_bounds(self):
        with pytest.raises(PreconditionError):
            WindowConfig(5, 6)

    @pytest.mark.parametrize("t,length,stride", [(37, 8, 3), (64, 64, 1), (100, 10, 10), (50, 7, 7)])
    def test_full_coverage_except_trailing(self, t, length, stride):
        _, starts = make_windows(np.zeros((t, 1)), WindowConfig(length, stride))
        covered = np.zeros(t, dtype=bool)
        for s in starts:
            covered[s : s + length] = True
        # every row up to the last window's end is covered
        assert covered[: starts[-1] + length].all()


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(SyntheticSpec(seed=3))
        b = generate_synthetic(SyntheticSpec(seed=3))
        np.testing.assert_array_equal(a.train, b.train)
        np.testing.assert_array_equal(a.test, b.test)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_exact_label_count(self):
        ds = generate_synthetic(SyntheticSpec())
        assert ds.labels.sum() == 1000
        assert ds.manifest.anomaly_fraction == pytest.approx(0.10)
        starts, stops = _segments(ds.labels)
        # non-overlapping, non-touching segments: one run per injected anomaly
        assert starts.size == 20 + 15 + 15
        assert sorted((stops - starts).tolist()) == [5] * 20 + [30] * 30

    def test_zero_anomalies_rejected(self):
        with pytest.raises(PreconditionError):
            SyntheticSpec(spike_count=0, corr_break_count=0, level_shift_count=0)

    def test_channels_are_correlated(self):
        ds = generate_synthetic(SyntheticSpec())
        rho = [abs(pearson_correlation(ds.train[:, i], ds.train[:, j])) for i in range(16) for j in range(i)]
        assert np.median(rho) > 0.2

    def test_spec_round_trip(self):
        spec = SyntheticSpec(seed=9, n_dims=12)
        assert SyntheticSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
