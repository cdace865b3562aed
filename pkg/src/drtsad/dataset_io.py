"""Benchmark dataset loading, validation, scaling, windowing and synthetic generation.

On-disk layout of a dataset directory::

    train.csv      headerless, one timestep per line, n comma-separated values
    test.csv       same layout as train.csv
    labels.csv     one 0/1 per line, one line per test timestep
    manifest.json  {"name", "n_dims", "train_rows", "test_rows", "anomaly_fraction", ...}
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from drtsad.errors import ManifestMismatch, ParseError, PreconditionError, SeriesTooShort
from drtsad.numerics import RandomSource

logger = logging.getLogger(__name__)

FRACTION_TOLERANCE = 0.005


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    n_dims: int
    train_rows: int
    test_rows: int
    anomaly_fraction: float
    source: str = ""
    # per-channel sources (MSL/SMAP) are concatenated in this order
    concat_order: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for key in ("n_dims", "train_rows", "test_rows"):
            if getattr(self, key) <= 0:
                raise PreconditionError(f"manifest {key} must be positive")
        if not 0.0 < self.anomaly_fraction < 1.0:
            raise PreconditionError("manifest anomaly_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["concat_order"] = list(self.concat_order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            name=str(d["name"]),
            n_dims=int(d["n_dims"]),
            train_rows=int(d["train_rows"]),
            test_rows=int(d["test_rows"]),
            anomaly_fraction=float(d["anomaly_fraction"]),
            source=str(d.get("source", "")),
            concat_order=tuple(d.get("concat_order", ())),
        )

    @classmethod
    def read(cls, path: str | Path) -> "DatasetManifest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# Published sizes of the three benchmarks.
MSL = DatasetManifest("MSL", 55, 58317, 73729, 0.1072, "Hundman et al. 2018 (NASA)")
SMAP = DatasetManifest("SMAP", 25, 135183, 427617, 0.1313, "Hundman et al. 2018 (NASA)")
SWAT = DatasetManifest("SWaT", 51, 495000, 449919, 0.1198, "Goh et al. 2016; Mathur & Tippenhauer 2016")
KNOWN_MANIFESTS = {m.name: m for m in (MSL, SMAP, SWAT)}


@dataclass(frozen=True)
class TimeSeriesDataset:
    manifest: DatasetManifest
    train: np.ndarray
    test: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.train, self.test, self.labels):
            arr.setflags(write=False)
        if self.train.ndim != 2 or self.test.ndim != 2:
            raise PreconditionError("train and test must be 2-D")
        if self.train.shape[1] != self.test.shape[1]:
            raise PreconditionError("train and test disagree on column count")
        if self.labels.shape != (self.test.shape[0],):
            raise PreconditionError("labels must have one entry per test row")

    @property
    def n_dims(self) -> int:
        return self.train.shape[1]


@dataclass(frozen=True)
class WindowConfig:
    length: int
    stride: int = 1

    def __post_init__(self) -> None:
        if self.length < 1 or not 1 <= self.stride <= self.length:
            raise PreconditionError(f"need 1 <= stride <= length, got length={self.length} stride={self.stride}")


@dataclass(frozen=True)
class Scaling:
    method: str
    offset: np.ndarray
    scale: np.ndarray


def _read_matrix(path: Path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError:
        pass
    # slow path: find the offending cell or report ragged rows
    rows = []
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh)):
            values = []
            for c, cell in enumerate(row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(path, r, c, cell) from None
            rows.append(values)
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        first = len(rows[0])
        bad = next(i for i, r in enumerate(rows) if len(r) != first)
        raise ManifestMismatch("n_dims", first, len(rows[bad]), f"{path} row {bad}")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1)


def read_split(directory: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    directory = Path(directory)
    train = _read_matrix(directory / "train.csv")
    test = _read_matrix(directory / "test.csv")
    labels = _read_matrix(directory / "labels.csv")
    if labels.shape[1] != 1:
        raise ManifestMismatch("labels columns", 1, labels.shape[1], str(directory / "labels.csv"))
    labels = labels[:, 0]
    if not np.all((labels == 0) | (labels == 1)):
        bad = int(np.nonzero((labels != 0) & (labels != 1))[0][0])
        raise ParseError(directory / "labels.csv", bad, 0, str(labels[bad]))
    return train, test, labels.astype(np.int8)


def load_dataset(directory: str | Path, manifest: DatasetManifest | None = None) -> TimeSeriesDataset:
    """Load a dataset directory, requiring its shapes to match ``manifest`` exactly."""
    directory = Path(directory)
    if manifest is None:
        manifest = DatasetManifest.read(directory / "manifest.json")
    train, test, labels = read_split(directory)
    checks = [
        ("n_dims", manifest.n_dims, train.shape[1], "train.csv"),
        ("n_dims", manifest.n_dims, test.shape[1], "test.csv"),
        ("train_rows", manifest.train_rows, train.shape[0], "train.csv"),
        ("test_rows", manifest.test_rows, test.shape[0], "test.csv"),
        ("test_rows", manifest.test_rows, labels.shape[0], "labels.csv"),
    ]
    for name, expected, found, where in checks:
        if expected != found:
            raise ManifestMismatch(name, expected, found, str(directory / where))
    return TimeSeriesDataset(manifest, train, test, labels)


def write_dataset(ds: TimeSeriesDataset, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "train.csv", ds.train, delimiter=",", fmt="%.17g")
    np.savetxt(directory / "test.csv", ds.test, delimiter=",", fmt="%.17g")
    np.savetxt(directory / "labels.csv", ds.labels, fmt="%d")
    with open(directory / "manifest.json", "w") as fh:
        json.dump(ds.manifest.to_dict(), fh, indent=2)


@dataclass
class ValidationReport:
    dataset: str
    fields: dict[str, dict] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(f["pass"] for f in self.fields.values())

    def lines(self) -> list[str]:
        out = []
        for name, f in self.fields.items():
            mark = "PASS" if f["pass"] else "FAIL"
            out.append(f"{mark} {self.dataset}.{name}: expected {f['expected']}, observed {f['observed']}")
        return out


def validate_manifest(ds: TimeSeriesDataset, fraction_tolerance: float = FRACTION_TOLERANCE) -> ValidationReport:
    """Compare observed rows, dims and label mean against the manifest, field by field."""
    return _validation_report(ds.manifest, ds.train, ds.test, ds.labels, fraction_tolerance)


def _validation_report(manifest, train, test, labels, fraction_tolerance=FRACTION_TOLERANCE) -> ValidationReport:
    report = ValidationReport(manifest.name)
    observed = {"train_rows": train.shape[0], "test_rows": test.shape[0], "n_dims": train.shape[1]}
    for key, value in observed.items():
        expected = getattr(manifest, key)
        report.fields[key] = {"expected": expected, "observed": value, "pass": expected == value}
    if test.shape[1] != manifest.n_dims:
        report.fields["test_dims"] = {"expected": manifest.n_dims, "observed": test.shape[1], "pass": False}
    if labels.shape[0] != test.shape[0]:
        report.fields["label_rows"] = {"expected": test.shape[0], "observed": labels.shape[0], "pass": False}
    frac = float(np.mean(labels)) if labels.size else 0.0
    report.fields["anomaly_fraction"] = {
        "expected": manifest.anomaly_fraction,
        "observed": round(frac, 6),
        "pass": abs(frac - manifest.anomaly_fraction) <= fraction_tolerance,
    }
    return report


def validate_directory(directory: str | Path, manifest: DatasetManifest | None = None) -> ValidationReport:
    """Like :func:`validate_manifest`, but mismatches are reported instead of raised.

    Without an explicit manifest the directory's ``manifest.json`` is used.
    """
    directory = Path(directory)
    if manifest is None:
        manifest = DatasetManifest.read(directory / "manifest.json")
    train, test, labels = read_split(directory)
    return _validation_report(manifest, train, test, labels)


def standardize(ds: TimeSeriesDataset, method: str = "zscore") -> tuple[TimeSeriesDataset, Scaling]:
    """Scale both splits with statistics of the train split only.

    ``zscore`` centers and divides by the population standard deviation;
    ``minmax`` maps the train range to [0, 1]; ``none`` is the identity.
    Constant train columns keep scale 1.
    """
    n = ds.n_dims
    if method == "none":
        offset, scale = np.zeros(n), np.ones(n)
    elif method == "zscore":
        offset = ds.train.mean(axis=0)
        scale = ds.train.std(axis=0)
    elif method == "minmax":
        offset = ds.train.min(axis=0)
        scale = ds.train.max(axis=0) - offset
    else:
        raise PreconditionError(f"unknown scaling method {method!r}")
    scale = np.where(scale > 0, scale, 1.0)
    out = TimeSeriesDataset(
        ds.manifest,
        (ds.train - offset) / scale,
        (ds.test - offset) / scale,
        ds.labels.copy(),
    )
    return out, Scaling(method, offset, scale)


def make_windows(m: np.ndarray, cfg: WindowConfig) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous windows of ``cfg.length`` rows, every ``cfg.stride`` rows.

    Returns a read-only ``(n_windows, length, d)`` view and the start indices.
    """
    m = np.asarray(m)
    if m.ndim == 1:
        m = m[:, None]
    t = m.shape[0]
    if t < cfg.length:
        raise SeriesTooShort(f"series of {t} rows is shorter than window length {cfg.length}")
    starts = np.arange(0, t - cfg.length + 1, cfg.stride)
    view = np.lib.stride_tricks.sliding_window_view(m, cfg.length, axis=0)[:: cfg.stride]
    # sliding_window_view puts the window axis last
    return np.moveaxis(view, -1, 1), starts


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a seeded multivariate series with labeled anomalies in the test split.

    Channels mix a few shared latent sinusoids plus AR(1) noise, so channels are
    correlated and a correlation break is observable.  Anomalous segments never
    overlap; the labeled fraction is exactly
    ``sum(count * length) / test_length``.
    """

    n_dims: int = 16
    train_length: int = 10000
    test_length: int = 10000
    seed: int = 0
    spike_count: int = 20
    spike_length: int = 5
    spike_magnitude: float = 6.0
    corr_break_count: int = 15
    corr_break_length: int = 30
    corr_break_magnitude: float = 1.0
    level_shift_count: int = 15
    level_shift_length: int = 30
    level_shift_magnitude: float = 3.0
    channels_per_anomaly: int = 3
    frequencies: tuple[float, ...] = (1 / 50, 1 / 87, 1 / 140, 1 / 23)
    ar_coef: float = 0.7
    noise_scale: float = 0.2
    min_gap: int = 20
    name: str = "synthetic"

    def __post_init__(self) -> None:
        if self.n_dims < 1 or self.train_length < 1 or self.test_length < 1:
            raise PreconditionError("synthetic sizes must be positive")
        frac = self.anomaly_fraction
        if not 0.05 < frac < 0.15:
            raise PreconditionError(f"injected anomaly fraction {frac:.4f} must lie in (0.05, 0.15)")
        segs = self.spike_count + self.corr_break_count + self.level_shift_count
        if self.anomalous_points + (segs + 1) * self.min_gap > self.test_length:
            raise PreconditionError("anomalous segments do not fit in the test split with the requested gaps")

    @property
    def anomalous_points(self) -> int:
        return (
            self.spike_count * self.spike_length
            + self.corr_break_count * self.corr_break_length
            + self.level_shift_count * self.level_shift_length
        )

    @property
    def anomaly_fraction(self) -> float:
        return self.anomalous_points / self.test_length

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["frequencies"] = list(self.frequencies)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "frequencies" in d:
            d["frequencies"] = tuple(float(f) for f in d["frequencies"])
        return cls(**d)


def generate_synthetic(spec: SyntheticSpec) -> TimeSeriesDataset:
    rng = RandomSource(spec.seed)
    total = spec.train_length + spec.test_length
    k = len(spec.frequencies)
    t = np.arange(total, dtype=np.float64)
    phases = rng.uniform(0.0, 2 * np.pi, size=k)
    latent = np.sin(2 * np.pi * np.outer(t, spec.frequencies) + phases)
    loadings = rng.normal((k, spec.n_dims)) / np.sqrt(k)
    signal = latent @ loadings

    eps = rng.normal((total, spec.n_dims), scale=spec.noise_scale)
    noise = np.empty_like(eps)
    noise[0] = eps[0]
    for i in range(1, total):
        noise[i] = spec.ar_coef * noise[i - 1] + eps[i]

    series = signal + noise
    test = series[spec.train_length :].copy()
    test_signal = signal[spec.train_length :]
    channel_std = series[: spec.train_length].std(axis=0)
    signal_std = signal[: spec.train_length].std(axis=0)

    kinds = (
        ["spike"] * spec.spike_count
        + ["corr_break"] * spec.corr_break_count
        + ["level_shift"] * spec.level_shift_count
    )
    lengths = {"spike": spec.spike_length, "corr_break": spec.corr_break_length, "level_shift": spec.level_shift_length}
    order = rng.permutation(len(kinds))
    kinds = [kinds[i] for i in order]
    n_seg = len(kinds)
    slack = spec.test_length - spec.anomalous_points - (n_seg + 1) * spec.min_gap
    extra = rng.generator.multinomial(slack, np.full(n_seg + 1, 1.0 / (n_seg + 1)))
    gaps = extra + spec.min_gap

    labels = np.zeros(spec.test_length, dtype=np.int8)
    n_ch = min(spec.channels_per_anomaly, spec.n_dims)
    pos = 0
    for i, kind in enumerate(kinds):
        pos += int(gaps[i])
        seg = slice(pos, pos + lengths[kind])
        channels = rng.choice(spec.n_dims, n_ch)
        if kind == "spike":
            signs = np.where(rng.uniform(0, 1, size=n_ch) < 0.5, -1.0, 1.0)
            test[seg, channels] += signs * spec.spike_magnitude * channel_std[channels]
        elif kind == "level_shift":
            signs = np.where(rng.uniform(0, 1, size=n_ch) < 0.5, -1.0, 1.0)
            test[seg, channels] += signs * spec.level_shift_magnitude * channel_std[channels]
        else:
            # swap the shared-latent component for white noise of the same scale:
            # the channel keeps its variance but decouples from the others
            sig = test_signal[seg, channels]
            scale = signal_std[channels] * spec.corr_break_magnitude
            test[seg, channels] += rng.normal(sig.shape) * scale - sig
        labels[seg] = 1
        pos += lengths[kind]

    manifest = DatasetManifest(
        name=spec.name,
        n_dims=spec.n_dims,
        train_rows=spec.train_length,
        test_rows=spec.test_length,
        anomaly_fraction=spec.anomaly_fraction,
        source=f"synthetic seed={spec.seed}",
    )
    return TimeSeriesDataset(manifest, series[: spec.train_length].copy(), test, labels)
