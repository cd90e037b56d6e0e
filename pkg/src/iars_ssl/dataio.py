"""Dataset loading, normalization, batching and synthetic data generation.

Supports the UEA ``.ts`` sparse-header format and UCR-style delimited files
(label first, then the univariate values). Only equal-length datasets with
no missing values are accepted; ``'?'`` entries are a hard error unless the
linear-interpolation fill flag is set, because silent imputation would
contaminate timing comparisons downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .numerics import Tensor


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass
class TimeSeriesDataset:
    """N labeled or unlabeled series of shape N×D×L plus metadata."""

    values: Tensor  # N×D×L
    labels: Optional[np.ndarray] = None  # N integer class ids
    class_names: Optional[list] = None
    name: str = ""
    split: str = "train"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.data.ndim != 3:
            raise DataError(f"dataset values must be N×D×L, got shape {self.values.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != self.n:
                raise DataError(f"{len(self.labels)} labels for {self.n} series")
            if self.num_classes and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise DataError("labels outside [0, num_classes)")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[2]

    @property
    def num_classes(self) -> int:
        if self.class_names is not None:
            return len(self.class_names)
        if self.labels is not None:
            return int(self.labels.max()) + 1
        return 0


@dataclass
class Batch:
    """A training slice: values B×D×L plus the source row ids."""

    values: Tensor
    indices: np.ndarray


# ---------------------------------------------------------------------------
# UEA .ts format


def parse_ts(text: str, split: str = "train", fill_missing: bool = False) -> TimeSeriesDataset:
    """Parse UEA ``.ts`` content into a dataset.

    Header lines start with ``@`` (e.g. ``@problemName``, ``@classLabel``)
    and end with ``@data``. Each record holds its dimensions separated by
    ``:`` with comma-separated values; when ``@classLabel true`` was
    declared, the class label follows the final ``:``. Label indices are
    resolved by the declared class order. ``'?'`` values are an error unless
    ``fill_missing`` requests linear interpolation.
    """
    name = ""
    class_names: Optional[list] = None
    has_labels = False
    metadata: dict = {}
    lines = text.splitlines()
    data_start = None
    for ln, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not line.startswith("@"):
            raise DataError(f"line {ln}: expected header or @data, got {line[:40]!r}")
        key, _, rest = line.partition(" ")
        key = key[1:].lower()
        if key == "data":
            data_start = ln
            break
        if key == "problemname":
            name = rest.strip()
        elif key == "classlabel":
            parts = rest.split()
            if not parts:
                raise DataError(f"line {ln}: @classLabel needs true/false")
            has_labels = parts[0].lower() == "true"
            class_names = parts[1:] if has_labels else None
        else:
            metadata[key] = rest.strip()
    if data_start is None:
        raise DataError("no @data section found")

    records: list = []
    labels: list = []
    n_dims = None
    length = None
    for ln, raw in enumerate(lines[data_start:], start=data_start + 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(":")
        if has_labels:
            if len(parts) < 2:
                raise DataError(f"line {ln}: record is missing its class label")
            label = parts[-1].strip()
            if class_names and label not in class_names:
                raise DataError(f"line {ln}: unknown class label {label!r} "
                                f"(declared: {class_names})")
            labels.append(class_names.index(label) if class_names else label)
            parts = parts[:-1]
        dims = []
        for d_idx, chunk in enumerate(parts):
            vals = []
            for v in chunk.split(","):
                v = v.strip()
                if v == "?":
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(v))
                except ValueError:
                    raise DataError(f"line {ln}: non-numeric value {v!r} in dimension {d_idx}") from None
            dims.append(vals)
        lens = {len(v) for v in dims}
        if len(lens) != 1:
            raise DataError(f"line {ln}: ragged dimension lengths {sorted(len(v) for v in dims)}")
        if n_dims is None:
            n_dims, length = len(dims), lens.pop()
        else:
            if len(dims) != n_dims:
                raise DataError(f"line {ln}: expected {n_dims} dimensions, got {len(dims)}")
            if lens.pop() != length:
                raise DataError(f"line {ln}: series length differs from {length}")
        records.append(dims)
    if not records:
        raise DataError("no records after @data")

    values = np.asarray(records, dtype=np.float64)  # N×D×L
    if np.isnan(values).any():
        if fill_missing:
            values = _interpolate_missing(values)
        if np.isnan(values).any():
            raise DataError("dataset contains missing ('?') values; "
                            "pass fill_missing=True to interpolate")
    return TimeSeriesDataset(
        values=Tensor(values),
        labels=np.asarray(labels, dtype=np.int64) if has_labels else None,
        class_names=class_names,
        name=name,
        split=split,
        metadata=metadata,
    )


def _interpolate_missing(values: np.ndarray) -> np.ndarray:
    out = values.copy()
    for i in range(out.shape[0]):
        for d in range(out.shape[1]):
            row = out[i, d]
            bad = np.isnan(row)
            if bad.all():
                continue  # left NaN; caller errors out
            if bad.any():
                idx = np.arange(len(row))
                row[bad] = np.interp(idx[bad], idx[~bad], row[~bad])
    return out


def write_ts(dataset: TimeSeriesDataset) -> str:
    """Serialize back to ``.ts`` text; floats use repr so round-trips are exact."""
    lines = [f"@problemName {dataset.name or 'unnamed'}",
             f"@univariate {'true' if dataset.d == 1 else 'false'}"]
    if dataset.labels is not None:
        names = dataset.class_names or [str(c) for c in range(dataset.num_classes)]
        lines.append("@classLabel true " + " ".join(names))
    else:
        lines.append("@classLabel false")
    lines.append("@data")
    vals = dataset.values.data
    for i in range(dataset.n):
        dims = [",".join(repr(float(x)) for x in vals[i, d]) for d in range(dataset.d)]
        rec = ":".join(dims)
        if dataset.labels is not None:
            names = dataset.class_names or [str(c) for c in range(dataset.num_classes)]
            rec += ":" + names[int(dataset.labels[i])]
        lines.append(rec)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# UCR-style delimited format


def parse_ucr_delimited(text: str, delimiter: str = "\t", split: str = "train") -> TimeSeriesDataset:
    """One univariate series per line: label first, values after."""
    rows = [r for r in text.splitlines() if r.strip()]
    if not rows:
        raise DataError("empty dataset text")
    raw_labels: list = []
    series: list = []
    width = None
    for ln, row in enumerate(rows, start=1):
        fields = row.split(delimiter)
        if len(fields) < 2:
            raise DataError(f"line {ln}: need a label and at least one value")
        raw_labels.append(fields[0].strip())
        vals = []
        for col, f in enumerate(fields[1:], start=2):
            try:
                vals.append(float(f))
            except ValueError:
                raise DataError(f"line {ln}, column {col}: non-numeric value {f.strip()!r}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DataError(f"line {ln}: {len(vals)} values, expected {width}")
        series.append(vals)
    try:
        order = sorted(set(raw_labels), key=float)
    except ValueError:
        order = sorted(set(raw_labels))
    labels = np.asarray([order.index(x) for x in raw_labels], dtype=np.int64)
    values = np.asarray(series, dtype=np.float64)[:, None, :]  # N×1×L
    return TimeSeriesDataset(values=Tensor(values), labels=labels,
                             class_names=list(order), split=split)


# ---------------------------------------------------------------------------
# preprocessing / generation / batching


def zscore(train: TimeSeriesDataset, apply_to: TimeSeriesDataset) -> TimeSeriesDataset:
    """Per-channel standardization using train-split statistics only.

    Channels with train std below 1e-8 are centered but not scaled.
    """
    if train.d != apply_to.d:
        raise DataError(f"channel count mismatch: train D={train.d}, target D={apply_to.d}")
    x = train.values.data
    mean = x.mean(axis=(0, 2), keepdims=True)  # 1×D×1
    std = x.std(axis=(0, 2), keepdims=True)
    scale = np.where(std < 1e-8, 1.0, std)
    out = (apply_to.values.data - mean) / scale
    return TimeSeriesDataset(values=Tensor(out), labels=apply_to.labels,
                             class_names=apply_to.class_names, name=apply_to.name,
                             split=apply_to.split, metadata=dict(apply_to.metadata))


def synth_classification(n_per_class: int, d: int, l: int, num_classes: int,
                         seed: int, noise_sigma: float = 0.3) -> TimeSeriesDataset:
    """Balanced sinusoid classes: class c gets frequency 4*(c+1) cycles with
    per-(instance, channel) random phase and iid Gaussian noise."""
    if l < 8:
        raise DataError(f"series length must be >= 8 for a useful pyramid, got {l}")
    if 4 * num_classes > l // 2:
        raise DataError(f"{num_classes} classes need length >= {8 * num_classes} "
                        "to keep class frequencies below Nyquist")
    rng = np.random.default_rng(seed)
    t = np.arange(l) / l
    values = np.empty((n_per_class * num_classes, d, l), dtype=np.float64)
    labels = np.empty(n_per_class * num_classes, dtype=np.int64)
    row = 0
    for c in range(num_classes):
        freq = 4 * (c + 1)
        for _ in range(n_per_class):
            phase = rng.uniform(0.0, 2 * np.pi, size=(d, 1))
            clean = np.sin(2 * np.pi * freq * t[None, :] + phase)
            noise = rng.normal(0.0, noise_sigma, size=(d, l)) if noise_sigma > 0 else 0.0
            values[row] = clean + noise
            labels[row] = c
            row += 1
    return TimeSeriesDataset(values=Tensor(values), labels=labels,
                             class_names=[str(c) for c in range(num_classes)],
                             name=f"synth{num_classes}c", split="train")


def batches(dataset: TimeSeriesDataset, batch_size: int, seed=None,
            shuffle: bool = False) -> list[Batch]:
    """Partition [0, N) into batches; the final partial batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(dataset.n)
    if shuffle:
        order = np.random.default_rng(seed).permutation(dataset.n)
    out = []
    for start in range(0, dataset.n, batch_size):
        idx = order[start:start + batch_size]
        out.append(Batch(values=Tensor(dataset.values.data[idx]), indices=idx))
    return out
