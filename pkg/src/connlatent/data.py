"""Subject metadata, feature matrices, QC filtering and splits.

Two on-disk feature formats are understood: a header-less CSV with one
row per subject, and a small binary container (``CONNLAT1`` magic, two
little-endian u64 dimensions, row-major float32 payload).
"""
from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError, ShapeError

FEATURE_MAGIC = b"CONNLAT1"
METADATA_HEADER = ("subject_id", "site_id", "age", "sex", "label", "qc_pass")


class Sex(enum.IntEnum):
    MALE = 0
    FEMALE = 1


class Label(enum.IntEnum):
    CONTROL = 0
    ASD = 1


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    site_id: int
    age: float
    sex: Sex
    label: Label
    qc_pass: bool = True

    def __post_init__(self):
        if not (0 < self.age < 120):
            raise DataError(f"subject {self.subject_id}: age {self.age} outside (0, 120)")
        if self.site_id < 0:
            raise DataError(f"subject {self.subject_id}: negative site id {self.site_id}")


@dataclass(frozen=True)
class Dataset:
    records: tuple
    features: np.ndarray
    feature_dim: int = field(init=False)

    def __post_init__(self):
        records = tuple(self.records)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got shape {feats.shape}")
        if feats.shape[0] != len(records):
            raise ShapeError(
                f"feature matrix has {feats.shape[0]} rows but there are {len(records)} records")
        bad = ~np.isfinite(feats).all(axis=1)
        if bad.any():
            sid = records[int(np.flatnonzero(bad)[0])].subject_id
            raise DataError(f"non-finite feature value for subject {sid}")
        feats.setflags(write=False)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "feature_dim", feats.shape[1])

    def __len__(self):
        return len(self.records)

    @property
    def labels(self):
        return np.array([int(r.label) for r in self.records], dtype=np.int64)

    @property
    def sites(self):
        return np.array([r.site_id for r in self.records], dtype=np.int64)

    @property
    def ages(self):
        return np.array([r.age for r in self.records], dtype=np.float64)

    @property
    def sexes(self):
        return np.array([int(r.sex) for r in self.records], dtype=np.float64)

    @property
    def site_table(self):
        """Mapping site id -> contiguous index, in ascending site order."""
        return {s: i for i, s in enumerate(sorted({r.site_id for r in self.records}))}

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(tuple(self.records[i] for i in indices), self.features[indices])

    def with_features(self, features):
        return Dataset(self.records, features)


@dataclass(frozen=True)
class SplitPlan:
    train_indices: np.ndarray
    test_indices: np.ndarray
    fold_assignments: np.ndarray

    @property
    def k(self):
        return int(self.fold_assignments.max()) + 1 if len(self.fold_assignments) else 0


# ---------------------------------------------------------------------------
# file IO

def read_metadata(path):
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty metadata file", path=path) from None
        if tuple(h.strip() for h in header) != METADATA_HEADER:
            raise ParseError(f"expected header {','.join(METADATA_HEADER)}", line=1, path=path)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(METADATA_HEADER):
                raise ParseError(f"expected {len(METADATA_HEADER)} fields, got {len(row)}",
                                 line=line, path=path)
            sid, site, age, sex, label, qc = (c.strip() for c in row)
            try:
                site = int(site)
                age = float(age)
                sex = {"M": Sex.MALE, "F": Sex.FEMALE}[sex]
                label = Label(int(label))
                qc = {"0": False, "1": True}[qc]
            except (ValueError, KeyError) as exc:
                raise ParseError(f"malformed field ({exc})", line=line, path=path) from None
            try:
                records.append(SubjectRecord(sid, site, age, sex, label, qc))
            except DataError as exc:
                raise ParseError(str(exc), line=line, path=path) from None
    return records


def write_metadata(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METADATA_HEADER)
        for r in records:
            w.writerow([r.subject_id, r.site_id, repr(float(r.age)),
                        "M" if r.sex == Sex.MALE else "F", int(r.label), int(r.qc_pass)])


def read_matrix(path):
    """Read a feature (or time-series) matrix, auto-detecting the format."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(FEATURE_MAGIC))
    if head == FEATURE_MAGIC:
        return _read_binary_matrix(path)
    return _read_csv_matrix(path)


def _read_binary_matrix(path):
    raw = Path(path).read_bytes()
    off = len(FEATURE_MAGIC)
    if len(raw) < off + 16:
        raise ParseError("truncated binary header", path=path)
    rows, cols = struct.unpack_from("<QQ", raw, off)
    off += 16
    expected = rows * cols * 4
    if len(raw) - off != expected:
        raise ShapeError(f"{path}: header declares {rows}x{cols} but payload holds "
                         f"{(len(raw) - off) // 4} floats")
    data = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=off)
    return data.reshape(rows, cols).astype(np.float64)


def _read_csv_matrix(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ParseError(f"malformed number ({exc})", line=lineno, path=path) from None
            if len(rows[-1]) != len(rows[0]):
                raise ShapeError(f"{path}: line {lineno} has {len(rows[-1])} columns, "
                                 f"expected {len(rows[0])}")
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def write_matrix(path, matrix, fmt="binary"):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {matrix.shape}")
    if fmt == "binary":
        rows, cols = matrix.shape
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<QQ", rows, cols))
            fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            for row in matrix:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ConfigError(f"unknown matrix format {fmt!r}")


def load_dataset(metadata_path, features_path):
    records = read_metadata(metadata_path)
    features = read_matrix(features_path)
    if features.shape[0] != len(records):
        raise ShapeError(f"{features_path}: {features.shape[0]} feature rows for "
                         f"{len(records)} metadata rows")
    return Dataset(tuple(records), features)


def save_dataset(dataset, metadata_path, features_path, fmt="binary"):
    write_metadata(metadata_path, dataset.records)
    write_matrix(features_path, dataset.features, fmt=fmt)


# ---------------------------------------------------------------------------
# filtering and splitting

def qc_filter(d):
    keep = [i for i, r in enumerate(d.records) if r.qc_pass]
    return d.subset(keep)


def _allocate(counts, total):
    """Split ``total`` across classes proportionally (largest remainder)."""
    counts = np.asarray(counts, dtype=np.float64)
    exact = counts * total / counts.sum()
    alloc = np.floor(exact).astype(np.int64)
    short = total - alloc.sum()
    order = np.argsort(-(exact - alloc), kind="stable")
    alloc[order[:short]] += 1
    return alloc


def stratified_folds(labels, k, rng):
    """Assign each position a fold id in [0, k), stratified by label.

    Class members are shuffled and dealt round-robin, one class after the
    other, so every fold gets within one member of its share of each class.
    """
    labels = np.asarray(labels)
    if k < 1 or k > len(labels):
        raise ConfigError(f"k={k} folds requested for {len(labels)} samples")
    folds = np.empty(len(labels), dtype=np.int64)
    pos = 0
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        folds[members] = (pos + np.arange(len(members))) % k
        pos += len(members)
    return folds


def make_split(d, test_fraction, k, seed):
    """Stratified train/test split plus stratified fold ids for the train part."""
    if len(d) == 0:
        raise ConfigError("cannot split an empty dataset")
    return split_labels(d.labels, test_fraction, k, seed)


def split_labels(labels, test_fraction, k, seed):
    """`make_split` on a bare label vector."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ConfigError("cannot split an empty dataset")
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    n_test = int(round(len(labels) * test_fraction))
    per_class = _allocate([np.sum(labels == c) for c in classes], n_test)
    test = []
    for cls, m in zip(classes, per_class):
        members = rng.permutation(np.flatnonzero(labels == cls))
        test.extend(members[:m].tolist())
    test = np.sort(np.array(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(labels)), test)
    if k > len(train):
        raise ConfigError(f"k={k} exceeds training set size {len(train)}")
    folds = stratified_folds(labels[train], k, rng)
    return SplitPlan(train, test, folds)


# ---------------------------------------------------------------------------
# synthetic data

def site_offsets(n_sites, site_shift):
    """Additive offset per site: evenly spaced on [-site_shift, site_shift]."""
    if n_sites == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n_sites) * site_shift


def synth_dataset(n_subjects, n_sites, feature_dim, signal_dim, site_shift=0.0,
                  effect_size=0.0, seed=0):
    """Draw a multi-site dataset with a planted diagnostic signal.

    Features are standard normal, shifted per site by a constant offset on
    every feature, and ASD subjects get ``effect_size`` added to the first
    ``signal_dim`` features. Sites are dealt out evenly so each one holds
    ``n_subjects // n_sites`` or one more subjects.
    """
    if n_subjects < 1:
        raise ConfigError("synth_dataset needs at least one subject")
    if n_sites < 1:
        raise ConfigError("synth_dataset needs at least one site")
    if not 0 <= signal_dim <= feature_dim:
        raise ConfigError(f"signal_dim {signal_dim} must be within [0, feature_dim={feature_dim}]")
    rng = np.random.default_rng(seed)
    sites = rng.permutation(np.arange(n_subjects) % n_sites)
    labels = rng.integers(0, 2, size=n_subjects)
    ages = rng.uniform(5.0, 62.0, size=n_subjects)
    female = rng.random(n_subjects) >= 0.79
    features = rng.standard_normal((n_subjects, feature_dim))
    features += site_offsets(n_sites, site_shift)[sites][:, None]
    features[:, :signal_dim] += effect_size * labels[:, None]
    width = max(4, int(math.log10(max(n_subjects, 1))) + 1)
    records = tuple(
        SubjectRecord(f"sub-{i:0{width}d}", int(sites[i]), float(ages[i]),
                      Sex.FEMALE if female[i] else Sex.MALE, Label(int(labels[i])), True)
        for i in range(n_subjects))
    return Dataset(records, features)
