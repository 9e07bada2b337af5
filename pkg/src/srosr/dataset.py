"""Labeled feature datasets: IDX/CSV ingestion, normalization, open-set trial sampling.

Feature data is held column-per-sample (an M x N matrix for N samples of
dimension M) because downstream sparse coding treats training samples as
dictionary columns.  Class labels are opaque strings; numeric labels from
IDX files are stringified on load.

All randomness goes through ``numpy.random.default_rng`` (PCG64), so trials
are reproducible across platforms for a fixed seed.
"""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(eq=False)
class LabeledDataset:
    """Feature matrix (M x N, column per sample) with per-column class labels."""

    features: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64, order="C")
        if feats.ndim != 2:
            raise DataFormatError(f"features must be 2-D, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise DataFormatError("features contain non-finite values")
        labels = tuple(str(l) for l in self.labels)
        if len(labels) != feats.shape[1]:
            raise DataFormatError(
                f"{len(labels)} labels for {feats.shape[1]} feature columns")
        feats.flags.writeable = False
        self.features = feats
        self.labels = labels

    @property
    def n_features(self) -> int:
        return self.features.shape[0]

    @property
    def n_samples(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> tuple[str, ...]:
        """Distinct labels in sorted order (the stable class order used everywhere)."""
        return tuple(sorted(set(self.labels)))

    def class_indices(self, label: str) -> np.ndarray:
        """Column indices of all samples with the given label, ascending."""
        return np.flatnonzero(np.array(self.labels) == label)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(self.features[:, idx],
                              tuple(self.labels[i] for i in idx))


@dataclass(eq=False)
class OpenSetTrial:
    """One randomized train/test partition with disjoint known and open classes.

    ``train_indices``/``test_indices`` are column indices into the source
    dataset, kept so partition integrity can be audited.
    """

    train: LabeledDataset
    test: LabeledDataset
    known_classes: frozenset[str]
    open_classes: frozenset[str]
    seed: int
    train_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    test_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))

    def __post_init__(self):
        if self.known_classes & self.open_classes:
            raise ValueError("known and open classes overlap: "
                             f"{sorted(self.known_classes & self.open_classes)}")
        if not set(self.train.labels) <= self.known_classes:
            raise ValueError("train split contains labels outside the known classes")
        allowed = self.known_classes | self.open_classes
        if not set(self.test.labels) <= allowed:
            raise ValueError("test split contains labels outside known+open classes")
        overlap = set(self.train_indices.tolist()) & set(self.test_indices.tolist())
        if overlap:
            raise ValueError(f"sample indices appear in both splits: {sorted(overlap)[:5]}")


def _read_idx_payload(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def load_idx(image_path, label_path, scale: bool = True) -> LabeledDataset:
    """Load an IDX image/label file pair (the MNIST container format).

    Images are flattened row-major to rows*cols-dimensional columns.  With
    ``scale`` (default) pixel bytes are mapped to [0, 1] by dividing by 255;
    pass ``scale=False`` to keep raw byte values.

    Raises :class:`DataFormatError` on a bad magic number, truncated payload,
    or image/label count mismatch.  Gzipped files are handled transparently.
    """
    img = _read_idx_payload(image_path)
    lab = _read_idx_payload(label_path)

    if len(img) < 16:
        raise DataFormatError(f"{image_path}: truncated IDX image header")
    magic, n_img, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(
            f"{image_path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
    if len(img) - 16 < n_img * rows * cols:
        raise DataFormatError(f"{image_path}: truncated IDX image payload "
                              f"({len(img) - 16} bytes for {n_img}x{rows}x{cols})")

    if len(lab) < 8:
        raise DataFormatError(f"{label_path}: truncated IDX label header")
    lmagic, n_lab = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABEL_MAGIC:
        raise DataFormatError(
            f"{label_path}: bad label magic 0x{lmagic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")
    if len(lab) - 8 < n_lab:
        raise DataFormatError(f"{label_path}: truncated IDX label payload")
    if n_img != n_lab:
        raise DataFormatError(f"image/label count mismatch: {n_img} images, {n_lab} labels")

    pixels = np.frombuffer(img, dtype=np.uint8, count=n_img * rows * cols, offset=16)
    feats = pixels.reshape(n_img, rows * cols).T.astype(np.float64)
    if scale:
        feats /= 255.0
    labels = tuple(str(int(b)) for b in lab[8:8 + n_lab])
    return LabeledDataset(feats, labels)


def load_csv(path, label_column: str) -> LabeledDataset:
    """Load a CSV table with one sample per row and a designated label column.

    A header row is detected by the presence of any non-numeric cell in the
    first row; headerless files address the label column by integer index.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DataFormatError(f"{path}: empty CSV file")

    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"{path}: ragged row {i} ({len(row)} cells, expected {width})")

    def _is_float(cell: str) -> bool:
        try:
            float(cell)
            return True
        except ValueError:
            return False

    has_header = not all(_is_float(c) for c in rows[0])
    if has_header:
        header, body = rows[0], rows[1:]
        if label_column in header:
            label_idx = header.index(label_column)
        else:
            raise DataFormatError(f"{path}: no column named {label_column!r} in header {header}")
    else:
        body = rows
        try:
            label_idx = int(label_column)
        except ValueError:
            raise DataFormatError(
                f"{path}: headerless CSV needs an integer label column, got {label_column!r}")
        if not -width <= label_idx < width:
            raise DataFormatError(f"{path}: label column index {label_idx} out of range")
    if not body:
        raise DataFormatError(f"{path}: CSV has a header but no data rows")

    label_idx %= width
    labels = []
    feats = np.empty((width - 1, len(body)), dtype=np.float64)
    for j, row in enumerate(body):
        labels.append(row[label_idx])
        k = 0
        for c, cell in enumerate(row):
            if c == label_idx:
                continue
            try:
                feats[k, j] = float(cell)
            except ValueError:
                raise DataFormatError(f"{path}: non-numeric feature cell {cell!r} "
                                      f"at row {j}, column {c}")
            k += 1
    return LabeledDataset(feats, tuple(labels))


def save_csv(data: LabeledDataset, path, label_column: str = "label") -> None:
    """Write a dataset as CSV (one sample per row); inverse of :func:`load_csv`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(data.n_features)] + [label_column])
        for j in range(data.n_samples):
            writer.writerow([repr(v) for v in data.features[:, j]] + [data.labels[j]])


def normalize_columns(data: LabeledDataset) -> LabeledDataset:
    """Rescale every feature column to unit Euclidean norm.

    Raises ValueError naming the first all-zero column, which cannot be
    normalized.
    """
    norms = np.linalg.norm(data.features, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"cannot normalize all-zero column {zero[0]}")
    return LabeledDataset(data.features / norms, data.labels)


def sample_open_set_trial(data: LabeledDataset, n_known: int, n_open: int,
                          train_fraction: float, seed: int) -> OpenSetTrial:
    """Draw a randomized open-set trial.

    ``n_known`` classes are drawn uniformly without replacement; within each,
    floor(train_fraction * N_i) samples go to train and the rest to test.
    All samples of ``n_open`` further classes go to test only.  Deterministic
    for a fixed seed (PCG64).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if n_known < 1 or n_open < 0:
        raise ValueError("need n_known >= 1 and n_open >= 0")
    classes = data.classes
    if n_known + n_open > len(classes):
        raise ValueError(f"dataset has {len(classes)} classes, "
                         f"cannot draw {n_known} known + {n_open} open")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(classes))
    known = tuple(classes[i] for i in perm[:n_known])
    open_ = tuple(classes[i] for i in perm[n_known:n_known + n_open])

    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for cls in known:
        idx = data.class_indices(cls)
        n_train = math.floor(train_fraction * idx.size)
        if n_train == 0 or n_train == idx.size:
            raise ValueError(f"class {cls!r} has {idx.size} samples; "
                             f"train_fraction {train_fraction} leaves an empty split")
        shuffled = rng.permutation(idx)
        train_idx.append(shuffled[:n_train])
        test_idx.append(shuffled[n_train:])
    for cls in open_:
        test_idx.append(data.class_indices(cls))

    train_indices = np.concatenate(train_idx)
    test_indices = np.concatenate(test_idx)
    return OpenSetTrial(
        train=data.subset(train_indices),
        test=data.subset(test_indices),
        known_classes=frozenset(known),
        open_classes=frozenset(open_),
        seed=seed,
        train_indices=train_indices,
        test_indices=test_indices,
    )


def openness(n_ta: int, n_tg: int, n_te: int) -> float:
    """How far a recognition problem departs from the closed world, in [0, 1).

    Computed as 1 - sqrt(2 * n_ta / (n_tg + n_te)) from the number of
    training classes, target classes, and testing classes.  Zero means a
    fully closed problem.
    """
    if min(n_ta, n_tg, n_te) <= 0:
        raise ValueError("class counts must be positive")
    if 2 * n_ta > n_tg + n_te:
        raise ValueError(f"2*n_ta={2 * n_ta} exceeds n_tg+n_te={n_tg + n_te}; "
                         "openness would be imaginary")
    return 1.0 - math.sqrt(2.0 * n_ta / (n_tg + n_te))
