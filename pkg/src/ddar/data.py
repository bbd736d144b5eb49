"""Synthetic 2-D datasets, CSV I/O, standardization and stratified splits."""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .exceptions import ContractError, DataError
from .rng import Rng

#: centre of the noiseless two-moons point cloud
TWO_MOONS_CENTER = (0.5, 0.25)
NORM_STD_FLOOR = 1e-8


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class Dataset:
    """Features ``X`` (n x d) and integer labels ``y`` (-1 marks unlabeled OOD rows)."""

    X: np.ndarray
    y: np.ndarray
    name: str = ""
    norm_stats: Optional[NormStats] = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]} labels")
        if np.any(self.y < -1):
            raise DataError("labels must be -1 (unlabeled) or non-negative")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def num_classes(self) -> int:
        labeled = self.y[self.y >= 0]
        return int(labeled.max()) + 1 if len(labeled) else 0

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx])


def gen_two_moons(n_per_class: int, noise_std: float, seed: int) -> Dataset:
    """Two interleaving half circles.

    Outer moon ``(cos t, sin t)`` (label 0) and inner moon
    ``(1 - cos t, 1 - sin t - 0.5)`` (label 1) with ``t`` evenly spaced on
    ``[0, pi]``, the parametrization used by scikit-learn's ``make_moons``,
    plus isotropic Gaussian noise. Rows are ordered class 0 then class 1.
    """
    if n_per_class < 1:
        raise ContractError(f"n_per_class must be >= 1, got {n_per_class}")
    if noise_std < 0:
        raise ContractError(f"noise_std must be >= 0, got {noise_std}")
    t = np.linspace(0.0, np.pi, n_per_class)
    outer = np.column_stack([np.cos(t), np.sin(t)])
    inner = np.column_stack([1.0 - np.cos(t), 1.0 - np.sin(t) - 0.5])
    X = np.vstack([outer, inner])
    y = np.repeat([0, 1], n_per_class)
    if noise_std > 0:
        X = X + Rng(seed).normal(X.shape, std=noise_std)
    return Dataset(X, y, name="two-moons")


def gen_ood_ring(
    n: int, radius: float, jitter: float, seed: int, center=TWO_MOONS_CENTER
) -> Dataset:
    """``n`` points at evenly spaced angles on a circle around ``center``, labeled -1."""
    if radius <= 0:
        raise ContractError(f"radius must be > 0, got {radius}")
    if jitter < 0:
        raise ContractError(f"jitter must be >= 0, got {jitter}")
    angles = 2.0 * np.pi * np.arange(n) / n
    X = np.asarray(center, dtype=np.float64) + radius * np.column_stack([np.cos(angles), np.sin(angles)])
    if jitter > 0:
        X = X + Rng(seed).normal(X.shape, std=jitter)
    return Dataset(X, -np.ones(n, dtype=np.int64), name="ring")


def gen_blobs(centers: Sequence[Sequence[float]], n_per_center: int, std: float, seed: int) -> Dataset:
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if centers.shape[0] < 1 or centers.size == 0:
        raise ContractError("need at least one center")
    if std < 0:
        raise ContractError(f"std must be >= 0, got {std}")
    X = np.repeat(centers, n_per_center, axis=0)
    if std > 0:
        X = X + Rng(seed).normal(X.shape, std=std)
    y = np.repeat(np.arange(len(centers)), n_per_center)
    return Dataset(X, y, name="blobs")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_to_csv_text(dataset: Dataset, with_labels: bool = True) -> str:
    d = dataset.X.shape[1]
    header = [f"x{i + 1}" for i in range(d)] + (["label"] if with_labels else [])
    lines = [",".join(header)]
    for row, label in zip(dataset.X, dataset.y):
        cells = [repr(float(v)) for v in row]
        if with_labels:
            cells.append(str(int(label)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def save_csv(dataset: Dataset, path, with_labels: bool = True) -> None:
    """Header ``x1,...,xd[,label]``; floats written with round-trip precision."""
    atomic_write_text(path, dataset_to_csv_text(dataset, with_labels))


def load_csv(path, has_labels: bool = True, name: str = "") -> Dataset:
    """Parse a file written by :func:`save_csv`.

    With ``has_labels=False`` the ``label`` column is optional; rows get
    label ``-1`` when it is absent.

    Raises
    ------
    DataError
        On a missing label column or a malformed row (the line number is
        included in the message).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if has_labels and "label" not in header:
            raise DataError(f"{path}: missing 'label' column")
        # an unlabeled read still skips a label column rather than treating it as a feature
        label_col = header.index("label") if "label" in header else None
        feat_cols = [i for i in range(len(header)) if i != label_col]
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[i]) for i in feat_cols])
                labels.append(int(row[label_col]) if label_col is not None else -1)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(feat_cols))
    return Dataset(X, np.asarray(labels, dtype=np.int64), name=name or os.path.basename(os.fspath(path)))


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def normalize_fit(dataset: Dataset) -> NormStats:
    """Per-column mean and standard deviation (floored at 1e-8)."""
    if len(dataset) < 2:
        raise ContractError("normalize_fit needs at least 2 rows")
    mean = dataset.X.mean(axis=0)
    std = np.maximum(dataset.X.std(axis=0), NORM_STD_FLOOR)
    return NormStats(mean=mean, std=std)


def normalize_apply(dataset: Dataset, stats: NormStats) -> Dataset:
    """Standardize with given statistics; OOD sets must reuse in-distribution stats."""
    return replace(dataset, X=(dataset.X - stats.mean) / stats.std, norm_stats=stats)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded stratified split; each class contributes ``round(n_c * test_fraction)`` test rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = Rng(seed)
    train_idx, test_idx = [], []
    for c in np.unique(dataset.y):
        members = np.flatnonzero(dataset.y == c)
        if len(members) < 2:
            raise DataError(f"class {c} has fewer than 2 samples")
        members = members[rng.permutation(len(members))]
        n_test = int(round(len(members) * test_fraction))
        n_test = min(max(n_test, 1), len(members) - 1)
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return dataset.subset(train_idx), dataset.subset(test_idx)
