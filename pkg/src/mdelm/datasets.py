"""Labelled datasets: CSV IO, focus-class subsampling, synthetic fixtures."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import FeatureMatrix, read_feature_csv, write_feature_csv
from .errors import ValidationError


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray
    n_classes: int
    ids: list[str]
    feature_names: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.X.shape[0]
        if self.labels.shape != (n,) or len(self.ids) != n:
            raise ValidationError("dataset arrays have inconsistent lengths")
        if self.X.shape[1] != len(self.feature_names):
            raise ValidationError("feature name count does not match columns")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            bad = int(np.flatnonzero((self.labels < 0) | (self.labels >= self.n_classes))[0])
            raise ValidationError(
                f"row {bad + 1} (id {self.ids[bad]!r}) has label {self.labels[bad]} "
                f"outside [0, {self.n_classes})"
            )

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.X[rows], self.labels[rows], self.n_classes,
                       [self.ids[i] for i in rows], list(self.feature_names))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and self.ids == other.ids
            and self.feature_names == other.feature_names
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.X, other.X)
        )


def load_csv(path, n_classes: int | None = None) -> Dataset:
    """Read a CSV with columns ``id, label, <features...>``.

    ``n_classes`` defaults to ``max(label) + 1``.
    """
    fm = read_feature_csv(path)
    if fm.labels is None:
        raise ValidationError(f"{path}: missing 'label' column (second column)")
    C = n_classes if n_classes is not None else int(fm.labels.max(initial=-1)) + 1
    try:
        return Dataset(fm.values, fm.labels, C, fm.sample_ids, fm.feature_names)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def save_csv(ds: Dataset, path) -> None:
    write_feature_csv(FeatureMatrix(ds.X, ds.feature_names, ds.ids, ds.labels), path)


def subsample_focus(ds: Dataset, focus_class: int, n_other: int, seed: int,
                    stratified: bool = False) -> Dataset:
    """Keep every focus-class sample plus ``n_other`` random others.

    Others are drawn uniformly from the pooled non-focus samples, or
    proportionally per class when ``stratified``. Rows keep their original
    relative order.
    """
    focus = np.flatnonzero(ds.labels == focus_class)
    other = np.flatnonzero(ds.labels != focus_class)
    if focus.size == 0:
        raise ValidationError(f"focus class {focus_class} has no samples")
    if not 0 <= n_other <= other.size:
        raise ValidationError(
            f"n_other={n_other} but only {other.size} non-focus samples exist"
        )
    rng = np.random.default_rng(seed)
    if stratified:
        picked = _stratified_pick(ds.labels[other], other, n_other, rng)
    else:
        picked = rng.choice(other, size=n_other, replace=False)
    rows = np.sort(np.concatenate([focus, picked]))
    return ds.take(rows)


def _stratified_pick(lab, pool, n_take, rng):
    classes, counts = np.unique(lab, return_counts=True)
    exact = counts * n_take / counts.sum()
    quota = np.floor(exact).astype(int)
    # largest remainders get the leftover slots
    for c in np.argsort(-(exact - quota), kind="stable")[: n_take - quota.sum()]:
        quota[c] += 1
    parts = [rng.choice(pool[lab == c], size=q, replace=False)
             for c, q in zip(classes, quota)]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 300
    n_classes: int = 4
    dim: int = 20
    spread: float = 1.0
    center_scale: float = 1.0
    n_noise: int = 30
    flip_fraction: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_fraction < 0.5:
            raise ValidationError(f"flip_fraction {self.flip_fraction} not in [0, 0.5)")
        if self.n_classes < 2 or self.n_per_class < 1 or self.dim < 1 or self.n_noise < 0:
            raise ValidationError("invalid synthetic dataset sizes")
        if self.spread <= 0 or self.center_scale <= 0:
            raise ValidationError("spread and center_scale must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SynthResult:
    clean: Dataset
    flipped: Dataset
    hidden_flips: list[int]  # row indices
    spec: SynthSpec

    @property
    def hidden_flip_ids(self) -> list[str]:
        return [self.clean.ids[i] for i in self.hidden_flips]

    def truth(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "hidden_flip_ids": self.hidden_flip_ids,
            "clean_labels": {self.clean.ids[i]: int(self.clean.labels[i])
                             for i in self.hidden_flips},
        }


def synth_blobs(spec: SynthSpec) -> SynthResult:
    """Gaussian class clusters plus pure-noise columns, with hidden label flips."""
    rng = np.random.default_rng(spec.seed)
    C, m = spec.n_classes, spec.n_per_class
    centers = rng.normal(0.0, spec.center_scale, size=(C, spec.dim))
    labels = np.repeat(np.arange(C), m)
    informative = centers[labels] + spec.spread * rng.normal(size=(C * m, spec.dim))
    noise = rng.normal(size=(C * m, spec.n_noise))
    X = np.hstack([informative, noise])
    n = X.shape[0]
    ids = [f"s{i:05d}" for i in range(n)]
    names = [f"f{j}" for j in range(spec.dim)] + [f"noise{j}" for j in range(spec.n_noise)]
    clean = Dataset(X, labels, C, ids, names)

    n_flip = math.ceil(spec.flip_fraction * n - 1e-9) if spec.flip_fraction > 0 else 0
    flips = np.sort(rng.choice(n, size=n_flip, replace=False))
    flipped_labels = labels.copy()
    shift = rng.integers(1, C, size=n_flip)
    flipped_labels[flips] = (labels[flips] + shift) % C
    flipped = Dataset(X.copy(), flipped_labels, C, list(ids), list(names))
    return SynthResult(clean, flipped, flips.tolist(), spec)


def save_truth(result: SynthResult, path) -> None:
    Path(path).write_text(json.dumps(result.truth(), indent=2, sort_keys=True) + "\n")
