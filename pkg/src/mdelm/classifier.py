"""Elastic-net linear classifier trained by SGD, with stratified CV.

One-vs-rest logistic loss per class. The L1 part of the penalty is applied
with cumulative-penalty soft thresholding, so weights reach exact zeros and
the selected feature set is well defined.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DivergenceError, ValidationError


def balanced_class_weights(labels, n_classes: int) -> np.ndarray:
    """Per-sample weights ``n / (C * n_c)``; every class gets equal total weight."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes)
    if counts.size > n_classes:
        raise ValidationError(f"labels outside [0, {n_classes})")
    if np.any(counts == 0):
        empty = np.flatnonzero(counts == 0).tolist()
        raise ValidationError(f"classes {empty} have no samples")
    per_class = labels.size / (n_classes * counts)
    return per_class[labels]


@dataclass
class CvPlan:
    k: int
    folds: np.ndarray
    seed: int
    warnings: list[str] = field(default_factory=list)

    def split(self, fold: int):
        test = np.flatnonzero(self.folds == fold)
        train = np.flatnonzero(self.folds != fold)
        return train, test


def stratified_kfold(labels, k: int, seed: int) -> CvPlan:
    """Assign each sample to one of ``k`` folds, class by class.

    Within a class, samples are shuffled and dealt round-robin. The dealing
    position carries over between classes so remainders spread across folds.
    """
    labels = np.asarray(labels)
    n = labels.size
    if k < 2:
        raise ValidationError("k must be at least 2")
    if k > n:
        raise ValidationError(f"k={k} exceeds the number of samples {n}")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.int64)
    notes = []
    offset = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < k:
            msg = f"class {int(c)} has {members.size} samples, fewer than k={k}"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)
        members = rng.permutation(members)
        folds[members] = (offset + np.arange(members.size)) % k
        offset = (offset + members.size) % k
    return CvPlan(k, folds, seed, notes)


@dataclass
class ElasticNetModel:
    coef: np.ndarray  # (C, d)
    intercept: np.ndarray  # (C,)
    alpha: float
    l1_ratio: float
    cv_scores: dict[float, float] = field(default_factory=dict)
    oof_predictions: np.ndarray | None = None

    @property
    def n_classes(self) -> int:
        return self.coef.shape[0]

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef.T + self.intercept

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "coef": self.coef.tolist(),
            "intercept": self.intercept.tolist(),
            "alpha": self.alpha,
            "l1_ratio": self.l1_ratio,
            "cv_scores": [[a, s] for a, s in self.cv_scores.items()],
        }

    @classmethod
    def from_dict(cls, d) -> "ElasticNetModel":
        return cls(
            coef=np.array(d["coef"], dtype=float),
            intercept=np.array(d["intercept"], dtype=float),
            alpha=d["alpha"],
            l1_ratio=d["l1_ratio"],
            cv_scores={a: s for a, s in d.get("cv_scores", [])},
        )


def _derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def sgd_fit(X, labels, n_classes, alpha, l1_ratio=0.15, weights=None,
            epochs=20, seed=0, eta0=0.01) -> ElasticNetModel:
    """Fit one elastic-net OvR logistic model with a fixed ``alpha``."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    n, d = X.shape
    sw = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=float)
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    q = np.zeros((n_classes, d))
    t, u = 0.0, 0.0
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(n).astype(np.int64)
        t, u = _kernels.sgd_epoch(X, y, sw, order, W, b, q, t, u,
                                  float(alpha), float(l1_ratio), float(eta0))
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise DivergenceError(alpha)
    return ElasticNetModel(W, b, float(alpha), float(l1_ratio))


def weighted_accuracy(y_true, y_pred, weights) -> float:
    weights = np.asarray(weights, dtype=float)
    return float(np.sum(weights * (np.asarray(y_true) == np.asarray(y_pred))) / np.sum(weights))


def fit_elasticnet_sgd(X, labels, alpha_grid, l1_ratio=0.15, weights=None,
                       plan: CvPlan | None = None, epochs=20, seed=0,
                       n_classes=None, eta0=0.01, tolerance=0.0) -> ElasticNetModel:
    """Choose ``alpha`` by stratified CV, then refit on all data.

    The CV score is weighted accuracy on the held-out fold, using
    ``weights`` (balanced class weights give balanced accuracy). Ties go to
    the larger ``alpha``. With ``tolerance > 0`` the largest ``alpha`` whose
    score is within ``tolerance`` of the best is chosen instead, trading a
    little accuracy for a sparser model. Out-of-fold predictions for the chosen ``alpha``
    are kept on the returned model.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    grid = [float(a) for a in alpha_grid]
    if not grid:
        raise ValidationError("alpha grid is empty")
    if not np.all(np.isfinite(X)):
        raise ValidationError("X contains non-finite values")
    C = int(n_classes if n_classes is not None else labels.max() + 1)
    w = np.ones(labels.size) if weights is None else np.asarray(weights, dtype=float)

    scores = {}
    oof = {}
    if len(grid) > 1 or plan is not None:
        if plan is None:
            plan = stratified_kfold(labels, 5, seed)
        for a_idx, alpha in enumerate(grid):
            pred = np.empty(labels.size, dtype=np.int64)
            fold_scores = []
            for f in range(plan.k):
                tr, te = plan.split(f)
                m = sgd_fit(X[tr], labels[tr], C, alpha, l1_ratio, w[tr], epochs,
                            _derive_seed(seed, a_idx, f), eta0)
                pred[te] = m.predict(X[te])
                fold_scores.append(weighted_accuracy(labels[te], pred[te], w[te]))
            scores[alpha] = float(np.mean(fold_scores))
            oof[alpha] = pred
        top = max(scores.values())
        best = max(a for a in grid if scores[a] >= top - tolerance)
    else:
        best = grid[0]
    model = sgd_fit(X, labels, C, best, l1_ratio, w, epochs, _derive_seed(seed, 2**31 - 1), eta0)
    model.cv_scores = scores
    model.oof_predictions = oof.get(best)
    return model


def selected_features(model: ElasticNetModel) -> list[int]:
    return np.flatnonzero(np.any(model.coef != 0.0, axis=0)).tolist()


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValidationError("label arrays differ in length")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValidationError(f"labels outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def balanced_accuracy(y_true, y_pred, n_classes: int) -> float:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    support = cm.sum(axis=1)
    present = support > 0
    return float(np.mean(np.diag(cm)[present] / support[present]))
