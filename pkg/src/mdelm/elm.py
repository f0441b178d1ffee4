"""Extreme Learning Machine with a fixed random hidden layer.

The hidden representation of an input row ``x`` is the concatenation of

* ``x`` itself (linear passthrough, optional),
* ``tanh(W x + b)`` for random sigmoid-type neurons,
* ``exp(-||x - c||^2 / (2 sigma^2))`` for RBF neurons centred on data rows.

Only the linear output layer is trained, by ridge regression on one-hot
targets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _kernels
from .errors import ValidationError

MODEL_FORMAT = "mdelm-model/1"

_ACTIVATIONS = {
    "tanh": np.tanh,
    "logistic": lambda z: 1.0 / (1.0 + np.exp(-z)),
}


@dataclass(frozen=True)
class Standardizer:
    """Per-column z-scoring that leaves binary {0,1} columns untouched."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0) if len(X) else np.zeros(X.shape[1])
        std = X.std(axis=0) if len(X) else np.ones(X.shape[1])
        binary = np.all((X == 0.0) | (X == 1.0), axis=0)
        mean = np.where(binary, 0.0, mean)
        scale = np.where(binary | (std == 0.0), 1.0, std)
        return cls(mean, scale)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


@dataclass(frozen=True)
class HiddenLayer:
    input_dim: int
    sigmoid_weights: np.ndarray
    sigmoid_biases: np.ndarray
    rbf_centers: np.ndarray
    rbf_widths: np.ndarray
    passthrough: bool = True
    seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if np.any(self.rbf_widths <= 0):
            raise ValidationError("RBF widths must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    @property
    def n_sigmoid(self) -> int:
        return self.sigmoid_weights.shape[0]

    @property
    def n_rbf(self) -> int:
        return self.rbf_centers.shape[0]

    @property
    def output_dim(self) -> int:
        return self.input_dim * int(self.passthrough) + self.n_sigmoid + self.n_rbf

    def feature_names(self, input_names=None) -> list[str]:
        names = []
        if self.passthrough:
            names += list(input_names) if input_names is not None else [
                f"x{j}" for j in range(self.input_dim)
            ]
        names += [f"sig{j}" for j in range(self.n_sigmoid)]
        names += [f"rbf{j}" for j in range(self.n_rbf)]
        return names

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "sigmoid_weights": self.sigmoid_weights.tolist(),
            "sigmoid_biases": self.sigmoid_biases.tolist(),
            "rbf_centers": self.rbf_centers.tolist(),
            "rbf_widths": self.rbf_widths.tolist(),
            "passthrough": self.passthrough,
            "seed": self.seed,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d) -> "HiddenLayer":
        dim = d["input_dim"]
        return cls(
            input_dim=dim,
            sigmoid_weights=np.array(d["sigmoid_weights"], dtype=float).reshape(-1, dim),
            sigmoid_biases=np.array(d["sigmoid_biases"], dtype=float),
            rbf_centers=np.array(d["rbf_centers"], dtype=float).reshape(-1, dim),
            rbf_widths=np.array(d["rbf_widths"], dtype=float),
            passthrough=d["passthrough"],
            seed=d["seed"],
            activation=d.get("activation", "tanh"),
        )


def make_hidden_layer(
    input_dim: int,
    n_sigmoid: int,
    n_rbf: int,
    seed: int,
    center_source=None,
    passthrough: bool = True,
    activation: str = "tanh",
    bounds: tuple[float, float] = (-1.0, 1.0),
) -> HiddenLayer:
    """Draw a random hidden layer.

    Sigmoid weights and biases are uniform on (-1, 1). RBF centres are rows of
    ``center_source`` drawn without replacement, or uniform points inside
    ``bounds`` when no source is given. All RBF neurons share one width: the
    median pairwise distance between the chosen centres (1.0 when fewer than
    two centres or all coincide).
    """
    if n_sigmoid < 0 or n_rbf < 0:
        raise ValidationError("neuron counts must be non-negative")
    if n_sigmoid == 0 and n_rbf == 0 and not passthrough:
        raise ValidationError("hidden layer would have no outputs")
    rng = np.random.default_rng(seed)
    W = rng.uniform(-1.0, 1.0, size=(n_sigmoid, input_dim))
    b = rng.uniform(-1.0, 1.0, size=n_sigmoid)
    if center_source is not None:
        src = np.asarray(center_source, dtype=float)
        if src.ndim != 2 or src.shape[1] != input_dim:
            raise ValidationError("center_source must have input_dim columns")
        if n_rbf > src.shape[0]:
            raise ValidationError(
                f"n_rbf={n_rbf} exceeds the {src.shape[0]} available centre rows"
            )
        rows = rng.choice(src.shape[0], size=n_rbf, replace=False)
        centers = src[np.sort(rows)]
    else:
        centers = rng.uniform(bounds[0], bounds[1], size=(n_rbf, input_dim))
    width = _median_pairwise_distance(centers)
    return HiddenLayer(
        input_dim=input_dim,
        sigmoid_weights=W,
        sigmoid_biases=b,
        rbf_centers=centers,
        rbf_widths=np.full(n_rbf, width),
        passthrough=passthrough,
        seed=seed,
        activation=activation,
    )


def _median_pairwise_distance(C: np.ndarray) -> float:
    m = C.shape[0]
    if m < 2:
        return 1.0
    sq = np.sum(C * C, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (C @ C.T)
    iu = np.triu_indices(m, k=1)
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))
    return med if med > 0.0 else 1.0


def transform(layer: HiddenLayer, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != layer.input_dim:
        raise ValidationError(
            f"input has shape {X.shape}, expected (n, {layer.input_dim})"
        )
    blocks = []
    if layer.passthrough:
        blocks.append(X)
    if layer.n_sigmoid:
        act = _ACTIVATIONS[layer.activation]
        blocks.append(act(X @ layer.sigmoid_weights.T + layer.sigmoid_biases))
    if layer.n_rbf:
        widths = np.unique(layer.rbf_widths)
        if widths.size == 1:
            blocks.append(_kernels.rbf_activations(X, layer.rbf_centers, float(widths[0])))
        else:
            blocks.append(np.hstack([
                _kernels.rbf_activations(X, layer.rbf_centers[k:k + 1], float(s))
                for k, s in enumerate(layer.rbf_widths)
            ]))
    if not blocks:
        return np.zeros((X.shape[0], 0))
    return np.hstack(blocks)


def one_hot_targets(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(f"labels must lie in [0, {n_classes})")
    T = np.zeros((labels.shape[0], n_classes))
    T[np.arange(labels.shape[0]), labels] = 1.0
    return T


@dataclass(frozen=True)
class RidgeSolution:
    output_weights: np.ndarray
    lam: float

    @property
    def n_classes(self) -> int:
        return self.output_weights.shape[1]


def solve_ridge(H, T, lam: float) -> RidgeSolution:
    """Output weights ``(H'H + lam I)^-1 H'T`` via a Cholesky solve."""
    H = np.asarray(H, dtype=float)
    T = np.asarray(T, dtype=float)
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(T))):
        raise ValidationError("non-finite values in H or T")
    G = H.T @ H
    G[np.diag_indices_from(G)] += lam
    B = linalg.cho_solve(linalg.cho_factor(G, lower=True), H.T @ T)
    return RidgeSolution(B, float(lam))


def decision_scores(layer: HiddenLayer, solution: RidgeSolution, X) -> np.ndarray:
    return transform(layer, X) @ solution.output_weights


def predict(layer: HiddenLayer, solution: RidgeSolution, X) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class on ties
    return np.argmax(decision_scores(layer, solution, X), axis=1)


def schema_hash(feature_names) -> str:
    blob = "\n".join(feature_names).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_model(path, payload: dict) -> None:
    doc = {"format": MODEL_FORMAT, **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValidationError(f"{path}: not an mdelm model (format={doc.get('format')!r})")
    return doc
