"""Mislabel detection with Extreme Learning Machines and PRESS statistics."""

__version__ = "0.1.0"

from .classifier import (  # noqa: E402
    balanced_class_weights,
    confusion_matrix,
    fit_elasticnet_sgd,
    selected_features,
    stratified_kfold,
)
from .datasets import Dataset, SynthSpec, load_csv, save_csv, subsample_focus, synth_blobs  # noqa: E402
from .detector import DetectorConfig, ScoreReport, detect, run_ensemble, run_model  # noqa: E402
from .elm import make_hidden_layer, one_hot_targets, predict, solve_ridge, transform  # noqa: E402
from .encoding import EncodingSchema, encode_dataset, fit_schema  # noqa: E402
from .press import PressState, build_press  # noqa: E402
from .stats import fit_normal_threshold, welch_t  # noqa: E402
