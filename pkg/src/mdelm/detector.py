"""Mislabel detection by label-flip trials on an ELM with PRESS errors.

Each model of the ensemble:

1. optionally subsamples the non-focus classes,
2. draws a random feature subset and a random hidden layer,
3. flips the labels of a small random set of "artificial" mislabels,
4. repeatedly proposes relabelling a few samples; a proposal is accepted when
   the PRESS leave-one-out error of the relabelled data is strictly lower
   than that of the committed labelling, and every proposed sample then
   gains one point of mislabel score,
5. stops once the artificial mislabels reach the target average score.

Proposals are evaluated and discarded; the committed labelling never moves.
Scores are averaged over the models a sample took part in, and samples whose
average exceeds a fitted-normal quantile are reported.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .datasets import Dataset, subsample_focus
from .elm import Standardizer, make_hidden_layer, one_hot_targets, transform
from .errors import MdelmError, ValidationError
from .press import PressState, build_press
from .stats import NormalFit, WelchResult, fit_normal, welch_t

REPORT_FORMAT = "mdelm-report/1"


class ModelRunError(MdelmError):
    def __init__(self, model_index, cause):
        self.model_index = model_index
        super().__init__(f"model {model_index} failed: {cause}")


@dataclass
class DetectorConfig:
    n_models: int = 10
    feature_subset_size: int | None = 100
    artificial_fraction: float = 0.03
    flips_per_iteration: int = 2
    focus_class: int | None = None
    focus_mode: str = "current"
    n_other: int | None = None
    stratified_other: bool = False
    target_artificial_score: float = 100.0
    max_iterations: int = 1_000_000
    quantiles: tuple[float, ...] = (0.99, 0.999)
    lam: float = 1.0
    n_sigmoid: int = 200
    n_rbf: int = 200
    passthrough: bool = True
    activation: str = "tanh"
    fit_includes_artificial: bool = False
    master_seed: int = 0
    batch_size: int = 4096

    def __post_init__(self):
        self.quantiles = tuple(float(q) for q in self.quantiles)
        if self.n_models < 1:
            raise ValidationError("n_models must be at least 1")
        if not 0.0 < self.artificial_fraction < 0.5:
            raise ValidationError("artificial_fraction must lie in (0, 0.5)")
        if self.flips_per_iteration < 1:
            raise ValidationError("flips_per_iteration must be at least 1")
        if list(self.quantiles) != sorted(self.quantiles) or not all(
            0.0 < q < 1.0 for q in self.quantiles
        ):
            raise ValidationError("quantiles must be ascending values in (0, 1)")
        if self.focus_mode not in ("current", "original"):
            raise ValidationError("focus_mode must be 'current' or 'original'")
        if self.lam <= 0:
            raise ValidationError("lam must be positive")
        if self.max_iterations < 0 or self.batch_size < 1:
            raise ValidationError("max_iterations must be >= 0 and batch_size >= 1")
        if self.n_sigmoid < 0 or self.n_rbf < 0:
            raise ValidationError("neuron counts must be non-negative")
        if self.n_sigmoid == 0 and self.n_rbf == 0 and not self.passthrough:
            raise ValidationError("hidden layer would have no outputs")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["quantiles"] = list(self.quantiles)
        return d


def derive_seed(master_seed: int, *keys: int) -> int:
    """Platform-independent child seed from a master seed and integer keys."""
    return int(np.random.SeedSequence([int(master_seed), *keys]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Building blocks


def inject_artificial(labels, fraction: float, n_classes: int, seed: int):
    """Relabel ``ceil(fraction * n)`` random samples to a different random class.

    Returns ``(perturbed_labels, artificial_indices, original_labels)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes < 2:
        raise ValidationError("need at least two classes to inject mislabels")
    n = labels.size
    if fraction * n < 1.0 - 1e-9:
        raise ValidationError(f"fraction {fraction} of {n} samples is less than one")
    count = math.ceil(fraction * n - 1e-9)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=count, replace=False))
    shift = rng.integers(1, n_classes, size=count)
    out = labels.copy()
    out[idx] = (labels[idx] + shift) % n_classes
    return out, idx, labels[idx].copy()


def _draw_distinct(rng, m, n, prev):
    """Uniform draws from ``[0, n)`` avoiding each row's entries of ``prev``."""
    s = prev.shape[1]
    r = rng.integers(0, n - s, size=m)
    if s:
        for col in np.sort(prev, axis=1).T:
            r += r >= col
    return r


def draw_proposals(rng, m, n, k, labels, n_classes, focus_pool=None):
    """Draw ``m`` proposals of ``k`` distinct samples each with new labels.

    With a focus pool the first sample of each proposal comes from it; the
    others are uniform over the remaining samples. New labels are uniform
    over the classes other than the sample's committed label.
    """
    if k > n:
        raise ValidationError(f"cannot pick {k} distinct samples out of {n}")
    idx = np.empty((m, k), dtype=np.int64)
    start = 0
    if focus_pool is not None:
        if len(focus_pool) == 0:
            raise ValidationError("focus class has no samples to propose")
        idx[:, 0] = focus_pool[rng.integers(0, len(focus_pool), size=m)]
        start = 1
    for s in range(start, k):
        idx[:, s] = _draw_distinct(rng, m, n, idx[:, :s])
    r = rng.integers(0, n_classes - 1, size=(m, k))
    cur = labels[idx]
    new = r + (r >= cur)
    return idx, new.astype(np.int64)


@dataclass
class TrialState:
    """A PRESS engine plus the bookkeeping of one MD-ELM model."""

    press: PressState
    labels: np.ndarray  # committed labelling, never changed by trials
    n_classes: int
    scores: np.ndarray
    artificial: np.ndarray  # bool mask
    focus_pool: np.ndarray | None = None
    iterations: int = 0
    accepted: int = 0

    @classmethod
    def create(cls, H, labels, n_classes, lam, artificial_idx=(), focus_pool=None):
        labels = np.asarray(labels, dtype=np.int64)
        press = build_press(H, one_hot_targets(labels, n_classes), lam)
        mask = np.zeros(labels.size, dtype=bool)
        mask[np.asarray(artificial_idx, dtype=np.int64)] = True
        pool = None if focus_pool is None else np.asarray(focus_pool, dtype=np.int64)
        return cls(press, labels, n_classes, np.zeros(labels.size, dtype=np.int64), mask, pool)

    @property
    def artificial_mean(self) -> float:
        if not self.artificial.any():
            return 0.0
        return float(self.scores[self.artificial].mean())


def propose(state: TrialState, rng, config: DetectorConfig) -> list[tuple[int, int]]:
    idx, new = draw_proposals(rng, 1, state.labels.size, config.flips_per_iteration,
                              state.labels, state.n_classes, state.focus_pool)
    return [(int(i), int(c)) for i, c in zip(idx[0], new[0])]


def trial(state: TrialState, proposal: Sequence[tuple[int, int]]) -> bool:
    """Evaluate one proposal; on strict LOO-error decrease bump its samples' scores."""
    eye = np.eye(state.n_classes)
    flips = [(i, eye[c]) for i, c in proposal]
    change = state.press.delta_sse(flips)
    state.iterations += 1
    if change < 0.0:
        state.accepted += 1
        for i, _ in proposal:
            state.scores[i] += 1
        return True
    return False


def run_trials(state: TrialState, rng, config: DetectorConfig, max_iterations: int) -> None:
    """Run proposals until the artificial target or the iteration cap is reached."""
    n_art = int(state.artificial.sum())
    target_sum = config.target_artificial_score * n_art
    art_sum = int(state.scores[state.artificial].sum())
    press = state.press
    E = np.ascontiguousarray(press.press_residuals())
    remaining = max_iterations
    while remaining > 0 and art_sum < target_sum:
        m = min(config.batch_size, remaining)
        idx, new = draw_proposals(rng, m, state.labels.size, config.flips_per_iteration,
                                  state.labels, state.n_classes, state.focus_pool)
        if press.hat is not None:
            done, acc, art_sum = _kernels.trial_block(
                E, press.inv_gap, press.hat, state.labels, idx, new,
                state.artificial, state.scores, art_sum, float(target_sum))
            state.iterations += int(done)
            state.accepted += int(acc)
        else:
            done = 0
            for row in range(m):
                if art_sum >= target_sum:
                    break
                if trial(state, list(zip(idx[row].tolist(), new[row].tolist()))):
                    art_sum += int(state.artificial[idx[row]].sum())
                done += 1
        remaining -= int(done)
        if done < m:
            break


# ---------------------------------------------------------------------------
# One model


@dataclass
class ModelRun:
    rows: np.ndarray  # indices into the ensemble input
    features: np.ndarray
    artificial: np.ndarray  # indices into the ensemble input
    scores: np.ndarray  # aligned with rows
    iterations: int
    accepted: int
    artificial_mean: float
    loo_error: float
    seed: int

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "n_samples": int(self.rows.size),
            "features": self.features.tolist(),
            "n_artificial": int(self.artificial.size),
            "iterations": self.iterations,
            "accepted": self.accepted,
            "artificial_mean": self.artificial_mean,
            "loo_error": self.loo_error if math.isfinite(self.loo_error) else None,
        }


def run_model(features, labels, config: DetectorConfig, model_seed: int,
              n_classes: int | None = None) -> ModelRun:
    X = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    C = int(n_classes if n_classes is not None else labels.max() + 1)
    seeds = [int(s.generate_state(1)[0])
             for s in np.random.SeedSequence(model_seed).spawn(5)]

    rows = np.arange(labels.size)
    if config.focus_class is not None and config.n_other is not None:
        ds = Dataset(np.zeros((labels.size, 0)), labels, C,
                     [str(i) for i in rows], [])
        sub = subsample_focus(ds, config.focus_class, config.n_other, seeds[0],
                              stratified=config.stratified_other)
        rows = np.array([int(i) for i in sub.ids], dtype=np.int64)

    d = X.shape[1]
    size = d if config.feature_subset_size is None else config.feature_subset_size
    if size > d:
        raise ValidationError(f"feature_subset_size={size} exceeds the {d} available features")
    rng = np.random.default_rng(seeds[1])
    feats = np.sort(rng.choice(d, size=size, replace=False))

    Xs = X[np.ix_(rows, feats)]
    Xs = Standardizer.fit(Xs).transform(Xs)
    layer = make_hidden_layer(size, config.n_sigmoid, config.n_rbf, seeds[2],
                              center_source=Xs, passthrough=config.passthrough,
                              activation=config.activation)
    H = transform(layer, Xs)

    sub_labels = labels[rows]
    perturbed, art, _ = inject_artificial(sub_labels, config.artificial_fraction, C, seeds[3])
    if config.target_artificial_score <= 0:
        return ModelRun(rows, feats, rows[art], np.zeros(rows.size, dtype=np.int64),
                        0, 0, 0.0, float("nan"), model_seed)

    pool = None
    if config.focus_class is not None:
        base = perturbed if config.focus_mode == "current" else sub_labels
        pool = np.flatnonzero(base == config.focus_class)
    state = TrialState.create(H, perturbed, C, config.lam, art, pool)
    run_trials(state, np.random.default_rng(seeds[4]), config, config.max_iterations)
    return ModelRun(rows, feats, rows[art], state.scores, state.iterations,
                    state.accepted, state.artificial_mean, state.press.loo_error, model_seed)


# ---------------------------------------------------------------------------
# Ensemble and report


@dataclass
class ScoreReport:
    ids: list[str]
    labels: np.ndarray
    mean_scores: np.ndarray  # NaN where a sample has no non-artificial run
    model_scores: np.ndarray  # (n_models, n), NaN where not sampled
    artificial: np.ndarray  # (n_models, n) bool
    normal: NormalFit | None
    thresholds: dict[float, float | None]
    detected: dict[float, list[str]]
    welch: WelchResult | None
    focus_class: int | None
    runs: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def quantiles(self) -> list[float]:
        return list(self.thresholds)

    def artificial_scores(self) -> np.ndarray:
        return self.model_scores[self.artificial]

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "config": self.config,
            "focus_class": self.focus_class,
            "ids": list(self.ids),
            "labels": self.labels.tolist(),
            "mean_scores": _nan_to_none(self.mean_scores),
            "model_scores": [_nan_to_none(r) for r in self.model_scores],
            "artificial_ids": [[self.ids[i] for i in np.flatnonzero(r)]
                               for r in self.artificial],
            "normal": None if self.normal is None else dataclasses.asdict(self.normal),
            "thresholds": [[q, t] for q, t in self.thresholds.items()],
            "detected": [[q, ids] for q, ids in self.detected.items()],
            "welch": None if self.welch is None else dataclasses.asdict(self.welch),
            "runs": self.runs,
        }

    @classmethod
    def from_dict(cls, d) -> "ScoreReport":
        if d.get("format") != REPORT_FORMAT:
            raise ValidationError(f"not a score report (format={d.get('format')!r})")
        ids = d["ids"]
        pos = {s: i for i, s in enumerate(ids)}
        art = np.zeros((len(d["model_scores"]), len(ids)), dtype=bool)
        for m, lst in enumerate(d["artificial_ids"]):
            art[m, [pos[s] for s in lst]] = True
        return cls(
            ids=ids,
            labels=np.array(d["labels"], dtype=np.int64),
            mean_scores=_none_to_nan(d["mean_scores"]),
            model_scores=np.array([_none_to_nan(r) for r in d["model_scores"]]).reshape(-1, len(ids)),
            artificial=art,
            normal=None if d["normal"] is None else NormalFit(**d["normal"]),
            thresholds={q: t for q, t in d["thresholds"]},
            detected={q: ids_ for q, ids_ in d["detected"]},
            welch=None if d["welch"] is None else WelchResult(**d["welch"]),
            focus_class=d["focus_class"],
            runs=d.get("runs", []),
            config=d.get("config", {}),
        )

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load_json(cls, path) -> "ScoreReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_csv(self, path) -> None:
        qs = self.quantiles
        head = ["id", "label", "mean_score", "n_artificial"]
        head += [f"model_{m}" for m in range(self.model_scores.shape[0])]
        head += [f"detected_{q:g}" for q in qs]
        flags = {q: set(self.detected[q]) for q in qs}
        lines = [",".join(head)]
        for i, sid in enumerate(self.ids):
            cells = [sid, str(int(self.labels[i])), _fmt(self.mean_scores[i]),
                     str(int(self.artificial[:, i].sum()))]
            cells += [_fmt(v) for v in self.model_scores[:, i]]
            cells += ["1" if sid in flags[q] else "0" for q in qs]
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n")


def _fmt(x) -> str:
    if not np.isfinite(x):
        return ""
    return repr(float(x))


def _nan_to_none(arr):
    return [None if not np.isfinite(v) else float(v) for v in arr]


def _none_to_nan(lst):
    return np.array([np.nan if v is None else v for v in lst], dtype=float)


def _run_one(args):
    X, labels, config, seed, C, m = args
    try:
        return run_model(X, labels, config, seed, C)
    except ValidationError as exc:
        raise ValidationError(f"model {m}: {exc}") from exc
    except Exception as exc:  # noqa: BLE001 - re-raised with the model index
        raise ModelRunError(m, exc) from exc


def run_ensemble(features, labels, config: DetectorConfig, ids=None,
                 n_classes: int | None = None, jobs: int = 1) -> ScoreReport:
    """Run ``config.n_models`` independent models and assemble a report.

    Model ``m`` uses seed ``derive_seed(master_seed, m)``, so results do not
    depend on ``jobs``.
    """
    X = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    C = int(n_classes if n_classes is not None else labels.max() + 1)
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    tasks = [(X, labels, config, derive_seed(config.master_seed, m), C, m)
             for m in range(config.n_models)]
    if jobs > 1 and config.n_models > 1:
        workers = min(jobs, config.n_models, os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_one, tasks))
    else:
        runs = [_run_one(t) for t in tasks]
    return assemble_report(runs, ids, labels, config)


def assemble_report(runs: Sequence[ModelRun], ids, labels, config: DetectorConfig) -> ScoreReport:
    n = len(ids)
    M = len(runs)
    model_scores = np.full((M, n), np.nan)
    artificial = np.zeros((M, n), dtype=bool)
    for m, r in enumerate(runs):
        model_scores[m, r.rows] = r.scores
        artificial[m, r.artificial] = True

    genuine = np.where(artificial, np.nan, model_scores)
    mean_scores = _nanmean_rows(genuine)
    fit_source = _nanmean_rows(model_scores) if config.fit_includes_artificial else mean_scores

    try:
        normal = fit_normal(fit_source[np.isfinite(fit_source)])
    except ValidationError:
        normal = None
    thresholds = {q: (normal.threshold(q) if normal else None) for q in config.quantiles}

    report = ScoreReport(
        ids=list(ids),
        labels=np.asarray(labels, dtype=np.int64),
        mean_scores=mean_scores,
        model_scores=model_scores,
        artificial=artificial,
        normal=normal,
        thresholds=thresholds,
        detected={},
        welch=None,
        focus_class=config.focus_class,
        runs=[r.summary() for r in runs],
        config=config.to_dict(),
    )
    report.detected = {q: detect(report, q) for q in config.quantiles}

    art = model_scores[artificial]
    rest = model_scores[~artificial & np.isfinite(model_scores)]
    try:
        report.welch = welch_t(art, rest)
    except ValidationError:
        report.welch = None
    return report


def _nanmean_rows(A: np.ndarray) -> np.ndarray:
    # column-wise mean over models, NaN when a column has no finite entry
    count = np.sum(np.isfinite(A), axis=0)
    total = np.nansum(A, axis=0)
    out = np.full(A.shape[1], np.nan)
    np.divide(total, count, out=out, where=count > 0)
    return out


def detect(report: ScoreReport, quantile: float) -> list[str]:
    """Ids whose averaged score is strictly above the quantile threshold.

    Restricted to the focus class when one is configured; ordered by score,
    highest first, ties by input order.
    """
    match = [q for q in report.thresholds if math.isclose(q, quantile, rel_tol=0, abs_tol=1e-12)]
    if not match:
        raise ValidationError(
            f"quantile {quantile} not in report (available: {report.quantiles})"
        )
    thr = report.thresholds[match[0]]
    if thr is None:
        return []
    s = report.mean_scores
    ok = np.isfinite(s) & (s > thr)
    if report.focus_class is not None:
        ok &= report.labels == report.focus_class
    rows = np.flatnonzero(ok)
    order = sorted(rows.tolist(), key=lambda i: (-s[i], i))
    return [report.ids[i] for i in order]
