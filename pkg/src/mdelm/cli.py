"""Command-line interface: ``mdelm synth|encode|train|detect|report``.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
Logs go to stderr; data goes to files (``report`` also prints its table).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import (
    balanced_accuracy,
    balanced_class_weights,
    confusion_matrix,
    fit_elasticnet_sgd,
    selected_features,
    stratified_kfold,
)
from .config import dump_config, load_config
from .datasets import SynthSpec, load_csv, save_csv, save_truth, synth_blobs
from .detector import DetectorConfig, ScoreReport, run_ensemble
from .elm import (
    HiddenLayer,
    Standardizer,
    load_model,
    make_hidden_layer,
    one_hot_targets,
    save_model,
    schema_hash,
    solve_ridge,
    transform,
)
from .encoding import (
    EncodingSchema,
    VariableSpec,
    encode_dataset,
    fit_schema,
    read_records,
    write_feature_csv,
)
from .errors import ValidationError

log = logging.getLogger("mdelm")


def _stem(path: Path) -> Path:
    return path.with_suffix("") if path.suffix else path


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"file not found: {p}")
    return p


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> None:
    spec = SynthSpec(
        n_per_class=args.per_class,
        n_classes=args.classes,
        dim=args.dim,
        spread=args.spread,
        center_scale=args.center_scale,
        n_noise=args.noise,
        flip_fraction=args.flip,
        seed=args.seed,
    )
    result = synth_blobs(spec)
    out = Path(args.out)
    save_csv(result.flipped, out)
    save_truth(result, _stem(out).with_suffix(".truth.json"))
    if args.clean_out:
        save_csv(result.clean, args.clean_out)
    log.info("wrote %s (%d samples, %d hidden flips)", out,
             result.flipped.n_samples, len(result.hidden_flips))


# ---------------------------------------------------------------------------
# encode


def _read_fit_spec(path):
    doc = json.loads(_require_file(path).read_text())
    if isinstance(doc, list):
        return doc, None
    return doc["variables"], doc.get("label")


def cmd_encode(args) -> None:
    if (args.schema is None) == (args.spec is None):
        raise ValidationError("give exactly one of --schema or --spec")
    records = read_records(_require_file(args.raw))
    out = Path(args.out)
    if args.schema is not None:
        schema = EncodingSchema.load(_require_file(args.schema))
    else:
        variables, label = _read_fit_spec(args.spec)
        schema = fit_schema(records, [VariableSpec.from_dict(v) for v in variables],
                            label=args.label or label)
    if args.label and args.schema is not None:
        schema.label = args.label
    fm = encode_dataset(records, schema)
    write_feature_csv(fm, out)
    if args.fit_schema:
        schema.save(_stem(out).with_suffix(".schema.json"))
    log.info("encoded %d records into %d features -> %s",
             len(records), schema.n_features, out)


# ---------------------------------------------------------------------------
# train


def _resolve(args, overrides):
    cfg = load_config(args.config, overrides)
    return cfg


def cmd_train(args) -> None:
    overrides = {}
    if args.seed is not None:
        overrides = {"elm": {"seed": args.seed}, "classifier": {"seed": args.seed}}
    cfg = _resolve(args, overrides)
    e, c = cfg["elm"], cfg["classifier"]
    if e["n_sigmoid"] == 0 and e["n_rbf"] == 0 and not e["passthrough"]:
        raise ValidationError("elm: 0 sigmoid + 0 RBF neurons without passthrough")
    ds = load_csv(_require_file(args.data), cfg["io"]["n_classes"])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.json")

    scaler = Standardizer.fit(ds.X)
    Xs = scaler.transform(ds.X)
    layer = make_hidden_layer(ds.X.shape[1], e["n_sigmoid"], e["n_rbf"], e["seed"],
                              center_source=Xs, passthrough=e["passthrough"],
                              activation=e["activation"])
    H = transform(layer, Xs)
    names = layer.feature_names(ds.feature_names)

    C = ds.n_classes
    weights = balanced_class_weights(ds.labels, C) if c["balanced"] else None
    plan = stratified_kfold(ds.labels, c["k_folds"], c["seed"])
    model = fit_elasticnet_sgd(H, ds.labels, c["alpha_grid"], l1_ratio=c["l1_ratio"],
                               weights=weights, plan=plan, epochs=c["epochs"],
                               seed=c["seed"], n_classes=C, eta0=c["eta0"],
                               tolerance=c["tolerance"])
    pred = model.oof_predictions
    cm = confusion_matrix(ds.labels, pred, C)
    bacc = balanced_accuracy(ds.labels, pred, C)
    acc = float(np.mean(pred == ds.labels))
    ridge = solve_ridge(H, one_hot_targets(ds.labels, C), e["lambda"])
    sel = selected_features(model)

    save_model(out / "model.json", {
        "schema_hash": schema_hash(ds.feature_names),
        "input_names": ds.feature_names,
        "n_classes": C,
        "standardizer": {"mean": scaler.mean.tolist(), "scale": scaler.scale.tolist()},
        "layer": layer.to_dict(),
        "ridge": {"output_weights": ridge.output_weights.tolist(), "lambda": ridge.lam},
        "classifier": model.to_dict(),
    })
    with open(out / "confusion.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + [str(k) for k in range(C)])
        for k in range(C):
            w.writerow([str(k)] + [str(int(v)) for v in cm[k]])
    with open(out / "cv.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "cv_score", "selected"])
        for a, s in model.cv_scores.items():
            w.writerow([repr(a), repr(s), "1" if a == model.alpha else "0"])
    (out / "selected_features.json").write_text(json.dumps({
        "model": "model.json",
        "indices": sel,
        "names": [names[i] for i in sel],
        "n_total": len(names),
    }, indent=1) + "\n")
    (out / "metrics.json").write_text(json.dumps({
        "accuracy": acc,
        "balanced_accuracy": bacc,
        "alpha": model.alpha,
        "n_selected": len(sel),
        "n_features": len(names),
    }, indent=1, sort_keys=True) + "\n")
    log.info("out-of-fold accuracy %.4f, balanced accuracy %.4f", acc, bacc)
    log.info("selected %d of %d features (alpha=%g)", len(sel), len(names), model.alpha)


def _hidden_features(model_doc, ds):
    if model_doc["schema_hash"] != schema_hash(ds.feature_names):
        raise ValidationError("encoded data columns do not match the trained model")
    st = model_doc["standardizer"]
    scaler = Standardizer(np.array(st["mean"]), np.array(st["scale"]))
    layer = HiddenLayer.from_dict(model_doc["layer"])
    return transform(layer, scaler.transform(ds.X)), layer.feature_names(ds.feature_names)


# ---------------------------------------------------------------------------
# detect


def cmd_detect(args) -> None:
    det = {}
    for flag, key in (("models", "n_models"), ("target_score", "target_artificial_score"),
                      ("max_iterations", "max_iterations"), ("seed", "master_seed"),
                      ("subset_size", "feature_subset_size"),
                      ("focus_class", "focus_class")):
        value = getattr(args, flag)
        if value is not None:
            det[key] = value
    cfg = _resolve(args, {"detector": det} if det else None)
    ds = load_csv(_require_file(args.data), cfg["io"]["n_classes"])
    X, names = ds.X, ds.feature_names
    if args.selected:
        sel_path = _require_file(args.selected)
        sel = json.loads(sel_path.read_text())
        H, hnames = _hidden_features(load_model(_require_file(sel_path.parent / sel["model"])), ds)
        X = H[:, sel["indices"]]
        names = [hnames[i] for i in sel["indices"]]
    dconf = DetectorConfig(**cfg["detector"])
    if dconf.feature_subset_size is not None and dconf.feature_subset_size > X.shape[1]:
        raise ValidationError(
            f"feature_subset_size={dconf.feature_subset_size} exceeds the "
            f"{X.shape[1]} available features"
        )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.json")
    report = run_ensemble(X, ds.labels, dconf, ids=ds.ids, n_classes=ds.n_classes,
                          jobs=args.jobs)
    report.save_json(out / "report.json")
    report.save_csv(out / "scores.csv")
    art = report.artificial_scores()
    log.info("%d models; artificial mean %.2f; %d features", len(report.runs),
             float(art.mean()) if art.size else 0.0, len(names))
    if report.welch is not None:
        log.info("Welch t=%.3f p=%.3g (artificial vs rest)", report.welch.t, report.welch.p)
    for q, ids in report.detected.items():
        log.info("quantile %g: %d detected", q, len(ids))


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> None:
    report = ScoreReport.load_json(_require_file(args.report))
    match = [q for q in report.quantiles if abs(q - args.quantile) < 1e-12]
    if not match:
        raise ValidationError(
            f"quantile {args.quantile} not in report (available: {report.quantiles})"
        )
    q = match[0]
    ids = report.detected[q]
    pos = {s: i for i, s in enumerate(report.ids)}
    thr = report.thresholds[q]
    thr_txt = "n/a" if thr is None else f"{thr:.4f}"
    lines = [f"threshold at quantile {q:g}: {thr_txt}; {len(ids)} detected",
             f"{'rank':>4}  {'id':<20} {'label':>5} {'score':>10}"]
    for rank, sid in enumerate(ids, start=1):
        i = pos[sid]
        lines.append(f"{rank:>4}  {sid:<20} {int(report.labels[i]):>5} "
                     f"{report.mean_scores[i]:>10.3f}")
    print("\n".join(lines))

    if args.out:
        rows = np.arange(len(report.ids))
        if report.focus_class is not None:
            rows = rows[report.labels == report.focus_class]
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "index", "id", "value"])
            for i in rows:
                s = report.mean_scores[i]
                w.writerow(["score", int(i), report.ids[i],
                            repr(float(s)) if np.isfinite(s) else ""])
            for qq, t in report.thresholds.items():
                w.writerow(["threshold", repr(qq), "", "" if t is None else repr(float(t))])


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdelm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mdelm {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic blobs dataset with hidden flips")
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=300)
    s.add_argument("--dim", type=int, default=20)
    s.add_argument("--noise", type=int, default=30)
    s.add_argument("--spread", type=float, default=1.0)
    s.add_argument("--center-scale", type=float, default=3.0)
    s.add_argument("--flip", type=float, default=0.03)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--clean-out", help="also write the unflipped dataset here")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("encode", help="encode raw records into a feature CSV")
    s.add_argument("raw", help="raw records (.csv with header, or .jsonl)")
    s.add_argument("--schema", help="fitted schema JSON")
    s.add_argument("--spec", help="variable spec JSON to fit a schema from the records")
    s.add_argument("--fit-schema", action="store_true",
                   help="write the schema next to the output as <out>.schema.json")
    s.add_argument("--label", help="record key holding the class label")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train", help="fit the ELM + elastic-net classifier")
    s.add_argument("data", help="encoded CSV with id and label columns")
    s.add_argument("--config", help="run config JSON (or 'reference-protocol')")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="run the mislabel detector ensemble")
    s.add_argument("data", help="encoded CSV with id and label columns")
    s.add_argument("--selected", help="selected_features.json written by train")
    s.add_argument("--config", help="run config JSON (or 'reference-protocol')")
    s.add_argument("--models", type=int)
    s.add_argument("--target-score", type=float)
    s.add_argument("--max-iterations", type=int)
    s.add_argument("--focus-class", type=int)
    s.add_argument("--subset-size", type=int, help="features drawn per model")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("report", help="print detected samples and write plot data")
    s.add_argument("report", help="report.json written by detect")
    s.add_argument("--quantile", type=float, required=True)
    s.add_argument("--out", help="plot-data CSV")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
