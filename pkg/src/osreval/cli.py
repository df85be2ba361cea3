"""Command-line interface: ``osreval <command> ...``.

Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or input,
3 training divergence, 4 calibration failure, 5 artifact/data mismatch,
6 every tuning trial failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text, read_json, sha256_file, write_json
from .activations import (
    DatasetError,
    apply_openset_protocol,
    load_dataset,
    manifest_path_for,
    read_manifest,
    split_dataset,
    write_dataset,
)
from .metrics import EvaluationReport, evaluate_closed_set, evaluate_open_set
from .openmax import (
    DISTANCES,
    CalibrationError,
    OpenMaxModel,
    SoftmaxModel,
    calibrate_openmax,
    model_from_dict,
    normalize_method,
    unknownness_score,
)
from .search import SearchExhausted, default_space, tune_osr
from .toy import (
    MixtureSpec,
    TrainConfig,
    TrainingDiverged,
    class_balanced_weights,
    extract_logits,
    generate_mixture,
    train_toy_classifier,
)
from .weibull import WeibullFitError

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CALIBRATION, EXIT_MISMATCH, EXIT_EXHAUSTED = range(7)


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _provenance(inputs: dict, parameters: dict) -> dict:
    return {
        "tool": "osreval",
        "version": __version__,
        "inputs": {k: {"file": Path(p).name, "sha256": sha256_file(p)} for k, p in inputs.items() if p},
        "parameters": parameters,
    }


def _require_file(path, what):
    if path is None or not Path(path).is_file():
        raise CLIError(EXIT_CONFIG, f"{what} not found: {path}")
    return Path(path)


def _read_json_input(path, what):
    _require_file(path, what)
    try:
        return read_json(path)
    except json.JSONDecodeError as exc:
        raise CLIError(EXIT_CONFIG, f"{what} {path} is not valid JSON: {exc}") from None


def _load(path, manifest=None):
    _require_file(path, "activation file")
    if manifest is not None:
        _require_file(manifest, "manifest")
    try:
        ds = load_dataset(path, manifest)
    except DatasetError as exc:
        raise CLIError(EXIT_CONFIG, f"{path}: {exc}") from None
    mpath = manifest or manifest_path_for(path)
    known = read_manifest(mpath).known_classes if Path(mpath).exists() else None
    return ds, known


def _parse_names(text):
    return tuple(s.strip() for s in text.split(",") if s.strip()) if text else None


def _known(args, manifest_known, ds):
    known = _parse_names(getattr(args, "known", None)) or manifest_known or ds.class_names
    try:
        return apply_openset_protocol(ds, known)
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from None


def _rows(view, split):
    """Rows of ``split``, or every row when nothing carries that tag."""
    if split and any(s == split for s in view.base.splits):
        return split
    return None


def cmd_gen(args):
    spec_doc = _read_json_input(args.spec, "mixture spec")
    try:
        spec = MixtureSpec.from_dict(spec_doc)
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from None
    ds = generate_mixture(spec, args.seed)
    if args.split:
        try:
            ratios = tuple(float(x) for x in args.split.split(","))
            ds = split_dataset(ds, ratios, args.seed)
        except ValueError as exc:
            raise CLIError(EXIT_CONFIG, f"--split: {exc}") from None
    known = _parse_names(args.known) or spec.known_classes
    write_dataset(ds, args.out, known)
    print(f"wrote {len(ds)} samples ({ds.dim} features) to {args.out}")


def cmd_train(args):
    ds, manifest_known = _load(args.features, args.manifest)
    view = _known(args, manifest_known, ds)
    x, y = view.partition(_rows(view, "train"), known_only=True)
    if len(y) == 0:
        raise CLIError(EXIT_CONFIG, "no known-class training rows")
    y = y - 1
    config = TrainConfig(args.lr, args.epochs, args.batch_size, args.weight_decay, args.seed)
    weights = None
    if not args.no_balance:
        counts = np.bincount(y, minlength=view.known_count)
        if np.any(counts == 0):
            raise CLIError(EXIT_CONFIG, "every known class needs training rows for class-balanced weights")
        weights = class_balanced_weights(counts, args.beta)
        weights = weights * len(weights) / weights.sum()
    try:
        model = train_toy_classifier(x, y, weights, config, view.known_count, view.known_class_names)
    except TrainingDiverged as exc:
        raise CLIError(EXIT_DIVERGED, str(exc)) from None
    acc = float(np.mean(model.logits(x).argmax(axis=1) == y))
    doc = model.to_dict()
    doc["train_accuracy"] = acc
    doc["provenance"] = _provenance({"features": args.features}, {
        "lr": args.lr, "epochs": args.epochs, "batch_size": args.batch_size,
        "weight_decay": args.weight_decay, "beta": None if args.no_balance else args.beta, "seed": args.seed})
    write_json(args.out, doc)
    if args.logits_out:
        write_dataset(extract_logits(model, ds), args.logits_out, view.known_class_names)
    final = model.loss_trace[-1] if model.loss_trace else float("nan")
    print(f"final_loss={final:.6g} train_accuracy={acc:.6f}")


def _model_doc(model, view, provenance):
    doc = model.to_dict()
    doc["known_classes"] = list(view.known_class_names)
    doc["provenance"] = provenance
    return doc


def cmd_calibrate(args):
    ds, manifest_known = _load(args.activations, args.manifest)
    view = _known(args, manifest_known, ds)
    method = normalize_method(args.method)
    params = {"method": method}
    if method == "openmax":
        if ds.dim != view.known_count:
            raise CLIError(EXIT_MISMATCH, f"activations have {ds.dim} columns for {view.known_count} known classes")
        logits, labels = view.calibration_data(_rows(view, args.split))
        try:
            model = calibrate_openmax(logits, labels, args.tail, args.alpha, args.threshold or 0.0,
                                      args.distance, args.gamma, args.clamp_tail)
        except (CalibrationError, WeibullFitError) as exc:
            raise CLIError(EXIT_CALIBRATION, str(exc)) from None
        except ValueError as exc:
            raise CLIError(EXIT_CONFIG, str(exc)) from None
        params.update(tail=args.tail, alpha=args.alpha, threshold=args.threshold or 0.0,
                      distance=args.distance, gamma=args.gamma, clamp_tail=args.clamp_tail)
    elif method == "softmax-threshold":
        if args.threshold is None:
            raise CLIError(EXIT_CONFIG, "softmax-threshold needs --threshold")
        model = SoftmaxModel(args.threshold)
        params["threshold"] = args.threshold
    else:
        model = SoftmaxModel()
    write_json(args.out, _model_doc(model, view, _provenance({"activations": args.activations}, params)))
    print(f"wrote {model.method} model to {args.out}")


def _resolve_model(args):
    """Model from ``--model`` (optionally overridden by ``--method``) or from ``--method`` alone."""
    doc = _read_json_input(args.model, "model artifact") if args.model else None
    method = normalize_method(args.method) if args.method else None
    if doc is not None:
        try:
            model = model_from_dict(doc)
        except (KeyError, ValueError, TypeError) as exc:
            raise CLIError(EXIT_CONFIG, f"invalid model artifact: {exc}") from None
        known = doc.get("known_classes")
    else:
        if method is None:
            raise CLIError(EXIT_CONFIG, "need --model or --method")
        model, known = None, None
    if method is not None and (model is None or method != model.method):
        if method == "openmax":
            if not isinstance(model, OpenMaxModel):
                raise CLIError(EXIT_CONFIG, "--method openmax needs an OpenMax model artifact")
        elif method == "softmax":
            model = SoftmaxModel()
        else:
            threshold = args.threshold if args.threshold is not None else getattr(model, "threshold", None)
            if threshold is None:
                raise CLIError(EXIT_CONFIG, "softmax-threshold needs --threshold or a threshold artifact")
            model = SoftmaxModel(threshold)
    return model, known


def _predict(args):
    model, artifact_known = _resolve_model(args)
    ds, manifest_known = _load(args.activations, args.manifest)
    if artifact_known and not args.known:
        args.known = ",".join(artifact_known)
    view = _known(args, manifest_known, ds)
    expected = model.dim if isinstance(model, OpenMaxModel) else view.known_count
    if ds.dim != expected:
        raise CLIError(EXIT_MISMATCH,
                       f"activations have {ds.dim} columns but the model expects {expected}")
    split = _rows(view, args.split)
    mask = np.ones(len(ds), bool) if split is None else ds.split_mask(split)
    logits, labels = view.partition(split)
    return model, view, mask, labels, model.predict(logits)


def cmd_predict(args):
    model, view, mask, labels, pred = _predict(args)
    ids = np.array(view.sample_ids)[mask]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "true_label", "predicted_label", "score_unknown",
                *[f"p_{n}" for n in view.label_names]])
    scores = np.atleast_1d(unknownness_score(model.method, pred))
    for sid, t, p, s, probs in zip(ids, labels, np.atleast_1d(pred.predicted_label), scores,
                                   np.atleast_2d(pred.probs)):
        w.writerow([sid, int(t), int(p), repr(float(s)), *[repr(float(x)) for x in probs]])
    atomic_write_text(args.out, buf.getvalue())
    print(f"wrote {len(ids)} predictions to {args.out}")


def cmd_evaluate(args):
    model, view, _, labels, pred = _predict(args)
    if view.is_closed_set and model.method == "softmax":
        report = evaluate_closed_set(labels - 1, np.atleast_1d(pred.predicted_label) - 1,
                                     view.known_class_names, method="softmax")
    else:
        report = evaluate_open_set(pred, labels, model.method, view.label_names)
    doc = report.to_dict()
    doc["label"] = args.label
    doc["provenance"] = _provenance(
        {"activations": args.activations, "model": args.model},
        {"method": model.method, "split": args.split, "threshold": getattr(model, "threshold", None)})
    write_json(args.out, doc)
    cm_path = args.confusion_out or Path(args.out).with_suffix(".confusion.csv")
    atomic_write_text(cm_path, report.confusion.to_csv())
    au = "n/a" if report.auroc is None else f"{report.auroc:.4f}"
    print(f"{model.method}: accuracy={report.accuracy:.4f} mcc={report.mcc:.4f} auroc={au}")


def _range(text, kind):
    lo, _, hi = text.partition(":")
    return (kind(lo), kind(hi or lo))


def cmd_tune(args):
    method = normalize_method(args.method)
    if method == "softmax":
        raise CLIError(EXIT_CONFIG, "plain softmax has nothing to tune")
    train_path = args.train or args.activations
    val_path = args.val or args.activations
    if train_path is None or val_path is None:
        raise CLIError(EXIT_CONFIG, "need --activations or both --train and --val")
    train_ds, known_a = _load(train_path, args.manifest)
    val_ds, known_b = _load(val_path, args.manifest)
    train_view = _known(args, known_a, train_ds)
    val_view = _known(args, known_b or known_a, val_ds)
    tr = train_view.calibration_data(_rows(train_view, "train"))
    va = val_view.partition(_rows(val_view, "val"))

    space = default_space(method)
    try:
        for name, text, kind in (("softmax_threshold", args.threshold_range, float),
                                 ("weibull_threshold", args.threshold_range, float),
                                 ("weibull_tail", args.tail_range, int),
                                 ("weibull_alpha", args.alpha_range, int)):
            if text and name in space.names:
                space = space.with_bounds(name, *_range(text, kind))
        result = tune_osr(method, *tr, *va, space=space, strategy=args.strategy, budget=args.budget,
                          seed=args.seed, distance_kind=args.distance, gamma=args.gamma,
                          clamp_tail=args.clamp_tail)
    except SearchExhausted as exc:
        raise CLIError(EXIT_EXHAUSTED, str(exc)) from None
    except ValueError as exc:
        raise CLIError(EXIT_CONFIG, str(exc)) from None

    out = Path(args.out)
    params = {"method": method, "strategy": args.strategy, "budget": args.budget, "seed": args.seed,
              "space": {p.name: [p.lo, p.hi] for p in space.parameters},
              "distance": args.distance, "gamma": args.gamma}
    prov = _provenance({"train": train_path, "val": val_path}, params)
    atomic_write_text(out / "trials.jsonl", result.trial_log())
    best = result.best.to_dict()
    best["n_trials"] = len(result.trials)
    best["provenance"] = prov
    write_json(out / "best.json", best)
    write_json(out / "model.json", _model_doc(result.artifact, train_view, prov))
    print(f"best {result.best.params} objective={result.best.objective:.6f} over {len(result.trials)} trials")


REPORT_COLUMNS = ("accuracy", "precision", "recall", "f1", "mcc", "auroc", "aupr_out")
METHOD_TITLES = {"softmax": "Softmax", "softmax-threshold": "Softmax Threshold", "openmax": "OpenMax"}


def format_comparison(docs):
    """CSV and Markdown tables, one row per report, percentages in the Markdown."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "method", "accuracy", "precision_macro", "precision_micro", "recall_macro",
                "recall_micro", "f1_macro", "f1_micro", "mcc", "auroc", "aupr_out"])
    md = ["| Model | Method | Acc. | Precision | Recall | F1-Score | MCC | AUROC | AUPR-OUT |",
          "|---|---|---|---|---|---|---|---|---|"]

    def pct(x):
        return "-" if x is None else f"{100 * x:.1f}"

    for label, d in docs:
        w.writerow([label, d.get("method"), d["accuracy"],
                    d["precision"]["macro"], d["precision"]["micro"],
                    d["recall"]["macro"], d["recall"]["micro"],
                    d["f1"]["macro"], d["f1"]["micro"], d["mcc"],
                    "" if d.get("auroc") is None else d["auroc"],
                    "" if d.get("aupr_out") is None else d["aupr_out"]])
        pair = [f"{pct(d[k]['macro'])}/{pct(d[k]['micro'])}" for k in ("precision", "recall", "f1")]
        md.append(f"| {label} | {METHOD_TITLES.get(d.get('method'), d.get('method'))} | {pct(d['accuracy'])} | "
                  + " | ".join(pair) + f" | {pct(d['mcc'])} | {pct(d.get('auroc'))} | {pct(d.get('aupr_out'))} |")
    return buf.getvalue(), "\n".join(md) + "\n"


def cmd_report(args):
    docs = []
    for path in args.inputs:
        d = _read_json_input(path, "report")
        try:
            EvaluationReport.from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            raise CLIError(EXIT_CONFIG, f"{path} is not an evaluation report: {exc}") from None
        docs.append((d.get("label") or Path(path).stem, d))
    csv_text, md_text = format_comparison(docs)
    out = Path(args.out)
    atomic_write_text(out.with_suffix(".csv"), csv_text)
    atomic_write_text(out.with_suffix(".md"), md_text)
    sys.stdout.write(md_text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="osreval", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, flag="--activations", required=True):
        sp.add_argument(flag, required=required)
        sp.add_argument("--manifest", help="manifest JSON (default: <stem>.manifest.json next to the data)")
        sp.add_argument("--known", help="comma-separated known class names (default: manifest, else all)")

    def osr_args(sp):
        sp.add_argument("--distance", choices=DISTANCES, default="euclidean")
        sp.add_argument("--gamma", type=float, default=200.0, help="Euclidean scale for eucos")
        sp.add_argument("--clamp-tail", action="store_true",
                        help="fit on all correct samples when a class has fewer than the tail size")

    sp = sub.add_parser("gen", help="generate a Gaussian-mixture feature file")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", help="train,val,test ratios for a stratified split, e.g. 0.7,0.1,0.2")
    sp.add_argument("--known", help="comma-separated known class names recorded in the manifest")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train the linear classifier on known-class training rows")
    data_args(sp, "--features")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--weight-decay", type=float, default=0.0)
    sp.add_argument("--beta", type=float, default=0.999)
    sp.add_argument("--no-balance", action="store_true", help="unweighted cross-entropy")
    sp.add_argument("--logits-out", help="also write logits for every row as an activation file")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("calibrate", help="build a rejection model from training logits")
    data_args(sp)
    sp.add_argument("--method", default="openmax")
    sp.add_argument("--tail", type=int, default=20)
    sp.add_argument("--alpha", type=int, default=1)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--split", default="train")
    sp.add_argument("--out", required=True)
    osr_args(sp)
    sp.set_defaults(func=cmd_calibrate)

    for name, func, help_ in (("predict", cmd_predict, "write per-sample open-set predictions (CSV)"),
                              ("evaluate", cmd_evaluate, "write an evaluation report and confusion CSV")):
        sp = sub.add_parser(name, help=help_)
        data_args(sp)
        sp.add_argument("--model")
        sp.add_argument("--method")
        sp.add_argument("--threshold", type=float)
        sp.add_argument("--split", default="test")
        sp.add_argument("--out", required=True)
        if name == "evaluate":
            sp.add_argument("--confusion-out")
            sp.add_argument("--label", help="row name used by `report`")
        sp.set_defaults(func=func)

    sp = sub.add_parser("tune", help="search rejection hyperparameters on a validation view")
    data_args(sp, required=False)
    sp.add_argument("--train")
    sp.add_argument("--val")
    sp.add_argument("--method", required=True)
    sp.add_argument("--strategy", choices=("grid", "random"), default="grid")
    sp.add_argument("--budget", type=int, default=5,
                    help="grid points per parameter (grid) or number of trials (random)")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--tail-range", help="lo:hi")
    sp.add_argument("--alpha-range", help="lo:hi")
    sp.add_argument("--threshold-range", help="lo:hi")
    sp.add_argument("--out", required=True, help="output directory")
    osr_args(sp)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("report", help="merge evaluation reports into one comparison table")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--out", required=True, help="output prefix; writes .csv and .md")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    try:
        args.func(args)
    except CLIError as exc:
        print(f"osreval {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"osreval {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"osreval {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
