"""Command-line entry point: gen, train, eval, tune-ood, profile.

Exit codes: 0 success, 1 internal error, 2 usage or configuration error,
3 incompatible artifacts (e.g. a detector tuned for another model file).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .classes import AppClass
from .datasets import build_dataset, load_dataset, save_dataset
from .dci import read_trace_file, write_trace_file
from .errors import ArtifactMismatch, DciTrafficError
from .learn.benchmarks import KnnModel, LogRegModel
from .learn.metrics import evaluate
from .learn.modelio import MODEL_TYPES, load_model, save_model
from .learn.nn import CnnModel, MlpModel
from .learn.train import TrainConfig, balanced_split, train
from .ood import build_detector, load_detector, save_detector, sweep, tune_threshold
from .profile import WEIGHTINGS, decompose, render_report
from .sessionize import WindowingParams, WindowMode, label_from_schedule
from .synth import UNKNOWN_MODEL, WatermarkSpec, generate_labeled_trace, generate_profile_trace, generate_session

log = logging.getLogger("dcitraffic")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_ARTIFACT = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flag combination or configuration detected after parsing."""


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _schedule_path(trace_path: Path) -> Path:
    name = trace_path.name
    stem = name[:-len(".jsonl")] if name.endswith(".jsonl") else trace_path.stem
    return trace_path.with_name(stem + ".schedule.json")


def _parse_apps(text: str) -> list[AppClass]:
    if text == "all":
        return list(AppClass)
    try:
        return [AppClass[a.strip()] for a in text.split(",") if a.strip()]
    except KeyError as exc:
        raise UsageError(f"unknown app {exc.args[0]!r}; choose from {[a.name for a in AppClass]}") from None


def _windowing(args) -> WindowingParams:
    return WindowingParams(args.window, args.stride, WindowMode(args.mode))


def _params_from_meta(meta: dict) -> WindowingParams:
    w = meta["windowing"]
    return WindowingParams(w["w_s"], w["stride_s"], WindowMode(w["mode"]))


def cmd_gen(args) -> int:
    if args.duration < 1:
        raise UsageError("--duration must be >= 1")
    out = Path(args.out)
    trace_path = out / f"{args.name}.jsonl"
    if args.preset == "labeled":
        if args.reps < 1:
            raise UsageError("--reps must be >= 1")
        spec = WatermarkSpec(args.duration, args.pause, args.reps)
        trace, schedule = generate_labeled_trace(_parse_apps(args.apps), spec, args.background, args.seed)
        write_trace_file(trace, trace_path)
        _write_json(_schedule_path(trace_path), schedule)
    else:
        if not 0.0 <= args.unknown_fraction <= 1.0:
            raise UsageError("--unknown-fraction must lie in [0, 1]")
        trace = generate_profile_trace(args.sessions, args.duration, args.seed,
                                       unknown_fraction=args.unknown_fraction)
        write_trace_file(trace, trace_path)
    print(f"wrote {trace_path}: {len(trace)} records, {len(trace.rntis())} users")
    return EXIT_OK


def _make_model(kind: str, w: int, k: int, seed: int):
    if kind == "mlp":
        return MlpModel(w, k, seed=seed)
    if kind == "cnn":
        return CnnModel(w, k, seed=seed)
    if kind == "knn":
        return KnnModel(w, k)
    return LogRegModel(w, k)


def cmd_train(args) -> int:
    trace_path = Path(args.trace)
    schedule_path = Path(args.schedule) if args.schedule else _schedule_path(trace_path)
    schedule = json.loads(schedule_path.read_text(encoding="utf-8"))
    trace = read_trace_file(trace_path)
    sessions = label_from_schedule(trace, schedule)
    params = _windowing(args)
    ds = build_dataset(sessions, params, args.task)
    if len(ds) == 0:
        raise UsageError("no windows: sessions are shorter than --window")
    k = len(ds.classes)
    tr, va = balanced_split(ds.y, ds.groups, args.split, args.seed)
    dtr, dva = ds.subset(tr), ds.subset(va)
    log.info("%d sessions, %d train / %d validation windows", len(sessions), len(tr), len(va))
    model = _make_model(args.model, params.w_s, k, args.seed)
    curves = {}
    if args.model in ("mlp", "cnn"):
        cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                          learning_rate=args.lr, seed=args.seed, split=args.split)
        res = train(model, dtr.X, dtr.y, cfg, dva.X, dva.y)
        model = res.model
        curves = {"train_acc": res.train_acc, "val_acc": res.val_acc,
                  "train_loss": res.train_loss, "val_loss": res.val_loss}
    else:
        model.fit(dtr.X, dtr.y)
    out = Path(args.out)
    meta = {"task": args.task, "classes": ds.classes,
            "windowing": {"w_s": params.w_s, "stride_s": params.stride_s, "mode": params.mode.value}}
    digest = save_model(model, out / "model.bin", meta)
    save_dataset(dtr, out / "train.dciw")
    save_dataset(dva, out / "val.dciw")
    report = evaluate(model, dva.X, dva.y)
    metrics = {"model": args.model, "task": args.task, "n_classes": k, "model_sha256": digest,
               "n_sessions": len(sessions), "n_train": len(tr), "n_val": len(va),
               **report.to_dict(), "curves": curves}
    _write_json(out / "metrics.json", metrics)
    print(f"{args.model} ({args.task}): validation accuracy {report.accuracy:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, meta, _ = load_model(args.model_file)
    ds = load_dataset(args.data)
    if ds.task != meta["task"]:
        raise ArtifactMismatch(f"dataset task {ds.task!r} does not match model task {meta['task']!r}")
    report = evaluate(model, ds.X, ds.y)
    _write_json(Path(args.out) / "eval.json", report.to_dict())
    print(f"accuracy {report.accuracy:.4f}, macro F {report.f_score:.4f}")
    return EXIT_OK


def _softmax_model(path):
    model, meta, digest = load_model(path)
    if not hasattr(model, "predict_proba"):
        raise UsageError(f"the OOD gate needs softmax outputs; {model.kind} has none")
    return model, meta, digest


def cmd_tune_ood(args) -> int:
    model, meta, digest = _softmax_model(args.model_file)
    dtr, dva = load_dataset(args.train_data), load_dataset(args.val_data)
    if dtr.task != meta["task"] or dva.task != meta["task"]:
        raise ArtifactMismatch("window datasets were built for a different task")
    det = build_detector(model.predict_proba(dtr.X), dtr.y, model.n_classes,
                         seed=args.seed, model_hash=digest)
    val_probs = model.predict_proba(dva.X)
    t_star = tune_threshold(det, val_probs)
    det = det.with_threshold(t_star)
    heldout = None
    if args.heldout > 0:
        params = _params_from_meta(meta)
        rng = np.random.default_rng(args.seed)
        sessions = [generate_session(UNKNOWN_MODEL, args.heldout_length, int(s))
                    for s in rng.integers(0, 2**31, args.heldout)]
        heldout = model.predict_proba(build_dataset(sessions, params, meta["task"]).X)
    grid = sorted(set(np.round(np.arange(0.0, 1.0 + 1e-9, args.step), 10).tolist()) | {t_star})
    rows = sweep(det, val_probs, dva.y, grid, heldout)
    out = Path(args.out)
    save_detector(det, out / "detector.json")
    cols = ["t", "f_score", "accuracy", "rejected"] + (["heldout_rejected"] if heldout is not None else [])
    lines = [",".join(cols)] + [",".join(repr(r[c]) for c in cols) for r in rows]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = {"t_star": t_star, "model_sha256": digest, "n_val": len(dva)}
    if heldout is not None:
        summary["heldout_rejected_at_t_star"] = next(r["heldout_rejected"] for r in rows if r["t"] == t_star)
    _write_json(out / "ood.json", summary)
    print(f"t* = {t_star:.6g}")
    return EXIT_OK


def cmd_profile(args) -> int:
    model, meta, digest = load_model(args.model_file)
    det = None
    if args.detector:
        det = load_detector(args.detector, model_hash=digest)
    elif not args.no_ood:
        raise UsageError("--detector is required unless --no-ood is given")
    trace = read_trace_file(args.trace)
    dec = decompose(trace, model, det, _params_from_meta(meta), weighting=args.weight)
    csv, summary = render_report(dec)
    out = Path(args.out)
    (out / "report.csv").write_text(csv, encoding="utf-8")
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    print(summary, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity")

    # the same flags after the subcommand; SUPPRESS keeps them from
    # overwriting values given before it
    late = argparse.ArgumentParser(add_help=False)
    late.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    late.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    late.add_argument("--log-level", default=argparse.SUPPRESS,
                      choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity")

    p = argparse.ArgumentParser(prog="dcitraffic", parents=[common],
                                description="Synthetic LTE control-channel traffic: generate, "
                                            "classify, gate unknown traffic, and profile a cell.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[late], help=help_text, description=help_text)

    g = add("gen", "generate a synthetic DCI trace (JSONL)")
    g.add_argument("--preset", choices=["labeled", "unlabeled"], default="labeled",
                   help="labeled: watermark campaign with a schedule sidecar; unlabeled: a day of cell traffic")
    g.add_argument("--apps", default="all", help="comma-separated app names or 'all' (labeled preset)")
    g.add_argument("--reps", type=int, default=10, help="watermark repetitions per app (labeled preset)")
    g.add_argument("--duration", type=int, default=None,
                   help="seconds per watermark on-period (labeled, default 60) or trace length (unlabeled, default 86400)")
    g.add_argument("--pause", type=int, default=10, help="watermark pause seconds (labeled preset)")
    g.add_argument("--background", type=int, default=5, help="background users per app block (labeled preset)")
    g.add_argument("--sessions", type=int, default=200, help="number of sessions (unlabeled preset)")
    g.add_argument("--unknown-fraction", type=float, default=0.0,
                   help="fraction of sessions drawn from the held-out traffic model (unlabeled preset)")
    g.add_argument("--name", default="trace", help="output file stem (default 'trace')")
    g.set_defaults(func=cmd_gen)

    t = add("train", "train a classifier on a labeled campaign trace")
    t.add_argument("--trace", required=True, help="labeled trace JSONL")
    t.add_argument("--schedule", default=None, help="schedule JSON (default: <trace stem>.schedule.json)")
    t.add_argument("--model", required=True, choices=list(MODEL_TYPES), help="classifier type")
    t.add_argument("--task", choices=["service", "app"], default="service", help="3 services or 6 apps")
    t.add_argument("--window", type=int, default=40, help="window length W in seconds")
    t.add_argument("--stride", type=int, default=15, help="window stride S in seconds")
    t.add_argument("--mode", choices=[m.value for m in WindowMode], default="async",
                   help="sync: first window of each session; async: sliding windows")
    t.add_argument("--epochs", type=int, default=50, help="training epochs (mlp, cnn)")
    t.add_argument("--batch-size", type=int, default=32, help="mini-batch size (mlp, cnn)")
    t.add_argument("--lr", type=float, default=1e-3, help="RMSprop learning rate (mlp, cnn)")
    t.add_argument("--split", type=float, default=0.7, help="training fraction per class")
    t.set_defaults(func=cmd_train)

    e = add("eval", "evaluate a saved model on a window dataset")
    e.add_argument("--model-file", required=True, help="model file written by train")
    e.add_argument("--data", required=True, help="window dataset (.dciw)")
    e.set_defaults(func=cmd_eval)

    o = add("tune-ood", "build the OOD detector and tune its threshold")
    o.add_argument("--model-file", required=True, help="mlp or cnn model file")
    o.add_argument("--train-data", required=True, help="training windows (reference sets)")
    o.add_argument("--val-data", required=True, help="validation windows (threshold tuning)")
    o.add_argument("--step", type=float, default=0.01, help="threshold grid step for the sweep CSV")
    o.add_argument("--heldout", type=int, default=0,
                   help="number of held-out model sessions to mix into the sweep (0 = none)")
    o.add_argument("--heldout-length", type=int, default=60, help="held-out session length in seconds")
    o.set_defaults(func=cmd_tune_ood)

    r = add("profile", "hourly service decomposition of an unlabeled trace")
    r.add_argument("--trace", required=True, help="unlabeled trace JSONL")
    r.add_argument("--model-file", required=True, help="model file written by train")
    r.add_argument("--detector", default=None, help="detector JSON written by tune-ood")
    r.add_argument("--no-ood", action="store_true", default=False, help="classify without the OOD gate")
    r.add_argument("--weight", choices=list(WEIGHTINGS), default="bits",
                   help="share weighting: session bit volume or session count")
    r.set_defaults(func=cmd_profile)
    return p


_GEN_DURATION = {"labeled": 60, "unlabeled": 86400}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gen" and args.duration is None:
        args.duration = _GEN_DURATION[args.preset]
    try:
        os.makedirs(args.out, exist_ok=True)
        return args.func(args)
    except ArtifactMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (UsageError, DciTrafficError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - last-resort guard
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
