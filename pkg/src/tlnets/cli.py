"""``tlnets`` command line: train, eval, predict, verify, gradcheck, compare.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error,
3 numeric abort during training.
"""
import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import gradcheck, metrics, verify
from .config import ConfigError, RunConfig, code_version, load_run_config
from .data import DataError, ingest_csv, make_windows
from .tensor import no_grad
from .training import Checkpoint, NumericAbort, evaluate_loss, train

log = logging.getLogger("tlnets")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _load_dataset(path, date_column, input_len, pred_len, ratios):
    raw = ingest_csv(path, date_column)
    return raw, make_windows(raw, input_len, pred_len, ratios)


def _write_yaml(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(obj, f, sort_keys=True)


def _resolved(cfg, dataset=None, channels=None):
    out = cfg.to_dict()
    out["code_version"] = code_version()
    if channels is not None:
        out["channels"] = channels
    if dataset is not None:
        out["dataset"] = dataset.metadata()
    return out


def cmd_train(args):
    cfg = load_run_config(args.config)
    if args.data:
        cfg.data.path = args.data
    if args.out:
        cfg.output = args.out
    if args.seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    out = Path(cfg.output)
    raw, dataset = _load_dataset(cfg.data.path, cfg.data.date_column, cfg.model["input_len"],
                                 cfg.model["pred_len"], cfg.data.ratios)
    model_cfg = cfg.model_config(raw.n_channels)
    from .models import TLNet
    model = TLNet(model_cfg)
    log.info("training %s on %s: %d parameters, %d train windows", model_cfg.arch,
             cfg.data.dataset_name, model.n_parameters(), len(dataset["train"]))
    result = train(model, dataset, cfg.train)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = result.checkpoint
    ckpt.metadata = {
        "run_config": cfg.to_dict(),
        "mean": dataset.mean.tolist(),
        "std": dataset.std.tolist(),
        "columns": list(raw.columns),
        "code_version": code_version(),
    }
    ckpt.save(out / "checkpoint.npz")
    with open(out / "loss_history.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "steps", "train_loss", "val_loss", "lr", "improved"])
        for r in result.history:
            w.writerow([r["epoch"], r["steps"], repr(r["train_loss"]), repr(r["val_loss"]),
                        repr(r["lr"]), int(r["improved"])])
    _write_yaml(_resolved(cfg, dataset, raw.n_channels), out / "resolved_config.yaml")
    print(f"best val {ckpt.best_val:.6f} at epoch {ckpt.epoch}; wrote {out / 'checkpoint.npz'}")
    return EXIT_OK


def _checkpoint_and_data(args):
    try:
        ckpt = Checkpoint.load(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {args.checkpoint}") from None
    run = RunConfig.from_dict(ckpt.metadata["run_config"])
    path = args.data or run.data.path
    model = ckpt.build_model()
    cfg = model.config
    raw = ingest_csv(path, run.data.date_column)
    if raw.n_channels != cfg.channels:
        raise UsageError(f"{path} has {raw.n_channels} channels, checkpoint expects {cfg.channels}")
    return ckpt, run, model, raw, path


def cmd_eval(args):
    ckpt, run, model, raw, path = _checkpoint_and_data(args)
    cfg = model.config
    dataset = make_windows(raw, cfg.input_len, cfg.pred_len, run.data.ratios)
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    name = run.data.dataset_name
    val_loss = evaluate_loss(model, dataset["val"], run.train.loss)
    scale = dataset.denormalize if args.original_scale else None
    report, pred, target = metrics.evaluate(model, dataset["test"], name, run.seed, scale)
    baseline = metrics.evaluate_last_value(dataset["test"], name, scale)
    metrics.write_reports_csv([report, baseline], out / "metrics.csv")
    n = len(pred)
    picks = sorted(set(np.linspace(0, n - 1, min(n, 32)).round().astype(int).tolist()))
    metrics.write_predictions_csv(pred, target, out / "predictions.csv",
                                  channels=range(cfg.channels), windows=picks)
    summary = {"val_loss": val_loss, "test": asdict(report), "last_value": asdict(baseline),
               "scale": "original" if args.original_scale else "normalized",
               "data": str(path), "code_version": code_version()}
    with open(out / "eval.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    _write_yaml({**_resolved(run, dataset, cfg.channels), "checkpoint": str(args.checkpoint)},
                out / "eval_config.yaml")
    print(metrics.format_table([report, baseline]))
    print(f"val loss {val_loss!r}")
    return EXIT_OK


def cmd_predict(args):
    ckpt, run, model, raw, path = _checkpoint_and_data(args)
    cfg = model.config
    if raw.n_steps < cfg.input_len:
        raise UsageError(f"{path} has {raw.n_steps} rows; need at least input_len={cfg.input_len}")
    mean, std = np.array(ckpt.metadata["mean"]), np.array(ckpt.metadata["std"])
    window = ((raw.values[-cfg.input_len:] - mean) / std).T[None]
    with no_grad():
        forecast = model(window).data[0] * std[:, None] + mean[:, None]
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "forecast.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step"] + list(raw.columns))
        for s in range(cfg.pred_len):
            w.writerow([s + 1] + [repr(float(v)) for v in forecast[:, s]])
    print(f"wrote {cfg.pred_len}-step forecast after {raw.timestamps[-1]} to {out / 'forecast.csv'}")
    return EXIT_OK


def cmd_verify(args):
    results = verify.run_all(range(args.seeds), args.tolerance)
    print(verify.format_results(results))
    failed = [r for r in results if r.gated and not r.passed]
    for r in failed:
        print(f"FAILED: {r.name} ({r.instance})", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


def cmd_gradcheck(args):
    archs = args.arch or list(gradcheck.MODEL_ARCHS)
    results = gradcheck.gradient_suite(range(args.seeds), archs, tol=args.tolerance or 1e-4)
    failed = [r for r in results if not r.passed]
    worst = max(results, key=lambda r: r.rel_error)
    print(f"{len(results)} gradient checks, {len(failed)} failed; "
          f"worst {worst.name} rel error {worst.rel_error:.3e}")
    for r in failed:
        print(f"FAILED: {r.name} rel error {r.rel_error:.3e}", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


def cmd_compare(args):
    table = metrics.load_published(args.published)
    try:
        with open(args.metrics, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
    except FileNotFoundError:
        raise UsageError(f"metrics file not found: {args.metrics}") from None
    lines = []
    for row in rows:
        report = metrics.MetricsReport(
            row["dataset"], row["arch"], int(row["input_len"]), int(row["pred_len"]),
            float(row["mse"]), float(row["mae"]), float(row["corr"]), int(row["n_windows"]))
        published = sorted({m for (d, t, m) in table if d == report.dataset and t == report.pred_len})
        lines.extend(metrics.compare_to_published(report, table, [report.arch] + [
            m for m in published if m != report.arch]))
    cols = ["dataset", "pred_len", "model", "status", "mse_ours", "mse_published", "mse_delta",
            "mse_ratio", "mae_ours", "mae_published", "mae_delta", "mae_ratio"]
    for c in lines:
        if c["status"] == "absent":
            print(f"{c['dataset']} tau={c['pred_len']} {c['model']}: no published value")
        else:
            print(f"{c['dataset']} tau={c['pred_len']} ours vs {c['model']}: "
                  f"mse {c['mse_ours']:.4f} vs {c['mse_published']:.3f} ({c['mse_delta']:+.4f}), "
                  f"mae {c['mae_ours']:.4f} vs {c['mae_published']:.3f} ({c['mae_delta']:+.4f})")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for c in lines:
                w.writerow({k: c.get(k, "") for k in cols})
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="tlnets", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="override data.path")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "score a checkpoint on the test split"),
                             ("predict", cmd_predict, "forecast past the end of a series")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", help="CSV to use instead of the one recorded in the checkpoint")
        p.add_argument("--out", help="output directory (default: next to the checkpoint)")
        p.set_defaults(func=func)
    sub.choices["eval"].add_argument(
        "--original-scale", action="store_true",
        help="score on the original data scale instead of the normalized one")

    p = sub.add_parser("verify", help="run the identity checks")
    p.add_argument("--tolerance", type=float, help="override every gated tolerance")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every op, block and model")
    p.add_argument("--arch", action="append", help="model architecture (repeatable)")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("compare", help="deltas of a metrics CSV against published numbers")
    p.add_argument("--metrics", required=True)
    p.add_argument("--published", help="alternative published-results CSV")
    p.add_argument("--out", help="write the comparison as CSV")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("TLNET_THREADS")
    try:
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ValueError
    except ValueError:
        print(f"error: TLNET_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=limit):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
