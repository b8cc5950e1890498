"""Forecast error metrics, report tables and comparison with published numbers."""
import csv
import io
from dataclasses import asdict, dataclass, fields
from importlib import resources
from typing import Optional

import numpy as np

from .tensor import no_grad

__all__ = [
    "MetricsReport", "forecast_metrics", "channel_correlation", "predict_split", "evaluate",
    "last_value_forecast", "evaluate_last_value", "write_reports_csv", "format_table",
    "write_predictions_csv", "load_published", "compare_to_published",
]


@dataclass
class MetricsReport:
    dataset: str
    arch: str
    input_len: int
    pred_len: int
    mse: float
    mae: float
    corr: float
    n_windows: int
    excluded_channels: int = 0
    seed: Optional[int] = None
    config_hash: str = ""

    def __post_init__(self):
        if self.mse < 0 or self.mae < 0:
            raise ValueError("mse and mae must be nonnegative")
        if not (np.isnan(self.corr) or -1.0 <= self.corr <= 1.0):
            raise ValueError(f"corr must lie in [-1, 1], got {self.corr}")

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def as_row(self):
        row = asdict(self)
        for k in ("mse", "mae", "corr"):
            row[k] = repr(float(row[k]))
        return row


def channel_correlation(pred, target):
    """Pearson correlation per channel over all windows and steps, averaged.

    ``pred`` and ``target`` are ``(windows, d, tau)``. Channels where either
    side has zero variance are skipped; returns ``(mean_corr, n_skipped)``
    with ``nan`` when every channel is skipped.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    d = pred.shape[-2]
    p = np.moveaxis(pred, -2, 0).reshape(d, -1)
    t = np.moveaxis(target, -2, 0).reshape(d, -1)
    p = p - p.mean(axis=1, keepdims=True)
    t = t - t.mean(axis=1, keepdims=True)
    sp = np.sqrt(np.sum(p * p, axis=1))
    st = np.sqrt(np.sum(t * t, axis=1))
    ok = (sp > 0) & (st > 0)
    if not ok.any():
        return float("nan"), d
    corr = np.sum(p[ok] * t[ok], axis=1) / (sp[ok] * st[ok])
    return float(np.clip(corr, -1.0, 1.0).mean()), int(d - ok.sum())


def forecast_metrics(pred, target):
    """``{"mse", "mae", "corr", "excluded_channels"}`` over every element."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("cannot score an empty test set")
    diff = pred - target
    corr, skipped = channel_correlation(pred, target)
    return {"mse": float(np.mean(diff * diff)), "mae": float(np.mean(np.abs(diff))),
            "corr": corr, "excluded_channels": skipped}


def predict_split(model, split, batch_size=256):
    """Stacked predictions and targets for every window of ``split``."""
    if len(split) == 0:
        raise ValueError(f"split {split.name!r} has no windows")
    preds, targets = [], []
    with no_grad():
        for start in range(0, len(split), batch_size):
            x, y = split.batch(np.arange(start, min(start + batch_size, len(split))))
            preds.append(model(x).data)
            targets.append(y)
    return np.concatenate(preds), np.concatenate(targets)


def evaluate(model, split, dataset_name="", seed=None, denormalize=None):
    """Score ``model`` on ``split``; ``denormalize`` maps arrays to the original scale."""
    pred, target = predict_split(model, split)
    if denormalize is not None:
        pred, target = denormalize(pred), denormalize(target)
    m = forecast_metrics(pred, target)
    cfg = model.config
    report = MetricsReport(dataset_name, cfg.arch, cfg.input_len, cfg.pred_len, m["mse"],
                           m["mae"], m["corr"], len(split), m["excluded_channels"],
                           cfg.seed if seed is None else seed, cfg.digest())
    return report, pred, target


def last_value_forecast(inputs, pred_len):
    """Repeat the final observed step ``pred_len`` times."""
    inputs = np.asarray(inputs)
    return np.repeat(inputs[..., -1:], pred_len, axis=-1)


def evaluate_last_value(split, dataset_name="", denormalize=None):
    x, y = split.arrays()
    pred = last_value_forecast(x, split.pred_len)
    if denormalize is not None:
        pred, y = denormalize(pred), denormalize(y)
    m = forecast_metrics(pred, y)
    return MetricsReport(dataset_name, "last_value", split.input_len, split.pred_len,
                         m["mse"], m["mae"], m["corr"], len(split), m["excluded_channels"])


def write_reports_csv(reports, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=MetricsReport.columns(), lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.as_row())


def format_table(reports):
    head = ["dataset", "arch", "T", "tau", "mse", "mae", "corr", "windows"]
    rows = [[r.dataset, r.arch, str(r.input_len), str(r.pred_len), f"{r.mse:.4f}",
             f"{r.mae:.4f}", f"{r.corr:.4f}", str(r.n_windows)] for r in reports]
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    line = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return "\n".join([line(head), line(["-" * w for w in widths])] + [line(r) for r in rows])


def write_predictions_csv(pred, target, path, channels=(0,), windows=None):
    """Long-format plot data: one line per (window, channel, step)."""
    pred, target = np.asarray(pred), np.asarray(target)
    idx = range(pred.shape[0]) if windows is None else windows
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["window", "channel", "step", "prediction", "target"])
        for i in idx:
            for c in channels:
                for s in range(pred.shape[-1]):
                    w.writerow([i, c, s, repr(float(pred[i, c, s])), repr(float(target[i, c, s]))])


def load_published(path=None):
    """``{(dataset, pred_len, model): {"mse", "mae"}}`` from the shipped table."""
    if path is None:
        text = resources.files("tlnets").joinpath("resources/published.csv").read_text()
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    table = {}
    for row in csv.DictReader(io.StringIO("\n".join(lines))):
        key = (row["dataset"], int(row["pred_len"]), row["model"])
        table[key] = {"mse": float(row["mse"]), "mae": float(row["mae"])}
    return table


def compare_to_published(report, table=None, models=None):
    """Per-model deltas ``ours - published`` and ratios for the report's cell.

    Rows whose key is missing from the table are returned with
    ``status="absent"`` rather than raising.
    """
    table = load_published() if table is None else table
    models = [report.arch] if models is None else list(models)
    out = []
    for model in models:
        key = (report.dataset, report.pred_len, model)
        row = {"dataset": report.dataset, "pred_len": report.pred_len, "model": model}
        ref = table.get(key)
        if ref is None:
            row["status"] = "absent"
            out.append(row)
            continue
        row["status"] = "ok"
        for m in ("mse", "mae"):
            ours = getattr(report, m)
            row[f"{m}_ours"] = ours
            row[f"{m}_published"] = ref[m]
            row[f"{m}_delta"] = ours - ref[m]
            row[f"{m}_ratio"] = ours / ref[m] if ref[m] else float("nan")
        out.append(row)
    return out
