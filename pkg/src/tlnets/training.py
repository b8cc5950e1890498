"""Mini-batch training with early stopping, plus the checkpoint container."""
import json
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np

from .data import iterate_batches
from .models import ModelConfig, TLNet, loss as loss_fn
from .tensor import Graph, no_grad

__all__ = [
    "TrainConfig", "Checkpoint", "NumericAbort", "TrainResult", "optimizer_step",
    "init_moments", "clip_by_global_norm", "evaluate_loss", "train", "CHECKPOINT_VERSION",
]

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
OPTIMIZERS = ("adam", "sgd")


class NumericAbort(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, step, value):
        super().__init__(f"non-finite training loss {value} at epoch {epoch}, step {step}")
        self.epoch, self.step, self.value = epoch, step, value


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 5
    loss: str = "mse"
    seed: int = 0
    optimizer: str = "adam"
    lr_decay: float = 0.5
    decay_after: int = 3
    clip_norm: Optional[float] = 5.0
    max_steps: Optional[int] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ValueError(f"lr must be a finite value >= 0, got {self.lr}")
        for name in ("batch_size", "max_epochs", "patience", "decay_after"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.loss not in ("mse", "mae"):
            raise ValueError(f"loss must be 'mse' or 'mae', got {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive or null, got {self.clip_norm}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1 or null, got {self.max_steps}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown trainer config keys: {sorted(unknown)}")
        return cls(**d)


def init_moments(params):
    return {
        "step": 0,
        "m": OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
        "v": OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
    }


def optimizer_step(params, grads, moments, lr, kind="adam", beta1=0.9, beta2=0.999, eps=1e-8):
    """Return updated ``(params, moments)``; inputs are left untouched.

    ``sgd`` is ``p - lr * g``. ``adam`` keeps bias-corrected first and second
    moment estimates in ``moments`` (see :func:`init_moments`).
    """
    if set(params) != set(grads):
        raise ValueError("params and grads have different names")
    for k in params:
        if np.shape(params[k]) != np.shape(grads[k]):
            raise ValueError(f"{k}: grad shape {np.shape(grads[k])} != param shape {np.shape(params[k])}")
    if kind == "sgd":
        new = OrderedDict((k, params[k] - lr * grads[k]) for k in params)
        return new, moments
    if kind != "adam":
        raise ValueError(f"unknown optimizer {kind!r}")
    t = moments["step"] + 1
    m_new, v_new, new = OrderedDict(), OrderedDict(), OrderedDict()
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        m = beta1 * moments["m"][k] + (1.0 - beta1) * g
        v = beta2 * moments["v"][k] + (1.0 - beta2) * g * g
        new[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        m_new[k], v_new[k] = m, v
    return new, {"step": t, "m": m_new, "v": v_new}


def clip_by_global_norm(grads, max_norm):
    """Scale all gradients together so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return OrderedDict((k, g * scale) for k, g in grads.items()), norm


@dataclass
class Checkpoint:
    model_config: dict
    params: "OrderedDict[str, np.ndarray]"
    moments: dict
    epoch: int
    best_val: float
    train_config: dict = field(default_factory=dict)
    lr: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def build_model(self):
        model = TLNet(ModelConfig.from_dict(self.model_config))
        model.load_state_dict(self.params)
        return model

    def save(self, path):
        """Write an ``.npz`` holding a JSON header and every named float64 array."""
        header = {
            "format_version": CHECKPOINT_VERSION,
            "model_config": self.model_config,
            "train_config": self.train_config,
            "epoch": self.epoch,
            "best_val": self.best_val,
            "lr": self.lr,
            "adam_step": self.moments.get("step", 0),
            "param_names": list(self.params),
            "metadata": self.metadata,
        }
        arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
        for k, p in self.params.items():
            arrays[f"param/{k}"] = p
            arrays[f"adam_m/{k}"] = self.moments["m"][k]
            arrays[f"adam_v/{k}"] = self.moments["v"][k]
        with open(path, "wb") as f:
            np.savez(f, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            version = header.get("format_version")
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint format version {version}")
            names = header["param_names"]
            params = OrderedDict((k, z[f"param/{k}"].copy()) for k in names)
            moments = {
                "step": header["adam_step"],
                "m": OrderedDict((k, z[f"adam_m/{k}"].copy()) for k in names),
                "v": OrderedDict((k, z[f"adam_v/{k}"].copy()) for k in names),
            }
        return cls(header["model_config"], params, moments, header["epoch"],
                   header["best_val"], header["train_config"], header["lr"],
                   header.get("metadata", {}))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: List[Dict]
    step_losses: List[float]
    stopped_early: bool


def evaluate_loss(model, split, kind="mse", batch_size=256):
    """Mean loss over every element of every window in ``split``."""
    total, count = 0.0, 0
    with no_grad():
        for start in range(0, len(split), batch_size):
            x, y = split.batch(np.arange(start, min(start + batch_size, len(split))))
            diff = model(x).data - y
            total += float(np.sum(diff * diff if kind == "mse" else np.abs(diff)))
            count += diff.size
    if count == 0:
        raise ValueError(f"split {split.name!r} has no windows")
    return total / count


def train(model, dataset, tc, on_epoch=None):
    """Fit ``model`` on ``dataset['train']`` and keep the best-validation weights.

    Each epoch visits the training windows in a seeded permutation. After
    every epoch the validation loss decides the checkpoint; ``decay_after``
    stale epochs multiply the rate by ``lr_decay`` and ``patience`` stale
    epochs end training. The returned model parameters are the best ones.
    """
    train_split, val_split = dataset["train"], dataset["val"]
    if len(train_split) == 0:
        raise ValueError("training split is empty")
    params = model.parameters()
    moments = init_moments({k: p.data for k, p in params.items()})
    rng = np.random.default_rng(tc.seed)
    lr = tc.lr
    best_val, best_state, best_epoch, best_moments = math.inf, model.state_dict(), 0, moments
    stale = 0
    history, step_losses = [], []
    step = 0
    stopped_early = False
    for epoch in range(1, tc.max_epochs + 1):
        running, batches = 0.0, 0
        for x, y in iterate_batches(train_split, tc.batch_size, rng):
            with Graph() as graph:
                value = loss_fn(model(x), y, tc.loss)
            v = float(value.data)
            if not math.isfinite(v):
                raise NumericAbort(epoch, step, v)
            grads = graph.backward(value)
            named = OrderedDict((k, _grad_of(grads, p)) for k, p in params.items())
            named, _ = clip_by_global_norm(named, tc.clip_norm)
            current = OrderedDict((k, p.data) for k, p in params.items())
            updated, moments = optimizer_step(current, named, moments, lr, tc.optimizer,
                                              tc.beta1, tc.beta2, tc.eps)
            for k, p in params.items():
                p.data = updated[k]
            step += 1
            running += v
            batches += 1
            step_losses.append(v)
            if tc.max_steps is not None and step >= tc.max_steps:
                break
        val = evaluate_loss(model, val_split, tc.loss) if val_split is not None else running / batches
        improved = val < best_val
        if improved:
            best_val, best_state, best_epoch = val, model.state_dict(), epoch
            best_moments = _copy_moments(moments)
            stale = 0
        else:
            stale += 1
        record = {"epoch": epoch, "steps": step, "train_loss": running / batches,
                  "val_loss": val, "lr": lr, "improved": improved}
        history.append(record)
        log.info("epoch %d train %.6f val %.6f lr %.2e", epoch, record["train_loss"], val, lr)
        if on_epoch is not None:
            on_epoch(record)
        if tc.max_steps is not None and step >= tc.max_steps:
            break
        if stale >= tc.patience:
            stopped_early = True
            break
        if stale and stale % tc.decay_after == 0:
            lr *= tc.lr_decay
    model.load_state_dict(best_state)
    ckpt = Checkpoint(model.config.to_dict(), model.state_dict(), best_moments, best_epoch,
                      best_val, tc.to_dict(), lr)
    return TrainResult(ckpt, history, step_losses, stopped_early)


def _grad_of(grads, p):
    g = grads.get(p)
    return np.zeros_like(p.data) if g is None else g


def _copy_moments(moments):
    return {"step": moments["step"],
            "m": OrderedDict((k, v.copy()) for k, v in moments["m"].items()),
            "v": OrderedDict((k, v.copy()) for k, v in moments["v"].items())}
