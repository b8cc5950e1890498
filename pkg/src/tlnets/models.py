"""TLNet architectures assembled from the transform blocks.

Each model is ``L - 1`` hidden layers followed by an output layer that maps
input length ``T`` to horizon ``tau``. A hidden layer sums two branches:

=========  ==============================  ===========================
arch       hidden layer                    output layer
=========  ==============================  ===========================
ft_svd     FT(x) + act(SVD(x))             FT, T -> tau
ft_matrix  FT(x) + Matrix(x)               FT, T -> tau
ft_conv    FT(x) + Conv(x)                 FT, T -> tau
conv_svd   Conv(x) + act(SVD(x))           Conv then dense T -> tau
ft_only    FT(x)                           FT, T -> tau
svd_only   act(SVD(x))                     dense T -> tau
matrix_only Matrix(x)                      masked Matrix, T -> tau
conv_only  Conv(x)                         Conv then dense T -> tau
=========  ==============================  ===========================

Univariate inputs (one channel) are first lifted to ``expand_channels``
channels by a convolution and read back out by a kernel-size-1 convolution.
"""
import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Tuple

import numpy as np

from . import ops
from .blocks import (DEFAULT_BAND_WIDTHS, DEFAULT_GLOBAL_ROWS, ConvBlock, FTBlock,
                     SparseMatrixBlock, SVDBlock, TimeProjection)
from .tensor import as_tensor

__all__ = ["ARCHS", "ModelConfig", "TLNet", "loss", "expand_univariate"]

ARCHS = ("ft_svd", "ft_matrix", "ft_conv", "conv_svd",
         "ft_only", "svd_only", "matrix_only", "conv_only")

_BRANCHES = {
    "ft_svd": ("ft", "svd"),
    "ft_matrix": ("ft", "matrix"),
    "ft_conv": ("ft", "conv"),
    "conv_svd": ("conv", "svd"),
    "ft_only": ("ft",),
    "svd_only": ("svd",),
    "matrix_only": ("matrix",),
    "conv_only": ("conv",),
}


@dataclass
class ModelConfig:
    arch: str
    input_len: int
    pred_len: int
    channels: int
    layers: int = 2
    activation: str = "relu"
    band_widths: Tuple[int, ...] = DEFAULT_BAND_WIDTHS
    global_rows: int = DEFAULT_GLOBAL_ROWS
    kernel_size: int = 3
    expand_channels: int = 4
    seed: int = 0

    def __post_init__(self):
        self.band_widths = tuple(int(w) for w in self.band_widths)
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        for name in ("input_len", "pred_len", "channels"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.layers < 2:
            raise ValueError(f"layers must be >= 2, got {self.layers}")
        if self.activation not in ops.ACTIVATIONS:
            raise ValueError(f"activation must be one of {ops.ACTIVATIONS}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")

    @property
    def width(self):
        """Channel count seen by the hidden layers."""
        return self.expand_channels if self.channels == 1 else self.channels

    def to_dict(self):
        d = asdict(self)
        d["band_widths"] = list(self.band_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def expand_univariate(x, kernels):
    """Lift ``(B, 1, T)`` to ``(B, C, T)`` with a zero-padded convolution."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.shape[-2] != 1:
        raise ValueError(f"univariate expansion needs exactly one channel, got {x.shape[-2]}")
    return ops.conv1d(x, kernels, mode="same")


class TLNet:
    """A TLNet built deterministically from a :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig):
        self.config = cfg = config
        rng = np.random.default_rng(cfg.seed)
        width, t, tau = cfg.width, cfg.input_len, cfg.pred_len
        self.expander = self.readout = None
        if cfg.channels == 1:
            self.expander = ConvBlock(1, width, cfg.kernel_size, rng=rng)
            self.readout = ConvBlock(width, 1, 1, rng=rng)

        self.hidden = []
        for _ in range(cfg.layers - 1):
            layer = OrderedDict()
            for kind in _BRANCHES[cfg.arch]:
                layer[kind] = self._make_branch(kind, rng)
            self.hidden.append(layer)

        self.head = OrderedDict()
        if "ft" in _BRANCHES[cfg.arch]:
            self.head["ft"] = FTBlock(width, t, tau, rng=rng)
        elif cfg.arch == "matrix_only":
            self.head["matrix"] = SparseMatrixBlock(
                t, tau, band_widths=cfg.band_widths, global_rows=cfg.global_rows, rng=rng)
        else:
            if "conv" in _BRANCHES[cfg.arch]:
                self.head["conv"] = ConvBlock(width, width, cfg.kernel_size, rng=rng)
            self.head["proj"] = TimeProjection(t, tau, rng=rng)

    def _make_branch(self, kind, rng):
        cfg = self.config
        width, t = cfg.width, cfg.input_len
        if kind == "ft":
            return FTBlock(width, t, t, rng=rng)
        if kind == "svd":
            return SVDBlock(width, t, cfg.activation, rng=rng)
        if kind == "matrix":
            return SparseMatrixBlock(t, t, band_widths=cfg.band_widths,
                                     global_rows=cfg.global_rows, rng=rng)
        return ConvBlock(width, width, cfg.kernel_size, rng=rng)

    def parameters(self):
        """Ordered ``name -> Tensor`` map of every trainable tensor."""
        params = OrderedDict()
        if self.expander is not None:
            params["expand.kernels"] = self.expander.kernels
            params["readout.kernels"] = self.readout.kernels
        for i, layer in enumerate(self.hidden):
            for kind, block in layer.items():
                for name, p in block.parameters().items():
                    params[f"layer{i}.{kind}.{name}"] = p
        for kind, block in self.head.items():
            for name, p in block.parameters().items():
                params[f"head.{kind}.{name}"] = p
        return params

    def n_parameters(self):
        return int(sum(p.size for p in self.parameters().values()))

    def hidden_layer(self, i, x):
        branches = [block(x) for block in self.hidden[i].values()]
        out = branches[0]
        for b in branches[1:]:
            out = ops.add(out, b)
        return out

    def __call__(self, x):
        """Forecast ``(B, d, tau)`` from ``(B, d, T)`` (a bare ``(d, T)`` also works)."""
        x = as_tensor(x)
        cfg = self.config
        if x.shape[-2:] != (cfg.channels, cfg.input_len):
            raise ValueError(
                f"expected input (..., {cfg.channels}, {cfg.input_len}), got {x.shape}")
        if self.expander is not None:
            x = expand_univariate(x, self.expander.kernels)
        for i in range(len(self.hidden)):
            x = self.hidden_layer(i, x)
        for block in self.head.values():
            x = block(x)
        if self.readout is not None:
            x = self.readout(x)
        return x

    forward = __call__

    def state_dict(self):
        return OrderedDict((k, p.data.copy()) for k, p in self.parameters().items())

    def load_state_dict(self, state):
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=float)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def loss(pred, target, kind="mse"):
    """Mean squared (``mse``) or absolute (``mae``) error over all elements."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = ops.sub(pred, target)
    if kind == "mse":
        return ops.mean(ops.square(diff))
    if kind == "mae":
        return ops.mean(ops.absolute(diff))
    raise ValueError(f"loss kind must be 'mse' or 'mae', got {kind!r}")
