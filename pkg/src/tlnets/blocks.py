"""Learnable transform blocks mapping ``(..., channels, time)`` tensors.

FTBlock
    inverse-FFT of a learned per-channel complex matrix applied to the
    spectrum; the only block that changes the time length on its own.
SVDBlock
    decomposes the input and a same-shape weight, multiplies the factors
    elementwise and recombines, then applies an activation.
SparseMatrixBlock
    dense weight on the time axis Hadamard-masked by a fixed 0/1 pattern.
ConvBlock
    zero-padded length-preserving 1D convolution.
"""
import numpy as np

from . import ops
from .tensor import Tensor

__all__ = [
    "FTBlock", "SVDBlock", "SparseMatrixBlock", "ConvBlock", "TimeProjection",
    "build_default_mask", "DEFAULT_BAND_WIDTHS", "DEFAULT_GLOBAL_ROWS", "INIT_STD",
]

DEFAULT_BAND_WIDTHS = (3, 9, 27)
DEFAULT_GLOBAL_ROWS = 4
INIT_STD = 0.02


def _rng(rng):
    return rng if rng is not None else np.random.default_rng(0)


def _round_half_up(v):
    return int(np.floor(v + 0.5))


def build_default_mask(n_out, n_in, band_widths=DEFAULT_BAND_WIDTHS, global_rows=DEFAULT_GLOBAL_ROWS):
    """Binary shape matrix of several diagonal bands plus a few dense rows.

    Row ``i`` is centred on column ``round(i * n_in / n_out)``; each band of
    width ``w`` covers ``w`` columns around that centre, wrapping mod
    ``n_in``. ``global_rows`` rows spaced evenly over the output are fully
    dense and give long-range reach. This is one admissible pattern; any 0/1
    matrix of the right shape can be passed to :class:`SparseMatrixBlock`.
    """
    if global_rows < 0 or global_rows > n_out:
        raise ValueError(f"global_rows must be in [0, {n_out}], got {global_rows}")
    for w in band_widths:
        if w < 1 or w % 2 == 0:
            raise ValueError(f"band widths must be positive and odd, got {w}")
    mask = np.zeros((n_out, n_in))
    for i in range(n_out):
        centre = _round_half_up(i * n_in / n_out) % n_in
        for w in band_widths:
            half = (w - 1) // 2
            cols = (centre + np.arange(-half, half + 1)) % n_in
            mask[i, cols] = 1.0
    for j in range(global_rows):
        mask[_round_half_up(j * n_out / global_rows) % n_out, :] = 1.0
    if not band_widths and global_rows == 0:
        raise ValueError("mask would be empty; give at least one band or global row")
    return mask


class FTBlock:
    """``irfft(W @ rfft(x), n_out)`` with an independent complex ``W`` per channel.

    With ``init="identity"`` the real part starts at a rectangular identity
    scaled by ``n_out / n_in`` (amplitude-preserving) plus noise, so a square
    block starts close to the identity map.
    """

    def __init__(self, channels, n_in, n_out=None, rng=None, init="identity", std=INIT_STD):
        n_out = n_in if n_out is None else n_out
        rng = _rng(rng)
        self.channels, self.n_in, self.n_out = channels, n_in, n_out
        f_in, f_out = n_in // 2 + 1, n_out // 2 + 1
        shape = (channels, f_out, f_in)
        re = rng.normal(0.0, std, shape)
        im = rng.normal(0.0, std, shape)
        if init == "identity":
            re += np.eye(f_out, f_in) * (n_out / n_in)
        elif init != "normal":
            raise ValueError(f"unknown FT init {init!r}")
        self.w_re = Tensor(re, requires_grad=True)
        self.w_im = Tensor(im, requires_grad=True)

    def parameters(self):
        return {"w_re": self.w_re, "w_im": self.w_im}

    def __call__(self, x):
        if x.shape[-2:] != (self.channels, self.n_in):
            raise ValueError(
                f"FT block expects (..., {self.channels}, {self.n_in}), got {x.shape}")
        spec = ops.rfft(x)
        return ops.irfft(ops.spectral_matmul(self.w_re, self.w_im, spec), self.n_out)


class SVDBlock:
    """``act((U_x * U_phi) @ diag(S_x * S_phi) @ (V_x * V_phi))``.

    The input must be oriented ``(features, time)`` with features <= time;
    ``phi`` has exactly that shape and is shared across the batch.
    """

    def __init__(self, features, length, activation="relu", rng=None, std=INIT_STD):
        if features > length:
            raise ValueError(
                f"SVD block needs features <= time, got ({features}, {length}); "
                "transpose the input at the model layer")
        rng = _rng(rng)
        self.features, self.length = features, length
        self.activation = activation
        self.phi = Tensor(rng.normal(0.0, std, (features, length)), requires_grad=True)

    def parameters(self):
        return {"phi": self.phi}

    def pre_activation(self, x):
        if x.shape[-2] > x.shape[-1]:
            raise ValueError(
                f"SVD block input {x.shape} has more features than time steps; transpose it")
        if x.shape[-2:] != self.phi.shape:
            raise ValueError(f"SVD block expects (..., {self.features}, {self.length}), got {x.shape}")
        ux, sx, vx = ops.svd(x)
        up, sp, vp = ops.svd(self.phi)
        u = ops.mul(ux, up)
        s = ops.mul(sx, sp)
        v = ops.mul(vx, vp)
        return ops.matmul(ops.mul(u, ops.reshape(s, s.shape[:-1] + (1, s.shape[-1]))), v)

    def __call__(self, x):
        return ops.activation(self.pre_activation(x), self.activation)


class SparseMatrixBlock:
    """Masked linear map on the time axis: ``x @ (mask * phi).T``."""

    def __init__(self, n_in, n_out=None, mask=None, band_widths=DEFAULT_BAND_WIDTHS,
                 global_rows=DEFAULT_GLOBAL_ROWS, rng=None, std=INIT_STD):
        n_out = n_in if n_out is None else n_out
        rng = _rng(rng)
        if mask is None:
            mask = build_default_mask(n_out, n_in, band_widths, global_rows)
        mask = np.array(mask, dtype=float)
        if mask.shape != (n_out, n_in):
            raise ValueError(f"mask shape {mask.shape} != ({n_out}, {n_in})")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        mask.setflags(write=False)
        self.n_in, self.n_out = n_in, n_out
        self._mask = mask
        self.phi_m = Tensor(rng.normal(0.0, std, (n_out, n_in)), requires_grad=True)

    @property
    def mask(self):
        return self._mask

    def parameters(self):
        return {"phi_m": self.phi_m}

    def __call__(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"matrix block expects time length {self.n_in}, got {x.shape}")
        return ops.transpose(ops.masked_matmul(self.phi_m, self._mask, ops.transpose(x)))


class ConvBlock:
    def __init__(self, c_in, c_out=None, kernel_size=3, rng=None, std=INIT_STD, kernels=None):
        c_out = c_in if c_out is None else c_out
        if kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel_size}")
        rng = _rng(rng)
        if kernels is None:
            kernels = rng.normal(0.0, std, (c_out, c_in, kernel_size))
        self.kernels = Tensor(kernels, requires_grad=True)

    def parameters(self):
        return {"kernels": self.kernels}

    def __call__(self, x):
        return ops.conv1d(x, self.kernels, mode="same")


class TimeProjection:
    """Dense ``(n_out, n_in)`` map on the time axis, shared by all channels."""

    def __init__(self, n_in, n_out, rng=None, std=INIT_STD):
        rng = _rng(rng)
        self.weight = Tensor(rng.normal(0.0, std, (n_out, n_in)), requires_grad=True)

    def parameters(self):
        return {"weight": self.weight}

    def __call__(self, x):
        return ops.matmul(x, ops.transpose(self.weight))
