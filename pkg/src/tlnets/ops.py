"""Differentiable primitives.

Each op computes its value with numpy and, when a graph is active and some
input requires gradients, appends one node carrying its backward rule.
Whole-block operations (FFTs, SVD, convolution) are single nodes.
"""
import numpy as np
from scipy.special import erf

from . import fft as _fft
from .linalg import svd_factors
from .tensor import Tensor, as_tensor, current_graph

__all__ = [
    "add", "sub", "mul", "matmul", "masked_matmul", "transpose", "reshape",
    "sum", "mean", "square", "absolute", "relu", "gelu", "tanh", "activation",
    "conv1d", "rfft", "irfft", "spectral_matmul", "svd", "SVD_EPS",
]

SVD_EPS = 1e-12
ACTIVATIONS = ("relu", "gelu", "tanh")


def _graph_for(*inputs):
    g = current_graph()
    if g is None:
        return None
    if any(t.requires_grad for t in inputs):
        return g
    return None


def _emit(op, inputs, values, backward):
    """Wrap ``values`` as tensors and record them if any input needs grads."""
    single = not isinstance(values, tuple)
    arrs = (values,) if single else values
    outs = [Tensor._wrap(a) for a in arrs]
    g = _graph_for(*inputs)
    if g is not None:
        g.record(op, inputs, outs, backward)
    return outs[0] if single else tuple(outs)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("add", [a, b], a.data + b.data,
                 lambda g: [_unbroadcast(g[0], a.shape), _unbroadcast(g[0], b.shape)])


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit("sub", [a, b], a.data - b.data,
                 lambda g: [_unbroadcast(g[0], a.shape), _unbroadcast(-g[0], b.shape)])


def mul(a, b):
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return [_unbroadcast(g[0] * np.conj(b.data), a.shape),
                _unbroadcast(g[0] * np.conj(a.data), b.shape)]

    return _emit("mul", [a, b], a.data * b.data, backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        g = g[0]
        return [_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape),
                _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)]

    return _emit("matmul", [a, b], a.data @ b.data, backward)


def masked_matmul(w, mask, x):
    """``(w * mask) @ x`` with ``mask`` a fixed binary matrix.

    The gradient reaching ``w`` is multiplied by the mask, so it is exactly
    zero at every masked-out entry.
    """
    w, x = as_tensor(w), as_tensor(x)
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=float)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask entries must be 0 or 1")
    if m.shape != w.shape:
        raise ValueError(f"mask shape {m.shape} does not match weight shape {w.shape}")
    if w.shape[-1] != x.shape[-2]:
        raise ValueError(f"masked_matmul: incompatible shapes {w.shape} and {x.shape}")
    eff = w.data * m

    def backward(g):
        g = g[0]
        gw = _unbroadcast(g @ np.swapaxes(x.data, -1, -2), w.shape) * m
        gx = _unbroadcast(np.swapaxes(eff, -1, -2) @ g, x.shape)
        return [gw, gx]

    return _emit("masked_matmul", [w, x], eff @ x.data, backward)


def transpose(x):
    """Swap the last two axes."""
    x = as_tensor(x)
    return _emit("transpose", [x], np.swapaxes(x.data, -1, -2),
                 lambda g: [np.swapaxes(g[0], -1, -2)])


def reshape(x, shape):
    x = as_tensor(x)
    return _emit("reshape", [x], x.data.reshape(shape), lambda g: [g[0].reshape(x.shape)])


def sum(x, axis=None):
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def backward(g):
        g = g[0]
        if axis is not None:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, x.shape).copy()]

    return _emit("sum", [x], np.asarray(out), backward)


def mean(x):
    x = as_tensor(x)
    n = x.size
    return _emit("mean", [x], np.asarray(x.data.mean()),
                 lambda g: [np.full(x.shape, g[0] / n)])


def square(x):
    x = as_tensor(x)
    return _emit("square", [x], x.data * x.data, lambda g: [2.0 * x.data * g[0]])


def absolute(x):
    x = as_tensor(x)
    return _emit("abs", [x], np.abs(x.data), lambda g: [np.sign(x.data) * g[0]])


def relu(x):
    x = as_tensor(x)
    return _emit("relu", [x], np.maximum(x.data, 0.0), lambda g: [g[0] * (x.data > 0)])


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    return _emit("gelu", [x], x.data * cdf, lambda g: [g[0] * (cdf + x.data * pdf)])


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _emit("tanh", [x], y, lambda g: [g[0] * (1.0 - y * y)])


def activation(x, kind="relu"):
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def conv1d(x, kernels, mode="same"):
    """Length-preserving 1D convolution over the last axis.

    ``x`` is ``(..., C_in, N)`` and ``kernels`` is ``(C_out, C_in, K)`` with K
    odd; tap ``j`` multiplies ``x[n - (j - (K - 1) // 2)]`` (a true
    convolution, centred). ``mode`` is ``"same"`` for zero padding or
    ``"circular"`` for indices taken mod N.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if mode not in ("same", "circular"):
        raise ValueError(f"unknown conv mode {mode!r}")
    if kernels.ndim != 3 or x.ndim < 2 or kernels.shape[1] != x.shape[-2]:
        raise ValueError(f"conv1d: kernels {kernels.shape} do not fit input {x.shape}")
    k = kernels.shape[-1]
    n = x.shape[-1]
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if k > n:
        raise ValueError(f"kernel size {k} exceeds sequence length {n}")
    p = (k - 1) // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(p, p)]
    xp = np.pad(x.data, pad, mode="wrap" if mode == "circular" else "constant")
    h = kernels.data
    cols = [xp[..., 2 * p - j: 2 * p - j + n] for j in range(k)]
    out = np.zeros(x.shape[:-2] + (h.shape[0], n))
    for j in range(k):
        out += np.einsum("oc,...cn->...on", h[:, :, j], cols[j])

    def backward(g):
        g = g[0]
        gxp = np.zeros_like(xp)
        gh = np.empty_like(h)
        for j in range(k):
            gxp[..., 2 * p - j: 2 * p - j + n] += np.einsum("oc,...on->...cn", h[:, :, j], g)
            gh[:, :, j] = np.einsum("bon,bcn->oc", g.reshape((-1,) + g.shape[-2:]),
                                    cols[j].reshape((-1,) + cols[j].shape[-2:]))
        gx = gxp[..., p: p + n].copy()
        if mode == "circular" and p:
            gx[..., n - p:] += gxp[..., :p]
            gx[..., :p] += gxp[..., p + n:]
        return [gx, gh]

    return _emit("conv1d", [x, kernels], out, backward)


def rfft(x):
    """Real DFT over the last axis keeping bins ``0..N//2`` (complex tensor)."""
    x = as_tensor(x)
    n = x.shape[-1]
    if n < 2:
        raise ValueError(f"rfft needs at least 2 samples, got {n}")
    n_freq = n // 2 + 1

    def backward(g):
        full = np.zeros(x.shape[:-1] + (n,), dtype=complex)
        full[..., :n_freq] = g[0]
        return [_fft.fft(np.conj(full)).real]

    return _emit("rfft", [x], _fft.rfft_array(x.data), backward)


def irfft(spec, out_len):
    """Inverse of :func:`rfft`; imaginary parts of bin 0 and Nyquist are dropped."""
    spec = as_tensor(spec)
    n_freq = spec.shape[-1]
    if n_freq != out_len // 2 + 1:
        raise ValueError(
            f"spectrum has {n_freq} bins but out_len={out_len} needs {out_len // 2 + 1}")
    weights = np.full(n_freq, 2.0)
    weights[0] = 1.0
    if out_len % 2 == 0:
        weights[-1] = 1.0

    def backward(g):
        return [weights / out_len * _fft.rfft_array(g[0])]

    return _emit("irfft", [spec], _fft.irfft_array(spec.data, out_len), backward)


def spectral_matmul(w_re, w_im, spec):
    """Per-channel complex matrix applied to a spectrum.

    ``w_re``/``w_im`` are ``(C, F_out, F_in)``, ``spec`` is ``(..., C, F_in)``;
    returns ``(..., C, F_out)`` with ``out[c] = (w_re[c] + 1j w_im[c]) @ spec[c]``.
    """
    w_re, w_im, spec = as_tensor(w_re), as_tensor(w_im), as_tensor(spec)
    if w_re.shape != w_im.shape:
        raise ValueError("real and imaginary weights differ in shape")
    if w_re.ndim != 3 or spec.shape[-2:] != (w_re.shape[0], w_re.shape[2]):
        raise ValueError(f"spectral weights {w_re.shape} do not fit spectrum {spec.shape}")
    w = w_re.data + 1j * w_im.data
    lead = spec.shape[:-2]
    c, f_out, f_in = w.shape
    # channel-major (C, F_in, B) layout turns the op into one batched GEMM
    xs = np.moveaxis(spec.data.reshape((-1, c, f_in)), 0, -1)
    out = np.moveaxis(w @ xs, -1, 0).reshape(lead + (c, f_out))

    def backward(g):
        gs = np.moveaxis(g[0].reshape((-1, c, f_out)), 0, -1)
        gw = gs @ np.conj(np.swapaxes(xs, -1, -2))
        gx = np.conj(np.swapaxes(w, -1, -2)) @ gs
        return [gw.real, gw.imag, np.moveaxis(gx, -1, 0).reshape(lead + (c, f_in))]

    return _emit("spectral_matmul", [w_re, w_im, spec], out, backward)


def _safe_inverse(s):
    return s / (s * s + SVD_EPS)


def svd(x):
    """Differentiable thin SVD, ``x = U @ diag(S) @ V`` for ``(..., k, n)``, k <= n.

    The backward pass uses the analytic rule with the off-diagonal coupling
    ``(s_j^2 - s_i^2) / ((s_j^2 - s_i^2)^2 + eps)``, which equals
    ``1 / (s_j^2 - s_i^2)`` away from degenerate spectra.
    """
    x = as_tensor(x)
    u, s, v = svd_factors(x.data)

    def backward(g):
        gu, gs, gv = g
        ut = np.swapaxes(u, -1, -2)
        vt = np.swapaxes(v, -1, -2)
        s2 = s * s
        diff = s2[..., None, :] - s2[..., :, None]
        coupling = diff / (diff * diff + SVD_EPS)
        j = ut @ gu
        kv = v @ np.swapaxes(gv, -1, -2)
        inner = (coupling * (j - np.swapaxes(j, -1, -2))) * s[..., None, :]
        inner = inner + s[..., :, None] * (coupling * (kv - np.swapaxes(kv, -1, -2)))
        k = s.shape[-1]
        idx = np.arange(k)
        inner[..., idx, idx] += gs
        gx = u @ inner @ v
        proj = gv - (gv @ vt) @ v
        gx = gx + u @ (_safe_inverse(s)[..., :, None] * proj)
        return [gx]

    return _emit("svd", [x], (u, s, v), backward)
