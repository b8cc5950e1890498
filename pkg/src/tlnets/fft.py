"""Discrete Fourier transforms on the last axis.

Power-of-two lengths go through an iterative radix-2 Cooley-Tukey kernel;
every other length is reduced to a power-of-two circular convolution with
Bluestein's chirp-z trick. All leading axes are treated as a batch. Real
transforms of even length pack the signal into a half-length complex one.
"""
from functools import lru_cache

import numpy as np

__all__ = ["fft", "ifft", "rfft_array", "irfft_array", "hermitian_extend",
           "dft_direct", "idft_direct"]

_LEAF = 32


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _bit_reverse(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _unit_roots(num, m):
    # exp(-2j pi num / m) with num reduced mod m first for accuracy
    return np.exp(-2j * np.pi * (np.asarray(num) % m) / m)


@lru_cache(maxsize=256)
def _twiddles(m):
    return _unit_roots(np.arange(m // 2), m)


@lru_cache(maxsize=16)
def _leaf_matrix(m):
    k = np.arange(m)
    return _unit_roots(np.outer(k, k), m)


def _radix2(x):
    n = x.shape[-1]
    lead = x.shape[:-1]
    rows = int(np.prod(lead, dtype=int))
    # the first log2(leaf) butterfly stages collapse into one small DFT per
    # decimated subsequence, done as a single matrix product
    leaf = min(n, _LEAF)
    stride = n // leaf
    sub = x.reshape(rows, leaf, stride).transpose(1, 0, 2).reshape(leaf, rows * stride)
    sub = (_leaf_matrix(leaf) @ sub).reshape(leaf, rows, stride).transpose(1, 2, 0)
    x = sub[:, _bit_reverse(stride), :].reshape(rows, n)
    m = 2 * leaf
    while m <= n:
        half = m // 2
        blocks = x.reshape(rows, n // m, 2, half)
        t = blocks[:, :, 1, :] * _twiddles(m)
        out = np.empty_like(blocks)
        np.add(blocks[:, :, 0, :], t, out=out[:, :, 0, :])
        np.subtract(blocks[:, :, 0, :], t, out=out[:, :, 1, :])
        x = out.reshape(rows, n)
        m <<= 1
    return x.reshape(lead + (n,))


@lru_cache(maxsize=64)
def _bluestein_plan(n):
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:])[::-1]
    return m, chirp, _radix2(b)


def _bluestein(x):
    n = x.shape[-1]
    m, chirp, b_hat = _bluestein_plan(n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=complex)
    a[..., :n] = x * chirp
    conv = np.conj(_radix2(np.conj(_radix2(a) * b_hat))) / m
    return conv[..., :n] * chirp


def fft(x):
    """Forward DFT, ``X[k] = sum_n x[n] exp(-2j pi k n / N)``, on the last axis."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("cannot transform an empty axis")
    if n == 1:
        return x.copy()
    if _is_pow2(n):
        return _radix2(x)
    return _bluestein(x)


def ifft(x):
    """Inverse DFT with the 1/N normalisation on the inverse."""
    x = np.asarray(x, dtype=complex)
    return np.conj(fft(np.conj(x))) / x.shape[-1]


@lru_cache(maxsize=64)
def _pack_twiddles(n):
    return _unit_roots(np.arange(n // 2 + 1), n)


def rfft_array(x):
    """Nonredundant bins ``0..N//2`` of the DFT of a real signal."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if n % 2 or n < 4:
        return fft(x)[..., : n // 2 + 1]
    z = fft(x[..., 0::2] + 1j * x[..., 1::2])
    zk = np.concatenate([z, z[..., :1]], axis=-1)
    zr = np.conj(zk[..., ::-1])
    even = 0.5 * (zk + zr)
    odd = -0.5j * (zk - zr)
    return even + _pack_twiddles(n) * odd


def hermitian_extend(spec, n):
    """Full length-``n`` spectrum whose upper half mirrors ``conj(spec)``."""
    n_freq = spec.shape[-1]
    if n_freq != n // 2 + 1:
        raise ValueError(f"{n_freq} bins do not match output length {n} (expected {n // 2 + 1})")
    full = np.zeros(spec.shape[:-1] + (n,), dtype=complex)
    full[..., :n_freq] = spec
    upper = n - n_freq
    if upper > 0:
        full[..., n_freq:] = np.conj(spec[..., 1:upper + 1][..., ::-1])
    return full


def irfft_array(spec, n):
    """Real inverse transform of a half spectrum.

    The interior bins are mirrored as conjugates and the real part of the
    full inverse DFT is returned, so any imaginary part left on bin 0 (and on
    the Nyquist bin for even ``n``) is discarded.
    """
    spec = np.asarray(spec, dtype=complex)
    if spec.shape[-1] != n // 2 + 1:
        raise ValueError(
            f"{spec.shape[-1]} bins do not match output length {n} (expected {n // 2 + 1})")
    if n % 2 or n < 4:
        return ifft(hermitian_extend(spec, n)).real
    h = n // 2
    spec = spec.copy()
    spec[..., 0] = spec[..., 0].real
    spec[..., h] = spec[..., h].real
    rev = np.conj(spec[..., ::-1])
    even = 0.5 * (spec + rev)
    odd = 0.5 * (spec - rev) * np.conj(_pack_twiddles(n))
    z = ifft((even + 1j * odd)[..., :h])
    out = np.empty(spec.shape[:-1] + (n,))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


@lru_cache(maxsize=64)
def _dft_matrix(n):
    k = np.arange(n)
    return _unit_roots(np.outer(k, k), n)


def dft_direct(x):
    """O(N^2) reference DFT, used as an oracle."""
    x = np.asarray(x, dtype=complex)
    return x @ _dft_matrix(x.shape[-1]).T


def idft_direct(spec):
    spec = np.asarray(spec, dtype=complex)
    n = spec.shape[-1]
    return spec @ np.conj(_dft_matrix(n)).T / n
