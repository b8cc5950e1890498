"""Numeric checks of the linear-algebra identities behind the blocks.

Every check builds its reference independently (explicit sums, explicit
matrices) and compares against the library route. Results carry the
measured error and the tolerance; ``gated`` results decide the exit status
of the ``verify`` command, the others are reported for information.
"""
from dataclasses import dataclass

import numpy as np

from . import fft, ops
from .blocks import ConvBlock, FTBlock
from .linalg import svd_factors
from .tensor import Tensor, no_grad

__all__ = [
    "VerificationResult", "circular_convolution", "conv_matrix", "circulant_kernel_matrix",
    "verify_circular_conv_theorem", "verify_conv_matrix_equiv",
    "verify_two_layer_receptive_field", "verify_kernel_frequency",
    "verify_attention_as_matrix", "verify_ft_block_dft_matrices", "verify_svd_factors",
    "run_all", "format_results", "printed_corner_coefficient", "attention_literal_readings",
    "attention_forms", "LINEAR_TOL", "SVD_TOL",
]

LINEAR_TOL = 1e-10
SVD_TOL = 1e-8


@dataclass
class VerificationResult:
    name: str
    max_abs_error: float
    tolerance: float
    instance: str
    gated: bool = True

    @property
    def passed(self):
        return bool(self.max_abs_error <= self.tolerance)


def circular_convolution(x, h):
    """``y[n] = sum_m x[m] h[(n - m) mod N]`` by the defining double sum."""
    x, h = np.asarray(x, dtype=float), np.asarray(h, dtype=float)
    n = len(x)
    return np.array([sum(x[m] * h[(k - m) % n] for m in range(n)) for k in range(n)])


def verify_circular_conv_theorem(n=64, trials=100, seed=0, tol=LINEAR_TOL):
    """Spectrum of a circular convolution equals the product of spectra.

    Also runs the library ``conv1d`` in circular mode with a centred odd kernel
    and checks it against the same double sum.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(seed)
    err = 0.0
    for _ in range(trials):
        x, h = rng.standard_normal(n), rng.standard_normal(n)
        y = circular_convolution(x, h)
        lhs = fft.rfft_array(y)
        rhs = fft.rfft_array(x) * fft.rfft_array(h)
        err = max(err, float(np.max(np.abs(lhs - rhs))))
    k = min(5, n - 1 if n % 2 == 0 else n)
    kern = rng.standard_normal(k)
    p = (k - 1) // 2
    full = np.zeros(n)
    for j in range(k):
        full[(j - p) % n] += kern[j]
    x = rng.standard_normal(n)
    with no_grad():
        lib = ops.conv1d(x[None, :], kern[None, None, :], mode="circular").data[0]
    err = max(err, float(np.max(np.abs(lib - circular_convolution(x, full)))))
    return VerificationResult("circular_conv_theorem", err, tol,
                              f"n={n}, trials={trials}, seed={seed}")


def conv_matrix(kernels, n):
    """Explicit block matrix of a zero-padded ``same`` convolution.

    The flattened input ``(C_in * N,)`` is first replicated once per output
    channel by ``1_O (x) I``; a block-diagonal matrix whose blocks hold the
    banded kernel matrices then maps the stack to ``(C_out * N,)``.
    Returns ``(full_matrix, replicate, kernel_blocks)``.
    """
    kernels = np.asarray(kernels, dtype=float)
    c_out, c_in, k = kernels.shape
    p = (k - 1) // 2
    blocks = np.zeros((c_out * n, c_out * c_in * n))
    for o in range(c_out):
        for c in range(c_in):
            col0 = o * c_in * n + c * n
            for i in range(n):
                for j in range(k):
                    src = i - (j - p)
                    if 0 <= src < n:
                        blocks[o * n + i, col0 + src] += kernels[o, c, j]
    replicate = np.kron(np.ones((c_out, 1)), np.eye(c_in * n))
    return blocks @ replicate, replicate, blocks


def verify_conv_matrix_equiv(n=16, c_in=2, c_out=3, k=3, seed=0, tol=LINEAR_TOL):
    rng = np.random.default_rng(seed)
    block = ConvBlock(c_in, c_out, k, kernels=rng.standard_normal((c_out, c_in, k)))
    x = rng.standard_normal((c_in, n))
    full, _, kernel_blocks = conv_matrix(block.kernels.data, n)
    with no_grad():
        y = block(Tensor(x)).data
    err = float(np.max(np.abs(full @ x.reshape(-1) - y.reshape(-1))))
    worst_row = int(max(np.count_nonzero(full, axis=1).max(),
                        np.count_nonzero(kernel_blocks, axis=1).max()))
    if worst_row > k * c_in:
        err = np.inf
    return VerificationResult("conv_matrix_equiv", err, tol,
                              f"N={n}, C_in={c_in}, C_out={c_out}, K={k}, seed={seed}, "
                              f"max row nonzeros={worst_row} (bound {k * c_in})")


def circulant_kernel_matrix(h, n):
    """Matrix of ``x -> x (*) h`` for ``h`` zero-padded to ``n``, built column by column."""
    full = np.zeros(n)
    full[: len(h)] = h
    return np.stack([circular_convolution(e, full) for e in np.eye(n)], axis=1)


# offset (i - j) mod N of the squared length-3 circulant -> coefficient
def _two_layer_terms(h):
    h0, h1, h2 = h
    return {0: h0 * h0, 1: 2 * h0 * h1, 2: 2 * h0 * h2 + h1 * h1, 3: 2 * h1 * h2, 4: h2 * h2}


def verify_two_layer_receptive_field(h=None, n=12, seed=0, tol=LINEAR_TOL):
    """Squared circulant of a 3-tap kernel has the expected 5-band pattern."""
    if n < 6:
        raise ValueError("n must be >= 6")
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(3) if h is None else np.asarray(h, dtype=float)
    single = circulant_kernel_matrix(h, n)
    double = single @ single
    expected = np.zeros((n, n))
    for off, val in _two_layer_terms(h).items():
        for i in range(n):
            expected[i, (i - off) % n] = val
    err = float(np.max(np.abs(double - expected)))
    nnz1 = int(np.count_nonzero(np.abs(single) > 0, axis=1).max())
    nnz2 = int(np.count_nonzero(np.abs(double) > 0, axis=1).max())
    generic = np.all(h != 0) and abs(2 * h[0] * h[2] + h[1] ** 2) > 0
    if generic and (nnz1, nnz2) != (3, 5):
        err = np.inf
    return VerificationResult("two_layer_receptive_field", err, tol,
                              f"N={n}, seed={seed}, row nonzeros {nnz1} -> {nnz2}")


def printed_corner_coefficient(h=None, n=12, seed=0, tol=LINEAR_TOL):
    """Compare entry (0, N-2) with ``h0*h2 + h1**2`` as typeset in the reference table.

    The true entry is ``2*h0*h2 + h1**2``, so this only matches when
    ``h0*h2 == 0``; it is reported, not gated.
    """
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(3) if h is None else np.asarray(h, dtype=float)
    single = circulant_kernel_matrix(h, n)
    entry = (single @ single)[0, n - 2]
    err = abs(entry - (h[0] * h[2] + h[1] ** 2))
    return VerificationResult("two_layer_printed_corner", float(err), tol,
                              f"N={n}, seed={seed}, entry={entry:.6g}", gated=False)


def verify_kernel_frequency(h=None, n=32, seed=0, tol=LINEAR_TOL):
    """Spectrum of a zero-padded 3-tap kernel is ``h0 + h1 w^k + h2 w^2k``.

    Fitting the full length-N spectrum on the basis ``w^{jk}``, j = 0..3,
    must return exactly the three taps and a zero cubic coefficient.
    """
    if n < 4:
        raise ValueError("n must be >= 4")
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(3) if h is None else np.asarray(h, dtype=float)
    padded = np.zeros(n)
    padded[:3] = h
    k = np.arange(n)
    w = np.exp(-2j * np.pi * k / n)
    closed = h[0] + h[1] * w + h[2] * w ** 2
    spec = fft.rfft_array(padded)
    err = float(np.max(np.abs(spec - closed[: n // 2 + 1])))
    basis = np.stack([w ** j for j in range(4)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, fft.fft(padded), rcond=None)
    err = max(err, float(np.max(np.abs(coef - np.r_[h, 0.0]))))
    return VerificationResult("kernel_frequency", err, tol,
                              f"N={n}, seed={seed}")


def _softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _masked_softmax(s, mask):
    # softmax over the unmasked entries of each row, zero elsewhere
    z = np.where(mask > 0, s, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_forms(n_tokens=6, d_model=8, heads=2, seed=0):
    """Per-head attention and its single masked-matrix rewriting.

    Returns a dict with the reference output, the block-softmax rewriting,
    the rewriting through ``X~ W_QK X~^T`` and the two literal single-softmax
    readings.
    """
    if d_model % heads:
        raise ValueError("d_model must be divisible by heads")
    rng = np.random.default_rng(seed)
    dk = d_model // heads
    x = rng.standard_normal((n_tokens, d_model))
    wq, wk, wv = (rng.standard_normal((d_model, d_model)) / np.sqrt(d_model) for _ in range(3))
    wo = rng.standard_normal((d_model, d_model)) / np.sqrt(d_model)
    q, k, v = x @ wq, x @ wk, x @ wv
    cols = [slice(i * dk, (i + 1) * dk) for i in range(heads)]
    head_out, head_probs = [], []
    for c in cols:
        a = _softmax(q[:, c] @ k[:, c].T / np.sqrt(dk))
        head_probs.append(a)
        head_out.append(a @ v[:, c])
    reference = np.concatenate(head_out, axis=1) @ wo

    # heads stacked along rows: (h*n, dk)
    q_hat = np.concatenate([q[:, c] for c in cols], axis=0)
    k_hat = np.concatenate([k[:, c] for c in cols], axis=0)
    v_hat = np.concatenate([v[:, c] for c in cols], axis=0)
    mask = np.kron(np.eye(heads), np.ones((n_tokens, n_tokens)))
    scores = q_hat @ k_hat.T / np.sqrt(dk)

    def unstack(stacked):
        return np.concatenate(np.split(stacked, heads, axis=0), axis=1) @ wo

    blockwise = unstack(_masked_softmax(scores, mask) @ v_hat)

    x_tilde = np.kron(np.eye(heads), x)
    w_qk = np.zeros((heads * d_model, heads * d_model))
    w_v = np.zeros((heads * d_model, dk))
    for i, c in enumerate(cols):
        rows = slice(i * d_model, (i + 1) * d_model)
        w_qk[rows, rows] = wq[:, c] @ wk[:, c].T / np.sqrt(dk)
        w_v[rows] = wv[:, c]
    via_wqk = unstack(_masked_softmax(x_tilde @ w_qk @ x_tilde.T, mask) @ (x_tilde @ w_v))

    literal_mask_first = unstack(_softmax(scores * mask) @ v_hat)
    literal_mask_after = unstack((_softmax(scores) * mask) @ v_hat)
    return {"reference": reference, "blockwise": blockwise, "via_wqk": via_wqk,
            "literal_mask_first": literal_mask_first,
            "literal_mask_after": literal_mask_after, "head_probs": head_probs}


def verify_attention_as_matrix(n_tokens=6, d_model=8, heads=2, seed=0, tol=LINEAR_TOL):
    forms = attention_forms(n_tokens, d_model, heads, seed)
    ref = forms["reference"]
    err = max(float(np.max(np.abs(forms["blockwise"] - ref))),
              float(np.max(np.abs(forms["via_wqk"] - ref))))
    rowsum = max(float(np.max(np.abs(a.sum(axis=1) - 1.0))) for a in forms["head_probs"])
    return VerificationResult("attention_as_matrix", max(err, rowsum), tol,
                              f"n={n_tokens}, d={d_model}, heads={heads}, seed={seed}")


def attention_literal_readings(n_tokens=6, d_model=8, heads=2, seed=0, tol=LINEAR_TOL):
    """Single softmax over the whole masked matrix, both placements; informational."""
    forms = attention_forms(n_tokens, d_model, heads, seed)
    ref = forms["reference"]
    out = []
    for key in ("literal_mask_first", "literal_mask_after"):
        out.append(VerificationResult(f"attention_{key}", float(np.max(np.abs(forms[key] - ref))),
                                      tol, f"n={n_tokens}, d={d_model}, heads={heads}, seed={seed}",
                                      gated=False))
    return out


def verify_ft_block_dft_matrices(n_in=16, n_out=8, channels=2, seed=0, tol=1e-9):
    """FT block against ``Re(F_out^-1 E W F_in x)`` built from explicit DFT matrices."""
    rng = np.random.default_rng(seed)
    block = FTBlock(channels, n_in, n_out, rng=rng, init="normal", std=1.0)
    x = rng.standard_normal((channels, n_in))
    f_in, f_out = n_in // 2 + 1, n_out // 2 + 1
    kk, nn = np.meshgrid(np.arange(f_in), np.arange(n_in), indexing="ij")
    forward = np.exp(-2j * np.pi * kk * nn / n_in)
    # Hermitian extension of the kept bins, then the inverse DFT
    ext = np.zeros((n_out, f_out), dtype=complex)
    ext[:f_out, :f_out] = np.eye(f_out)
    ext_conj = np.zeros((n_out, f_out))
    for m in range(f_out, n_out):
        ext_conj[m, n_out - m] = 1.0
    tt, mm = np.meshgrid(np.arange(n_out), np.arange(n_out), indexing="ij")
    inverse = np.exp(2j * np.pi * tt * mm / n_out) / n_out
    w = block.w_re.data + 1j * block.w_im.data
    ref = np.empty((channels, n_out))
    for c in range(channels):
        spec = w[c] @ (forward @ x[c])
        spec[0] = spec[0].real
        if n_out % 2 == 0:
            spec[-1] = spec[-1].real
        ref[c] = (inverse @ (ext @ spec + ext_conj @ np.conj(spec))).real
    with no_grad():
        out = block(Tensor(x)).data
    return VerificationResult("ft_block_dft_matrices", float(np.max(np.abs(out - ref))),
                              tol, f"n_in={n_in}, n_out={n_out}, seed={seed}")


def verify_svd_factors(k=4, n=12, seed=0, tol=SVD_TOL):
    """Reconstruction, orthonormality and agreement with ``eig(x x^T)``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((k, n))
    u, s, v = svd_factors(x)
    err = float(np.max(np.abs(u @ np.diag(s) @ v - x)))
    err = max(err, float(np.max(np.abs(u.T @ u - np.eye(k)))),
              float(np.max(np.abs(v @ v.T - np.eye(k)))))
    evals = np.linalg.eigvalsh(x @ x.T)[::-1]
    err = max(err, float(np.max(np.abs(s - np.sqrt(np.clip(evals, 0, None))))))
    return VerificationResult("svd_factors", err, tol, f"k={k}, n={n}, seed={seed}")


def run_all(seeds=range(5), tolerance=None):
    """Every check on every seed; ``tolerance`` overrides all gated tolerances."""
    lin = LINEAR_TOL if tolerance is None else tolerance
    svd_tol = SVD_TOL if tolerance is None else tolerance
    ft_tol = 1e-9 if tolerance is None else tolerance
    results = []
    for s in seeds:
        results.append(verify_circular_conv_theorem(64, 100, seed=s, tol=lin))
        results.append(verify_conv_matrix_equiv(8, 1, 1, 3, seed=s, tol=lin))
        results.append(verify_conv_matrix_equiv(16, 2, 3, 3, seed=s, tol=lin))
        results.append(verify_two_layer_receptive_field(n=12, seed=s, tol=lin))
        results.append(verify_kernel_frequency(n=32, seed=s, tol=lin))
        results.append(verify_attention_as_matrix(6, 8, 2, seed=s, tol=lin))
        results.append(verify_attention_as_matrix(8, 16, 4, seed=s, tol=lin))
        results.append(verify_ft_block_dft_matrices(16, 8, seed=s, tol=ft_tol))
        results.append(verify_svd_factors(4, 12, seed=s, tol=svd_tol))
    results.append(printed_corner_coefficient(seed=0))
    results.extend(attention_literal_readings(6, 8, 2, seed=0))
    return results


def format_results(results):
    lines = [f"{'check':32s} {'max error':>11s} {'tol':>9s}  status  instance"]
    for r in results:
        status = ("PASS" if r.passed else "FAIL") if r.gated else "info"
        lines.append(f"{r.name:32s} {r.max_abs_error:11.3e} {r.tolerance:9.1e}  {status:6s}  {r.instance}")
    return "\n".join(lines)
