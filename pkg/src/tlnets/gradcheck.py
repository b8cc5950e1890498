"""Central finite-difference gradient checks against the tape."""
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Graph, Tensor, no_grad

__all__ = ["GradCheckResult", "numerical_gradient", "check_gradients"]


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.rel_error <= self.tolerance


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, step=1e-6):
    """Central differences of ``fn()`` in every entry of ``param``.

    Complex parameters are perturbed along the real and imaginary axes
    separately and the result packed as ``dRe + 1j * dIm``.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    directions = (1.0, 1j) if np.iscomplexobj(flat) else (1.0,)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            for d in directions:
                flat[i] = orig + step * d
                up = fn().item()
                flat[i] = orig - step * d
                down = fn().item()
                flat[i] = orig
                out[i] += d * (up - down) / (2 * step)
    return grad


def relative_error(analytic, numeric):
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-10)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], names=None,
                    step=1e-6, tol=1e-4):
    """Compare tape gradients of the scalar ``fn()`` with central differences.

    ``fn`` must rebuild its computation from ``params`` on every call. Returns
    one :class:`GradCheckResult` per parameter.
    """
    for p in params:
        p.requires_grad = True
    with Graph() as graph:
        loss = fn()
    grads = graph.backward(loss)
    results = []
    for i, p in enumerate(params):
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        numeric = numerical_gradient(fn, p, step)
        name = names[i] if names else f"param{i}"
        results.append(GradCheckResult(name, relative_error(analytic, numeric), tol))
    return results


SVD_MIN_GAP = 1e-3
MODEL_ARCHS = ("ft_svd", "ft_matrix", "ft_conv", "conv_svd")


def spectrum_gap(x):
    """Smaller of the least gap between squared singular values of ``(..., k, n)`` and s_min^2."""
    s = np.linalg.svd(np.asarray(x), compute_uv=False)
    s2 = np.sort(s * s, axis=-1)
    gaps = np.diff(s2, axis=-1)
    smallest = gaps.min() if gaps.size else np.inf
    return float(min(smallest, s2[..., 0].min()))


def well_separated(rng, shape, scale=1.0, gap=SVD_MIN_GAP):
    """Gaussian sample whose squared singular values are pairwise more than ``gap`` apart."""
    for _ in range(1000):
        x = scale * rng.standard_normal(shape)
        if spectrum_gap(x) > gap:
            return x
    raise RuntimeError(f"could not draw a matrix with singular-value gaps > {gap}")


def _leaf(arr):
    return Tensor(arr, requires_grad=True)


def op_cases(seed):
    """``(name, fn, params)`` for every differentiable primitive."""
    from . import ops
    rng = np.random.default_rng(seed)
    r = rng.standard_normal
    probe = lambda *shape: r(shape)
    cases = []

    a, b = _leaf(r((3, 4))), _leaf(r((3, 4)))
    w = probe(3, 4)
    cases.append(("add", lambda: ops.sum(ops.mul(ops.add(a, b), w)), [a, b]))
    cases.append(("sub", lambda: ops.sum(ops.mul(ops.sub(a, b), w)), [a, b]))
    cases.append(("mul", lambda: ops.sum(ops.mul(ops.mul(a, b), w)), [a, b]))
    bc = _leaf(r((1, 4)))
    cases.append(("mul_broadcast", lambda: ops.sum(ops.mul(ops.mul(a, bc), w)), [a, bc]))

    m1, m2 = _leaf(r((2, 3, 4))), _leaf(r((4, 5)))
    wm = probe(2, 3, 5)
    cases.append(("matmul", lambda: ops.sum(ops.mul(ops.matmul(m1, m2), wm)), [m1, m2]))

    mw, mx = _leaf(r((5, 6))), _leaf(r((2, 6, 3)))
    mask = (rng.random((5, 6)) < 0.5).astype(float)
    wmm = probe(2, 5, 3)
    cases.append(("masked_matmul",
                  lambda: ops.sum(ops.mul(ops.masked_matmul(mw, mask, mx), wmm)), [mw, mx]))

    t = _leaf(r((2, 3, 4)))
    wtr = probe(2, 4, 3)
    cases.append(("transpose", lambda: ops.sum(ops.mul(ops.transpose(t), wtr)), [t]))
    wr = probe(6, 4)
    cases.append(("reshape", lambda: ops.sum(ops.mul(ops.reshape(t, (6, 4)), wr)), [t]))
    ws = probe(2, 4)
    cases.append(("sum_axis", lambda: ops.sum(ops.mul(ops.sum(t, axis=1), ws)), [t]))
    cases.append(("mean", lambda: ops.mul(ops.mean(ops.mul(t, t)), 3.0), [t]))
    wt = probe(2, 3, 4)
    cases.append(("square", lambda: ops.sum(ops.mul(ops.square(t), wt)), [t]))

    # keep nondifferentiable points out of reach of the finite-difference step
    away = r((3, 5))
    away = np.where(np.abs(away) < 0.1, 0.5, away)
    k = _leaf(away)
    wk = probe(3, 5)
    cases.append(("absolute", lambda: ops.sum(ops.mul(ops.absolute(k), wk)), [k]))
    for kind in ("relu", "gelu", "tanh"):
        cases.append((kind, lambda kind=kind: ops.sum(ops.mul(ops.activation(k, kind), wk)), [k]))

    cx, ck = _leaf(r((2, 3, 10))), _leaf(r((4, 3, 3)))
    wc = probe(2, 4, 10)
    for mode in ("same", "circular"):
        cases.append((f"conv1d_{mode}",
                      lambda mode=mode: ops.sum(ops.mul(ops.conv1d(cx, ck, mode), wc)), [cx, ck]))

    for n in (8, 9):
        fx = _leaf(r((2, 3, n)))
        coef = r(n // 2 + 1) + 1j * r(n // 2 + 1)
        wf = probe(2, 3, n)
        cases.append((f"rfft_irfft_n{n}",
                      lambda fx=fx, coef=coef, n=n, wf=wf: ops.sum(
                          ops.mul(ops.irfft(ops.mul(ops.rfft(fx), coef), n), wf)), [fx]))
        spec = _leaf(r((3, n // 2 + 1)) + 1j * r((3, n // 2 + 1)))
        wi = probe(3, n)
        cases.append((f"irfft_n{n}", lambda spec=spec, n=n, wi=wi: ops.sum(
            ops.mul(ops.irfft(spec, n), wi)), [spec]))

    for n_in, n_out in ((8, 8), (9, 6), (10, 5)):
        w_re = _leaf(r((2, n_out // 2 + 1, n_in // 2 + 1)))
        w_im = _leaf(r((2, n_out // 2 + 1, n_in // 2 + 1)))
        sx = _leaf(r((3, 2, n_in)))
        wo = probe(3, 2, n_out)
        cases.append((f"spectral_matmul_{n_in}to{n_out}",
                      lambda w_re=w_re, w_im=w_im, sx=sx, n_out=n_out, wo=wo: ops.sum(ops.mul(
                          ops.irfft(ops.spectral_matmul(w_re, w_im, ops.rfft(sx)), n_out), wo)),
                      [w_re, w_im, sx]))

    for shape in ((4, 9), (3, 3), (2, 4, 7)):
        sv = _leaf(well_separated(rng, shape))
        k_, n_ = shape[-2:]
        gu, gs, gv = probe(*shape[:-2], k_, k_), probe(*shape[:-2], k_), probe(*shape)

        def svd_loss(sv=sv, gu=gu, gs=gs, gv=gv):
            u, s, v = ops.svd(sv)
            return ops.add(ops.add(ops.sum(ops.mul(u, gu)), ops.sum(ops.mul(s, gs))),
                           ops.sum(ops.mul(v, gv)))
        cases.append((f"svd_{'x'.join(map(str, shape))}", svd_loss, [sv]))
    return cases


def block_cases(seed):
    from . import blocks, ops
    rng = np.random.default_rng(seed)
    cases = []

    ft = blocks.FTBlock(2, 9, 5, rng=rng, init="normal", std=0.5)
    x = _leaf(rng.standard_normal((3, 2, 9)))
    w = rng.standard_normal((3, 2, 5))
    cases.append(("FTBlock", lambda: ops.sum(ops.mul(ft(x), w)), [ft.w_re, ft.w_im, x]))

    svd = blocks.SVDBlock(3, 8, "tanh", rng=rng)
    svd.phi.data = well_separated(rng, (3, 8))
    sx = _leaf(well_separated(rng, (2, 3, 8)))
    ws = rng.standard_normal((2, 3, 8))
    cases.append(("SVDBlock", lambda: ops.sum(ops.mul(svd(sx), ws)), [svd.phi, sx]))

    sm = blocks.SparseMatrixBlock(12, 6, band_widths=(3,), global_rows=1, rng=rng)
    sm.phi_m.data = rng.standard_normal(sm.phi_m.shape)
    mx = _leaf(rng.standard_normal((2, 3, 12)))
    wm = rng.standard_normal((2, 3, 6))
    cases.append(("SparseMatrixBlock", lambda: ops.sum(ops.mul(sm(mx), wm)), [sm.phi_m, mx]))

    conv = blocks.ConvBlock(3, 2, 3, kernels=rng.standard_normal((2, 3, 3)))
    cx = _leaf(rng.standard_normal((2, 3, 7)))
    wc = rng.standard_normal((2, 2, 7))
    cases.append(("ConvBlock", lambda: ops.sum(ops.mul(conv(cx), wc)), [conv.kernels, cx]))

    proj = blocks.TimeProjection(7, 4, rng=rng)
    proj.weight.data = rng.standard_normal(proj.weight.shape)
    wp = rng.standard_normal((2, 3, 4))
    cases.append(("TimeProjection", lambda: ops.sum(ops.mul(proj(cx), wp)), [proj.weight]))
    return cases


def tiny_model(arch, seed, channels=2, input_len=8, pred_len=4, layers=2, scale=0.5):
    """A small model with O(1) random weights and well-separated SVD spectra."""
    from .models import ModelConfig, TLNet
    model = TLNet(ModelConfig(arch, input_len, pred_len, channels, layers=layers, seed=seed))
    rng = np.random.default_rng(seed + 1000)
    for name, p in model.parameters().items():
        if name.endswith(".phi"):
            p.data = well_separated(rng, p.shape, scale)
        elif ".ft." in name:
            p.data = p.data + scale * rng.standard_normal(p.shape)
        else:
            p.data = scale * rng.standard_normal(p.shape)
    x = well_separated(rng, (3, channels, input_len))
    y = rng.standard_normal((3, channels, pred_len))
    return model, x, y


def model_cases(seed, archs=MODEL_ARCHS):
    from .models import loss
    cases = []
    for arch in archs:
        model, x, y = tiny_model(arch, seed)
        params = model.parameters()
        cases.append((f"model_{arch}", lambda model=model, x=x, y=y: loss(model(x), y),
                      list(params.values()), list(params)))
    return cases


def gradient_suite(seeds=range(5), archs=MODEL_ARCHS, tol=1e-4, step=1e-6):
    """Run every op, block and tiny-model check; returns flat results named ``group:case:param``."""
    results = []
    for seed in seeds:
        for group, cases in (("op", op_cases(seed)), ("block", block_cases(seed)),
                             ("model", model_cases(seed, archs))):
            for case in cases:
                name, fn, params = case[:3]
                names = case[3] if len(case) > 3 else [f"arg{i}" for i in range(len(params))]
                for r in check_gradients(fn, params, names, step, tol):
                    r.name = f"{group}:{name}:{r.name}:seed{seed}"
                    results.append(r)
    return results
