import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tlnets import ops
from tlnets.fft import dft_direct
from tlnets.gradcheck import check_gradients
from tlnets.tensor import Graph, TapeError, Tensor, no_grad

from conftest import grads_of, leaf


def test_tensor_rejects_non_finite_values():
    with pytest.raises(FloatingPointError):
        Tensor([1.0, np.nan])
    with pytest.raises(FloatingPointError):
        Tensor([np.inf])


def test_debug_graph_checks_op_outputs():
    x = leaf([1e308])
    with Graph(debug=True), np.errstate(over="ignore"):
        with pytest.raises(FloatingPointError):
            ops.mul(x, x)


def test_matmul_examples(rng):
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ops.matmul(np.eye(2), a).data, a)
    np.testing.assert_array_equal(ops.matmul(a, np.zeros((2, 2))).data, np.zeros((2, 2)))
    p, q = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ref = np.array([[sum(p[i, k] * q[k, j] for k in range(4)) for j in range(2)] for i in range(3)])
    assert np.max(np.abs(ops.matmul(p, q).data - ref)) <= 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        ops.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_masked_matmul_full_and_empty_masks(rng):
    w, x = leaf(rng.normal(size=(4, 5))), rng.normal(size=(5, 3))
    full = ops.masked_matmul(w, np.ones((4, 5)), x).data
    np.testing.assert_array_equal(full, ops.matmul(w, x).data)
    (g,) = grads_of(lambda: ops.sum(ops.masked_matmul(w, np.zeros((4, 5)), x)), w)
    assert np.all(ops.masked_matmul(w, np.zeros((4, 5)), x).data == 0)
    assert np.all(g == 0.0)


def test_masked_matmul_banded_against_dense(rng):
    w, x = rng.normal(size=(6, 6)), rng.normal(size=(6, 2))
    i, j = np.indices((6, 6))
    band = ((i - j) % 6 <= 1) | ((j - i) % 6 <= 1)
    assert np.max(np.abs(ops.masked_matmul(w, band.astype(float), x).data - (w * band) @ x)) <= 1e-12


def test_masked_matmul_rejects_non_binary_mask():
    with pytest.raises(ValueError):
        ops.masked_matmul(np.ones((2, 2)), np.full((2, 2), 0.5), np.ones((2, 1)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.int8, (5, 7), elements=st.integers(0, 1)), st.integers(0, 2**31 - 1))
def test_masked_gradient_is_exactly_zero_off_mask(mask, seed):
    r = np.random.default_rng(seed)
    w = leaf(r.normal(size=(5, 7)))
    x = r.normal(size=(7, 3))
    target = r.normal(size=(5, 3))
    (g,) = grads_of(lambda: ops.mean(ops.square(ops.sub(ops.masked_matmul(w, mask, x), target))), w)
    assert np.all(g[mask == 0] == 0.0)


def test_conv1d_identity_and_shift():
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    delta = np.array([[[0.0, 1.0, 0.0]]])
    np.testing.assert_array_equal(ops.conv1d(x, delta, "same").data, x)
    np.testing.assert_array_equal(ops.conv1d(x, delta, "circular").data, x)
    shift = np.array([[[0.0, 0.0, 1.0]]])
    np.testing.assert_array_equal(ops.conv1d(x, shift, "circular").data, [[4.0, 1.0, 2.0, 3.0]])


@pytest.mark.parametrize("mode", ["same", "circular"])
def test_conv1d_against_double_sum(mode, rng):
    x, k = rng.normal(size=(2, 16)), rng.normal(size=(3, 2, 3))
    ref = np.zeros((3, 16))
    for o in range(3):
        for n in range(16):
            for c in range(2):
                for t in range(3):
                    idx = n - (t - 1)
                    if mode == "circular":
                        ref[o, n] += k[o, c, t] * x[c, idx % 16]
                    elif 0 <= idx < 16:
                        ref[o, n] += k[o, c, t] * x[c, idx]
    assert np.max(np.abs(ops.conv1d(x, k, mode).data - ref)) <= 1e-12


@pytest.mark.parametrize("k, n", [(2, 8), (9, 8)])
def test_conv1d_rejects_bad_kernel(k, n):
    with pytest.raises(ValueError):
        ops.conv1d(np.ones((1, n)), np.ones((1, 1, k)))


def test_rfft_op_matches_direct_and_round_trips(rng):
    x = rng.normal(size=(3, 16))
    spec = ops.rfft(x)
    assert spec.shape == (3, 9)
    assert np.max(np.abs(spec.data - dft_direct(x)[:, :9])) <= 1e-10
    assert np.max(np.abs(ops.irfft(spec, 16).data - x)) <= 1e-12


def test_irfft_rejects_inconsistent_length():
    with pytest.raises(ValueError):
        ops.irfft(ops.rfft(np.ones((1, 8))), 12)


def test_activation_examples(rng):
    np.testing.assert_array_equal(ops.relu(np.array([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert ops.tanh(np.array([0.0])).data[0] == 0.0
    with pytest.raises(ValueError):
        ops.activation(np.ones(2), "swish")


def test_gelu_gradient_matches_finite_difference(rng):
    pts = rng.normal(scale=2.0, size=20)
    x = leaf(pts)
    (g,) = grads_of(lambda: ops.sum(ops.gelu(x)), x)
    h = 1e-6
    num = (ops.gelu(pts + h).data - ops.gelu(pts - h).data) / (2 * h)
    assert np.max(np.abs(g - num) / np.maximum(np.abs(num), 1e-8)) <= 1e-6


def test_backward_of_sum_is_ones():
    x = leaf([1.0, 2.0, 3.0])
    (g,) = grads_of(lambda: ops.sum(x), x)
    np.testing.assert_array_equal(g, np.ones(3))


def test_backward_of_matmul_sum_matches_finite_differences(rng):
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    results = check_gradients(lambda: ops.sum(ops.matmul(a, b)), [a, b], tol=1e-5)
    assert all(r.passed for r in results), results


def test_backward_through_spectral_chain(rng):
    x = leaf(rng.normal(size=(2, 10)))
    w_re, w_im = leaf(rng.normal(size=(2, 4, 6))), leaf(rng.normal(size=(2, 4, 6)))
    fn = lambda: ops.sum(ops.square(ops.irfft(ops.spectral_matmul(w_re, w_im, ops.rfft(x)), 7)))
    results = check_gradients(fn, [x, w_re, w_im], tol=1e-4)
    assert all(r.passed for r in results), results


def test_backward_requires_scalar_and_single_use():
    x = leaf([1.0, 2.0])
    with Graph() as g:
        y = ops.square(x)
    with pytest.raises(ValueError):
        g.backward(y)
    with Graph() as g:
        s = ops.sum(ops.square(x))
    g.backward(s)
    with pytest.raises(TapeError):
        g.backward(s)


def test_tape_is_topologically_ordered(rng):
    x = leaf(rng.normal(size=(3, 3)))
    with Graph() as g:
        y = ops.sum(ops.relu(ops.matmul(x, ops.transpose(x))))
    for k, node in enumerate(g.nodes):
        assert all(i is None or i < k for i in node.input_ids)
    assert y.node_id == len(g.nodes) - 1


def test_no_grad_records_nothing(rng):
    x = leaf(rng.normal(size=4))
    with Graph() as g:
        with no_grad():
            ops.sum(ops.square(x))
    assert g.nodes == []


def test_repeat_forward_is_bitwise_identical(rng):
    x = rng.normal(size=(3, 24))
    w = rng.normal(size=(3, 24))
    f = lambda: ops.irfft(ops.rfft(ops.relu(ops.mul(x, w))), 24).data
    assert np.array_equal(f(), f())
