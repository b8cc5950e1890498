import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tlnets import fft

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 12, 16, 17, 96, 104, 336, 1440])
def test_fft_matches_direct_sum(n, rng):
    x = rng.normal(size=(2, n)) + 1j * rng.normal(size=(2, n))
    assert np.max(np.abs(fft.fft(x) - fft.dft_direct(x))) <= 1e-9 * max(1, n)
    assert np.max(np.abs(fft.ifft(fft.fft(x)) - x)) <= 1e-12


def test_constant_signal_is_dc_only():
    spec = fft.rfft_array(np.full(8, 2.5))
    np.testing.assert_allclose(spec[0], 20.0, atol=1e-12)
    assert np.max(np.abs(spec[1:])) <= 1e-12


def test_single_tone_lands_in_bin_one():
    n = np.arange(8)
    spec = fft.rfft_array(np.cos(2 * np.pi * n / 8))
    assert abs(spec[1] - 4.0) <= 1e-12
    assert np.max(np.abs(np.delete(spec, 1))) <= 1e-12


def test_rfft_random_16_against_direct(rng):
    x = rng.normal(size=(3, 16))
    ref = fft.dft_direct(x)[:, :9]
    assert np.max(np.abs(fft.rfft_array(x) - ref)) <= 1e-10


@pytest.mark.parametrize("n", [7, 8])
def test_irfft_against_direct_inverse(n, rng):
    f = n // 2 + 1
    spec = rng.normal(size=f) + 1j * rng.normal(size=f)
    spec[0] = spec[0].real
    if n % 2 == 0:
        spec[-1] = spec[-1].real
    full = fft.hermitian_extend(spec, n)
    ref = fft.idft_direct(full).real
    assert np.max(np.abs(fft.irfft_array(spec, n) - ref)) <= 1e-10


def test_dc_spectrum_inverts_to_constant():
    spec = np.zeros(5, complex)
    spec[0] = 8 * 1.5
    np.testing.assert_allclose(fft.irfft_array(spec, 8), 1.5, atol=1e-12)


def test_real_signal_endpoints_have_zero_imaginary_part(rng):
    for n in (8, 9):
        spec = fft.rfft_array(rng.normal(size=n))
        assert abs(spec[0].imag) <= 1e-12
        if n % 2 == 0:
            assert abs(spec[-1].imag) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 512).flatmap(lambda n: arrays(np.float64, n, elements=finite)))
def test_round_trip_every_length(x):
    n = x.shape[-1]
    back = fft.irfft_array(fft.rfft_array(x), n)
    assert np.max(np.abs(back - x)) <= 1e-12 * max(1.0, np.max(np.abs(x)))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 300).flatmap(lambda n: arrays(np.float64, n, elements=finite)))
def test_parseval(x):
    n = x.shape[-1]
    spec = fft.rfft_array(x)
    weights = np.full(spec.shape[-1], 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    energy = np.sum(x * x)
    spectral = np.sum(weights * np.abs(spec) ** 2) / n
    assert abs(energy - spectral) <= 1e-10 * max(energy, 1e-300) + 1e-300
