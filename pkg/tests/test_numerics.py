from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distprobe.errors import ContractError, DimensionError, NumericConsistencyError, PSDError
from distprobe.numerics import (RngStream, eig_sym, fft2, fftshift, frechet_gaussian_distance, gaussian_fit,
                                ifft2, ifft2_complex, ifftshift, sqrtm_psd, stable_id)


def naive_dft2(x):
    """Direct O(M^2 N^2) sum, written independently of the library FFT."""
    m, n = x.shape
    out = np.zeros((m, n), dtype=complex)
    for u in range(m):
        for v in range(n):
            s = 0j
            for a in range(m):
                for b in range(n):
                    s += x[a, b] * complex(math.cos(-2 * math.pi * (u * a / m + v * b / n)),
                                           math.sin(-2 * math.pi * (u * a / m + v * b / n)))
            out[u, v] = s
    return out


@pytest.mark.parametrize("m,n", [(2, 2), (4, 4), (8, 8), (2, 8), (8, 4)])
def test_fft2_matches_naive_dft(m, n):
    x = RngStream(1).normal(size=(m, n))
    assert np.max(np.abs(fft2(x) - naive_dft2(x))) < 1e-10


def test_fft2_constant_and_impulse():
    f = fft2(np.full((4, 4), 2.5))
    assert f[0, 0] == pytest.approx(40.0)
    f[0, 0] = 0
    assert np.max(np.abs(f)) < 1e-12
    imp = np.zeros((4, 4))
    imp[0, 0] = 1
    assert np.allclose(fft2(imp), np.ones((4, 4)), atol=1e-15)


def test_fft2_batched_over_leading_axes():
    x = RngStream(2).normal(size=(3, 2, 8, 16))
    f = fft2(x)
    assert np.allclose(f[1, 0], fft2(x[1, 0]), atol=1e-12)
    assert np.allclose(f, np.fft.fft2(x), atol=1e-10)


@pytest.mark.parametrize("shape,axis", [((6, 8), "rows"), ((8, 12), "cols"), ((1, 8), "rows")])
def test_fft2_rejects_bad_extents(shape, axis):
    with pytest.raises(DimensionError, match=axis):
        fft2(np.zeros(shape))


@pytest.mark.parametrize("size", [2, 4, 16, 64, 256])
def test_roundtrip_and_parseval(size):
    x = RngStream(size).normal(size=(size, size))
    f = fft2(x)
    assert np.max(np.abs(ifft2(f) - x)) < 1e-10
    lhs = np.sum(x ** 2)
    rhs = np.sum(np.abs(f) ** 2) / size ** 2
    assert abs(lhs - rhs) / lhs < 1e-8


def test_ifft2_special_grids():
    assert np.array_equal(ifft2(np.zeros((4, 4), dtype=complex)), np.zeros((4, 4)))
    g = np.zeros((4, 4), dtype=complex)
    g[0, 0] = 16
    assert np.allclose(ifft2(g), np.ones((4, 4)), atol=1e-15)


def test_ifft2_rejects_imaginary_residue():
    g = np.zeros((4, 4), dtype=complex)
    g[0, 1] = 16  # not conjugate-symmetric
    assert np.max(np.abs(ifft2_complex(g).imag)) > 0.5
    with pytest.raises(NumericConsistencyError, match="residue"):
        ifft2(g)


def test_fftshift_centres_dc():
    g = np.zeros((4, 4))
    g[0, 0] = 1
    s = fftshift(g)
    assert s[2, 2] == 1 and s.sum() == 1
    odd = np.zeros((5, 7))
    odd[0, 0] = 1
    assert fftshift(odd)[2, 3] == 1


@pytest.mark.parametrize("shape", [(5, 6), (4, 4), (7, 3), (8, 2)])
def test_shift_inverse_pairs(shape):
    g = RngStream(3).normal(size=shape)
    assert np.array_equal(ifftshift(fftshift(g)), g)
    assert np.array_equal(fftshift(ifftshift(g)), g)


def test_fftshift_twice_even_is_identity():
    g = RngStream(4).normal(size=(6, 8))
    # even extents: shifting by M/2 twice is a full period
    assert np.array_equal(fftshift(fftshift(g)), g)


def test_fftshift_agrees_with_numpy():
    g = RngStream(5).normal(size=(2, 5, 6))
    assert np.array_equal(fftshift(g), np.fft.fftshift(g, axes=(-2, -1)))
    assert np.array_equal(ifftshift(g), np.fft.ifftshift(g, axes=(-2, -1)))


def test_eig_sym_examples():
    w, v = eig_sym(np.eye(3))
    assert np.allclose(w, 1)
    w, v = eig_sym(np.diag([1.0, 4.0]))
    assert np.allclose(w, [4, 1])
    assert np.allclose(np.abs(v), [[0, 1], [1, 0]])


def test_eig_sym_reconstruction():
    a = RngStream(6).normal(size=(8, 8))
    m = a + a.T
    w, v = eig_sym(m)
    assert np.all(np.diff(w) <= 0)
    assert np.max(np.abs(v @ np.diag(w) @ v.T - m)) < 1e-8
    assert np.max(np.abs(v.T @ v - np.eye(8))) < 1e-8


def test_eig_sym_contracts():
    with pytest.raises(ContractError, match="symmetric"):
        eig_sym(np.array([[1.0, 1e-6], [0.0, 1.0]]))
    with pytest.raises(ContractError, match="exceeds"):
        eig_sym(np.eye(65))


def test_sqrtm_psd():
    a = RngStream(7).normal(size=(5, 5))
    m = a @ a.T
    r = sqrtm_psd(m)
    assert np.allclose(r @ r, m, atol=1e-10)
    with pytest.raises(PSDError):
        sqrtm_psd(np.diag([1.0, -1e-3]))
    # tiny negative eigenvalues within tolerance clamp to zero
    assert np.allclose(sqrtm_psd(np.diag([4.0, -1e-12])), np.diag([2.0, 0.0]))


def test_frechet_closed_forms():
    assert frechet_gaussian_distance([0.0], [[1.0]], [3.0], [[4.0]]) == pytest.approx(10.0, abs=1e-9)
    assert frechet_gaussian_distance([0, 0], np.diag([1.0, 4.0]), [0, 0], np.diag([4.0, 1.0])) == \
        pytest.approx(2.0, abs=1e-9)
    a = RngStream(8).normal(size=(4, 4))
    s = a @ a.T
    assert frechet_gaussian_distance(np.ones(4), s, np.ones(4), s) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_frechet_symmetric_nonnegative(seed, d):
    rng = RngStream(seed)
    a, b = rng.normal(size=(d, d)), rng.normal(size=(d, d))
    m1, m2 = rng.normal(size=d), rng.normal(size=d)
    s1, s2 = a @ a.T, b @ b.T
    f12 = frechet_gaussian_distance(m1, s1, m2, s2)
    f21 = frechet_gaussian_distance(m2, s2, m1, s1)
    assert f12 >= 0
    assert abs(f12 - f21) < 1e-9 * max(1.0, f12)


def test_frechet_commuting_matches_per_axis_formula():
    d1, d2 = np.array([1.0, 2.0, 9.0]), np.array([4.0, 0.5, 1.0])
    expected = float(np.sum((np.sqrt(d1) - np.sqrt(d2)) ** 2)) + 1.0
    got = frechet_gaussian_distance([0, 0, 1.0], np.diag(d1), [0, 0, 0], np.diag(d2))
    assert got == pytest.approx(expected, abs=1e-9)


def test_frechet_shape_and_psd_errors():
    with pytest.raises(ContractError):
        frechet_gaussian_distance([0, 0], np.eye(2), [0], np.eye(1))
    with pytest.raises(PSDError):
        frechet_gaussian_distance([0, 0], np.eye(2), [0, 0], np.diag([1.0, -1.0]))


def test_gaussian_fit_unbiased():
    x = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]])
    mu, cov = gaussian_fit(x)
    assert np.allclose(mu, [2, 4])
    assert np.allclose(cov, np.cov(x.T))


def test_rng_streams_reproducible_and_distinct():
    a, b = RngStream(11, 3), RngStream(11, 3)
    assert a.random(16).tobytes() == b.random(16).tobytes()
    c, d = RngStream(11, 3), RngStream(11, 4)
    assert not np.any(c.random(16) == d.random(16))
    assert not np.any(RngStream(12, 3).random(16) == RngStream(11, 3).random(16))


def test_rng_clone_and_child():
    r = RngStream(1)
    r.normal(size=5)
    c = r.clone()
    assert np.array_equal(r.normal(size=8), c.normal(size=8))
    assert r.child("x").stream_id == RngStream(1).child("x").stream_id
    assert r.child("x").stream_id != r.child("y").stream_id


def test_rng_known_values_are_platform_stable():
    # Philox output is fully specified; these values are frozen from a reference run
    assert RngStream(0, 0).integers(0, 2 ** 31, size=3).tolist() == FROZEN_PHILOX


def test_stable_id_fixed():
    assert stable_id("a", 1) == stable_id("a", 1)
    assert stable_id("a", 1) != stable_id("a", 2)
    assert 0 <= stable_id("x") < 2 ** 64


FROZEN_PHILOX = [74607693, 24796466, 1314153177]
