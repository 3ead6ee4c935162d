"""Deterministic numeric kernels: radix-2 FFT, symmetric eigensolver wrappers,
Gaussian Frechet distance and counter-based random streams.

All array functions accept extra leading (batch) axes and operate on the
trailing one or two axes.
"""
from __future__ import annotations

import copy
import hashlib

import numpy as np

from .errors import ContractError, DimensionError, NumericConsistencyError, PSDError

IMAG_RESIDUE_TOL = 1e-6
SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10
MAX_SYM_DIM = 64

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# random streams

def stable_id(*labels) -> int:
    """64-bit identifier derived from ``repr`` of the labels; stable across runs."""
    h = hashlib.blake2b(repr(labels).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """Philox counter-based stream keyed by ``(master_seed, stream_id)``.

    Philox is specified bit-for-bit, so equal keys give equal sequences on
    every platform. Streams are single-owner; use :meth:`clone` to fork a
    copy of the current state and :meth:`child` for an independent substream.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def clone(self) -> "RngStream":
        return copy.deepcopy(self)

    def child(self, *labels) -> "RngStream":
        return RngStream(self.master_seed, stable_id(self.stream_id, *labels))

    def normal(self, size=None, loc=0.0, scale=1.0):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)


# ---------------------------------------------------------------------------
# FFT

def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_last(x: np.ndarray) -> np.ndarray:
    # iterative decimation-in-time over the last axis
    n = x.shape[-1]
    lead = x.shape[:-1]
    y = np.asarray(x, dtype=np.complex128)[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        y = y.reshape(lead + (n // size, size))
        even = y[..., :half]
        odd = y[..., half:] * tw
        y = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    return y.reshape(lead + (n,))


def _check_grid(x: np.ndarray) -> None:
    if x.ndim < 2:
        raise DimensionError(f"expected at least a 2-D grid, got shape {x.shape}")
    for axis, name in ((-2, "rows"), (-1, "cols")):
        n = x.shape[axis]
        if not _is_pow2(n):
            raise DimensionError(f"{name} axis has extent {n}; a power of two >= 2 is required")


def fft2(x) -> np.ndarray:
    """Unnormalized forward 2-D DFT over the last two axes."""
    x = np.asarray(x)
    _check_grid(x)
    y = _fft_last(x)
    y = _fft_last(np.swapaxes(y, -1, -2))
    return np.swapaxes(y, -1, -2)


def ifft2_complex(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.complex128)
    _check_grid(grid)
    m, n = grid.shape[-2:]
    return np.conj(fft2(np.conj(grid))) / (m * n)


def ifft2(grid) -> np.ndarray:
    """Normalized inverse 2-D DFT returning the real part.

    Raises NumericConsistencyError when the discarded imaginary part exceeds
    ``IMAG_RESIDUE_TOL`` anywhere.
    """
    out = ifft2_complex(grid)
    resid = float(np.max(np.abs(out.imag))) if out.size else 0.0
    if resid > IMAG_RESIDUE_TOL:
        raise NumericConsistencyError(f"inverse transform has imaginary residue {resid:.3e}")
    return np.ascontiguousarray(out.real)


def fftshift(grid) -> np.ndarray:
    grid = np.asarray(grid)
    m, n = grid.shape[-2:]
    return np.roll(grid, (m // 2, n // 2), axis=(-2, -1))


def ifftshift(grid) -> np.ndarray:
    grid = np.asarray(grid)
    m, n = grid.shape[-2:]
    return np.roll(grid, (-(m // 2), -(n // 2)), axis=(-2, -1))


# ---------------------------------------------------------------------------
# symmetric matrices

def _check_symmetric(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] > MAX_SYM_DIM:
        raise ContractError(f"dimension {m.shape[0]} exceeds the supported bound {MAX_SYM_DIM}")
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > SYMMETRY_TOL:
        raise ContractError(f"matrix is not symmetric (max |m - m^T| = {asym:.3e})")


def eig_sym(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and matching orthonormal eigenvector columns."""
    m = np.asarray(m, dtype=np.float64)
    _check_symmetric(m)
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(w, kind="stable")[::-1]
    return w[order], v[:, order]


def sqrtm_psd(m) -> np.ndarray:
    """Symmetric square root of a PSD matrix; slightly negative eigenvalues clamp to 0."""
    w, v = eig_sym(m)
    if w.size and w[-1] < -PSD_TOL:
        raise PSDError(f"matrix has eigenvalue {w[-1]:.3e} below -{PSD_TOL}")
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (root + root.T)


def frechet_gaussian_distance(mu1, sigma1, mu2, sigma2) -> float:
    """Squared Frechet (2-Wasserstein) distance between two Gaussians.

    The cross term uses the symmetric product sqrt(S1) S2 sqrt(S1), whose
    square root has the same trace as (S1 S2)^(1/2) but stays real.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    s1 = np.atleast_2d(np.asarray(sigma1, dtype=np.float64))
    s2 = np.atleast_2d(np.asarray(sigma2, dtype=np.float64))
    if not (mu1.shape == mu2.shape and s1.shape == s2.shape == (mu1.size, mu1.size)):
        raise ContractError(
            f"inconsistent shapes: mu {mu1.shape}/{mu2.shape}, sigma {s1.shape}/{s2.shape}")
    root1 = sqrtm_psd(s1)
    w2 = eig_sym(s2)[0]
    if w2.size and w2[-1] < -PSD_TOL:
        raise PSDError(f"second covariance has eigenvalue {w2[-1]:.3e} below -{PSD_TOL}")
    cross = root1 @ s2 @ root1
    cross_w = eig_sym(0.5 * (cross + cross.T))[0]
    tr_cross = float(np.sum(np.sqrt(np.clip(cross_w, 0.0, None))))
    diff = mu1 - mu2
    value = float(diff @ diff) + float(np.trace(s1) + np.trace(s2)) - 2.0 * tr_cross
    return max(value, 0.0)


def gaussian_fit(x) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and (ddof=1) covariance of the rows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    mu = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    return mu, 0.5 * (cov + cov.T)
