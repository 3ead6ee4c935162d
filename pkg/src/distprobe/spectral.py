"""Ideal binary frequency masks (rectangular or circular) and image filtering."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import SpecError
from .numerics import fft2, fftshift, ifft2, ifftshift

KINDS = ("lowpass", "highpass", "bandpass")
SHAPES = ("rectangular", "circular")


@dataclass(frozen=True)
class FilterSpec:
    """A low/high/band-pass filter.

    ``threshold`` is used by low/high-pass, ``(low, high)`` by band-pass.
    When ``fractional`` is set the thresholds are fractions of ``max(M, N)/2``
    and are floored to integers when realized against a grid.
    """

    kind: str
    threshold: Optional[float] = None
    low: Optional[float] = None
    high: Optional[float] = None
    shape: str = "rectangular"
    fractional: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown filter kind {self.kind!r}")
        if self.shape not in SHAPES:
            raise SpecError(f"unknown mask shape {self.shape!r}")
        if self.kind == "bandpass":
            if self.low is None or self.high is None:
                raise SpecError("bandpass needs low and high thresholds")
            if self.low < 0 or self.high < 0:
                raise SpecError("thresholds must be nonnegative")
            if self.low > self.high:
                raise SpecError(f"band low {self.low} exceeds high {self.high}")
        else:
            if self.threshold is None or self.threshold < 0:
                raise SpecError(f"{self.kind} needs a nonnegative threshold")

    def realize(self, m: int, n: int) -> "FilterSpec":
        """Absolute integer-threshold version of this spec for an ``m x n`` grid."""
        half = max(m, n) / 2
        limit = half if self.shape == "rectangular" else math.ceil(half * math.sqrt(2))

        def conv(v):
            a = math.floor(v * half) if self.fractional else v
            if a > limit:
                raise SpecError(f"threshold {a} exceeds {limit} for a {m}x{n} {self.shape} mask")
            return a

        if self.kind == "bandpass":
            return FilterSpec(self.kind, low=conv(self.low), high=conv(self.high), shape=self.shape)
        return FilterSpec(self.kind, threshold=conv(self.threshold), shape=self.shape)

    def label(self) -> str:
        pre = "frac:" if self.fractional else ""
        if self.kind == "bandpass":
            return f"band:{pre}{self.low:g}-{self.high:g}"
        return f"{self.kind[:-4]}:{pre}{self.threshold:g}"


def parse_filter(text: str, shape: str = "rectangular") -> FilterSpec:
    """Parse ``low:10``, ``high:30``, ``band:10-30``, ``low:frac:0.04`` or ``band:frac:0.1-0.2``."""
    shape = {"rect": "rectangular", "circle": "circular"}.get(shape, shape)
    parts = text.strip().split(":")
    kinds = {"low": "lowpass", "high": "highpass", "band": "bandpass"}
    if len(parts) not in (2, 3) or parts[0] not in kinds:
        raise SpecError(f"bad filter {text!r}; expected low:T, high:T, band:A-B or KIND:frac:V")
    fractional = len(parts) == 3
    if fractional and parts[1] != "frac":
        raise SpecError(f"bad filter {text!r}")
    value = parts[-1]
    kind = kinds[parts[0]]
    try:
        if kind == "bandpass":
            lo, hi = value.split("-")
            return FilterSpec(kind, low=float(lo), high=float(hi), shape=shape, fractional=fractional)
        return FilterSpec(kind, threshold=float(value), shape=shape, fractional=fractional)
    except ValueError as exc:
        raise SpecError(f"bad filter {text!r}: {exc}") from exc


def radius(u, v, m: int, n: int, shape: str = "rectangular"):
    """Distance of centered-spectrum bin (u, v) from the center (m/2, n/2)."""
    du = np.abs(np.asarray(u, dtype=np.float64) - m / 2)
    dv = np.abs(np.asarray(v, dtype=np.float64) - n / 2)
    if shape == "rectangular":
        return np.maximum(du, dv)
    if shape == "circular":
        return np.sqrt(du * du + dv * dv)
    raise SpecError(f"unknown mask shape {shape!r}")


@lru_cache(maxsize=256)
def _radius_grid(m: int, n: int, shape: str) -> np.ndarray:
    u, v = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    r = radius(u, v, m, n, shape)
    r.setflags(write=False)
    return r


@lru_cache(maxsize=256)
def _mask_cached(spec: FilterSpec, m: int, n: int) -> np.ndarray:
    spec = spec.realize(m, n)
    r = _radius_grid(m, n, spec.shape)
    if spec.kind == "lowpass":
        mask = r <= spec.threshold
    elif spec.kind == "highpass":
        mask = r > spec.threshold
    else:
        mask = (r >= spec.low) & (r <= spec.high)
    mask = mask.astype(np.float64)
    mask.setflags(write=False)
    return mask


def make_mask(spec: FilterSpec, m: int, n: int) -> np.ndarray:
    """Binary ``m x n`` mask over the centered (fftshifted) spectrum."""
    return _mask_cached(spec, int(m), int(n))


def apply_filter(images, spec: FilterSpec, clamp: bool = False) -> np.ndarray:
    """Filter every channel of an image (or batch) through ``spec``'s mask.

    The result is not clamped unless ``clamp`` is set.
    """
    x = np.asarray(images, dtype=np.float64)
    m, n = x.shape[-2:]
    mask = make_mask(spec, m, n)
    g = fftshift(fft2(x)) * mask
    out = ifft2(ifftshift(g))
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out
