"""Synthetic sample sources with exact (or pointwise) density oracles.

Image families return ``(n, C, H, W)`` arrays whose values are exactly
representable in float32, so NTF files reproduce in-memory samples bit for
bit. ``Point2DMixture`` returns ``(n, 2)`` arrays.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ContractError, SpecError
from ..numerics import RngStream, fft2, ifft2, ifftshift
from ..spectral import _radius_grid

log = logging.getLogger(__name__)

MAX_ENUM_PIXELS = 20
SPECTRAL_MEAN = 0.5
SPECTRAL_STD = 0.15


def _f32(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float32).astype(np.float64)


def _shape_str(shape) -> str:
    return "x".join(str(s) for s in shape)


@dataclass(frozen=True)
class BernoulliPixels:
    """Independent Bernoulli pixels with success probability ``theta``.

    ``patch``/``patch_theta`` optionally override theta inside the central
    ``patch x patch`` window.
    """

    theta: float
    shape: tuple = (1, 4, 4)
    patch: int = 0
    patch_theta: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        for th in (self.theta, self.patch_theta):
            if th is not None and not 0.0 <= th <= 1.0:
                raise SpecError(f"theta {th} outside [0, 1]")
        if self.patch and self.patch_theta is None:
            raise SpecError("patch needs patch_theta")

    family = "bernoulli_pixels"

    def theta_map(self) -> np.ndarray:
        th = np.full(self.shape, float(self.theta))
        if self.patch:
            _, h, w = self.shape
            top, left = (h - self.patch) // 2, (w - self.patch) // 2
            th[:, top:top + self.patch, left:left + self.patch] = self.patch_theta
        return th

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        return (rng.random((n,) + self.shape) < self.theta_map()).astype(np.float64)

    def oracle(self) -> "DensityOracle":
        return DensityOracle(self)

    def to_string(self) -> str:
        s = f"bernoulli:theta={self.theta:g},shape={_shape_str(self.shape)}"
        if self.patch:
            s += f",patch={self.patch},patch_theta={self.patch_theta:g}"
        return s


@dataclass(frozen=True)
class SpectralNoise:
    """Gaussian noise shaped by a per-band amplitude profile on the centered spectrum.

    ``bands`` is a tuple of ``(r_lo, r_hi, sigma)`` over integer rectangular
    radii (inclusive). The field is ``0.5 + c * f`` where ``c`` makes the
    pixel standard deviation exactly 0.15 for a unit profile over the same
    ladder, so specs sharing a ladder differ only where their sigmas differ.
    The DC bin always carries zero noise. Samples are clamped to [0, 1].
    """

    bands: tuple
    shape: tuple = (1, 64, 64)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "bands", tuple((int(a), int(b), float(s)) for a, b, s in self.bands))
        for lo, hi, sig in self.bands:
            if lo > hi or lo < 0 or sig < 0:
                raise SpecError(f"bad band ({lo}, {hi}, {sig})")

    family = "spectral_noise"

    def _amplitudes(self):
        _, h, w = self.shape
        r = _radius_grid(h, w, "rectangular")
        amp = np.zeros((h, w))
        unit = np.zeros((h, w), dtype=bool)
        for lo, hi, sig in self.bands:
            sel = (r >= lo) & (r <= hi)
            amp[sel] = sig
            unit |= sel
        centre = r == 0
        amp[centre] = 0.0
        unit &= ~centre
        scale = SPECTRAL_STD / math.sqrt(max(unit.sum(), 1) / (h * w))
        return ifftshift(amp), scale

    def sample_unclamped(self, n: int, rng: RngStream) -> np.ndarray:
        amp, scale = self._amplitudes()
        white = rng.normal(size=(n,) + self.shape)
        field = ifft2(fft2(white) * amp)
        return SPECTRAL_MEAN + scale * field

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        raw = self.sample_unclamped(n, rng)
        clipped = np.clip(raw, 0.0, 1.0)
        rate = float(np.mean(clipped != raw))
        if rate > 0:
            log.debug("spectral_noise %s clamp rate %.4g", self.name or self.to_string(), rate)
        return _f32(clipped)

    def to_string(self) -> str:
        bands = "/".join(f"{a}-{b}@{s:g}" for a, b, s in self.bands)
        return f"spectral:shape={_shape_str(self.shape)},bands={bands}"


@dataclass(frozen=True)
class BlobImage:
    """One Gaussian intensity bump per image, centred on a draw from a 2-D mixture.

    The bump centre picks component ``i`` with probability ``weights[i]`` and
    jitters around ``centers[i]`` (row, col) with isotropic std ``spread``.
    Pixels are ``background + amp * exp(-d^2 / 2 width^2) + noise * N(0, 1)``
    clamped to [0, 1].
    """

    centers: tuple
    weights: tuple = ()
    shape: tuple = (1, 8, 8)
    spread: float = 1.0
    width: float = 1.5
    amp: float = 0.6
    background: float = 0.2
    noise: float = 0.05
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "centers", tuple(tuple(float(v) for v in c) for c in self.centers))
        weights = tuple(float(w) for w in self.weights) or (1.0 / len(self.centers),) * len(self.centers)
        object.__setattr__(self, "weights", weights)
        if len(weights) != len(self.centers):
            raise SpecError("blob weights and centers differ in length")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise SpecError(f"blob weights sum to {sum(weights)}")

    family = "blob_image"

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        c, h, w = self.shape
        comp = rng.choice(len(self.centers), size=n, p=np.array(self.weights))
        centres = np.array(self.centers)[comp] + self.spread * rng.normal(size=(n, 2))
        rows = np.arange(h)[None, :, None]
        cols = np.arange(w)[None, None, :]
        d2 = (rows - centres[:, 0, None, None]) ** 2 + (cols - centres[:, 1, None, None]) ** 2
        bump = self.background + self.amp * np.exp(-d2 / (2 * self.width ** 2))
        img = np.repeat(bump[:, None], c, axis=1) + self.noise * rng.normal(size=(n, c, h, w))
        return _f32(np.clip(img, 0.0, 1.0))

    def to_string(self) -> str:
        centers = "/".join(":".join(f"{v:g}" for v in ctr) for ctr in self.centers)
        weights = "/".join(f"{v:g}" for v in self.weights)
        return (f"blob:shape={_shape_str(self.shape)},centers={centers},weights={weights},"
                f"spread={self.spread:g},width={self.width:g},amp={self.amp:g},"
                f"background={self.background:g},noise={self.noise:g}")


@dataclass(frozen=True)
class Point2DMixture:
    weights: tuple
    means: tuple
    covs: tuple
    name: str = ""

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", tuple(tuple(float(v) for v in m) for m in self.means))
        object.__setattr__(self, "covs", tuple(tuple(tuple(float(v) for v in row) for row in c)
                                               for c in self.covs))
        if not (len(w) == len(self.means) == len(self.covs)):
            raise SpecError("mixture weights, means and covs differ in length")
        if abs(sum(w) - 1.0) > 1e-12:
            raise SpecError(f"mixture weights sum to {sum(w)}")
        for c in self.covs:
            c = np.array(c)
            if c.shape != (2, 2) or np.any(np.abs(c - c.T) > 1e-12) or np.linalg.eigvalsh(c)[0] < 0:
                raise SpecError(f"covariance {c.tolist()} is not a symmetric PSD 2x2 matrix")

    family = "point2d_mixture"
    shape = (2,)

    def sample_labeled(self, n: int, rng: RngStream):
        comp = rng.choice(len(self.weights), size=n, p=np.array(self.weights))
        z = rng.normal(size=(n, 2))
        chol = np.array([_psd_factor(np.array(c)) for c in self.covs])
        x = np.array(self.means)[comp] + np.einsum("nij,nj->ni", chol[comp], z)
        return x, comp

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        return self.sample_labeled(n, rng)[0]

    def moments(self):
        w = np.array(self.weights)
        mu = np.array(self.means)
        mean = w @ mu
        cov = sum(wi * (np.array(c) + np.outer(m - mean, m - mean)) for wi, m, c in zip(w, mu, self.covs))
        return mean, cov

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros(len(x))
        for wi, m, c in zip(self.weights, self.means, self.covs):
            c = np.array(c)
            inv = np.linalg.inv(c)
            d = x - np.array(m)
            q = np.einsum("ni,ij,nj->n", d, inv, d)
            out += wi * np.exp(-0.5 * q) / (2 * math.pi * math.sqrt(np.linalg.det(c)))
        return out

    def oracle(self) -> "DensityOracle":
        return DensityOracle(self)

    def to_string(self) -> str:
        w = "/".join(f"{v:g}" for v in self.weights)
        m = "/".join(":".join(f"{v:g}" for v in mu) for mu in self.means)
        c = "/".join(":".join(f"{v:g}" for row in cv for v in row) for cv in self.covs)
        return f"point2d:weights={w},means={m},covs={c}"


def _psd_factor(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(c)
    return v * np.sqrt(np.clip(w, 0, None))


DISTRIBUTION_TYPES = (BernoulliPixels, SpectralNoise, BlobImage, Point2DMixture)


# ---------------------------------------------------------------------------
# oracles

@dataclass
class DensityOracle:
    """Exact densities for a distribution spec.

    Finite support (Bernoulli pixels with at most 20 pixels) enumerates every
    outcome in binary counting order; mixtures expose a pointwise pdf.
    """

    spec: object
    support: str = field(init=False)

    def __post_init__(self):
        if isinstance(self.spec, BernoulliPixels) and int(np.prod(self.spec.shape)) <= MAX_ENUM_PIXELS:
            self.support = f"finite:{int(np.prod(self.spec.shape))}"
        elif isinstance(self.spec, Point2DMixture):
            self.support = "continuous"
        else:
            raise ContractError(f"no density oracle for {type(self.spec).__name__} of this size")

    @property
    def finite(self) -> bool:
        return self.support.startswith("finite")

    def outcomes(self) -> np.ndarray:
        if not self.finite:
            raise ContractError("continuous oracle has no enumeration")
        d = int(self.support.split(":")[1])
        idx = np.arange(2 ** d, dtype=np.int64)
        return ((idx[:, None] >> np.arange(d - 1, -1, -1)) & 1).astype(np.float64)

    def probabilities(self) -> np.ndarray:
        th = self.spec.theta_map().ravel()
        x = self.outcomes()
        # product form keeps 0 * log 0 out of the picture at theta in {0, 1}
        return np.prod(np.where(x == 1, th, 1.0 - th), axis=1)

    def pdf(self, x):
        return self.spec.pdf(x)


def _check_pair(p: DensityOracle, q: DensityOracle):
    if not (p.finite and q.finite) or p.support != q.support:
        raise ContractError(f"oracles need identical finite supports ({p.support} vs {q.support})")
    return p.probabilities(), q.probabilities()


def _kl_terms(a, m):
    out = np.zeros_like(a)
    nz = a > 0
    out[nz] = a[nz] * np.log(a[nz] / m[nz])
    return out.sum()


def exact_divergences(p: DensityOracle, q: DensityOracle) -> tuple[float, float]:
    """Exact (TV, JSD in nats) between two finite-support oracles."""
    pp, qq = _check_pair(p, q)
    m = 0.5 * (pp + qq)
    tv = 0.5 * float(np.abs(pp - qq).sum())
    jsd = 0.5 * float(_kl_terms(pp, m)) + 0.5 * float(_kl_terms(qq, m))
    return tv, min(max(jsd, 0.0), math.log(2.0))


def bayes_accuracy(p: DensityOracle, q: DensityOracle) -> float:
    pp, qq = _check_pair(p, q)
    return 0.5 * float(np.maximum(pp, qq).sum())


def sample(spec, n: int, rng: RngStream) -> np.ndarray:
    if n < 1:
        raise ContractError("n must be >= 1")
    return spec.sample(n, rng)


# ---------------------------------------------------------------------------
# spec strings

def _floats(text, sep="/"):
    return [float(v) for v in text.split(sep) if v != ""]


def parse_dist_spec(text: str, name: str = ""):
    """Parse ``family:key=value,...`` into a distribution spec.

    Families: ``bernoulli`` (theta, shape, patch, patch_theta), ``spectral``
    (shape, bands=lo-hi@sigma/...), ``blob`` (shape, centers=r:c/..., weights,
    spread, width, amp, background, noise) and ``point2d`` (weights,
    means=x:y/..., covs=a:b:c:d/... or std=s).
    """
    family, _, rest = text.strip().partition(":")
    kv = {}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise SpecError(f"bad item {item!r} in distribution spec {text!r}")
        kv[key.strip()] = value.strip()

    def shape(default):
        return tuple(int(s) for s in kv.pop("shape").split("x")) if "shape" in kv else default

    try:
        if family == "bernoulli":
            spec = BernoulliPixels(theta=float(kv.pop("theta")), shape=shape((1, 4, 4)),
                                   patch=int(kv.pop("patch", 0)),
                                   patch_theta=float(kv["patch_theta"]) if "patch_theta" in kv else None,
                                   name=name)
            kv.pop("patch_theta", None)
        elif family == "spectral":
            bands = []
            for b in kv.pop("bands").split("/"):
                rng_part, _, sig = b.partition("@")
                lo, _, hi = rng_part.partition("-")
                bands.append((int(lo), int(hi), float(sig or 1.0)))
            spec = SpectralNoise(bands=tuple(bands), shape=shape((1, 64, 64)), name=name)
        elif family == "blob":
            centers = [tuple(_floats(c, ":")) for c in kv.pop("centers").split("/")]
            weights = tuple(_floats(kv.pop("weights"))) if "weights" in kv else ()
            extra = {k: float(kv.pop(k)) for k in ("spread", "width", "amp", "background", "noise") if k in kv}
            spec = BlobImage(centers=tuple(centers), weights=weights, shape=shape((1, 8, 8)), name=name, **extra)
        elif family == "point2d":
            weights = _floats(kv.pop("weights", "1"))
            means = [tuple(_floats(m, ":")) for m in kv.pop("means").split("/")]
            if "covs" in kv:
                covs = []
                for c in kv.pop("covs").split("/"):
                    a, b, cc, d = _floats(c, ":")
                    covs.append(((a, b), (cc, d)))
            else:
                s = float(kv.pop("std", 1.0))
                covs = [((s * s, 0.0), (0.0, s * s))] * len(means)
            spec = Point2DMixture(weights=tuple(weights), means=tuple(means), covs=tuple(covs), name=name)
        else:
            raise SpecError(f"unknown distribution family {family!r}")
    except (KeyError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"bad distribution spec {text!r}: {exc}") from exc
    if kv:
        raise SpecError(f"unknown keys {sorted(kv)} in distribution spec {text!r}")
    return spec
