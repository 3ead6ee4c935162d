"""Image containers and transforms.

Images are ``float64`` arrays of shape ``(C, H, W)`` with intensities in
``[0, 1]`` (filtered images may leave that range). Batches stack images along
a leading axis.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image as PILImage

from .errors import BoundsError, ContractError, FormatError
from .numerics import RngStream

NTF_MAGIC = b"NTF1"
IMAGE_SUFFIXES = (".png", ".ntf")


@dataclass(frozen=True)
class CropSpec:
    mode: str = "center"  # center | random
    size: int = 32

    def __post_init__(self):
        if self.mode not in ("center", "random"):
            raise ContractError(f"unknown crop mode {self.mode!r}")
        if self.size < 1:
            raise ContractError("crop size must be >= 1")


@dataclass(frozen=True)
class AugmentationSpec:
    """Zero-pad then random crop (both optional), then horizontal flip."""

    pad: int = 0
    crop_size: Optional[int] = None
    horizontal_flip_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.horizontal_flip_prob <= 1.0:
            raise ContractError("flip probability must lie in [0, 1]")
        if self.pad < 0:
            raise ContractError("pad must be >= 0")

    @property
    def is_identity(self) -> bool:
        return self.crop_size is None and self.pad == 0 and self.horizontal_flip_prob == 0.0

    def describe(self) -> str:
        if self.is_identity:
            return "none"
        parts = []
        if self.crop_size is not None or self.pad:
            parts.append(f"pad{self.pad}-randcrop{self.crop_size}")
        if self.horizontal_flip_prob:
            parts.append(f"hflip{self.horizontal_flip_prob:g}")
        return "+".join(parts)


def as_image(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ContractError(f"image must have shape (C, H, W), got {x.shape}")
    return x


# ---------------------------------------------------------------------------
# file I/O

def write_ntf(tensor, path) -> None:
    arr = np.asarray(tensor, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(NTF_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_ntf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != NTF_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 8:
        raise FormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", data, 4)
    head = 8 + 4 * rank
    if len(data) < head:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    count = int(np.prod(dims)) if rank else 1
    if len(data) != head + 4 * count:
        raise FormatError(f"{path}: payload holds {len(data) - head} bytes, expected {4 * count}")
    arr = np.frombuffer(data, dtype="<f4", count=count, offset=head)
    return arr.reshape(dims).astype(np.float64)


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ntf":
        return read_ntf(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)[None]
            elif mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8).transpose(2, 0, 1)
            else:
                raise FormatError(f"{path}: unsupported PNG mode {mode!r} (8-bit L or RGB only)")
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def save_image(image, path) -> None:
    path = Path(path)
    image = np.asarray(image, dtype=np.float64)
    if path.suffix.lower() == ".ntf":
        write_ntf(image, path)
        return
    image = as_image(image)
    if image.shape[0] not in (1, 3):
        raise FormatError(f"PNG needs 1 or 3 channels, got {image.shape[0]}")
    q = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.shape[0] == 1:
        PILImage.fromarray(q[0]).save(path)
    else:
        PILImage.fromarray(np.ascontiguousarray(q.transpose(1, 2, 0))).save(path)


def load_split(directory) -> np.ndarray:
    """Stack every image file of a split directory in lexicographic filename order."""
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        return np.zeros((0,))
    return np.stack([load_image(p) for p in files])


def load_dataset_dir(root) -> dict[str, dict[str, np.ndarray]]:
    """Read ``<root>/<name>/{train,val}/*`` into ``{name: {"train": arr, "val": arr}}``."""
    root = Path(root)
    out = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        out[sub.name] = load_distribution_dir(sub)
    return out


def load_distribution_dir(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_dir():
        raise OSError(f"dataset directory {path} does not exist")
    return {split: load_split(path / split) for split in ("train", "val") if (path / split).is_dir()}


def write_distribution_dir(path, splits: dict, fmt: str = "ntf") -> None:
    path = Path(path)
    for split, arr in splits.items():
        d = path / split
        d.mkdir(parents=True, exist_ok=True)
        width = max(5, len(str(len(arr))))
        for i, item in enumerate(arr):
            save_image(item, d / f"{i:0{width}d}.{fmt}")


# ---------------------------------------------------------------------------
# geometric transforms

def center_crop(image, s: int) -> np.ndarray:
    image = np.asarray(image)
    h, w = image.shape[-2:]
    if s < 1 or s > min(h, w):
        raise BoundsError(f"crop size {s} outside [1, {min(h, w)}] for a {h}x{w} image")
    top, left = (h - s) // 2, (w - s) // 2
    return image[..., top:top + s, left:left + s].copy()


def random_crop(image, s: int, rng: RngStream) -> np.ndarray:
    image = np.asarray(image)
    h, w = image.shape[-2:]
    if s < 1 or s > min(h, w):
        raise BoundsError(f"crop size {s} outside [1, {min(h, w)}] for a {h}x{w} image")
    top = int(rng.integers(0, h - s + 1))
    left = int(rng.integers(0, w - s + 1))
    return image[..., top:top + s, left:left + s].copy()


def random_crop_batch(images, s: int, rng: RngStream) -> np.ndarray:
    """Independent random crop per image of an ``(n, C, H, W)`` batch."""
    return np.stack([random_crop(im, s, rng) for im in images])


def hflip(image) -> np.ndarray:
    return np.asarray(image)[..., ::-1].copy()


def zero_pad(image, pad: int) -> np.ndarray:
    if pad == 0:
        return np.asarray(image).copy()
    widths = [(0, 0)] * (np.ndim(image) - 2) + [(pad, pad), (pad, pad)]
    return np.pad(image, widths)


def _bilinear_axis(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(image, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers (corners not aligned)."""
    if new_h < 1 or new_w < 1:
        raise ContractError("target size must be >= 1")
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2:]
    lo, hi, f = _bilinear_axis(h, new_h)
    rows = image[..., lo, :] * (1 - f)[:, None] + image[..., hi, :] * f[:, None]
    lo, hi, f = _bilinear_axis(w, new_w)
    return rows[..., lo] * (1 - f) + rows[..., hi] * f


def augment(image, spec: AugmentationSpec, rng: RngStream) -> np.ndarray:
    out = np.asarray(image, dtype=np.float64)
    if spec.crop_size is not None or spec.pad:
        out = zero_pad(out, spec.pad)
        size = spec.crop_size if spec.crop_size is not None else min(out.shape[-2:]) - 2 * spec.pad
        if size > min(out.shape[-2:]):
            raise BoundsError(f"crop size {size} exceeds padded extent {out.shape[-2:]}")
        out = random_crop(out, size, rng)
    if rng.random() < spec.horizontal_flip_prob:
        out = hflip(out)
    return out


def augment_batch(images, spec: AugmentationSpec, rng: RngStream) -> np.ndarray:
    if spec.is_identity:
        return np.asarray(images)
    return np.stack([augment(im, spec, rng) for im in images])
