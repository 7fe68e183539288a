"""Image container, loading/saving, resampling, and tissue segmentation.

Rasters are 8-bit images with physical resolution metadata (microns per
pixel).  Grayscale images are stored as ``(h, w)`` arrays, RGB images as
``(h, w, 3)``; both row-major, channel-interleaved.

All quantization in this module uses ``floor(x + 0.5)`` so golden outputs
are bit-stable across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DecodeError, NoTissueError

DEFAULT_MPP = 0.25
DEFAULT_MIN_COMPONENT_AREA = 1024

# integer-rounded Rec.601 luma; fixed so goldens are bit-stable
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class Raster:
    """8-bit image plus microns-per-pixel resolution.

    ``pixels`` has shape ``(h, w)`` for grayscale or ``(h, w, 3)`` for RGB.
    """

    pixels: np.ndarray
    mpp: float = DEFAULT_MPP

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels)
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {self.pixels.dtype}")
        if self.pixels.ndim == 3 and self.pixels.shape[2] == 1:
            self.pixels = self.pixels[:, :, 0]
        if self.pixels.ndim not in (2, 3):
            raise ValueError(f"pixels must be (h, w) or (h, w, 3), got {self.pixels.shape}")
        if self.pixels.ndim == 3 and self.pixels.shape[2] != 3:
            raise ValueError(f"channels must be 1 or 3, got {self.pixels.shape[2]}")
        if self.width == 0 or self.height == 0:
            raise ValueError("zero-sized image")
        if not (self.mpp > 0):
            raise ValueError(f"mpp must be > 0, got {self.mpp}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    def copy(self) -> "Raster":
        return Raster(self.pixels.copy(), self.mpp)


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Round half-up to uint8; the single quantization rule used everywhere."""
    return np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)


def to_gray(img: Raster) -> np.ndarray:
    """Grayscale plane via integer-rounded luma (0.299 R + 0.587 G + 0.114 B)."""
    if img.channels == 1:
        return img.pixels
    return quantize_u8(img.pixels.astype(np.float64) @ _LUMA)


def _sidecar_mpp(path: Path) -> float | None:
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        return None
    try:
        meta = json.loads(sidecar.read_text())
        value = float(meta["mpp"])
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"bad mpp sidecar {sidecar}: {exc}") from exc
    if value <= 0:
        raise DecodeError(f"bad mpp sidecar {sidecar}: mpp must be > 0")
    return value


def load_image(path: str | Path, mpp: float | None = None) -> Raster:
    """Load a PNG or 8-bit TIFF image.

    Resolution comes from, in order of precedence: the ``mpp`` argument, a
    JSON sidecar ``<stem>.json`` containing ``{"mpp": <float>}``, or the
    default 0.25.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise DecodeError(f"unsupported bit depth for {path} (mode {mode})")
            if mode == "1":
                im = im.convert("L")
            elif mode not in ("L", "RGB"):
                im = im.convert("RGB")
            pixels = np.asarray(im, dtype=np.uint8)
    except DecodeError:
        raise
    except FileNotFoundError as exc:
        raise DecodeError(f"cannot read {path}: {exc}") from exc
    except Exception as exc:  # PIL raises several unrelated types on bad files
        raise DecodeError(f"decode failure for {path}: {exc}") from exc
    if pixels.size == 0:
        raise DecodeError(f"zero-sized image: {path}")
    if mpp is None:
        mpp = _sidecar_mpp(path)
    return Raster(pixels, DEFAULT_MPP if mpp is None else float(mpp))


def save_image(img: Raster, path: str | Path) -> None:
    """Write PNG or TIFF depending on the file extension."""
    Image.fromarray(img.pixels).save(str(path))


def _downscale_axis(arr: np.ndarray, out_len: int) -> np.ndarray:
    """Exact area-average along axis 0 (piecewise-constant integral)."""
    in_len = arr.shape[0]
    scale = in_len / out_len
    flat = arr.reshape(in_len, -1).astype(np.float64)
    cum = np.vstack([np.zeros((1, flat.shape[1])), np.cumsum(flat, axis=0)])
    edges = np.arange(out_len + 1) * scale
    j = np.clip(np.floor(edges).astype(np.int64), 0, in_len)
    frac = np.clip(edges - j, 0.0, 1.0)
    integral = cum[j] + frac[:, None] * flat[np.minimum(j, in_len - 1)]
    out = (integral[1:] - integral[:-1]) / scale
    return out.reshape((out_len,) + arr.shape[1:])


def _upscale_axis(arr: np.ndarray, out_len: int) -> np.ndarray:
    """Bilinear along axis 0 with half-pixel centers, edge-clamped."""
    in_len = arr.shape[0]
    scale = in_len / out_len
    x = np.clip((np.arange(out_len) + 0.5) * scale - 0.5, 0.0, in_len - 1.0)
    x0 = np.floor(x).astype(np.int64)
    x1 = np.minimum(x0 + 1, in_len - 1)
    w = (x - x0).reshape((out_len,) + (1,) * (arr.ndim - 1))
    a = arr.astype(np.float64)
    return a[x0] * (1.0 - w) + a[x1] * w


def resample(img: Raster, target_mpp: float) -> Raster:
    """Resample to a new resolution.

    Output dimensions are ``floor(dim * mpp / target + 0.5)`` with a minimum
    of 1.  Downscaling uses exact area averaging, upscaling bilinear
    interpolation; equal resolutions return a pixel-identical copy.
    """
    if not (target_mpp > 0):
        raise ValueError(f"target_mpp must be > 0, got {target_mpp}")
    if target_mpp == img.mpp:
        return img.copy()
    ratio = img.mpp / target_mpp
    out_h = max(1, int(np.floor(img.height * ratio + 0.5)))
    out_w = max(1, int(np.floor(img.width * ratio + 0.5)))
    resize = _downscale_axis if target_mpp > img.mpp else _upscale_axis
    data = resize(img.pixels, out_h)
    data = np.swapaxes(resize(np.swapaxes(data, 0, 1), out_w), 0, 1)
    return Raster(quantize_u8(data), float(target_mpp))


def histogram256(gray: np.ndarray) -> np.ndarray:
    return np.bincount(gray.ravel(), minlength=256).astype(np.int64)


def otsu_from_histogram(hist: np.ndarray) -> int:
    """Threshold maximizing between-class variance over a 256-bin histogram.

    Classes are ``value <= t`` and ``value > t``.  Ties break toward the
    smallest threshold.  Computed in exact integer arithmetic, so the result
    agrees bit-for-bit with an exhaustive rational-arithmetic search.
    A single-valued histogram returns that value (degenerate case).
    """
    counts = [int(c) for c in hist]
    if len(counts) != 256 or any(c < 0 for c in counts):
        raise ValueError("histogram must be 256 non-negative counts")
    total = sum(counts)
    if total == 0:
        raise ValueError("empty histogram")
    nonzero = [v for v, c in enumerate(counts) if c > 0]
    if len(nonzero) == 1:
        return nonzero[0]
    total_sum = sum(v * c for v, c in enumerate(counts))
    best_t, best_num, best_den = 0, -1, 1
    w0 = 0
    s0 = 0
    for t in range(256):
        w0 += counts[t]
        s0 += t * counts[t]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            num, den = 0, 1
        else:
            # between-class variance ∝ (S0*w1 - S1*w0)^2 / (w0*w1), exact ints
            s1 = total_sum - s0
            num = (s0 * w1 - s1 * w0) ** 2
            den = w0 * w1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu_threshold(img: Raster) -> int:
    """Otsu threshold of the image's luma histogram."""
    return otsu_from_histogram(histogram256(to_gray(img)))


def segment_tissue(
    img: Raster,
    min_component_area: int = DEFAULT_MIN_COMPONENT_AREA,
    polarity: str = "auto",
) -> np.ndarray:
    """Binary tissue mask: Otsu split, polarity pick, cleanup.

    ``polarity`` selects which side of the threshold is tissue: ``"dark"``,
    ``"bright"``, or ``"auto"``, which takes the class that is *not* the
    majority along the image border (the border is assumed background).
    Connected components (8-connectivity) smaller than
    ``min_component_area`` are removed and interior holes are filled.
    """
    gray = to_gray(img)
    t = otsu_threshold(img)
    dark = gray <= t
    if polarity == "auto":
        border = np.concatenate([dark[0, :], dark[-1, :], dark[1:-1, 0], dark[1:-1, -1]])
        dark_is_tissue = int(border.sum()) * 2 <= border.size
    elif polarity in ("dark", "bright"):
        dark_is_tissue = polarity == "dark"
    else:
        raise ValueError(f"polarity must be auto|dark|bright, got {polarity!r}")
    mask = dark if dark_is_tissue else ~dark

    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        raise NoTissueError("no tissue found")
    areas = np.bincount(labels.ravel())
    areas[0] = 0
    keep = areas >= min_component_area
    mask = keep[labels]
    if not mask.any():
        raise NoTissueError("no tissue found")
    return ndimage.binary_fill_holes(mask)
