"""Seeded robustness perturbations: Gaussian noise, Gaussian blur, JPEG, crop-and-resize.

Images are float64 arrays on the 0-255 scale, shaped (C, H, W) or (H, W).
Every transform keeps shape and range; stochastic ones take a seed or Generator.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .rng import SeedLike, make_rng, stream_seed


class PerturbKind(str, Enum):
    NOISE = "noise"
    BLUR = "blur"
    JPEG = "jpeg"
    CROP = "crop"


DEFAULT_RANGES = {
    PerturbKind.NOISE: (5.0, 20.0),
    PerturbKind.BLUR: (3, 5, 7, 9),
    PerturbKind.JPEG: (10, 75),
    PerturbKind.CROP: (0.05, 0.20),
}


@dataclass(frozen=True)
class PerturbSpec:
    """One perturbation and the range its strength is drawn from.

    ``param_range`` is ``(lo, hi)`` for noise variance, JPEG quality and crop
    fraction, and the set of allowed kernel sizes for blur.
    """

    kind: PerturbKind
    param_range: Optional[tuple] = None
    noise_as_sigma: bool = False

    def __post_init__(self):
        kind = PerturbKind(self.kind)
        object.__setattr__(self, "kind", kind)
        rng_ = tuple(DEFAULT_RANGES[kind] if self.param_range is None else self.param_range)
        object.__setattr__(self, "param_range", rng_)
        if kind is PerturbKind.BLUR:
            if not rng_ or any(int(k) != k or k < 3 or k % 2 == 0 for k in rng_):
                raise ValueError(f"blur kernel sizes must be odd integers >= 3, got {rng_}")
            return
        if len(rng_) != 2 or rng_[0] > rng_[1]:
            raise ValueError(f"{kind.value} range must be (lo, hi) with lo <= hi, got {rng_}")
        lo, hi = rng_
        if kind is PerturbKind.NOISE and lo <= 0:
            raise ValueError("noise variance must be > 0")
        if kind is PerturbKind.JPEG and not (1 <= lo and hi <= 100):
            raise ValueError("JPEG quality must lie in [1, 100]")
        if kind is PerturbKind.CROP and not (0 < lo and hi < 0.5):
            raise ValueError("crop fraction must lie in (0, 0.5)")

    def sample(self, rng: np.random.Generator):
        lo = self.param_range[0]
        if self.kind is PerturbKind.BLUR:
            return int(self.param_range[int(rng.integers(len(self.param_range)))])
        hi = self.param_range[1]
        if self.kind is PerturbKind.JPEG:
            return int(rng.integers(int(lo), int(hi), endpoint=True))
        return float(rng.uniform(lo, hi))


def _check_image(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim not in (2, 3) or min(image.shape[-2:]) == 0:
        raise ValueError(f"expected a non-empty (C,H,W) or (H,W) image, got shape {image.shape}")
    return image


def add_gaussian_noise(image, variance: float, rng: SeedLike = 0, as_sigma: bool = False) -> np.ndarray:
    """``clip(image + N(0, variance), 0, 255)``.

    With ``as_sigma`` the parameter is read as the standard deviation instead.
    """
    if variance < 0:
        raise ValueError(f"noise variance must be >= 0, got {variance}")
    image = _check_image(image)
    sigma = float(variance) if as_sigma else float(np.sqrt(variance))
    if sigma == 0.0:
        return image.copy()
    noise = make_rng(rng).normal(0.0, sigma, size=image.shape)
    return np.clip(image + noise, 0.0, 255.0)


def blur_sigma(kernel_size: int) -> float:
    return 0.3 * ((kernel_size - 1) / 2 - 1) + 0.8


def gaussian_kernel(kernel_size: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps for an odd ``kernel_size >= 3``."""
    if int(kernel_size) != kernel_size or kernel_size < 3 or kernel_size % 2 == 0:
        raise ValueError(f"kernel size must be an odd integer >= 3, got {kernel_size}")
    half = kernel_size // 2
    t = np.arange(-half, half + 1, dtype=np.float64)
    taps = np.exp(-t ** 2 / (2 * blur_sigma(kernel_size) ** 2))
    return taps / taps.sum()


def _filter_axis(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    half = taps.size // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (half, half)
    # 'reflect' mirrors about the edge pixel without repeating it (OpenCV's REFLECT_101)
    xp = np.pad(x, pad, mode="reflect")
    n = x.shape[axis]
    out = np.zeros_like(x)
    for i, t in enumerate(taps):
        out += t * np.take(xp, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(image, kernel_size: int) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; no clipping is needed (convex weights)."""
    image = _check_image(image)
    taps = gaussian_kernel(kernel_size)
    return _filter_axis(_filter_axis(image, taps, image.ndim - 2), taps, image.ndim - 1)


def jpeg_roundtrip(image, quality: int) -> np.ndarray:
    """Encode to baseline JPEG (4:2:0 for color) at ``quality`` and decode back."""
    if int(quality) != quality or not (1 <= quality <= 100):
        raise ValueError(f"JPEG quality must be an integer in [1, 100], got {quality}")
    image = _check_image(image)
    u8 = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    if u8.ndim == 3:
        if u8.shape[0] != 3:
            raise ValueError("JPEG needs 3-channel color or single-plane gray images")
        pil = Image.fromarray(np.ascontiguousarray(u8.transpose(1, 2, 0)), mode="RGB")
    else:
        pil = Image.fromarray(u8, mode="L")
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=int(quality), subsampling=2, optimize=False)
    buf.seek(0)
    out = np.asarray(Image.open(buf), dtype=np.float64)
    return out.transpose(2, 0, 1).copy() if image.ndim == 3 else out


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    return np.where(t <= 1, (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1,
                    np.where(t < 2, a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a, 0.0))


def bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) resampling matrix for Keys cubic (a = -0.5), pixel-center aligned.

    Border taps are clamped to the edge and every row is renormalized, so
    constant signals map to themselves exactly.
    """
    centers = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(centers).astype(int)
    m = np.zeros((n_out, n_in))
    for offset in range(-1, 3):
        idx = base + offset
        wts = _cubic(centers - idx)
        np.add.at(m, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), wts)
    return m / m.sum(axis=1, keepdims=True)


def resize_bicubic(image, height: int, width: int) -> np.ndarray:
    image = _check_image(image)
    rows = bicubic_matrix(image.shape[-2], height)
    cols = bicubic_matrix(image.shape[-1], width)
    out = np.einsum("ih,...hw,jw->...ij", rows, image, cols)
    return np.clip(out, 0.0, 255.0)


def crop_window(h: int, w: int, fraction: float) -> tuple[int, int]:
    """Side lengths kept after removing ``fraction`` of each dimension."""
    if not (0 < fraction < 0.5):
        raise ValueError(f"crop fraction must lie in (0, 0.5), got {fraction}")
    return int(np.ceil((1 - fraction) * h - 1e-9)), int(np.ceil((1 - fraction) * w - 1e-9))


def crop_resize(image, crop_fraction: float, rng: SeedLike = 0) -> np.ndarray:
    """Cut a random window missing ``crop_fraction`` of each side, then resize back."""
    image = _check_image(image)
    h, w = image.shape[-2:]
    kh, kw = crop_window(h, w, crop_fraction)
    gen = make_rng(rng)
    top = int(gen.integers(0, h - kh, endpoint=True))
    left = int(gen.integers(0, w - kw, endpoint=True))
    window = image[..., top:top + kh, left:left + kw]
    return resize_bicubic(window, h, w)


def apply_perturbation(image, spec: PerturbSpec, rng: SeedLike = 0) -> np.ndarray:
    """Draw this spec's strength from ``rng`` and apply it (noise and crop reuse ``rng``)."""
    gen = make_rng(rng)
    value = spec.sample(gen)
    if spec.kind is PerturbKind.NOISE:
        return add_gaussian_noise(image, value, gen, as_sigma=spec.noise_as_sigma)
    if spec.kind is PerturbKind.BLUR:
        return gaussian_blur(image, value)
    if spec.kind is PerturbKind.JPEG:
        return jpeg_roundtrip(image, value)
    return crop_resize(image, value, gen)


def perturbation_chain(image, specs: Sequence[PerturbSpec], rng: SeedLike = 0) -> np.ndarray:
    """Apply ``specs`` in order; step ``i`` draws from ``stream_seed(seed, i)``.

    An empty chain returns a copy of the input.
    """
    out = _check_image(image).copy()
    seed = rng if isinstance(rng, (int, np.integer)) else int(make_rng(rng).integers(2 ** 63))
    for i, spec in enumerate(specs):
        out = apply_perturbation(out, spec, stream_seed(int(seed), i))
    return out

