"""Random rectangular zero-masks for training inputs.

A mask is an ``(H, W)`` uint8 plane holding 1 for pixels the model sees and 0
for pixels it must ignore. The zeros always form a single axis-aligned
rectangle (or are absent). Masks broadcast over every channel of a ``(C, H, W)``
image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .rng import SeedLike, make_rng


class FormulaVariant(str, Enum):
    #: Rectangle width taken as ``sqrt(S / H_select)``, literally as in the
    #: published pseudocode. Realizes far less area than requested.
    AS_WRITTEN = "as_written"
    #: Width ``S / H_select`` so that the rectangle area tracks ``r_mask``.
    CORRECTED = "corrected"


@dataclass(frozen=True)
class MaskConfig:
    """Sampling ranges for the masked ratio and the rectangle aspect ratio."""

    r_mask_range: tuple[float, float] = (0.6, 0.8)
    r_aspect_range: tuple[float, float] = (0.33, 3.0)
    formula_variant: FormulaVariant = FormulaVariant.CORRECTED

    def __post_init__(self):
        lo, hi = (float(v) for v in self.r_mask_range)
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"r_mask_range must satisfy 0 <= low <= high <= 1, got {self.r_mask_range}")
        alo, ahi = (float(v) for v in self.r_aspect_range)
        null_pair = hi == 0.0 and alo == ahi == 0.0
        if not null_pair and (not (0.0 < alo <= ahi) or not math.isfinite(ahi)):
            raise ValueError(f"r_aspect_range must satisfy 0 < low <= high, got {self.r_aspect_range}")
        object.__setattr__(self, "r_mask_range", (lo, hi))
        object.__setattr__(self, "r_aspect_range", (alo, ahi))
        object.__setattr__(self, "formula_variant", FormulaVariant(self.formula_variant))

    @property
    def is_null(self) -> bool:
        """True when every sampled mask is empty (an aspect range of (0, 0) is then allowed)."""
        return self.r_mask_range[1] == 0.0


class Rect(NamedTuple):
    top: int
    left: int
    height: int
    width: int


def _round(x: float) -> int:
    # Python round: ties to even.
    return int(round(x))


def _check_args(height, width, r_mask, r_aspect):
    if int(height) != height or int(width) != width or height < 1 or width < 1:
        raise ValueError(f"mask size must be positive integers, got {height}x{width}")
    if not (0.0 <= r_mask <= 1.0):
        raise ValueError(f"r_mask must be in [0, 1], got {r_mask}")
    # the aspect ratio is irrelevant when nothing is masked
    if r_mask > 0.0 and (not (r_aspect > 0.0) or not math.isfinite(r_aspect)):
        raise ValueError(f"r_aspect must be positive, got {r_aspect}")


def mask_dims(height: int, width: int, r_mask: float, r_aspect: float,
              variant: FormulaVariant = FormulaVariant.CORRECTED) -> tuple[int, int]:
    """Rectangle size ``(H_select, W_select)``; ``(0, 0)`` means no rectangle.

    ``as_written`` follows the pseudocode literally. ``corrected`` uses
    ``W = S / H`` and keeps the area near ``r_mask``: when the width would
    exceed the image it is clamped and the height re-derived from it, and
    when the width would round to zero columns it becomes one column and the
    height is re-derived the same way.
    """
    _check_args(height, width, r_mask, r_aspect)
    variant = FormulaVariant(variant)
    area = height * width * r_mask
    if area == 0:
        return 0, 0
    h = _round(min(height, math.sqrt(area * r_aspect)))
    if variant is FormulaVariant.AS_WRITTEN:
        if h == 0:
            return 0, 0
        w = _round(min(width, math.sqrt(area / h)))
        return (h, w) if w > 0 else (0, 0)

    h = max(h, 1)
    w_exact = area / h
    if w_exact > width:
        w = width
        h = _round(min(height, area / width))
    else:
        w = _round(w_exact)
        if w == 0:
            w, h = 1, _round(min(height, area))
    if h == 0 or w == 0:
        return 0, 0
    return h, w


def sample_rectangle(height: int, width: int, r_mask: float, r_aspect: float,
                     variant: FormulaVariant = FormulaVariant.CORRECTED,
                     rng: SeedLike = 0) -> Optional[Rect]:
    """Draw the zero rectangle; the top-left corner is uniform over valid placements."""
    h, w = mask_dims(height, width, r_mask, r_aspect, variant)
    if h == 0:
        return None
    gen = make_rng(rng)
    top = int(gen.integers(0, height - h, endpoint=True))
    left = int(gen.integers(0, width - w, endpoint=True))
    return Rect(top, left, h, w)


def rect_to_mask(height: int, width: int, rect: Optional[Rect]) -> np.ndarray:
    mask = np.ones((height, width), dtype=np.uint8)
    if rect is not None:
        mask[rect.top:rect.top + rect.height, rect.left:rect.left + rect.width] = 0
    return mask


def generate_mask(height: int, width: int, r_mask: float, r_aspect: float,
                  variant: FormulaVariant = FormulaVariant.CORRECTED,
                  rng: SeedLike = 0) -> np.ndarray:
    """Binary ``(height, width)`` mask with one zeroed rectangle."""
    rect = sample_rectangle(height, width, r_mask, r_aspect, variant, rng)
    return rect_to_mask(height, width, rect)


def sample_mask_config(config: MaskConfig, rng: SeedLike = 0) -> tuple[float, float]:
    """Draw ``(r_mask, r_aspect)`` uniformly from the configured ranges."""
    gen = make_rng(rng)
    lo, hi = config.r_mask_range
    alo, ahi = config.r_aspect_range
    r_mask = lo if lo == hi else float(gen.uniform(lo, hi))
    r_aspect = alo if alo == ahi else float(gen.uniform(alo, ahi))
    return r_mask, r_aspect


def random_mask(height: int, width: int, config: MaskConfig, rng: SeedLike = 0) -> np.ndarray:
    """Sample ratios from ``config`` and build a mask from the same generator."""
    gen = make_rng(rng)
    r_mask, r_aspect = sample_mask_config(config, gen)
    return generate_mask(height, width, r_mask, r_aspect, config.formula_variant, gen)


def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Elementwise product of a ``(C, H, W)`` or ``(H, W)`` image with the mask."""
    image = np.asarray(image)
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if image.shape[-2:] != mask.shape or image.ndim not in (2, 3):
        raise ValueError(f"mask {mask.shape} does not match image {image.shape}")
    out = image * mask.astype(image.dtype if image.dtype.kind == "f" else np.float64)
    return out.astype(image.dtype, copy=False)


def save_mask_pgm(mask: np.ndarray, path: str | Path) -> Path:
    """Write a mask as an 8-bit binary PGM (0 -> 0, 1 -> 255)."""
    from PIL import Image

    mask = np.asarray(mask)
    if mask.ndim != 2 or not np.isin(mask, (0, 1)).all():
        raise ValueError("expected a 2-D binary mask")
    path = Path(path)
    Image.fromarray((mask.astype(np.uint8) * 255), mode="L").save(path, format="PPM")
    return path


def load_mask_pgm(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)
