"""Datasets and preprocessing.

Label convention everywhere: 1 = real, 0 = generated.

Images travel as ``(C, H, W)`` arrays on the 0-255 scale until preprocessing,
which crops (tiling small images first), optionally flips/rotates, and maps to
``[-1, 1]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .rng import SeedLike, make_rng, stream_seed

log = logging.getLogger(__name__)

LABEL_REAL = 1
LABEL_FAKE = 0
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif", ".tiff", ".webp"}
REAL_DIRS = ("real", "nature")


@dataclass
class Sample:
    image: np.ndarray
    label: int
    subset_id: str
    path: Optional[str] = None

    def __post_init__(self):
        if self.label not in (LABEL_REAL, LABEL_FAKE):
            raise ValueError(f"label must be 0 (generated) or 1 (real), got {self.label}")


# --------------------------------------------------------------------------- I/O

def read_image(path: str | Path) -> np.ndarray:
    """Decode to a float64 ``(3, H, W)`` array on 0-255."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr.transpose(2, 0, 1)


def write_image(path: str | Path, image: np.ndarray, quality: Optional[int] = None) -> Path:
    """Write a ``(C, H, W)`` 0-255 image, rounding to 8 bits. PNG unless the suffix is .jpg."""
    from PIL import Image

    path = Path(path)
    arr = to_uint8(image)
    im = Image.fromarray(arr.transpose(1, 2, 0) if arr.shape[0] == 3 else arr[0])
    if path.suffix.lower() in (".jpg", ".jpeg"):
        im.save(path, format="JPEG", quality=quality or 95)
    else:
        im.save(path, format="PNG", optimize=False)
    return path


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)


def reservoir_select(n_items: int, k: int, rng: SeedLike) -> list[int]:
    """Indices of a uniform size-``k`` subset (Algorithm R), returned ascending."""
    gen = make_rng(rng)
    k = min(k, n_items)
    chosen = list(range(k))
    for i in range(k, n_items):
        j = int(gen.integers(0, i + 1))
        if j < k:
            chosen[j] = i
    return sorted(chosen)


def _list_images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


class GenImageDir:
    """Stream of samples from ``root/subset/split/{real,ai}``.

    Files are enumerated lexicographically, real before ai. ``fraction`` keeps a
    seeded reservoir subset of each class list. Undecodable files are skipped,
    logged and counted in ``skipped``.
    """

    def __init__(self, root: str | Path, subset: str, split: str = "train",
                 fraction: Optional[float] = None, seed: int = 0):
        if split not in ("train", "val"):
            raise ValueError(f"split must be 'train' or 'val', got {split!r}")
        if fraction is not None and not (0.0 < fraction <= 1.0):
            raise ValueError(f"fraction must be in (0, 1], got {fraction}")
        self.base = Path(root) / subset / split
        if not self.base.is_dir():
            raise FileNotFoundError(f"dataset directory not found: {self.base}")
        real = next((self.base / d for d in REAL_DIRS if (self.base / d).is_dir()), None)
        fake = self.base / "ai"
        if real is None:
            raise FileNotFoundError(f"dataset directory not found: {self.base / 'real'}")
        if not fake.is_dir():
            raise FileNotFoundError(f"dataset directory not found: {fake}")
        self.subset = subset
        self.files: list[tuple[Path, int]] = []
        for cls, (folder, label) in enumerate(((real, LABEL_REAL), (fake, LABEL_FAKE))):
            paths = _list_images(folder)
            if fraction is not None:
                k = max(1, int(round(fraction * len(paths)))) if paths else 0
                paths = [paths[i] for i in reservoir_select(len(paths), k, stream_seed(seed, cls))]
            self.files += [(p, label) for p in paths]
        self.skipped = 0

    def __len__(self):
        return len(self.files)

    def __iter__(self) -> Iterator[Sample]:
        self.skipped = 0
        for path, label in self.files:
            try:
                image = read_image(path)
            except Exception as exc:  # noqa: BLE001 - any decoder failure means skip
                self.skipped += 1
                log.warning("skipping undecodable image %s: %s", path, exc)
                continue
            yield Sample(image, label, self.subset, str(path))


def load_genimage_dir(root: str | Path, subset: str, split: str = "train",
                      fraction: Optional[float] = None, seed: int = 0) -> GenImageDir:
    return GenImageDir(root, subset, split, fraction, seed)


def list_subsets(root: str | Path) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    return sorted(p.name for p in root.iterdir() if p.is_dir())


# ----------------------------------------------------------------- preprocessing

def normalize(image: np.ndarray) -> np.ndarray:
    """0-255 -> [-1, 1] per channel."""
    return (np.asarray(image, dtype=np.float64) / 255.0 - 0.5) / 0.5


def tile_to(image: np.ndarray, crop: int) -> np.ndarray:
    """Repeat the image along any spatial axis shorter than ``crop``."""
    image = np.asarray(image)
    if image.ndim != 3 or 0 in image.shape:
        raise ValueError(f"expected a non-empty (C, H, W) image, got shape {image.shape}")
    h, w = image.shape[1:]
    reps_h, reps_w = -(-crop // h), -(-crop // w)
    if reps_h == 1 and reps_w == 1:
        return image
    return np.tile(image, (1, reps_h, reps_w))


def preprocess_train(image: np.ndarray, crop: int, rng: SeedLike = 0, augment: bool = True) -> np.ndarray:
    """Random ``crop x crop`` window, random horizontal flip, random right-angle rotation, normalize."""
    if crop < 1:
        raise ValueError(f"crop must be >= 1, got {crop}")
    gen = make_rng(rng)
    x = tile_to(image, crop)
    h, w = x.shape[1:]
    top = int(gen.integers(0, h - crop, endpoint=True))
    left = int(gen.integers(0, w - crop, endpoint=True))
    x = x[:, top:top + crop, left:left + crop]
    if augment:
        if gen.random() < 0.5:
            x = x[:, :, ::-1]
        k = int(gen.integers(0, 4))
        if k:
            x = np.rot90(x, k, axes=(1, 2))
    return np.ascontiguousarray(normalize(x))


def center_crop_offset(h: int, w: int, crop: int) -> tuple[int, int]:
    return (h - crop) // 2, (w - crop) // 2


def preprocess_eval(image: np.ndarray, crop: int) -> np.ndarray:
    """Deterministic center crop (tiling first if needed) and normalization."""
    if crop < 1:
        raise ValueError(f"crop must be >= 1, got {crop}")
    x = tile_to(image, crop)
    top, left = center_crop_offset(x.shape[1], x.shape[2], crop)
    return np.ascontiguousarray(normalize(x[:, top:top + crop, left:left + crop]))


# ------------------------------------------------------------ synthetic benchmark

class ArtifactKind(str, Enum):
    GRID_PERIODIC = "grid_periodic"
    CHECKER_HIGHFREQ = "checker_highfreq"
    RING_SPECTRAL = "ring_spectral"


@dataclass(frozen=True)
class RealSpec:
    """Statistics of the synthetic "real" images: 1/f^exponent amplitude spectrum."""

    spectrum_exponent: float = 1.0
    contrast: float = 40.0
    chroma: float = 0.3


@dataclass(frozen=True)
class SyntheticGenSpec:
    """One synthetic generator: its own base spectrum plus a periodic fingerprint.

    ``artifact_extent`` is the side of the square region (as a fraction of the
    image side) that carries the fingerprint; 1.0 covers the whole image.
    """

    generator_id: str
    base_spectrum_exponent: float = 1.0
    artifact_kind: ArtifactKind = ArtifactKind.GRID_PERIODIC
    artifact_frequency: float = 8.0
    artifact_amplitude: float = 0.5
    artifact_extent: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "artifact_kind", ArtifactKind(self.artifact_kind))
        if self.artifact_amplitude < 0:
            raise ValueError("artifact_amplitude must be >= 0")
        if self.artifact_frequency <= 0:
            raise ValueError("artifact_frequency must be positive")
        if not (0.0 < self.artifact_extent <= 1.0):
            raise ValueError("artifact_extent must be in (0, 1]")


def _radial_freq(size: int) -> np.ndarray:
    fy = np.fft.fftfreq(size)[:, None] * size
    fx = np.fft.rfftfreq(size)[None, :] * size
    return np.sqrt(fx ** 2 + fy ** 2)


def power_law_field(size: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean, unit-std Gaussian field with amplitude spectrum ``f^-exponent``."""
    f = _radial_freq(size)
    amp = np.zeros_like(f)
    amp[f > 0] = f[f > 0] ** -exponent
    spec = (rng.normal(size=f.shape) + 1j * rng.normal(size=f.shape)) * amp
    field_ = np.fft.irfft2(spec, s=(size, size))
    return (field_ - field_.mean()) / field_.std()


def _render(field3: np.ndarray, contrast: float) -> np.ndarray:
    return np.clip(127.5 + contrast * field3, 0.0, 255.0)


def _base_field(size, exponent, common: RealSpec, rng):
    lum = power_law_field(size, exponent, rng)
    chroma = np.stack([power_law_field(size, exponent, rng) for _ in range(3)])
    return (lum[None] + common.chroma * chroma) / np.sqrt(1.0 + common.chroma ** 2)


def artifact_pattern(kind: ArtifactKind, frequency: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS periodic pattern at ``frequency`` cycles per image."""
    kind = ArtifactKind(kind)
    if frequency >= size / 2:
        raise ValueError(f"artifact frequency {frequency} must be below Nyquist ({size / 2})")
    t = np.arange(size) / size
    py, px = rng.uniform(0, 2 * np.pi, size=2)
    if kind is ArtifactKind.GRID_PERIODIC:
        pat = np.cos(2 * np.pi * frequency * t + py)[:, None] + np.cos(2 * np.pi * frequency * t + px)[None, :]
    elif kind is ArtifactKind.CHECKER_HIGHFREQ:
        pat = np.cos(2 * np.pi * frequency * t + py)[:, None] * np.cos(2 * np.pi * frequency * t + px)[None, :]
    else:
        f = _radial_freq(size)
        ring = (np.abs(f - frequency) <= 0.5).astype(np.float64)
        spec = (rng.normal(size=f.shape) + 1j * rng.normal(size=f.shape)) * ring
        pat = np.fft.irfft2(spec, s=(size, size))
    pat = pat - pat.mean()
    return pat / np.sqrt(np.mean(pat ** 2))


def _window(size: int, extent: float, rng: np.random.Generator) -> np.ndarray:
    """Square raised-cosine window of side ``extent * size`` at a random position."""
    side = max(2, int(round(extent * size)))
    top, left = rng.integers(0, size - side, endpoint=True, size=2)
    edge = np.minimum(np.arange(side) + 0.5, side - np.arange(side) - 0.5)
    ramp = np.clip(edge / max(1.0, side / 8), 0.0, 1.0)
    prof = 0.5 - 0.5 * np.cos(np.pi * ramp)
    win = np.zeros((size, size))
    win[top:top + side, left:left + side] = np.outer(prof, prof)
    return win


def synth_real(common: RealSpec, size: int, rng: SeedLike = 0) -> np.ndarray:
    """Synthetic "real" photo: colored 1/f Gaussian field on 0-255."""
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    gen = make_rng(rng)
    return _render(_base_field(size, common.spectrum_exponent, common, gen), common.contrast)


def synth_fake(spec: SyntheticGenSpec, size: int, rng: SeedLike = 0,
               common: RealSpec = RealSpec()) -> np.ndarray:
    """Generator output: its base field plus the generator fingerprint on every channel."""
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    if spec.artifact_frequency >= size / 2:
        raise ValueError(f"artifact frequency {spec.artifact_frequency} must be below Nyquist ({size / 2})")
    gen = make_rng(rng)
    base = _base_field(size, spec.base_spectrum_exponent, common, gen)
    pat = artifact_pattern(spec.artifact_kind, spec.artifact_frequency, size, gen)
    if spec.artifact_extent < 1.0:
        pat = pat * _window(size, spec.artifact_extent, gen)
    return _render(base + spec.artifact_amplitude * pat[None], common.contrast)


@dataclass
class SyntheticBenchmark:
    """A set of synthetic generators sharing one real-image model."""

    generators: Sequence[SyntheticGenSpec]
    common: RealSpec = field(default_factory=RealSpec)
    size: int = 32

    def __post_init__(self):
        ids = [g.generator_id for g in self.generators]
        if len(set(ids)) != len(ids):
            raise ValueError("generator ids must be unique")
        freqs = [g.artifact_frequency for g in self.generators]
        if len(set(freqs)) != len(freqs):
            raise ValueError("generators must use distinct artifact frequencies")

    @property
    def subset_ids(self) -> list[str]:
        return [g.generator_id for g in self.generators]

    def spec(self, generator_id: str) -> SyntheticGenSpec:
        for g in self.generators:
            if g.generator_id == generator_id:
                return g
        raise KeyError(generator_id)

    def make_subset(self, generator_id: str, n_per_class: int, seed: int, split: str = "train") -> list[Sample]:
        """``n_per_class`` real then ``n_per_class`` fake samples, each seeded by its index."""
        spec = self.spec(generator_id)
        split_key = {"train": 0, "val": 1}[split]
        gid = self.subset_ids.index(generator_id)
        out = []
        for i in range(n_per_class):
            s = stream_seed(seed, split_key, gid, 0, i)
            out.append(Sample(synth_real(self.common, self.size, s), LABEL_REAL, generator_id))
        for i in range(n_per_class):
            s = stream_seed(seed, split_key, gid, 1, i)
            out.append(Sample(synth_fake(spec, self.size, s, self.common), LABEL_FAKE, generator_id))
        return out

    def make_real(self, n: int, seed: int) -> list[Sample]:
        """Real-only pool (for pretraining), independent of every subset's reals."""
        return [Sample(synth_real(self.common, self.size, stream_seed(seed, 2, i)), LABEL_REAL, "real")
                for i in range(n)]


def default_benchmark(size: int = 32) -> SyntheticBenchmark:
    """Four generators with disjoint fingerprints on a half-side patch.

    All fakes share a slightly flatter base spectrum (exponent 0.85 against the
    reals' 1.0), a weak cue common to every generator. The fingerprint is
    much stronger but specific to each generator. At these settings a linear
    probe on log FFT magnitudes separates each generator from real (>=95%), while
    a pixel-space probe trained on gen_a is at chance on the others.
    """
    return SyntheticBenchmark(
        generators=[
            SyntheticGenSpec("gen_a", 0.85, ArtifactKind.GRID_PERIODIC, 5.0, 2.0, 0.5),
            SyntheticGenSpec("gen_b", 0.85, ArtifactKind.CHECKER_HIGHFREQ, 11.0, 2.0, 0.5),
            SyntheticGenSpec("gen_c", 0.85, ArtifactKind.RING_SPECTRAL, 8.0, 2.0, 0.5),
            SyntheticGenSpec("gen_d", 0.85, ArtifactKind.GRID_PERIODIC, 13.0, 2.0, 0.5),
        ],
        size=size,
    )


def write_synthetic_dataset(root: str | Path, bench: SyntheticBenchmark, n_per_class: int,
                            seed: int, splits: Sequence[str] = ("train", "val")) -> Path:
    """Emit the benchmark as a GenImage-style tree of PNG files."""
    root = Path(root)
    for gid in bench.subset_ids:
        for split in splits:
            samples = bench.make_subset(gid, n_per_class, seed, split)
            for folder in ("real", "ai"):
                (root / gid / split / folder).mkdir(parents=True, exist_ok=True)
            counters = {LABEL_REAL: 0, LABEL_FAKE: 0}
            for s in samples:
                folder = "real" if s.label == LABEL_REAL else "ai"
                write_image(root / gid / split / folder / f"{counters[s.label]:06d}.png", s.image)
                counters[s.label] += 1
    return root
