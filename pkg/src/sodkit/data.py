"""Synthetic dataset generation, manifest I/O, and train-time
augmentation.

Each generated sample is a textured background (low-frequency color
noise plus low-contrast distractor shapes) with 1-3 high-contrast
foreground shapes; the mask is the exact foreground raster. Everything
is driven by one generator instance, so a seed fixes every byte.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import netpbm
from .errors import DataFormatError, UsageError
from .ops import _bilinear_matrix

FG_FRACTION = (0.05, 0.6)
MANIFEST_NAME = "manifest.tsv"


@dataclass
class Sample:
    image: np.ndarray  # (3,H,W) float32 in [0,1]
    mask: np.ndarray   # (1,H,W) float32 in {0,1}
    id: str


# -- shape rasterization -------------------------------------------------


def _grid(size):
    return np.meshgrid(np.arange(size), np.arange(size), indexing="ij")


def _raster_ellipse(size, rng):
    yy, xx = _grid(size)
    cy, cx = rng.uniform(0.2, 0.8, 2) * size
    ry, rx = rng.uniform(0.08, 0.3, 2) * size
    th = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dy * np.cos(th) + dx * np.sin(th)
    v = -dy * np.sin(th) + dx * np.cos(th)
    return (u / ry) ** 2 + (v / rx) ** 2 <= 1.0


def _raster_rect(size, rng):
    yy, xx = _grid(size)
    cy, cx = rng.uniform(0.2, 0.8, 2) * size
    hh, hw = rng.uniform(0.08, 0.28, 2) * size
    th = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dy * np.cos(th) + dx * np.sin(th)
    v = -dy * np.sin(th) + dx * np.cos(th)
    return (np.abs(u) <= hh) & (np.abs(v) <= hw)


def _raster_triangle(size, rng):
    yy, xx = _grid(size)
    c = rng.uniform(0.25, 0.75, 2) * size
    pts = c + rng.uniform(-0.3, 0.3, (3, 2)) * size
    inside = np.ones((size, size), dtype=bool)
    sign = 0.0
    for i in range(3):
        ay, ax = pts[i]
        by, bx = pts[(i + 1) % 3]
        cy, cx = pts[(i + 2) % 3]
        cross = (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)
        ref = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        sign = 1.0 if ref >= 0 else -1.0
        inside &= sign * cross >= 0
    return inside


_SHAPES = (_raster_ellipse, _raster_rect, _raster_triangle)


def _low_freq_noise(size, rng, coarse=8):
    """Per-channel smooth noise: coarse grid upsampled bilinearly."""
    n = max(2, size // coarse)
    a = _bilinear_matrix(n, size)
    coarse_img = rng.uniform(0.0, 1.0, (3, n, n))
    return np.matmul(np.matmul(a, coarse_img), a.T)


def make_sample(size: int, rng: np.random.Generator, sample_id: str) -> Sample:
    bg = 0.25 + 0.5 * _low_freq_noise(size, rng)
    bg_mean = bg.mean(axis=(1, 2))

    # distractors: background-like contrast, excluded from the mask
    for _ in range(int(rng.integers(1, 4))):
        shape = _SHAPES[int(rng.integers(len(_SHAPES)))](size, rng)
        tint = np.clip(bg_mean + rng.uniform(-0.08, 0.08, 3), 0, 1)
        bg[:, shape] = 0.7 * bg[:, shape] + 0.3 * tint[:, None]

    # foreground: distinct color, fraction forced into FG_FRACTION
    lo, hi = FG_FRACTION
    for _ in range(64):
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(1, 4))):
            mask |= _SHAPES[int(rng.integers(len(_SHAPES)))](size, rng)
        frac = mask.mean()
        if lo <= frac <= hi:
            break
    else:
        raise UsageError(f"could not draw a mask with fraction in {FG_FRACTION}")

    while True:
        fg_color = rng.uniform(0, 1, 3)
        if np.abs(fg_color - bg_mean).sum() >= 0.9:
            break
    img = bg.copy()
    img[:, mask] = fg_color[:, None]
    img += rng.normal(0.0, 0.015, img.shape)  # sensor-ish grain
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return Sample(img, mask[None].astype(np.float32), sample_id)


def gen_synthetic(count: int, size: int, rng: np.random.Generator, out_dir) -> str:
    """Write count image/mask pairs plus a manifest; returns its path."""
    if count < 1:
        raise UsageError(f"count {count} < 1")
    if size % 32:
        raise UsageError(f"size {size} not divisible by 32")
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    lines = []
    for i in range(count):
        s = make_sample(size, rng, f"sample_{i:04d}")
        img_rel = os.path.join("images", f"{s.id}.ppm")
        mask_rel = os.path.join("masks", f"{s.id}.pgm")
        netpbm.write_ppm(s.image, os.path.join(out_dir, img_rel))
        netpbm.write_pgm(s.mask, os.path.join(out_dir, mask_rel))
        lines.append(f"{img_rel}\t{mask_rel}\n")
    manifest = os.path.join(out_dir, MANIFEST_NAME)
    with open(manifest, "w", encoding="ascii") as fh:
        fh.writelines(lines)
    return manifest


# -- loading --------------------------------------------------------------


def read_manifest(path) -> list:
    """[(image_path, mask_path)] with paths resolved against the
    manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    try:
        fh = open(path, "r", encoding="ascii")
    except OSError as e:
        raise DataFormatError(f"cannot open manifest {path}: {e}") from None
    with fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(
                    f"{path}:{ln}: expected image<TAB>mask, got {line!r}")
            pairs.append(tuple(os.path.join(base, p) for p in parts))
    if not pairs:
        raise DataFormatError(f"{path}: empty manifest")
    return pairs


def load_sample(img_path, mask_path) -> Sample:
    img = netpbm.read_ppm(img_path)
    mask = netpbm.read_mask(mask_path)
    if img.shape[1:] != mask.shape[1:]:
        raise DataFormatError(
            f"image {img.shape} vs mask {mask.shape} for {img_path}")
    return Sample(img, mask, os.path.splitext(os.path.basename(img_path))[0])


def load_dataset(data_dir) -> list:
    manifest = os.path.join(data_dir, MANIFEST_NAME)
    return [load_sample(i, m) for i, m in read_manifest(manifest)]


# -- augmentation -----------------------------------------------------------


def _resize_bilinear_np(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    h, w = img.shape[1:]
    ah = _bilinear_matrix(h, oh)
    aw = _bilinear_matrix(w, ow)
    return np.matmul(np.matmul(ah, img.astype(np.float64)), aw.T)


def _resize_nearest_np(m: np.ndarray, oh: int, ow: int) -> np.ndarray:
    h, w = m.shape[1:]
    ys = np.clip(np.round((np.arange(oh) + 0.5) * h / oh - 0.5), 0, h - 1).astype(int)
    xs = np.clip(np.round((np.arange(ow) + 0.5) * w / ow - 0.5), 0, w - 1).astype(int)
    return m[:, ys][:, :, xs]


def augment(sample: Sample, rng: np.random.Generator,
            crop_range=(0.85, 1.0), flip_p: float = 0.5) -> Sample:
    """Random horizontal flip, then a random crop of scale in crop_range
    per side, resized back (bilinear image, nearest + re-binarized
    mask)."""
    img, mask = sample.image, sample.mask
    h, w = img.shape[1:]
    if rng.uniform() < flip_p:
        img = img[:, :, ::-1].copy()
        mask = mask[:, :, ::-1].copy()
    sh = rng.uniform(*crop_range)
    sw = rng.uniform(*crop_range)
    ch = max(1, int(round(h * sh)))
    cw = max(1, int(round(w * sw)))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    img = img[:, y0:y0 + ch, x0:x0 + cw]
    mask = mask[:, y0:y0 + ch, x0:x0 + cw]
    img = _resize_bilinear_np(img, h, w).astype(np.float32)
    mask = (_resize_nearest_np(mask, h, w) > 0.5).astype(np.float32)
    return Sample(np.clip(img, 0.0, 1.0), mask, sample.id)


def batches(samples: list, batch_size: int, rng=None):
    """Yield (images, masks) stacks; shuffled when rng is given."""
    order = np.arange(len(samples))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        yield (np.stack([s.image for s in chunk]),
               np.stack([s.mask for s in chunk]))
