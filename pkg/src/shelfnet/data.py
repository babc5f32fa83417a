"""Synthetic segmentation data, geometric augmentation, and PPM/PGM pairs.

The synthetic task: colored rectangles, disks and triangles on a textured
gray background.  Class k > 0 draws shape kind (k-1) mod 3 in a class
colour, with per-shape jitter and per-pixel noise so the mapping from color
to class is informative but not clean.  Labels are exact by construction.
Every image is a pure function of (seed, index).
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .autograd import Tensor4
from .errors import ConfigError, InputError
from .ops import interp_matrix

_PALETTE = np.array([
    (0.50, 0.50, 0.50),  # background
    (0.85, 0.25, 0.25),
    (0.25, 0.80, 0.30),
    (0.25, 0.35, 0.85),
    (0.85, 0.80, 0.25),
    (0.80, 0.30, 0.80),
    (0.30, 0.80, 0.80),
    (0.90, 0.55, 0.20),
])


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 4
    size: int = 64
    shapes_per_image: Tuple[int, int] = (2, 3)
    area_range: Tuple[float, float] = (0.04, 0.10)
    color_noise: float = 0.05
    color_jitter: float = 0.04
    texture_amp: float = 0.05

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"synthetic task needs >= 2 classes, got {self.num_classes}")
        if self.num_classes > len(_PALETTE):
            raise ConfigError(f"at most {len(_PALETTE)} classes supported")
        if self.size < 8:
            raise ConfigError(f"degenerate image size {self.size}")

    def class_priors(self) -> np.ndarray:
        """Expected pixel fraction per class (overlap between shapes makes the
        realized foreground fractions slightly smaller)."""
        lo, hi = self.shapes_per_image
        mean_shapes = (lo + hi) / 2.0
        mean_area = sum(self.area_range) / 2.0
        fg = mean_shapes * mean_area / (self.num_classes - 1)
        priors = np.full(self.num_classes, fg)
        priors[0] = 1.0 - fg * (self.num_classes - 1)
        return priors


@dataclass
class SampleBatch:
    images: Tensor4                 # (n, 3, h, w) in [0, 1]
    labels: np.ndarray              # (n, h, w) integer class map
    provenance: Dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.labels.shape[0]


def _shape_mask(rng, yy, xx, size: int, cls: int, area_frac: float) -> np.ndarray:
    kind = (cls - 1) % 3
    area = area_frac * size * size
    ar = rng.uniform(0.6, 1.6)
    if kind == 0:  # rectangle
        hh = np.sqrt(area * ar) / 2.0
        hw = np.sqrt(area / ar) / 2.0
        cy = rng.uniform(hh, size - 1 - hh)
        cx = rng.uniform(hw, size - 1 - hw)
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    if kind == 1:  # disk
        r = np.sqrt(area / np.pi)
        cy = rng.uniform(r, size - 1 - r)
        cx = rng.uniform(r, size - 1 - r)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    # right triangle: half of a (2a x 2b) box
    a = np.sqrt(2.0 * area * ar) / 2.0
    b = np.sqrt(2.0 * area / ar) / 2.0
    cy = rng.uniform(a, size - 1 - a)
    cx = rng.uniform(b, size - 1 - b)
    u = (yy - (cy - a)) / (2 * a)
    v = (xx - (cx - b)) / (2 * b)
    mask = (u >= 0) & (v >= 0) & (u + v <= 1.0)
    flip_y, flip_x = rng.random() < 0.5, rng.random() < 0.5
    if flip_y:
        mask = mask[::-1]
    if flip_x:
        mask = mask[:, ::-1]
    return mask


def synth_image(seed: int, index: int, config: SynthConfig):
    """One (image, label) pair, deterministic in (seed, index)."""
    rng = np.random.default_rng((0x5E1F, seed, index))
    size = config.size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    # textured background: coarse bilinear noise plus the base gray
    coarse = rng.normal(0.0, 1.0, (size // 8 + 2, size // 8 + 2))
    rh = interp_matrix(size, coarse.shape[0])
    rw = interp_matrix(size, coarse.shape[1])
    texture = rh @ coarse @ rw.T
    img = np.empty((3, size, size))
    img[:] = _PALETTE[0][:, None, None] + config.texture_amp * texture[None]
    labels = np.zeros((size, size), dtype=np.int64)

    n_shapes = int(rng.integers(config.shapes_per_image[0], config.shapes_per_image[1] + 1))
    for _ in range(n_shapes):
        cls = int(rng.integers(1, config.num_classes))
        area_frac = rng.uniform(*config.area_range)
        mask = _shape_mask(rng, yy, xx, size, cls, area_frac)
        color = _PALETTE[cls] + rng.normal(0.0, config.color_jitter, 3)
        img[:, mask] = color[:, None]
        labels[mask] = cls

    img += rng.normal(0.0, config.color_noise, img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    return img, labels


def synth_batch(seed: int, indices: Sequence[int], config: SynthConfig) -> SampleBatch:
    imgs, labs = [], []
    for i in indices:
        im, la = synth_image(seed, i, config)
        imgs.append(im)
        labs.append(la)
    return SampleBatch(Tensor4(np.stack(imgs)), np.stack(labs),
                       {"kind": "synthetic", "seed": seed, "indices": list(indices)})


def synth_dataset(seed: int, n_images: int, size: int, num_classes: int,
                  batch_size: int = 4,
                  config: Optional[SynthConfig] = None) -> Iterator[SampleBatch]:
    """Stream of deterministic batches covering indices 0..n_images-1."""
    cfg = config or SynthConfig(num_classes=num_classes, size=size)
    if cfg.size != size or cfg.num_classes != num_classes:
        cfg = SynthConfig(num_classes=num_classes, size=size,
                          shapes_per_image=cfg.shapes_per_image,
                          area_range=cfg.area_range, color_noise=cfg.color_noise,
                          color_jitter=cfg.color_jitter, texture_amp=cfg.texture_amp)
    for start in range(0, n_images, batch_size):
        yield synth_batch(seed, range(start, min(start + batch_size, n_images)), cfg)


# --- augmentation -------------------------------------------------------------

@dataclass(frozen=True)
class AugmentPolicy:
    flip_prob: float = 0.5
    scale_range: Tuple[float, float] = (0.5, 2.0)
    rotation_deg: float = 10.0
    crop: Optional[Tuple[int, int]] = None  # None = keep input size

    def identity(self) -> bool:
        return (self.flip_prob == 0.0 and self.scale_range == (1.0, 1.0)
                and self.rotation_deg == 0.0)


def _sample_grid(h, w, ch, cw, scale, angle_rad, flip, jy, jx):
    """Source coordinates for each output pixel of one combined transform."""
    r = np.arange(ch, dtype=np.float64)[:, None] - (ch - 1) / 2.0
    c = np.arange(cw, dtype=np.float64)[None, :] - (cw - 1) / 2.0
    cos, sin = np.cos(angle_rad), np.sin(angle_rad)
    # rotate by -angle and unscale to land in source coordinates
    src_r = (cos * r + sin * c) / scale + (h - 1) / 2.0 + jy
    src_c = (-sin * r + cos * c) / scale + (w - 1) / 2.0 + jx
    src_r = np.broadcast_to(src_r, (ch, cw)).copy()
    src_c = np.broadcast_to(src_c, (ch, cw)).copy()
    if flip:
        src_c = (w - 1) - src_c
    return src_r, src_c


def _bilinear_at(img: np.ndarray, src_r, src_c, fill: float) -> np.ndarray:
    """Sample (c, h, w) image at fractional coords with constant fill outside."""
    h, w = img.shape[-2:]
    inside = (src_r >= 0) & (src_r <= h - 1) & (src_c >= 0) & (src_c <= w - 1)
    r = np.clip(src_r, 0, h - 1)
    c = np.clip(src_c, 0, w - 1)
    r0 = np.minimum(np.floor(r).astype(np.int64), h - 2) if h > 1 else np.zeros_like(r, np.int64)
    c0 = np.minimum(np.floor(c).astype(np.int64), w - 2) if w > 1 else np.zeros_like(c, np.int64)
    fr, fc = r - r0, c - c0
    out = ((1 - fr) * (1 - fc) * img[:, r0, c0]
           + (1 - fr) * fc * img[:, r0, np.minimum(c0 + 1, w - 1)]
           + fr * (1 - fc) * img[:, np.minimum(r0 + 1, h - 1), c0]
           + fr * fc * img[:, np.minimum(r0 + 1, h - 1), np.minimum(c0 + 1, w - 1)])
    return np.where(inside[None], out, fill)


def _nearest_at(lab: np.ndarray, src_r, src_c, fill: int) -> np.ndarray:
    h, w = lab.shape
    r = np.rint(src_r).astype(np.int64)
    c = np.rint(src_c).astype(np.int64)
    inside = (r >= 0) & (r < h) & (c >= 0) & (c < w)
    out = lab[np.clip(r, 0, h - 1), np.clip(c, 0, w - 1)]
    return np.where(inside, out, fill)


def augment(batch: SampleBatch, seed: int, policy: AugmentPolicy,
            ignore_index: int = 255) -> SampleBatch:
    """One random flip/scale/rotate/crop per sample; bilinear for images,
    nearest for labels, ignore_index fill outside the source footprint."""
    n, _, h, w = batch.images.shape
    ch, cw = policy.crop or (h, w)
    out_imgs = np.empty((n, 3, ch, cw))
    out_labs = np.empty((n, ch, cw), dtype=batch.labels.dtype)
    for i in range(n):
        rng = np.random.default_rng((0xA06, seed, i))
        flip = rng.random() < policy.flip_prob
        scale = rng.uniform(*policy.scale_range)
        angle = np.deg2rad(rng.uniform(-policy.rotation_deg, policy.rotation_deg))
        # crop-center jitter within the part of the source the crop can reach
        my = max((h - 1) / 2.0 - (ch - 1) / (2.0 * scale), 0.0)
        mx = max((w - 1) / 2.0 - (cw - 1) / (2.0 * scale), 0.0)
        jy = rng.uniform(-my, my) if my > 0 else 0.0
        jx = rng.uniform(-mx, mx) if mx > 0 else 0.0
        src_r, src_c = _sample_grid(h, w, ch, cw, scale, angle, flip, jy, jx)
        out_imgs[i] = _bilinear_at(batch.images.data[i], src_r, src_c, fill=0.0)
        out_labs[i] = _nearest_at(batch.labels[i], src_r, src_c, fill=ignore_index)
    prov = dict(batch.provenance)
    prov["augment_seed"] = seed
    return SampleBatch(Tensor4(out_imgs), out_labs, prov)


def resize_bilinear(arr: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Bilinear resize of the trailing two axes (align-corners=false)."""
    h, w = arr.shape[-2:]
    if (h, w) == (oh, ow):
        return arr.copy()
    rh = interp_matrix(oh, h, dtype=np.float64)
    rw = interp_matrix(ow, w, dtype=np.float64)
    return np.einsum("oh,...hw,pw->...op", rh, arr, rw, optimize=True)


# --- PPM / PGM dataset directories ------------------------------------------------

def _write_netpbm(path: str, magic: bytes, w: int, h: int, payload: bytes):
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(payload)


def write_ppm(path: str, image: np.ndarray):
    """(3, h, w) float image in [0, 1] -> binary 8-bit P6."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise InputError(f"expected (3, h, w) image, got {image.shape}")
    u8 = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    _write_netpbm(path, b"P6", image.shape[2], image.shape[1],
                  u8.transpose(1, 2, 0).tobytes())


def write_pgm(path: str, labels: np.ndarray):
    """(h, w) integer label map -> binary 8-bit P5 (255 = ignore)."""
    if labels.ndim != 2:
        raise InputError(f"expected (h, w) labels, got {labels.shape}")
    if labels.min() < 0 or labels.max() > 255:
        raise InputError("labels must fit in a byte")
    _write_netpbm(path, b"P5", labels.shape[1], labels.shape[0],
                  labels.astype(np.uint8).tobytes())


def _read_netpbm(path: str, magic: bytes):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(magic):
        raise InputError(f"{path}: expected {magic.decode()} file")
    # header: magic, width, height, maxval; '#' comments allowed
    tokens = []
    pos = len(magic)
    while len(tokens) < 3:
        m = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", data[pos:])
        if not m:
            raise InputError(f"{path}: truncated header")
        tokens.append(int(m.group(1)))
        pos += m.end()
    w, h, maxval = tokens
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit files supported")
    pos += 1  # single whitespace after maxval
    return data[pos:], w, h


def read_ppm(path: str) -> np.ndarray:
    payload, w, h = _read_netpbm(path, b"P6")
    if len(payload) < 3 * w * h:
        raise InputError(f"{path}: truncated pixel data")
    arr = np.frombuffer(payload[: 3 * w * h], dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path: str) -> np.ndarray:
    payload, w, h = _read_netpbm(path, b"P5")
    if len(payload) < w * h:
        raise InputError(f"{path}: truncated pixel data")
    return np.frombuffer(payload[: w * h], dtype=np.uint8).reshape(h, w).astype(np.int64)


def write_dataset_dir(out_dir: str, seed: int, n_images: int, config: SynthConfig):
    os.makedirs(out_dir, exist_ok=True)
    for i in range(n_images):
        img, lab = synth_image(seed, i, config)
        write_ppm(os.path.join(out_dir, f"{i:04d}.ppm"), img)
        write_pgm(os.path.join(out_dir, f"{i:04d}.pgm"), lab)


def load_dataset_dir(dir_path: str) -> List[Tuple[np.ndarray, np.ndarray]]:
    if not os.path.isdir(dir_path):
        raise InputError(f"dataset directory {dir_path!r} does not exist")
    stems = sorted(f[:-4] for f in os.listdir(dir_path) if f.endswith(".ppm"))
    if not stems:
        raise InputError(f"no .ppm files in {dir_path!r}")
    pairs = []
    for s in stems:
        ppm = os.path.join(dir_path, s + ".ppm")
        pgm = os.path.join(dir_path, s + ".pgm")
        if not os.path.exists(pgm):
            raise InputError(f"missing label file {pgm!r}")
        img, lab = read_ppm(ppm), read_pgm(pgm)
        if img.shape[1:] != lab.shape:
            raise InputError(f"{s}: image {img.shape[1:]} and labels {lab.shape} disagree")
        pairs.append((img, lab))
    return pairs


# --- batch sources for the train loop ------------------------------------------------

class SyntheticSource:
    """Endless deterministic stream; step k yields images [k*b, (k+1)*b)."""

    def __init__(self, config: SynthConfig, batch_size: int, seed: int):
        self.config = config
        self.batch_size = batch_size
        self.seed = seed

    def batch(self, step: int) -> SampleBatch:
        start = step * self.batch_size
        return synth_batch(self.seed, range(start, start + self.batch_size), self.config)


class FixedSource:
    """The same batch every step (overfitting experiments)."""

    def __init__(self, batch: SampleBatch):
        self._batch = batch

    def batch(self, step: int) -> SampleBatch:
        return self._batch


class AugmentedSource:
    """Applies one random geometric transform per sample on top of a source."""

    def __init__(self, inner, policy: AugmentPolicy, seed: int):
        self.inner = inner
        self.policy = policy
        self.seed = seed

    def batch(self, step: int) -> SampleBatch:
        step_seed = ((self.seed + 1) * 1_000_003 + step) % (2 ** 63)
        return augment(self.inner.batch(step), step_seed, self.policy)


class DirectorySource:
    """Cycles a dataset directory with a deterministic per-epoch shuffle."""

    def __init__(self, dir_path: str, batch_size: int, seed: int):
        self.pairs = load_dataset_dir(dir_path)
        self.batch_size = batch_size
        self.seed = seed
        if len(self.pairs) < batch_size:
            raise InputError(f"directory holds {len(self.pairs)} images < batch {batch_size}")
        self.per_epoch = len(self.pairs) // batch_size

    def batch(self, step: int) -> SampleBatch:
        epoch, slot = divmod(step, self.per_epoch)
        order = np.random.default_rng((0xD1A, self.seed, epoch)).permutation(len(self.pairs))
        idx = order[slot * self.batch_size : (slot + 1) * self.batch_size]
        imgs = np.stack([self.pairs[i][0] for i in idx])
        labs = np.stack([self.pairs[i][1] for i in idx])
        return SampleBatch(Tensor4(imgs), labs,
                           {"kind": "directory", "indices": [int(i) for i in idx]})
