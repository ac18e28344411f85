"""Training-time augmentation stream and feature-wise normalization.

Statistics are computed on the [0, 1] scaled RGB representation (the scale
at which images enter the network). Augmented sampling is nearest-neighbor
with border clamping, so transformed images never contain intensities that
were not present in the source.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .imgproc import Image, round_half_up
from .tensor import Tensor

STD_FLOOR = 1e-6


@dataclass
class AugmentConfig:
    """Random-transform ranges; defaults match the training pipeline."""

    rotation_range: float = 30.0        # degrees
    zoom_range: float = 0.15            # fraction around 1.0
    width_shift: float = 0.2            # fraction of width
    height_shift: float = 0.2           # fraction of height
    shear_range: float = 0.15           # horizontal shear factor
    horizontal_flip: bool = True
    fill_mode: str = "nearest"
    featurewise_std_normalization: bool = True

    def __post_init__(self):
        for name in ("rotation_range", "zoom_range", "width_shift", "height_shift", "shear_range"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.fill_mode != "nearest":
            raise ConfigError(f"unsupported fill_mode: {self.fill_mode!r}")

    @classmethod
    def identity(cls):
        return cls(rotation_range=0, zoom_range=0, width_shift=0, height_shift=0,
                   shear_range=0, horizontal_flip=False)


@dataclass
class NormStats:
    """Per-channel (R, G, B) mean and standard deviation on the [0,1] scale."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(3)
        if not np.all(self.std > 0):
            raise ConfigError(f"std components must be > 0, got {self.std}")

    def to_json(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_json(cls, obj):
        return cls(mean=obj["mean"], std=obj["std"])


def fit_stats(samples):
    """Per-channel mean/std over every pixel of every training image.

    The std is floored at 1e-6 so degenerate (constant) channels stay usable.
    """
    if not samples:
        raise DataError("cannot fit normalization stats on an empty training set")
    total = np.zeros(3, dtype=np.float64)
    total_sq = np.zeros(3, dtype=np.float64)
    count = 0
    for s in samples:
        arr = s.image.to_unit_rgb(dtype=np.float64)
        total += arr.sum(axis=(0, 1))
        total_sq += np.square(arr).sum(axis=(0, 1))
        count += arr.shape[0] * arr.shape[1]
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return NormStats(mean=mean, std=std)


def normalize(x, stats):
    """(x - mean) / std per channel; accepts an ndarray or a Tensor."""
    if isinstance(x, Tensor):
        return Tensor(normalize(x.data, stats).astype(x.data.dtype))
    mean = stats.mean.astype(x.dtype, copy=False)
    std = stats.std.astype(x.dtype, copy=False)
    return (x - mean) / std


def _affine_matrix(theta_deg, zoom, shear, dx, dy, flip, cx, cy):
    """Compose center -> rotate -> shear -> zoom(+flip) -> shift -> uncenter."""
    t = math.radians(theta_deg)
    rot = np.array([[math.cos(t), -math.sin(t), 0.0],
                    [math.sin(t), math.cos(t), 0.0],
                    [0.0, 0.0, 1.0]])
    shr = np.array([[1.0, shear, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    zx = -zoom if flip else zoom
    zm = np.array([[zx, 0.0, 0.0], [0.0, zoom, 0.0], [0.0, 0.0, 1.0]])
    to_c = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    back = np.array([[1.0, 0.0, cx + dx], [0.0, 1.0, cy + dy], [0.0, 0.0, 1.0]])
    return back @ zm @ shr @ rot @ to_c


def random_transform(img, cfg, rng):
    """One random affine draw: rotation, zoom, shifts, shear, optional flip.

    Draw order is fixed (rotation, zoom, width shift, height shift, shear,
    flip) so a seeded rng replays identically.
    """
    theta = rng.uniform(-cfg.rotation_range, cfg.rotation_range)
    zoom = rng.uniform(1.0 - cfg.zoom_range, 1.0 + cfg.zoom_range)
    dx = rng.uniform(-cfg.width_shift, cfg.width_shift) * img.width
    dy = rng.uniform(-cfg.height_shift, cfg.height_shift) * img.height
    shear = rng.uniform(-cfg.shear_range, cfg.shear_range)
    flip = bool(cfg.horizontal_flip and rng.random() < 0.5)

    if theta == 0 and zoom == 1.0 and dx == 0 and dy == 0 and shear == 0 and not flip:
        return Image(img.pixels.copy())

    cx = (img.width - 1) / 2.0
    cy = (img.height - 1) / 2.0
    m = _affine_matrix(theta, zoom, shear, dx, dy, flip, cx, cy)
    inv = np.linalg.inv(m)

    xs, ys = np.meshgrid(np.arange(img.width, dtype=np.float64),
                         np.arange(img.height, dtype=np.float64))
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    ix = np.clip(round_half_up(sx).astype(np.int64), 0, img.width - 1)
    iy = np.clip(round_half_up(sy).astype(np.int64), 0, img.height - 1)
    return Image(img.pixels[iy, ix])


def batches_per_epoch(n, batch_size):
    return -(-n // batch_size)


def augmented_stream(samples, cfg, stats, batch_size, rng):
    """One epoch of shuffled, augmented, normalized batches.

    Yields (Tensor[B,H,W,3], label array); the final short batch is kept, so
    every sample appears exactly once per epoch.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = order[start : start + batch_size]
        arrs = []
        labels = np.empty(len(chunk), dtype=np.float32)
        for k, idx in enumerate(chunk):
            s = samples[int(idx)]
            img = random_transform(s.image, cfg, rng)
            arrs.append(normalize(img.to_unit_rgb(dtype=np.float32), stats))
            labels[k] = s.label
        yield Tensor(np.stack(arrs)), labels


def plain_batches(samples, stats, batch_size):
    """Un-augmented normalized batches in corpus order (validation/test)."""
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        arrs = [normalize(s.image.to_unit_rgb(dtype=np.float32), stats) for s in chunk]
        labels = np.array([s.label for s in chunk], dtype=np.float32)
        yield Tensor(np.stack(arrs)), labels
