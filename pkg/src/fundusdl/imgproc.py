"""Fundus-image preprocessing: resize, blur-based enhancement, CLAHE.

Images are H x W x 3 uint8 grids stored in B,G,R channel order (the storage
convention of the image tooling our fixtures round-trip through); conversion
to R,G,B happens at the tensor boundary. All interior arithmetic is float64
and rounding is always floor(x + 0.5) ("half up"), so results are exactly
reproducible by a straight-line reference implementation.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image as _PILImage

from .errors import ConfigError, DimensionError


def round_half_up(x):
    """floor(x + 0.5), the single rounding rule used by every image op."""
    return np.floor(x + 0.5)


class Image:
    """Immutable-by-convention uint8 pixel grid, shape (H, W, 3), BGR order."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionError(f"image must be HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"image must be non-empty, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise DimensionError(f"image pixels must be integers, got {arr.dtype}")
            if arr.min() < 0 or arr.max() > 255:
                raise DimensionError("image pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        self.pixels = np.ascontiguousarray(arr)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return 3

    @classmethod
    def full(cls, height, width, bgr):
        """Constant image; bgr is a scalar or a (b, g, r) triple."""
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = np.asarray(bgr, dtype=np.uint8)
        return cls(px)

    @classmethod
    def load(cls, path):
        with _PILImage.open(path) as im:
            rgb = np.asarray(im.convert("RGB"))
        return cls(rgb[:, :, ::-1])

    def save(self, path):
        _PILImage.fromarray(self.pixels[:, :, ::-1]).save(path)

    def to_unit_rgb(self, dtype=np.float32):
        """RGB float array scaled to [0, 1]; the tensor-side representation."""
        return (self.pixels[:, :, ::-1].astype(np.float64) / 255.0).astype(dtype)

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"Image({self.height}x{self.width})"


# ---------------------------------------------------------------------------
# resize


def resize(img, target):
    """Bilinear resize to (width, height), half-pixel center convention.

    Source coordinate of output pixel d is (d + 0.5) * in/out - 0.5, clamped
    at the borders; resizing to the same size is the exact identity.
    """
    tw, th = int(target[0]), int(target[1])
    if tw < 1 or th < 1:
        raise ConfigError(f"resize target must be >= 1, got {target}")
    h, w = img.height, img.width
    if (tw, th) == (w, h):
        return Image(img.pixels.copy())

    sy = (np.arange(th, dtype=np.float64) + 0.5) * (h / th) - 0.5
    sx = (np.arange(tw, dtype=np.float64) + 0.5) * (w / tw) - 0.5
    y0f = np.floor(sy)
    x0f = np.floor(sx)
    fy = (sy - y0f)[:, None, None]
    fx = (sx - x0f)[None, :, None]
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, h - 1)
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, w - 1)

    px = img.pixels.astype(np.float64)
    p00 = px[y0[:, None], x0[None, :]]
    p01 = px[y0[:, None], x1[None, :]]
    p10 = px[y1[:, None], x0[None, :]]
    p11 = px[y1[:, None], x1[None, :]]
    val = (1.0 - fy) * ((1.0 - fx) * p00 + fx * p01) + fy * ((1.0 - fx) * p10 + fx * p11)
    return Image(np.clip(round_half_up(val), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# gaussian blur


def _reflect_indices(n, radius):
    """Indices -radius..n-1+radius reflected without repeating the border
    pixel (gfedcb|abcdefg|fedcba); supports radius >= n."""
    idx = np.arange(-radius, n + radius)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    m = np.abs(idx) % period
    return np.minimum(m, period - m)


def gaussian_kernel(sigma):
    """Normalized 1-D Gaussian samples with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ConfigError(f"blur sigma must be > 0, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(i * i) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img, sigma):
    """Separable Gaussian blur with reflected borders."""
    k = gaussian_kernel(sigma)
    radius = (len(k) - 1) // 2
    px = img.pixels.astype(np.float64)
    h, w = img.height, img.width

    rows = _reflect_indices(h, radius)
    out = sliding_window_view(px[rows], len(k), axis=0) @ k
    cols = _reflect_indices(w, radius)
    out = sliding_window_view(out[:, cols], len(k), axis=1) @ k
    return Image(np.clip(round_half_up(out), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# weighted add (blur-based vessel enhancement uses (4, blur, -4, 128))


def weighted_add(a, alpha, b, beta, gamma):
    """Per pixel: clamp(round(alpha*a + beta*b + gamma), 0, 255).

    Computed in float64, so there is no intermediate overflow.
    """
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionError(
            f"weighted_add size mismatch: {a.height}x{a.width} vs {b.height}x{b.width}"
        )
    val = alpha * a.pixels.astype(np.float64) + beta * b.pixels.astype(np.float64) + gamma
    return Image(np.clip(round_half_up(val), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# CLAHE


def luma(pixels):
    """Integer luminance 0..255 from BGR uint8 pixels (BT.601 weights)."""
    px = pixels.astype(np.float64)
    val = 0.299 * px[:, :, 2] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 0]
    return round_half_up(val).astype(np.int64)


def _tile_bounds(total, count):
    return [int(i * total // count) for i in range(count + 1)]


def _tile_mapping(hist, npix, clip_limit):
    """256-entry equalization LUT for one tile, after clipping.

    Bins above the scaled limit are clipped; the excess is spread one
    integer share per bin plus one extra to the first (excess % 256) bins.
    A tile with a single occupied bin (no contrast) maps to itself.
    """
    if np.count_nonzero(hist) <= 1:
        return np.arange(256, dtype=np.int64)
    limit = max(1, int(clip_limit * npix / 256.0))
    clipped = np.minimum(hist, limit)
    excess = int(hist.sum() - clipped.sum())
    clipped = clipped + excess // 256
    clipped[: excess % 256] += 1
    cdf = np.cumsum(clipped)
    return np.clip(round_half_up(cdf * 255.0 / npix), 0, 255).astype(np.int64)


def clahe(img, clip_limit=40.0, grid=(8, 8)):
    """Contrast-limited adaptive histogram equalization on the luminance.

    The image is split into grid (tx, ty) tiles; each tile gets a clipped,
    uniformly redistributed histogram and an equalization LUT; every pixel
    blends the LUTs of the four surrounding tile centers bilinearly. Color
    is restored by scaling each BGR channel with the luminance ratio.
    """
    tx, ty = int(grid[0]), int(grid[1])
    if tx < 1 or ty < 1:
        raise ConfigError(f"grid dims must be >= 1, got {grid}")
    if clip_limit <= 0:
        raise ConfigError(f"clip limit must be > 0, got {clip_limit}")
    h, w = img.height, img.width
    if h < ty or w < tx:
        raise DimensionError(f"image {h}x{w} smaller than tile grid {grid}")

    lum = luma(img.pixels)
    yb = _tile_bounds(h, ty)
    xb = _tile_bounds(w, tx)

    maps = np.empty((ty, tx, 256), dtype=np.int64)
    cy = np.empty(ty, dtype=np.float64)
    cx = np.empty(tx, dtype=np.float64)
    for i in range(ty):
        cy[i] = (yb[i] + yb[i + 1] - 1) / 2.0
        for j in range(tx):
            cx[j] = (xb[j] + xb[j + 1] - 1) / 2.0
            tile = lum[yb[i] : yb[i + 1], xb[j] : xb[j + 1]]
            hist = np.bincount(tile.ravel(), minlength=256)
            maps[i, j] = _tile_mapping(hist, tile.size, clip_limit)

    def _axis_blend(coords, centers, count):
        t1 = np.searchsorted(centers, coords, side="right")
        t0 = np.clip(t1 - 1, 0, count - 1)
        t1 = np.clip(t1, 0, count - 1)
        wgt = np.zeros(len(coords), dtype=np.float64)
        diff = centers[t1] - centers[t0]
        inside = t0 != t1
        wgt[inside] = (coords[inside] - centers[t0][inside]) / diff[inside]
        return t0, t1, wgt

    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    iy0, iy1, wy = _axis_blend(ys, cy, ty)
    ix0, ix1, wx = _axis_blend(xs, cx, tx)

    m00 = maps[iy0[:, None], ix0[None, :], lum].astype(np.float64)
    m01 = maps[iy0[:, None], ix1[None, :], lum].astype(np.float64)
    m10 = maps[iy1[:, None], ix0[None, :], lum].astype(np.float64)
    m11 = maps[iy1[:, None], ix1[None, :], lum].astype(np.float64)
    wyc = wy[:, None]
    wxc = wx[None, :]
    lout = (1.0 - wyc) * ((1.0 - wxc) * m00 + wxc * m01) + wyc * ((1.0 - wxc) * m10 + wxc * m11)
    lout = round_half_up(lout)

    ratio = lout / np.maximum(lum, 1)
    out = np.clip(round_half_up(img.pixels.astype(np.float64) * ratio[:, :, None]), 0, 255)
    return Image(out.astype(np.uint8))
