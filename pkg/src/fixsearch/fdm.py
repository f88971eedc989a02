"""Fixation density maps, binary fixation maps, the FDM1 container and heatmaps.

Coordinates are (x, y) in pixels with x along the width; grids are stored
row-major as (height, width) arrays. ``dims`` arguments are (width, height).
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from fixsearch.errors import FormatError, InvalidInputError

DEFAULT_SIGMA = 11.0
DEFAULT_TRUNCATE = 3.0
MAGIC = b"FDM1"
KIND_DENSITY = 0
KIND_BINARY = 1
_HEADER = struct.Struct("<4sB3xII")


@dataclass(frozen=True, eq=False)
class DensityMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidInputError(f"density map must be 2-D, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, arr):
        """Normalize a non-negative array to sum 1."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 2:
            raise InvalidInputError(f"density map must be 2-D, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise InvalidInputError("density values must be finite and non-negative")
        total = math.fsum(a.ravel())
        if total <= 0:
            raise InvalidInputError("density map has zero mass")
        return cls(a / total)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def dims(self):
        return (self.width, self.height)

    def is_valid(self, tol=1e-9):
        return bool(np.all(self.values >= 0) and abs(self.values.sum() - 1.0) <= tol)


@dataclass(frozen=True, eq=False)
class BinaryFixationMap:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2:
            raise InvalidInputError(f"binary map must be 2-D, got shape {b.shape}")
        object.__setattr__(self, "bits", b)

    @property
    def fixation_count(self):
        return int(self.bits.sum())

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def dims(self):
        return (self.width, self.height)


def _check_inside(fixations, dims):
    w, h = dims
    if w <= 0 or h <= 0:
        raise InvalidInputError(f"dims must be positive, got {dims}")
    pts = [(float(x), float(y)) for x, y, *_ in fixations]
    if not pts:
        raise InvalidInputError("at least one fixation is required")
    for x, y in pts:
        if not (0 <= x < w and 0 <= y < h):
            raise InvalidInputError(f"fixation ({x}, {y}) lies outside {w}x{h}")
    return pts


def gaussian_sum(fixations, dims, sigma=DEFAULT_SIGMA, truncate=DEFAULT_TRUNCATE):
    """Unnormalized sum of isotropic Gaussians, each cut off beyond radius ceil(truncate*sigma)."""
    if sigma <= 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    pts = _check_inside(fixations, dims)
    w, h = dims
    r = math.ceil(truncate * sigma)
    grid = np.zeros((h, w))
    two_s2 = 2.0 * sigma * sigma
    for x, y in pts:
        r0, r1 = max(math.ceil(y - r), 0), min(math.floor(y + r), h - 1)
        c0, c1 = max(math.ceil(x - r), 0), min(math.floor(x + r), w - 1)
        dy = np.arange(r0, r1 + 1, dtype=np.float64) - y
        dx = np.arange(c0, c1 + 1, dtype=np.float64) - x
        d2 = dy[:, None] ** 2 + dx[None, :] ** 2
        grid[r0:r1 + 1, c0:c1 + 1] += np.where(d2 <= r * r, np.exp(-d2 / two_s2), 0.0)
    return grid


def build_density_map(fixations, dims, sigma=DEFAULT_SIGMA, truncate=DEFAULT_TRUNCATE):
    """Blur every fixation with a Gaussian of std ``sigma`` and normalize the map to sum 1.

    Kernels are not normalized individually; only the summed map is divided by
    its total (computed with ``math.fsum`` so the result does not depend on
    summation order).
    """
    return DensityMap.from_array(gaussian_sum(fixations, dims, sigma, truncate))


def build_binary_map(fixations, dims):
    pts = _check_inside(fixations, dims)
    w, h = dims
    bits = np.zeros((h, w), dtype=bool)
    for x, y in pts:
        bits[int(math.floor(y)), int(math.floor(x))] = True
    return BinaryFixationMap(bits)


def build_baseline_map(maps, exclude):
    """Leave-one-out overlay of density maps, renormalized to sum 1."""
    if len(maps) < 2:
        raise InvalidInputError("baseline needs at least two maps")
    shape = maps[0].values.shape
    for m in maps:
        if m.values.shape != shape:
            raise InvalidInputError(f"map dims {m.values.shape} differ from {shape}")
    if not -len(maps) <= exclude < len(maps):
        raise InvalidInputError(f"exclude index {exclude} out of range")
    exclude %= len(maps)
    stack = np.stack([m.values for i, m in enumerate(maps) if i != exclude])
    # sorting per pixel makes the sum independent of input order
    total = np.sort(stack, axis=0).sum(axis=0)
    return DensityMap.from_array(total)


def flip_map(m):
    if isinstance(m, DensityMap):
        return DensityMap(m.values[:, ::-1].copy())
    return BinaryFixationMap(m.bits[:, ::-1].copy())


def serialize_map(m):
    """Encode a map as an FDM1 container (16-byte header + row-major payload)."""
    if isinstance(m, DensityMap):
        h, w = m.values.shape
        payload = np.ascontiguousarray(m.values, dtype="<f8").tobytes()
        kind = KIND_DENSITY
    elif isinstance(m, BinaryFixationMap):
        h, w = m.bits.shape
        payload = np.ascontiguousarray(m.bits, dtype=np.uint8).tobytes()
        kind = KIND_BINARY
    else:
        raise InvalidInputError(f"cannot serialize {type(m).__name__}")
    return _HEADER.pack(MAGIC, kind, h, w) + payload


def deserialize_map(raw):
    raw = bytes(raw)
    if len(raw) < _HEADER.size:
        raise FormatError("truncated FDM1 header", offset=len(raw))
    magic, kind, h, w = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if kind not in (KIND_DENSITY, KIND_BINARY):
        raise FormatError(f"unknown map kind {kind}", offset=4)
    itemsize = 8 if kind == KIND_DENSITY else 1
    expected = h * w * itemsize
    got = len(raw) - _HEADER.size
    if got != expected:
        raise FormatError(f"payload is {got} bytes, {h}x{w} needs {expected}", offset=_HEADER.size)
    if kind == KIND_DENSITY:
        vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(h, w).astype(np.float64)
        return DensityMap(vals)
    bits = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size).reshape(h, w)
    if np.any(bits > 1):
        raise FormatError("binary payload holds values other than 0/1", offset=_HEADER.size)
    return BinaryFixationMap(bits.astype(bool))


def minmax(values):
    """Scale to [0, 1]; a constant array maps to all zeros."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


HEATMAP_CMAP = "jet"


def heatmap_rgb(m, underlay=None, alpha=0.5):
    """Min-max normalize, colour with the 'jet' colormap and optionally blend over an RGB underlay."""
    from matplotlib import colormaps

    norm = minmax(m.values)
    rgb = colormaps[HEATMAP_CMAP](norm)[..., :3]
    if underlay is not None:
        u = np.asarray(underlay)
        if u.shape[:2] != norm.shape or u.ndim != 3 or u.shape[2] != 3:
            raise InvalidInputError(f"underlay shape {u.shape} does not match map {norm.shape}")
        base = u.astype(np.float64) / (255.0 if u.dtype == np.uint8 else 1.0)
        rgb = alpha * rgb + (1.0 - alpha) * base
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def render_heatmap(m, underlay=None):
    """PNG bytes of the heatmap."""
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(heatmap_rgb(m, underlay)).save(buf, format="PNG")
    return buf.getvalue()


def write_map(path, m):
    from fixsearch._io import atomic_write_bytes

    atomic_write_bytes(path, serialize_map(m))


def read_map(path):
    with open(path, "rb") as fh:
        return deserialize_map(fh.read())
