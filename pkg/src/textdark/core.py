"""Image/annotation primitives shared by every other module.

Images are ``numpy`` arrays of unit-interval floats, channel-last
(``H x W x C`` with ``C`` in {1, 3}).  Single-channel maps (edges, region
heatmaps) are plain ``H x W`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DataError, ProviderContractError, ShapeError

DONT_CARE = "###"

# Rec.601 luma
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# sRGB -> XYZ (D65)
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_D65_Y = 1.0


def check_image(img, channels=None) -> np.ndarray:
    """Validate an image array and return it as float64 ``H x W x C``."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeError(f"expected HxWx1 or HxWx3 image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"empty image of shape {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise ShapeError(f"expected {channels} channels, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ConfigError("image values must be finite and within [0, 1]")
    return arr


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"window size must be a positive odd integer, got {size}")
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return k / k.sum()


def to_gray(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[..., 0]
    return arr @ LUMA_WEIGHTS


# --------------------------------------------------------------------- I/O

def read_image(path, channels: int = 3) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im = im.convert("RGB" if channels == 3 else "L")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


def write_image(path, img) -> None:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(q).save(path)


# --------------------------------------------------------------- TextBox

@dataclass(frozen=True)
class TextBox:
    """Quadrilateral text annotation.

    ``quad`` holds four ``(x, y)`` corners, clockwise from top-left.  An
    illegible box has ``legible=False`` and an empty transcription; it is
    serialized with the ``###`` marker.
    """

    quad: tuple
    legible: bool = True
    transcription: str = ""

    def __post_init__(self):
        q = np.asarray(self.quad, dtype=np.float64)
        if q.shape != (4, 2) or not np.all(np.isfinite(q)):
            raise ConfigError(f"quad must be 4 finite (x, y) points, got {self.quad!r}")
        object.__setattr__(self, "quad", tuple(tuple(float(c) for c in p) for p in q))
        _, _, w, h = self.aabb
        if w <= 0 or h <= 0:
            raise ConfigError(f"degenerate box {self.quad!r}")
        if not self.legible and self.transcription:
            raise ConfigError("illegible boxes carry no transcription")

    @classmethod
    def from_aabb(cls, u, v, w, h, legible=True, transcription=""):
        return cls(((u, v), (u + w, v), (u + w, v + h), (u, v + h)), legible, transcription)

    @property
    def aabb(self) -> tuple[float, float, float, float]:
        q = np.asarray(self.quad)
        x0, y0 = q.min(axis=0)
        x1, y1 = q.max(axis=0)
        return float(x0), float(y0), float(x1 - x0), float(y1 - y0)

    @property
    def area(self) -> float:
        _, _, w, h = self.aabb
        return w * h

    def in_bounds(self, height, width) -> bool:
        q = np.asarray(self.quad)
        return bool(q[:, 0].min() >= 0 and q[:, 1].min() >= 0
                    and q[:, 0].max() <= width and q[:, 1].max() <= height)

    def to_icdar(self) -> str:
        coords = ",".join(_fmt_coord(c) for p in self.quad for c in p)
        return f"{coords},{self.transcription if self.legible else DONT_CARE}"


def _fmt_coord(c: float) -> str:
    return str(int(c)) if float(c).is_integer() else repr(float(c))


def canonical_quad(points) -> tuple:
    """Reorder four corners clockwise (image coordinates) starting at top-left."""
    p = np.asarray(points, dtype=np.float64)
    center = p.mean(axis=0)
    # y grows downward, so increasing atan2 angle is clockwise on screen
    order = np.argsort(np.arctan2(p[:, 1] - center[1], p[:, 0] - center[0]))
    p = p[order]
    start = int(np.argmin(p[:, 0] + p[:, 1]))
    return tuple(map(tuple, np.roll(p, -start, axis=0)))


def box_iou(a: TextBox, b: TextBox, mode: str = "aabb") -> float:
    """Intersection over union of two boxes (axis-aligned by default)."""
    if mode == "polygon":
        from shapely.geometry import Polygon

        pa, pb = Polygon(a.quad), Polygon(b.quad)
        inter = pa.intersection(pb).area
        union = pa.area + pb.area - inter
        return float(inter / union) if union > 0 else 0.0
    if mode != "aabb":
        raise ConfigError(f"unknown IoU mode {mode!r}")
    inter = aabb_intersection(a.aabb, b.aabb)
    union = a.area + b.area - inter
    return float(inter / union) if union > 0 else 0.0


def aabb_intersection(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    return float(iw * ih) if iw > 0 and ih > 0 else 0.0


# ----------------------------------------------------------- colour / edges

def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def rgb_to_lightness(img) -> np.ndarray:
    """CIELAB L*/100 per pixel for an sRGB image (D65 white)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"rgb_to_lightness needs a 3-channel image, got shape {arr.shape}")
    y = _srgb_to_linear(arr) @ _RGB_TO_XYZ[1] / _D65_Y
    eps, kappa = 216 / 24389, 24389 / 27
    f = np.where(y > eps, np.cbrt(y), (kappa * y + 16) / 116)
    lightness = 116 * f - 16
    return np.clip(lightness / 100.0, 0.0, 1.0)[..., None]


def canny_edges(img, low_threshold: float = 0.1, high_threshold: float = 0.2,
                sigma: float = 1.4) -> np.ndarray:
    """Binary Canny edge map; thresholds are fractions of the max gradient magnitude."""
    if not 0.0 <= low_threshold < high_threshold <= 1.0:
        raise ConfigError(
            f"need 0 <= low < high <= 1, got low={low_threshold}, high={high_threshold}")
    gray = to_gray(img)
    out = np.zeros(gray.shape, dtype=np.float64)
    if min(gray.shape) < 2:
        return out

    smooth = ndimage.gaussian_filter(gray, sigma, mode="nearest")
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12:
        return out

    # non-maximum suppression along the quantized gradient direction
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (((angle + 22.5) // 45.0) % 4).astype(int)
    offsets = [(0, 1), (1, 1), (1, 0), (1, -1)]  # 0, 45, 90, 135 degrees (row, col)
    padded = np.pad(mag, 1)
    h, w = mag.shape
    keep = np.zeros_like(mag, dtype=bool)
    for k, (dr, dc) in enumerate(offsets):
        fwd = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        bwd = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= (sector == k) & (mag >= fwd) & (mag >= bwd)
    thin = np.where(keep, mag, 0.0) / peak

    strong = thin > high_threshold
    weak = thin > low_threshold
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n == 0:
        return out
    good = np.zeros(n + 1, dtype=bool)
    good[np.unique(labels[strong])] = True
    good[0] = False
    out[good[labels]] = 1.0
    return out


def sobel_edges(img) -> np.ndarray:
    """Gradient magnitude of the luma channel normalized to a max of 1."""
    gray = to_gray(img)
    if min(gray.shape) < 2:
        return np.zeros(gray.shape)
    mag = np.hypot(ndimage.sobel(gray, axis=1, mode="nearest"),
                   ndimage.sobel(gray, axis=0, mode="nearest"))
    peak = mag.max()
    return mag / peak if peak > 1e-12 else np.zeros_like(mag)


# ------------------------------------------------------------ heatmaps

def _homography(src, dst) -> np.ndarray:
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs += [u, v]
    h = np.linalg.solve(np.asarray(rows, float), np.asarray(rhs, float))
    return np.append(h, 1.0).reshape(3, 3)


_UNIT_SQUARE = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))


def gaussian_box_heatmap(boxes: Sequence[TextBox], height: int, width: int,
                         peak: float = 1.0, sigma: float = 1.0 / 6.0) -> np.ndarray:
    """Region-score style heatmap: one Gaussian warped into each legible quad.

    ``sigma`` is measured in units of the box side, so the default puts the
    3-sigma support exactly on the box boundary.  Pixel ``(r, c)`` is sampled
    at the point ``(x=c, y=r)``.
    """
    if not 0.0 < peak <= 1.0:
        raise ConfigError(f"peak must be in (0, 1], got {peak}")
    heat = np.zeros((height, width))
    for box in boxes:
        if not box.legible:
            continue
        q = np.asarray(box.quad)
        c0 = max(int(np.floor(q[:, 0].min())), 0)
        c1 = min(int(np.ceil(q[:, 0].max())), width - 1)
        r0 = max(int(np.floor(q[:, 1].min())), 0)
        r1 = min(int(np.ceil(q[:, 1].max())), height - 1)
        if c1 < c0 or r1 < r0:
            continue
        inv = _homography(box.quad, _UNIT_SQUARE)
        cc, rr = np.meshgrid(np.arange(c0, c1 + 1, dtype=float), np.arange(r0, r1 + 1, dtype=float))
        pts = inv @ np.stack([cc.ravel(), rr.ravel(), np.ones(cc.size)])
        s, t = pts[0] / pts[2], pts[1] / pts[2]
        tol = 1e-9
        inside = (s >= -tol) & (s <= 1 + tol) & (t >= -tol) & (t <= 1 + tol)
        g = peak * np.exp(-((s - 0.5) ** 2 + (t - 0.5) ** 2) / (2 * sigma ** 2))
        g = np.where(inside, g, 0.0).reshape(cc.shape)
        window = heat[r0:r1 + 1, c0:c1 + 1]
        np.maximum(window, g, out=window)
    return heat


class HeatmapProvider(Protocol):
    """Maps an image to a text-region heatmap.

    ``scale`` is the declared downscale factor: output size is the input
    size integer-divided by ``scale``.
    """

    scale: int

    def __call__(self, image: np.ndarray) -> np.ndarray: ...


def check_heatmap_size(provider, image, heat) -> np.ndarray:
    h, w = np.shape(image)[:2]
    want = (h // provider.scale, w // provider.scale)
    if np.shape(heat) != want:
        raise ProviderContractError(
            f"{type(provider).__name__} returned {np.shape(heat)}, expected {want}")
    return heat


class GaussianBoxProvider:
    """Synthetic region scores from annotations (ignores pixel content)."""

    def __init__(self, boxes: Sequence[TextBox], peak: float = 1.0, scale: int = 1):
        self.boxes = list(boxes)
        self.peak = peak
        self.scale = int(scale)

    def __call__(self, image):
        h, w = np.shape(image)[:2]
        s = self.scale
        boxes = self.boxes
        if s != 1:
            boxes = [TextBox(tuple((x / s, y / s) for x, y in b.quad), b.legible, b.transcription)
                     for b in boxes]
        return gaussian_box_heatmap(boxes, h // s, w // s, self.peak)


class FileHeatmapProvider:
    """Serves a precomputed heatmap (e.g. offline CRAFT output) from a PNG."""

    def __init__(self, path, scale: int = 1):
        self.path = Path(path)
        self.scale = int(scale)

    def __call__(self, image):
        heat = read_image(self.path, channels=1)[..., 0]
        return check_heatmap_size(self, image, heat)
