"""Pure numeric image kernels on float images in [0, 1].

Coordinates follow the array convention: a pixel ``(row, col)`` has its
centre at ``(x=col, y=row)``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import ndimage

LEVELS = 256
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class OtsuThreshold(NamedTuple):
    level: int
    degenerate: bool


class RotatedRect(NamedTuple):
    """Rectangle of ``size=(width, height)`` whose width side points along
    ``angle`` degrees (counter-clockwise from +x in x/y coordinates).

    Canonical rectangles returned by :func:`min_area_rect` have
    ``angle`` in [-45, 45).
    """

    center: tuple[float, float]
    size: tuple[float, float]
    angle: float
    degenerate: bool = False

    @property
    def area(self) -> float:
        return self.size[0] * self.size[1]


def to_levels(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels) * (LEVELS - 1)), 0, LEVELS - 1).astype(np.intp)


def histogram(pixels: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """256-bin histogram of 8-bit quantized intensities."""
    levels = to_levels(pixels)
    if mask is not None:
        levels = levels[np.asarray(mask, dtype=bool)]
    return np.bincount(levels.ravel(), minlength=LEVELS).astype(np.int64)


def otsu_threshold(hist: np.ndarray) -> OtsuThreshold:
    """Level ``t`` maximising between-class variance of ``{<= t}`` vs ``{> t}``.

    The comparison is done in exact integer arithmetic so ties resolve
    deterministically to the lowest level.
    """
    counts = [int(c) for c in np.asarray(hist).ravel()]
    if len(counts) != LEVELS or min(counts) < 0:
        raise ValueError("histogram must have 256 non-negative bins")
    total = sum(counts)
    if total == 0:
        raise ValueError("histogram is empty")
    nonzero = [i for i, c in enumerate(counts) if c]
    if len(nonzero) == 1:
        return OtsuThreshold(nonzero[0], True)

    moment_total = sum(i * c for i, c in enumerate(counts))
    best_level, best_num, best_den = 0, -1, 1
    n0 = s0 = 0
    # sigma_b^2 * N^4 = (N*s0 - S*n0)^2 / (n0*n1); compare fractions by cross-multiplying
    for t in range(LEVELS - 1):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            num, den = 0, 1
        else:
            num, den = (total * s0 - moment_total * n0) ** 2, n0 * n1
        if num * best_den > best_num * den:
            best_level, best_num, best_den = t, num, den
    return OtsuThreshold(best_level, False)


def level_to_threshold(level: int) -> float:
    """Map an 8-bit Otsu level to a [0,1] threshold for :func:`binarize`.

    Sits half a quantization step above the level so that pixels quantized
    to ``level`` fall on the background side.
    """
    return (level + 0.5) / (LEVELS - 1)


def binarize(pixels: np.ndarray, threshold: float) -> np.ndarray:
    return (np.asarray(pixels) > threshold).astype(np.uint8)


def otsu_binarize(pixels: np.ndarray, mask: np.ndarray | None = None) -> tuple[np.ndarray, OtsuThreshold]:
    otsu = otsu_threshold(histogram(pixels, mask))
    bits = binarize(pixels, level_to_threshold(otsu.level))
    if mask is not None:
        bits &= np.asarray(mask, dtype=np.uint8)
    return bits, otsu


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep the largest 8-connected component.

    Components are labelled in raster order, so on equal sizes the one whose
    first pixel comes first wins.
    """
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    if n == 0:
        raise ValueError("no foreground")
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    return (labels == keep).astype(np.uint8)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise convex hull (Andrew's monotone chain), collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def _canonical_angle(angle: float, width: float, height: float) -> tuple[float, float, float]:
    # width direction and height direction differ by 90 degrees; pick the
    # representative of the side whose direction lies in [-45, 45)
    angle = (angle + 90.0) % 180.0 - 90.0
    if angle >= 45.0:
        angle -= 90.0
        width, height = height, width
    elif angle < -45.0:
        angle += 90.0
        width, height = height, width
    if math.isclose(angle, 45.0, abs_tol=1e-9):
        angle = -45.0
    return angle, width, height


def min_area_rect(points) -> RotatedRect:
    """Minimum-area enclosing rectangle of a 2-D point set (x, y).

    Every hull edge direction is tried as a side orientation; the optimum
    always has one side flush with a hull edge.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    hull = convex_hull(pts) if len(pts) else pts
    if len(hull) < 3:
        if len(pts) == 0:
            return RotatedRect((0.0, 0.0), (0.0, 0.0), 0.0, True)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        d = hull[-1] - hull[0] if len(hull) == 2 else np.zeros(2)
        length = float(np.hypot(*d))
        angle = math.degrees(math.atan2(d[1], d[0])) if length else 0.0
        angle, w, h = _canonical_angle(angle, length, 0.0)
        if h > w:  # a segment at exactly 45 degrees: keep its length as the width
            angle, w, h = angle + 90.0, h, w
        return RotatedRect(tuple((lo + hi) / 2), (w, h), angle, True)

    edges = np.roll(hull, -1, axis=0) - hull
    edges /= np.linalg.norm(edges, axis=1, keepdims=True)
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    u = hull @ edges.T  # (n_points, n_edges) projections
    v = hull @ normals.T
    widths = u.max(axis=0) - u.min(axis=0)
    heights = v.max(axis=0) - v.min(axis=0)
    best = int(np.argmin(widths * heights))
    e, n = edges[best], normals[best]
    cu = (u[:, best].max() + u[:, best].min()) / 2
    cv = (v[:, best].max() + v[:, best].min()) / 2
    center = cu * e + cv * n
    angle = math.degrees(math.atan2(e[1], e[0]))
    angle, w, h = _canonical_angle(angle, float(widths[best]), float(heights[best]))
    return RotatedRect((float(center[0]), float(center[1])), (w, h), angle)


def sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray, order: int = 1, edge: str = "zero") -> np.ndarray:
    """Sample ``image`` at fractional ``(ys, xs)``.

    ``order`` 1 is bilinear, 0 nearest neighbour.  ``edge="zero"`` returns 0
    outside the image; ``"clamp"`` replicates the border.
    """
    image = np.asarray(image)
    h, w = image.shape
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if edge == "clamp":
        ys = np.clip(ys, 0, h - 1)
        xs = np.clip(xs, 0, w - 1)
    padded = np.zeros((h + 2, w + 2), dtype=np.float64)
    padded[1:-1, 1:-1] = image
    # shift into padded coordinates; anything further out reads zeros
    py = np.clip(ys + 1, 0, h + 1)
    px = np.clip(xs + 1, 0, w + 1)
    outside = (ys < -1) | (ys > h) | (xs < -1) | (xs > w)
    if order == 0:
        out = padded[np.rint(py).astype(np.intp), np.rint(px).astype(np.intp)]
    else:
        y0 = np.minimum(np.floor(py).astype(np.intp), h)
        x0 = np.minimum(np.floor(px).astype(np.intp), w)
        fy = py - y0
        fx = px - x0
        out = (
            padded[y0, x0] * (1 - fy) * (1 - fx)
            + padded[y0, x0 + 1] * (1 - fy) * fx
            + padded[y0 + 1, x0] * fy * (1 - fx)
            + padded[y0 + 1, x0 + 1] * fy * fx
        )
    return np.where(outside, 0.0, out)


def rect_sampling_grid(rect: RotatedRect) -> tuple[np.ndarray, np.ndarray]:
    w, h = (max(int(round(s)), 0) for s in rect.size)
    theta = math.radians(rect.angle)
    c, s = math.cos(theta), math.sin(theta)
    u = np.arange(w) - (w - 1) / 2.0
    v = np.arange(h) - (h - 1) / 2.0
    uu, vv = np.meshgrid(u, v)
    xs = rect.center[0] + uu * c - vv * s
    ys = rect.center[1] + uu * s + vv * c
    return ys, xs


def crop_rotated(pixels: np.ndarray, rect: RotatedRect, order: int = 1) -> np.ndarray:
    """Extract the rectangle as an upright ``(height, width)`` image."""
    if round(rect.size[0]) < 1 or round(rect.size[1]) < 1:
        raise ValueError("cannot crop a zero-area rectangle")
    ys, xs = rect_sampling_grid(rect)
    return sample(pixels, ys, xs, order=order)


def histogram_equalize(pixels: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Remap every pixel to the (masked) cumulative frequency of its level."""
    hist = histogram(pixels, mask)
    total = hist.sum()
    if total == 0:
        return np.asarray(pixels, dtype=np.float64).copy()
    cdf = np.cumsum(hist) / total
    return cdf[to_levels(pixels)]


def min_max_normalize(pixels: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    region = pixels if mask is None else pixels[np.asarray(mask, dtype=bool)]
    if region.size == 0:
        return np.zeros_like(pixels)
    lo, hi = region.min(), region.max()
    if hi <= lo:
        return np.zeros_like(pixels)
    return np.clip((pixels - lo) / (hi - lo), 0.0, 1.0)


def resize(pixels: np.ndarray, shape: tuple[int, int], order: int = 1) -> np.ndarray:
    """Resample to ``shape`` using pixel-centre alignment and clamped edges."""
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape
    oh, ow = shape
    if (oh, ow) == (h, w):
        return pixels.copy()
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return sample(pixels, yy, xx, order=order, edge="clamp")


def keep_aspect_shape(shape: tuple[int, int], long_side: int) -> tuple[int, int]:
    if long_side < 1:
        raise ValueError("long_side must be >= 1")
    h, w = shape
    scale = long_side / max(h, w)
    if h >= w:
        return long_side, max(1, int(round(w * scale)))
    return max(1, int(round(h * scale))), long_side


def resize_keep_aspect(pixels: np.ndarray, long_side: int, order: int = 1) -> np.ndarray:
    return resize(pixels, keep_aspect_shape(np.shape(pixels), long_side), order=order)


def pad_center(pixels: np.ndarray, target: tuple[int, int]) -> tuple[np.ndarray, tuple[int, int]]:
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    th, tw = target
    if h > th or w > tw:
        raise ValueError(f"image {pixels.shape} does not fit into {target}")
    oy, ox = (th - h) // 2, (tw - w) // 2
    out = np.zeros((th, tw), dtype=pixels.dtype)
    out[oy:oy + h, ox:ox + w] = pixels
    return out, (oy, ox)


def center_crop(pixels: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`pad_center` for the same shapes."""
    h, w = np.shape(pixels)
    ch, cw = shape
    oy, ox = (h - ch) // 2, (w - cw) // 2
    return np.asarray(pixels)[oy:oy + ch, ox:ox + cw]


def component_boxes(mask: np.ndarray) -> list[tuple[int, int, int, int, int]]:
    """``(size, row0, col0, row1, col1)`` per 8-connected component, exclusive ends."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    sizes = np.bincount(labels.ravel())[1:]
    boxes = []
    for i, sl in enumerate(ndimage.find_objects(labels)):
        boxes.append((int(sizes[i]), sl[0].start, sl[1].start, sl[0].stop, sl[1].stop))
    return boxes


def disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius
