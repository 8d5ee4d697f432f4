"""Frame abstraction and color-histogram extraction.

The tracking pipeline needs exactly one image capability: an HSV color
histogram over an arbitrary rectangle, clipped to the image bounds.
Two backends provide it: RasterFrame bins real pixels, SyntheticFrame
computes the histogram analytically from a painter-ordered list of
solid-color rectangles (exact areas, including occlusion).
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

# HSV binning: 16 hue x 16 saturation x 4 value bins.
HIST_BINS = (16, 16, 4)
HIST_SIZE = HIST_BINS[0] * HIST_BINS[1] * HIST_BINS[2]

Box = tuple  # (x, y, w, l): left, top, width, height in pixels


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB (0..1 floats, shape (..., 3)) to HSV in [0, 1]."""
    rgb = np.asarray(rgb, dtype=float)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    span = maxc - minc
    v = maxc
    s = np.where(maxc > 0, span / np.where(maxc > 0, maxc, 1.0), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        safe = np.where(span > 0, span, 1.0)
        rc = (maxc - r) / safe
        gc = (maxc - g) / safe
        bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(span > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def color_bin(rgb) -> int:
    """Flat histogram bin of one RGB color."""
    h, s, v = rgb_to_hsv(np.asarray(rgb, dtype=float))
    hb, sb, vb = HIST_BINS
    i = min(int(h * hb), hb - 1)
    j = min(int(s * sb), sb - 1)
    k = min(int(v * vb), vb - 1)
    return (i * sb + j) * vb + k


def clip_box(box: Box, size) -> Box:
    """Clip (x, y, w, l) to an image of (width, height)."""
    x, y, w, l = box
    x0 = min(max(x, 0.0), size[0])
    y0 = min(max(y, 0.0), size[1])
    x1 = min(max(x + w, 0.0), size[0])
    y1 = min(max(y + l, 0.0), size[1])
    return (x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0))


def box_iou(a: Box, b: Box) -> float:
    ax, ay, aw, al = a
    bx, by, bw, bl = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + al, by + bl) - max(ay, by))
    inter = ix * iy
    union = aw * al + bw * bl - inter
    return inter / union if union > 0 else 0.0


def box_center(box: Box):
    return (box[0] + box[2] / 2.0, box[1] + box[3] / 2.0)


def _intersect(a: Box, b: Box) -> Box:
    x0 = max(a[0], b[0])
    y0 = max(a[1], b[1])
    x1 = min(a[0] + a[2], b[0] + b[2])
    y1 = min(a[1] + a[3], b[1] + b[3])
    return (x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0))


def _area(box: Box) -> float:
    return box[2] * box[3]


def _union_area(boxes) -> float:
    """Inclusion-exclusion union area of a few axis-aligned rectangles."""
    boxes = [b for b in boxes if _area(b) > 0]
    total = 0.0
    for k in range(1, len(boxes) + 1):
        sign = 1.0 if k % 2 else -1.0
        for combo in combinations(boxes, k):
            inter = combo[0]
            for other in combo[1:]:
                inter = _intersect(inter, other)
                if _area(inter) == 0:
                    break
            total += sign * _area(inter)
    return total


class SyntheticFrame:
    """Scene of solid-color rectangles over a solid background.

    rects are painter-ordered: later entries occlude earlier ones.
    Histograms are exact area integrals of the visible surface.
    """

    def __init__(self, size, rects, bg_color=(0.12, 0.12, 0.12)):
        self.size = tuple(size)
        self.rects = [(tuple(box), tuple(color)) for box, color in rects]
        self.bg_color = tuple(bg_color)
        self._bins = [color_bin(color) for _, color in self.rects]
        self._bg_bin = color_bin(bg_color)

    def histogram(self, box: Box) -> np.ndarray:
        hist = np.zeros(HIST_SIZE)
        for b, w in self.histogram_sparse(box).items():
            hist[b] += w
        return hist

    def histogram_sparse(self, box: Box) -> dict:
        """Same histogram as a {bin: weight} dict; weights sum to 1."""
        q = clip_box(box, self.size)
        hist: dict = {}
        for k, (rect, _) in enumerate(self.rects):
            base = _intersect(rect, q)
            if _area(base) == 0:
                continue
            occluders = [
                _intersect(other, base) for other, _ in self.rects[k + 1 :]
            ]
            visible = _area(base) - _union_area(occluders)
            if visible > 0:
                b = self._bins[k]
                hist[b] = hist.get(b, 0.0) + visible
        bg = _area(q) - _union_area([_intersect(r, q) for r, _ in self.rects])
        if bg > 0:
            hist[self._bg_bin] = hist.get(self._bg_bin, 0.0) + bg
        total = sum(hist.values())
        if total > 0:
            hist = {b: w / total for b, w in hist.items()}
        return hist

    def to_array(self) -> np.ndarray:
        """Rasterize for visual checks; (H, W, 3) floats."""
        w, h = self.size
        img = np.empty((int(h), int(w), 3))
        img[...] = self.bg_color
        for rect, color in self.rects:
            x, y, rw, rl = clip_box(rect, self.size)
            img[int(round(y)) : int(round(y + rl)), int(round(x)) : int(round(x + rw))] = color
        return img


class RasterFrame:
    """Histogram backend over a real (H, W, 3) image array."""

    def __init__(self, image: np.ndarray):
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
        if image.dtype == np.uint8:
            image = image.astype(float) / 255.0
        self.image = image
        self.size = (image.shape[1], image.shape[0])

    def histogram(self, box: Box) -> np.ndarray:
        x, y, w, l = clip_box(box, self.size)
        patch = self.image[int(y) : int(np.ceil(y + l)), int(x) : int(np.ceil(x + w))]
        hist = np.zeros(HIST_SIZE)
        if patch.size == 0:
            return hist
        hsv = rgb_to_hsv(patch.reshape(-1, 3))
        hb, sb, vb = HIST_BINS
        hi = np.minimum((hsv[:, 0] * hb).astype(int), hb - 1)
        si = np.minimum((hsv[:, 1] * sb).astype(int), sb - 1)
        vi = np.minimum((hsv[:, 2] * vb).astype(int), vb - 1)
        flat = (hi * sb + si) * vb + vi
        np.add.at(hist, flat, 1.0)
        return hist / hist.sum()


def load_frame(path) -> RasterFrame:
    """Read one image file into a RasterFrame."""
    from PIL import Image

    with Image.open(path) as img:
        return RasterFrame(np.asarray(img.convert("RGB")))


def pearson(a, b) -> float:
    """Pearson correlation of two histograms with zero-variance guards.

    Accepts dense arrays or the sparse {bin: weight} form (mixing is
    allowed); sparse inputs are assumed normalized over HIST_SIZE bins.
    """
    if isinstance(a, dict) or isinstance(b, dict):
        a = a if isinstance(a, dict) else as_sparse(a)
        b = b if isinstance(b, dict) else as_sparse(b)
        return _sparse_pearson(a, b)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt((da * da).sum())
    nb = np.sqrt((db * db).sum())
    if na == 0.0 or nb == 0.0:
        return 1.0 if np.allclose(a, b) else 0.0
    return float((da * db).sum() / (na * nb))


def as_sparse(hist: np.ndarray) -> dict:
    idx = np.flatnonzero(hist)
    return {int(i): float(hist[i]) for i in idx}


def _sparse_pearson(a: dict, b: dict) -> float:
    # With both histograms summing to 1 over N bins, the centered dot
    # product reduces to dot(a, b) - 1/N and each variance to
    # sum(x^2) - 1/N.
    inv_n = 1.0 / HIST_SIZE
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    dot = sum(w * large.get(k, 0.0) for k, w in small.items())
    va = sum(w * w for w in a.values()) - inv_n
    vb = sum(w * w for w in b.values()) - inv_n
    if va <= 0.0 or vb <= 0.0:
        keys = set(a) | set(b)
        same = all(abs(a.get(k, 0.0) - b.get(k, 0.0)) < 1e-12 for k in keys)
        return 1.0 if same else 0.0
    return (dot - inv_n) / math.sqrt(va * vb)
