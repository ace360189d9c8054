"""Argument coercion and overlay drawing shared across tool implementations."""

from __future__ import annotations

from typing import Any

import numpy as np
from PIL import Image, ImageDraw

from ..errors import BadArgs
from ..wire import (
    Attachment,
    Media,
    Point2,
    grid_to_array,
    image_attachment,
    image_to_array,
    mask_to_array,
    points_to_array,
)


def need(args: dict, name: str) -> Any:
    if name not in args:
        raise BadArgs(f"missing required argument {name!r}")
    return args[name]


def as_image(value: Any) -> np.ndarray:
    if isinstance(value, Attachment) and value.media is Media.RASTER_IMAGE:
        return image_to_array(value)
    raise BadArgs("expected an image attachment")


def as_grid(value: Any) -> np.ndarray:
    if isinstance(value, Attachment):
        if value.media is Media.FLOAT32_GRID:
            return grid_to_array(value)
        if value.media is Media.RASTER_IMAGE:
            return image_to_array(value)
    raise BadArgs("expected a grid or image attachment")


def as_mask(value: Any) -> np.ndarray:
    if isinstance(value, Attachment) and value.media is Media.BOOL_MASK_RLE:
        return mask_to_array(value)
    raise BadArgs("expected a boolean mask attachment")


def as_points3(value: Any) -> np.ndarray:
    if isinstance(value, Attachment) and value.media is Media.FLOAT32_POINTS_N3:
        return points_to_array(value)
    raise BadArgs("expected a point-cloud attachment")


def as_float(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise BadArgs(f"argument {name!r} must be a number")
    return float(value)


def norm_coord(value: Any, name: str) -> float:
    v = as_float(value, name)
    if not (0.0 <= v <= 1.0):
        raise BadArgs(f"argument {name!r} must lie in [0,1], got {v}")
    return v


def as_norm_point(value: Any, name: str) -> tuple[float, float]:
    if isinstance(value, Point2):
        x, y = value
    elif isinstance(value, (list, tuple)) and len(value) == 2:
        x, y = value
    else:
        raise BadArgs(f"argument {name!r} must be a normalized (x, y) point")
    return (norm_coord(x, f"{name}.x"), norm_coord(y, f"{name}.y"))


def as_norm_points(value: Any, name: str) -> list[tuple[float, float]]:
    if not isinstance(value, (list, tuple)) or not value:
        raise BadArgs(f"argument {name!r} must be a nonempty point list")
    return [as_norm_point(p, f"{name}[{i}]") for i, p in enumerate(value)]


def as_matrix4(value: Any, name: str) -> np.ndarray:
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise BadArgs(f"argument {name!r} must be a 4x4 matrix") from None
    if m.shape != (4, 4):
        raise BadArgs(f"argument {name!r} must be a 4x4 matrix, got shape {m.shape}")
    return m


# pixel mapping for value lookups: nearest sample over the closed unit square
def sample_px(coord: float, size: int) -> int:
    return int(round(coord * (size - 1)))


# pixel mapping for crops: cell index, clamped at the far edge
def cell_px(coord: float, size: int) -> int:
    return min(size - 1, int(coord * size))


def mask_centroid_norm(mask: np.ndarray) -> tuple[float, float]:
    rows, cols = np.nonzero(mask)
    h, w = mask.shape
    return (float(cols.mean()) / (w - 1) if w > 1 else 0.5,
            float(rows.mean()) / (h - 1) if h > 1 else 0.5)


# ---------------------------------------------------------------------------
# overlays (contract parity: tools that return an image really return one)

def _marker_radius(w: int, h: int) -> int:
    return max(2, min(w, h) // 40)


def overlay_points(image: np.ndarray, points: list[tuple[float, float]]) -> np.ndarray:
    h, w = image.shape[:2]
    img = Image.fromarray(image, mode="RGB")
    draw = ImageDraw.Draw(img)
    r = _marker_radius(w, h)
    for x, y in points:
        cx, cy = x * (w - 1), y * (h - 1)
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=(220, 30, 30),
                     outline=(255, 255, 255), width=1)
    return np.asarray(img, dtype=np.uint8)


def overlay_mask(image: np.ndarray, mask: np.ndarray,
                 points: list[tuple[float, float]] = ()) -> np.ndarray:
    out = image.astype(np.int16)
    green = np.array([40, 200, 80], dtype=np.int16)
    out[mask] = (out[mask] // 2) + green // 2
    # white outline: mask cells bordering non-mask cells
    edge = mask & ~(
        np.roll(mask, 1, 0) & np.roll(mask, -1, 0)
        & np.roll(mask, 1, 1) & np.roll(mask, -1, 1)
    )
    out[edge] = 255
    res = out.clip(0, 255).astype(np.uint8)
    if points:
        res = overlay_points(res, list(points))
    return res


def colorize_depth(depth: np.ndarray) -> np.ndarray:
    """Cool-to-warm colormap with a vertical scale bar on the right."""
    lo, hi = float(depth.min()), float(depth.max())
    span = (hi - lo) or 1.0
    t = (depth - lo) / span
    r = (255 * t).astype(np.uint8)
    g = (255 * (1 - np.abs(2 * t - 1))).astype(np.uint8)
    b = (255 * (1 - t)).astype(np.uint8)
    img = np.stack([r, g, b], axis=-1)
    h = img.shape[0]
    bar_t = np.linspace(1.0, 0.0, h)[:, None]
    bar = np.stack([
        (255 * bar_t).astype(np.uint8),
        (255 * (1 - np.abs(2 * bar_t - 1))).astype(np.uint8),
        (255 * (1 - bar_t)).astype(np.uint8),
    ], axis=-1)
    bar_w = max(2, img.shape[1] // 24)
    return np.concatenate([img, np.repeat(bar, bar_w, axis=1)], axis=1)


def image_out(name: str, arr: np.ndarray) -> Attachment:
    return image_attachment(name, arr)


def fmt_point(p: tuple[float, float]) -> str:
    return f"({p[0]:.4f}, {p[1]:.4f})"
