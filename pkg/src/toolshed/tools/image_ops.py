"""Basic image manipulation: value lookup, point crops, mask crops."""

from __future__ import annotations

import numpy as np

from ..errors import ToolFailure
from ..wire import ToolResult
from .common import (
    as_grid,
    as_image,
    as_mask,
    as_norm_points,
    cell_px,
    image_out,
    need,
    norm_coord,
    sample_px,
)
from .context import ToolContext


def image_value_at(ctx: ToolContext, args: dict) -> ToolResult:
    data = as_grid(need(args, "data"))
    x = norm_coord(need(args, "x"), "x")
    y = norm_coord(need(args, "y"), "y")
    h, w = data.shape[:2]
    px, py = sample_px(x, w), sample_px(y, h)
    value = data[py, px]
    if isinstance(value, np.ndarray):
        rendered = "(" + ", ".join(str(int(v)) for v in value) + ")"
    else:
        rendered = f"{float(value):.6g}"
    text = (
        f"Value at normalized (x={x:.4f}, y={y:.4f}) -> pixel ({px}, {py}): {rendered}"
    )
    return ToolResult.ok(text)


def point_crop(ctx: ToolContext, args: dict) -> ToolResult:
    image = as_image(need(args, "image"))
    points = as_norm_points(need(args, "points"), "points")
    h, w = image.shape[:2]
    xs = [cell_px(p[0], w) for p in points]
    ys = [cell_px(p[1], h) for p in points]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    crop = image[y0:y1 + 1, x0:x1 + 1]
    att = image_out("cropped_image", crop)
    text = (
        f"Cropped to box ({x0}, {y0})-({x1}, {y1}), "
        f"size {crop.shape[1]}x{crop.shape[0]}, from {len(points)} point(s)."
    )
    return ToolResult.ok(text, image=att, variables={"cropped_image": att})


def mask_crop(ctx: ToolContext, args: dict) -> ToolResult:
    image = as_image(need(args, "image"))
    mask = as_mask(need(args, "mask"))
    if mask.shape != image.shape[:2]:
        raise ToolFailure("mask dims do not match image")
    if not mask.any():
        raise ToolFailure("empty mask")
    rows, cols = np.nonzero(mask)
    y0, y1 = int(rows.min()), int(rows.max())
    x0, x1 = int(cols.min()), int(cols.max())
    crop = image[y0:y1 + 1, x0:x1 + 1].copy()
    crop[~mask[y0:y1 + 1, x0:x1 + 1]] = 255
    coverage = 100.0 * float(mask.sum()) / mask.size
    att = image_out("masked_crop", crop)
    text = (
        f"Cropped to box ({x0}, {y0})-({x1}, {y1}), "
        f"size {crop.shape[1]}x{crop.shape[0]}, mask coverage {coverage:.1f}%."
    )
    return ToolResult.ok(text, image=att, variables={"masked_crop": att})


def dispatch_point_crop(ctx: ToolContext, args: dict) -> ToolResult:
    # the published API reuses one name for two signatures:
    # (data, x, y) value lookup vs (image, points) crop
    if "points" in args:
        return point_crop(ctx, args)
    return image_value_at(ctx, args)


METHODS = {
    "point_crop": dispatch_point_crop,
    # unambiguous aliases for the two overloads
    "image_value_at": image_value_at,
    "crop_to_points": point_crop,
    "mask_crop": mask_crop,
}
