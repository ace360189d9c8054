"""Click-driven instance segmentation backed by fixture masks.

The surrogate semantics: a click returns the annotated mask containing it,
falling back to the object whose mask centroid is nearest. The reported iou
score is 1.0 for containment, exp(-5 * centroid distance) otherwise.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ToolFailure
from ..wire import ToolResult, mask_attachment
from .common import (
    as_image,
    as_norm_points,
    image_out,
    mask_centroid_norm,
    need,
    norm_coord,
    overlay_mask,
    sample_px,
)
from .context import ToolContext


def _pick_object(ctx: ToolContext, point: tuple[float, float]):
    fixture = ctx.require_fixture()
    masked = {n: a for n, a in fixture.objects.items() if a.mask is not None}
    if not masked:
        raise ToolFailure("no segmentable objects")
    h, w = fixture.image.shape[:2]
    px, py = sample_px(point[0], w), sample_px(point[1], h)
    containing = sorted(n for n, a in masked.items() if a.mask[py, px])
    if containing:
        return containing[0], masked[containing[0]].mask
    # nearest mask centroid, ties broken by name
    best = min(
        masked.items(),
        key=lambda kv: (math.dist(point, mask_centroid_norm(kv[1].mask)), kv[0]),
    )
    return best[0], best[1].mask


def _score(point: tuple[float, float], mask: np.ndarray) -> float:
    h, w = mask.shape
    px, py = sample_px(point[0], w), sample_px(point[1], h)
    if mask[py, px]:
        return 1.0
    return math.exp(-5.0 * math.dist(point, mask_centroid_norm(mask)))


def segment_from_point(ctx: ToolContext, args: dict) -> ToolResult:
    image = as_image(need(args, "image"))
    x = norm_coord(need(args, "x"), "x")
    y = norm_coord(need(args, "y"), "y")
    _, mask = _pick_object(ctx, (x, y))
    iou = _score((x, y), mask)
    att = mask_attachment("segmentation_mask", mask)
    overlay = image_out("segment_overlay", overlay_mask(image, mask, [(x, y)]))
    text = f"Segmented at click (x={x:.4f}, y={y:.4f}); IoU score {iou:.4f}."
    return ToolResult.ok(text, image=overlay, variables={"segmentation_mask": att})


def segment_from_points(ctx: ToolContext, args: dict) -> ToolResult:
    image = as_image(need(args, "image"))
    points = as_norm_points(need(args, "points"), "points")
    _, mask = _pick_object(ctx, points[0])
    scores = [_score(p, mask) for p in points]
    att = mask_attachment("segmentation_mask", mask)
    overlay = image_out("segment_overlay", overlay_mask(image, mask, points))
    text = f"Segmented from {len(points)} point(s); best IoU score {max(scores):.4f}."
    return ToolResult.ok(text, image=overlay, variables={"segmentation_mask": att})


METHODS = {
    "segment_from_point": segment_from_point,
    "segment_from_points": segment_from_points,
}
