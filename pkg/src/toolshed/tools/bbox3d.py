"""Oriented 3D bounding box for a masked subset of a point cloud."""

from __future__ import annotations

import numpy as np

from ..errors import BadArgs, ToolFailure
from ..geometry import BOX_EDGES, pca_obb, project_points
from ..wire import ToolResult
from .common import as_float, as_mask, as_points3, need
from .context import ToolContext


def compute_bbox(ctx: ToolContext, args: dict) -> ToolResult:
    cloud = as_points3(need(args, "point_cloud"))
    mask = as_mask(need(args, "mask"))
    focal = as_float(need(args, "focal_length_px"), "focal_length_px")
    if cloud.shape[0] != mask.size:
        raise BadArgs(
            f"point cloud has {cloud.shape[0]} rows but mask selects from {mask.size} pixels"
        )
    pts = cloud[mask.ravel()]
    if pts.shape[0] < 4:
        raise ToolFailure("degenerate point set")
    box = pca_obb(pts.astype(float))
    if box.degenerate:
        raise ToolFailure("degenerate point set")

    corners3 = box.corners()
    h, w = mask.shape
    corners2 = project_points(corners3, focal, w, h)
    variables = {
        "obb_corners_3d": [[float(v) for v in row] for row in corners3],
        "obb_corners_2d": [[float(v) for v in row] for row in corners2],
        "extent": [float(v) for v in box.extent],
        "edges": [[a, b] for a, b in BOX_EDGES],
    }
    ext = box.extent
    c3 = "; ".join(f"({r[0]:.3f}, {r[1]:.3f}, {r[2]:.3f})" for r in corners3)
    c2 = "; ".join(f"({r[0]:.3f}, {r[1]:.3f})" for r in corners2)
    text = (
        f"Oriented box from {pts.shape[0]} masked points (mask {w}x{h}); "
        f"extent ({ext[0]:.3f}, {ext[1]:.3f}, {ext[2]:.3f}) m; "
        f"corners 3d: {c3}; corners 2d: {c2}; "
        f"edges: {len(BOX_EDGES)} corner-index pairs."
    )
    return ToolResult.ok(text, variables=variables)


METHODS = {"compute_bbox": compute_bbox}
