"""Monocular depth estimation stub: returns fixture depth verbatim and
back-projects pixel rays into a camera-frame point cloud on request."""

from __future__ import annotations

from ..errors import ToolFailure
from ..geometry import backproject_grid
from ..wire import ToolResult, grid_attachment, points_attachment
from .common import colorize_depth, image_out, need
from .context import ToolContext


def _depth_payload(ctx: ToolContext, with_pointcloud: bool):
    fixture = ctx.require_fixture()
    if fixture.depth is None or fixture.focal_length_px is None:
        raise ToolFailure("no depth available")
    depth = fixture.depth
    focal = float(fixture.focal_length_px)
    h, w = depth.shape
    variables = {
        "depth_map": grid_attachment("depth_map", depth),
        "focal_length_px": focal,
    }
    if with_pointcloud:
        cloud = backproject_grid(depth, focal)
        variables["point_cloud"] = points_attachment("point_cloud", cloud)
    text = (
        f"Depth estimated for {w}x{h} image; focal length {focal:.1f} px; "
        f"depth range [{float(depth.min()):.3f}, {float(depth.max()):.3f}] m, "
        f"mean {float(depth.mean()):.3f} m."
    )
    if with_pointcloud:
        text += f" Point cloud: {h * w} points."
    overlay = image_out("depth_vis", colorize_depth(depth))
    return ToolResult.ok(text, image=overlay, variables=variables)


def estimate_depth(ctx: ToolContext, args: dict) -> ToolResult:
    need(args, "image")
    return _depth_payload(ctx, with_pointcloud=False)


def estimate_depth_with_pointcloud(ctx: ToolContext, args: dict) -> ToolResult:
    need(args, "image")
    return _depth_payload(ctx, with_pointcloud=True)


METHODS = {
    "estimate_depth": estimate_depth,
    "estimate_depth_with_pointcloud": estimate_depth_with_pointcloud,
}
