"""Robot tool suite: a fixture-backed mock and a live-hardware stub.

The mock always reports success with zero execution time once arguments
validate. Grasp poses must be rigid transforms; placement targets must be
normalized 2D points or finite 3D points.
"""

from __future__ import annotations

import numpy as np

from ..errors import BadArgs, NotConfigured, ToolFailure
from ..geometry import backproject_grid
from ..wire import ToolResult, grid_attachment, image_attachment, points_attachment
from .common import as_matrix4, as_norm_point, colorize_depth, image_out, need
from .context import ToolContext

RIGID_TOL = 1e-6


def _check_rigid(pose: np.ndarray) -> None:
    if not np.isfinite(pose).all():
        raise BadArgs("grasp_pose contains non-finite values")
    if not np.allclose(pose[3], [0.0, 0.0, 0.0, 1.0], atol=RIGID_TOL):
        raise BadArgs("grasp_pose bottom row must be (0, 0, 0, 1)")
    r = pose[:3, :3]
    err = float(np.abs(r.T @ r - np.eye(3)).max())
    if err > RIGID_TOL:
        raise BadArgs(f"grasp_pose rotation is not orthonormal (|R^T R - I| = {err:.2e})")
    if np.linalg.det(r) < 0:
        raise BadArgs("grasp_pose rotation is left-handed")


def capture_image(ctx: ToolContext, args: dict) -> ToolResult:
    fixture = ctx.require_fixture()
    att = image_attachment("captured_image", fixture.image)
    w, h = fixture.size
    text = f"Captured {w}x{h} image from mock camera."
    return ToolResult.ok(text, image=att, variables={"captured_image": att})


def _depth(ctx: ToolContext, with_pointcloud: bool) -> ToolResult:
    fixture = ctx.require_fixture()
    if fixture.depth is None or fixture.focal_length_px is None:
        raise ToolFailure("no depth available")
    depth = fixture.depth
    focal = float(fixture.focal_length_px)
    h, w = depth.shape
    # the published variable listing spells this "foca_length_px"
    variables = {
        "depth_map": grid_attachment("depth_map", depth),
        "foca_length_px": focal,
    }
    text = (
        f"Mock depth for {w}x{h} image; focal length {focal:.1f} px; "
        f"depth range [{float(depth.min()):.3f}, {float(depth.max()):.3f}] m."
    )
    if with_pointcloud:
        cloud = backproject_grid(depth, focal)
        variables["point_cloud"] = points_attachment("point_cloud", cloud)
        text += f" Point cloud: {h * w} points."
    overlay = image_out("depth_vis", colorize_depth(depth))
    return ToolResult.ok(text, image=overlay, variables=variables)


def get_depth(ctx: ToolContext, args: dict) -> ToolResult:
    return _depth(ctx, with_pointcloud=False)


def get_depth_with_pointcloud(ctx: ToolContext, args: dict) -> ToolResult:
    return _depth(ctx, with_pointcloud=True)


def execute_grasp(ctx: ToolContext, args: dict) -> ToolResult:
    ctx.require_fixture()
    pose = as_matrix4(need(args, "grasp_pose"), "grasp_pose")
    _check_rigid(pose)
    # raw success/timing live in the text: the published API lists no variables
    text = "Grasp executed successfully. success=True, execution_time_s=0.0"
    return ToolResult.ok(text)


def place_object_at_2d_location(ctx: ToolContext, args: dict) -> ToolResult:
    ctx.require_fixture()
    x, y = as_norm_point(need(args, "point_2d"), "point_2d")
    # the 2D target stands in for a ray hit: converted to a 3D placement
    # location on the support surface by the real system
    text = (
        f"Placement at 2D ({x:.4f}, {y:.4f}) converted to a 3D placement "
        f"location; object placed successfully. success=True, execution_time_s=0.0"
    )
    return ToolResult.ok(text)


def place_object_at_3d_location(ctx: ToolContext, args: dict) -> ToolResult:
    ctx.require_fixture()
    target = need(args, "point_3d")
    if not isinstance(target, (list, tuple)) or len(target) != 3:
        raise BadArgs("argument 'point_3d' must be an (x, y, z) triple")
    vals = []
    for v in target:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
            raise BadArgs("argument 'point_3d' must contain finite numbers")
        vals.append(float(v))
    text = (
        f"Object placed at 3D ({vals[0]:.4f}, {vals[1]:.4f}, {vals[2]:.4f}) "
        f"successfully. success=True, execution_time_s=0.0"
    )
    return ToolResult.ok(text)


MOCK_METHODS = {
    "capture_image": capture_image,
    "get_depth": get_depth,
    "get_depth_with_pointcloud": get_depth_with_pointcloud,
    "execute_grasp": execute_grasp,
    "place_object_at_2d_location": place_object_at_2d_location,
    "place_object_at_3d_location": place_object_at_3d_location,
}


def _live_stub(method: str):
    def stub(ctx: ToolContext, args: dict) -> ToolResult:
        raise NotConfigured(f"robot.{method}: no robot hardware configured")
    return stub


LIVE_METHODS = {name: _live_stub(name) for name in MOCK_METHODS}
