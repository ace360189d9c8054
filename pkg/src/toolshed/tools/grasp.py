"""Grasp pose synthesis from fixture grasp annotations.

The pose is built from the annotated keypoints: translation back-projects the
grasp center at the masked median depth, the z-axis runs along the camera
ray, and the x-axis is the image-plane finger direction lifted into 3D and
orthogonalized. Confidence and grasp counts are fixed surrogate values.
"""

from __future__ import annotations

import numpy as np

from ..errors import BadArgs, ToolFailure
from ..wire import ToolResult
from .common import as_float, as_image, as_mask, as_points3, fmt_point, image_out, need, overlay_points, sample_px
from .context import ToolContext

CONFIDENCE = 0.9
TOTAL_GRASPS = 64
COLLISION_FREE_PCT = 100.0


def _owning_object(ctx: ToolContext, mask: np.ndarray):
    fixture = ctx.require_fixture()
    best_name, best_overlap = None, 0
    for name in sorted(fixture.objects):
        ann = fixture.objects[name]
        if ann.mask is None:
            continue
        overlap = int(np.logical_and(ann.mask, mask).sum())
        if overlap > best_overlap:
            best_name, best_overlap = name, overlap
    if best_name is None:
        raise ToolFailure("no feasible grasp")
    ann = fixture.objects[best_name]
    if ann.grasp is None:
        raise ToolFailure("no feasible grasp")
    return ann


def compute_grasp(ctx: ToolContext, args: dict) -> ToolResult:
    cloud = as_points3(need(args, "point_cloud"))
    mask = as_mask(need(args, "mask"))
    image = as_image(need(args, "image"))
    focal = as_float(need(args, "focal_length_px"), "focal_length_px")
    if cloud.shape[0] != mask.size:
        raise BadArgs(
            f"point cloud has {cloud.shape[0]} rows but mask selects from {mask.size} pixels"
        )
    if not mask.any():
        raise ToolFailure("no feasible grasp")

    ann = _owning_object(ctx, mask)
    kp = ann.grasp
    h, w = mask.shape

    depth_med = float(np.median(cloud[mask.ravel()][:, 2]))
    u = sample_px(kp.center[0], w)
    v = sample_px(kp.center[1], h)
    t = np.array([
        (u - w / 2.0) * depth_med / focal,
        (v - h / 2.0) * depth_med / focal,
        depth_med,
    ])

    z_axis = t / np.linalg.norm(t)
    finger = np.array([
        kp.right_base[0] - kp.left_base[0],
        kp.right_base[1] - kp.left_base[1],
        0.0,
    ])
    finger -= finger.dot(z_axis) * z_axis
    norm = np.linalg.norm(finger)
    if norm < 1e-9:
        raise ToolFailure("no feasible grasp")
    x_axis = finger / norm
    y_axis = np.cross(z_axis, x_axis)

    pose = np.eye(4)
    pose[:3, 0] = x_axis
    pose[:3, 1] = y_axis
    pose[:3, 2] = z_axis
    pose[:3, 3] = t

    points2d = [kp.center, kp.left_base, kp.right_base, kp.left_tip, kp.right_tip]
    rendered = ", ".join(fmt_point(p) for p in points2d)
    text = (
        f"Best grasp confidence {CONFIDENCE:.2f}; generated {TOTAL_GRASPS} grasps, "
        f"{COLLISION_FREE_PCT:.1f}% collision-free. "
        f"Projected 2D gripper points (center, left base, right base, left tip, right tip): {rendered}"
    )
    overlay = image_out("grasp_overlay", overlay_points(image, points2d))
    variables = {"grasp_pose": [[float(v) for v in row] for row in pose]}
    return ToolResult.ok(text, image=overlay, variables=variables)


METHODS = {"compute_grasp": compute_grasp}
