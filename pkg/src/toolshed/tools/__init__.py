"""Fixture-driven tool implementations and the default toolbox wiring."""

from __future__ import annotations

from typing import Callable

from ..errors import BadArgs
from ..wire import ToolResult
from . import bbox3d, code_exec, depth, grasp, image_ops, pointing, robot, segmentation
from .context import ToolContext

MethodFn = Callable[[ToolContext, dict], ToolResult]


class Tool:
    """A named bundle of methods sharing one implementation family."""

    def __init__(self, name: str, methods: dict[str, MethodFn]):
        self.name = name
        self.methods = methods

    def __call__(self, ctx: ToolContext, method: str, args: dict) -> ToolResult:
        fn = self.methods.get(method)
        if fn is None:
            raise BadArgs(f"tool {self.name!r} has no method {method!r}")
        return fn(ctx, args)


def build_toolbox() -> dict[str, Tool]:
    return {
        "image_ops": Tool("image_ops", image_ops.METHODS),
        "sam2": Tool("sam2", segmentation.METHODS),
        "point1": Tool("point1", pointing.make_methods("point1")),
        "point2": Tool("point2", pointing.make_methods("point2")),
        "depth_estimator": Tool("depth_estimator", depth.METHODS),
        "3d_bbox": Tool("3d_bbox", bbox3d.METHODS),
        "grasp_generator": Tool("grasp_generator", grasp.METHODS),
        "code_executor": Tool("code_executor", code_exec.METHODS),
        "mock_robot": Tool("mock_robot", robot.MOCK_METHODS),
        "robot": Tool("robot", robot.LIVE_METHODS),
    }


# worker counts and fractional device units for the bundled tools
DEFAULT_TOOL_CONFIG: dict[str, dict] = {
    "point1": {"num_actors": 2, "resources": {"num_gpus": 0.5}},
    "point2": {"num_actors": 2, "resources": {"num_gpus": 0.5}},
    "sam2": {"num_actors": 4, "resources": {"num_gpus": 0.2}},
    "depth_estimator": {"num_actors": 4, "resources": {"num_gpus": 0.2}},
    "image_ops": {"num_actors": 2, "resources": {"num_cpus": 0.5}},
    "3d_bbox": {"num_actors": 2, "resources": {"num_cpus": 0.5}},
    "grasp_generator": {"num_actors": 2, "resources": {"num_gpus": 0.2}},
    "code_executor": {"num_actors": 2, "resources": {"num_cpus": 0.5}},
    "mock_robot": {"num_actors": 1, "resources": {"num_cpus": 0.5}},
    "robot": {"num_actors": 1, "resources": {"num_cpus": 0.5}},
}

__all__ = ["Tool", "ToolContext", "build_toolbox", "DEFAULT_TOOL_CONFIG"]
