"""Deterministic bundled dataset: drawn desk scenes with full annotations.

Twelve small scenes covering every task kind. Everything is computed, not
sampled, so regenerating the dataset reproduces identical files. The 3D
annotations are derived from the synthesized depth through the same
geometry kernels the tools use, which keeps tool outputs and ground truth
mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .fixtures import ObjectAnnotation, QASpec, SceneFixture
from .geometry import backproject_grid, pca_obb, project_points
from .rewards import GraspKeypoints, Region

W, H = 96, 72
FOCAL = 80.0

_COLORS = {
    "red box": (200, 40, 40),
    "blue ball": (40, 70, 210),
    "green mug": (40, 160, 70),
    "yellow block": (220, 200, 50),
    "white plate": (235, 235, 225),
}


@dataclass(frozen=True)
class _Obj:
    name: str
    shape: str                      # rect | ellipse
    box: tuple[int, int, int, int]  # pixel box x0,y0,x1,y1 inclusive
    lift: float                     # meters closer than the desk plane
    graspable: bool = False


def _desk_image(objs: list[_Obj]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    img = Image.new("RGB", (W, H), (120, 96, 72))
    draw = ImageDraw.Draw(img)
    draw.rectangle([0, 0, W - 1, H // 6], fill=(90, 80, 70))  # back wall strip
    masks: dict[str, np.ndarray] = {}
    for o in objs:
        color = _COLORS[o.name]
        layer = Image.new("1", (W, H), 0)
        ldraw = ImageDraw.Draw(layer)
        if o.shape == "rect":
            draw.rectangle(list(o.box), fill=color)
            ldraw.rectangle(list(o.box), fill=1)
        else:
            draw.ellipse(list(o.box), fill=color)
            ldraw.ellipse(list(o.box), fill=1)
        masks[o.name] = np.asarray(layer, dtype=bool)
    return np.asarray(img, dtype=np.uint8), masks


def _desk_depth(objs: list[_Obj], masks: dict[str, np.ndarray]) -> np.ndarray:
    rows = np.linspace(2.4, 1.6, H, dtype=np.float32)[:, None]
    depth = np.repeat(rows, W, axis=1).astype(np.float32)
    for o in objs:
        depth[masks[o.name]] -= np.float32(o.lift)
    return depth


def _norm_box(box: tuple[int, int, int, int]) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = box
    return (x0 / (W - 1), y0 / (H - 1), x1 / (W - 1), y1 / (H - 1))


def _center(box: tuple[int, int, int, int]) -> tuple[float, float]:
    x0, y0, x1, y1 = box
    return ((x0 + x1) / 2 / (W - 1), (y0 + y1) / 2 / (H - 1))


def _region_for(box: tuple[int, int, int, int]) -> Region:
    x0, y0, x1, y1 = _norm_box(box)
    cx, cy = _center(box)
    return Region(points=((x0, y0), (x1, y0), (x1, y1), (x0, y1), (cx, cy)))


def _grasp_for(box: tuple[int, int, int, int]) -> tuple[GraspKeypoints, float]:
    cx, cy = _center(box)
    x0, y0, x1, y1 = _norm_box(box)
    half_w = (x1 - x0) / 2 + 0.02
    reach = (y1 - y0) / 2
    kp = GraspKeypoints(
        center=(cx, cy),
        left_base=(cx - half_w, cy),
        right_base=(cx + half_w, cy),
        left_tip=(cx - half_w, cy + reach),
        right_tip=(cx + half_w, cy + reach),
    )
    return kp, 2 * half_w


def _annotations(objs: list[_Obj], masks: dict[str, np.ndarray],
                 depth: np.ndarray) -> dict[str, ObjectAnnotation]:
    cloud = backproject_grid(depth, FOCAL)
    out: dict[str, ObjectAnnotation] = {}
    for o in objs:
        mask = masks[o.name]
        pts3 = cloud[mask.ravel()]
        box3d = pca_obb(pts3) if pts3.shape[0] >= 4 else None
        grasp = gw = None
        if o.graspable:
            grasp, gw = _grasp_for(o.box)
        cx, cy = _center(o.box)
        x0, y0, x1, y1 = _norm_box(o.box)
        out[o.name] = ObjectAnnotation(
            points=((cx, cy), ((x0 + cx) / 2, cy), ((x1 + cx) / 2, cy)),
            mask=mask,
            box3d=box3d,
            grasp=grasp,
            gripper_width=gw,
        )
    return out


def _fixture(idx: int, objs: list[_Obj], qa: QASpec) -> SceneFixture:
    image, masks = _desk_image(objs)
    depth = _desk_depth(objs, masks)
    return SceneFixture(
        id=f"desk-{idx:02d}",
        image=image,
        depth=depth,
        focal_length_px=FOCAL,
        objects=_annotations(objs, masks, depth),
        qa=qa,
        noise_seed=idx,
    )


def _pose_corners(fx: SceneFixture, name: str) -> tuple[tuple[float, float], ...]:
    box3d = fx.objects[name].box3d
    assert box3d is not None
    uv = project_points(box3d.corners(), FOCAL, W, H)
    return tuple((float(u), float(v)) for u, v in uv)


def make_desk_dataset() -> list[SceneFixture]:
    red = _Obj("red box", "rect", (10, 40, 30, 58), 0.25)
    blue = _Obj("blue ball", "ellipse", (60, 42, 78, 60), 0.20)
    mug = _Obj("green mug", "ellipse", (40, 20, 56, 38), 0.15)
    yellow = _Obj("yellow block", "rect", (66, 16, 86, 32), 0.22, graspable=True)
    plate = _Obj("white plate", "ellipse", (14, 14, 34, 26), 0.05)

    fixtures: list[SceneFixture] = []

    def choice(idx, objs, question, answer):
        fixtures.append(_fixture(idx, objs, QASpec(
            task="choice", question=question, answer=answer)))

    # deliberately imbalanced: four yes, two no
    choice(1, [red, blue], "Is the red box left of the blue ball? Answer yes or no.", "yes")
    choice(2, [red, blue, mug], "Is the blue ball left of the red box? Answer yes or no.", "no")
    choice(3, [mug, yellow], "Is the green mug below the yellow block? Answer yes or no.", "yes")
    choice(4, [red, mug], "Is the red box closer to the camera than the green mug? Answer yes or no.", "yes")
    choice(5, [blue, plate], "Is the white plate above the blue ball? Answer yes or no.", "yes")
    choice(6, [yellow, plate], "Is the white plate right of the yellow block? Answer yes or no.", "no")

    # point tasks
    px7 = _fixture(7, [red, mug, blue], QASpec(
        task="point",
        question='Point at the green mug. Answer with JSON [x, y] in normalized coordinates.',
        region=_region_for(mug.box)))
    fixtures.append(px7)
    px8 = _fixture(8, [yellow, plate, blue], QASpec(
        task="point",
        question='Point at the blue ball. Answer with JSON [x, y] in normalized coordinates.',
        region=_region_for(blue.box)))
    fixtures.append(px8)

    # box tasks
    fixtures.append(_fixture(9, [red, yellow, mug], QASpec(
        task="boxes",
        question='Find every box-shaped object. Answer with JSON [[x0, y0, x1, y1], ...].',
        boxes=(_norm_box(red.box), _norm_box(yellow.box)))))
    fixtures.append(_fixture(10, [blue, plate], QASpec(
        task="boxes",
        question='Find the blue ball. Answer with JSON [[x0, y0, x1, y1]].',
        boxes=(_norm_box(blue.box),))))

    # pose task: projected corners of the yellow block's fitted 3D box
    fx11 = _fixture(11, [yellow, red], QASpec(task="pose", question=""))
    fx11 = SceneFixture(
        id=fx11.id, image=fx11.image, depth=fx11.depth,
        focal_length_px=fx11.focal_length_px, objects=fx11.objects,
        noise_seed=fx11.noise_seed,
        qa=QASpec(
            task="pose",
            question='Give the 8 projected corners of the yellow block\'s 3D bounding box as JSON [[x, y], ...].',
            corners=_pose_corners(fx11, "yellow block")))
    fixtures.append(fx11)

    # grasp task
    kp, gw = _grasp_for(yellow.box)
    fixtures.append(_fixture(12, [yellow, mug], QASpec(
        task="grasp",
        question=('Propose a grasp for the yellow block. Answer with JSON '
                  '{"center": [x, y], "left_base": [x, y], "right_base": [x, y], '
                  '"left_tip": [x, y], "right_tip": [x, y]}.'),
        grasp=kp, gripper_width=gw)))

    return fixtures


def main(argv: list[str] | None = None) -> int:
    import argparse

    from .fixtures import save_dataset

    parser = argparse.ArgumentParser(description="write the bundled desk dataset")
    parser.add_argument("out", type=Path)
    args = parser.parse_args(argv)
    save_dataset(make_desk_dataset(), args.out)
    print(f"wrote 12 fixtures to {args.out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
