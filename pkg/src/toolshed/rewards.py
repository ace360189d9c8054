"""Scoring functions for final answers against fixture ground truth.

Covers choice equality, box MIoU, centroid-distance pointing (NNDC),
projected-pose hull IoU, grasp keypoint errors (NNCE, MACE), the signed
distance and area-change pointing variants (NSDH, NAC), the structural
format score, and the weighted combination of the two reward channels.

All inputs live in normalized image coordinates unless a function takes an
explicit width for spatial normalization.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BadArgs
from .geometry import (
    ConvexPolygon,
    Degenerate,
    _point_segment_distance,
    convex_hull,
    hull_iou,
    point_in_hull,
    polygon_area,
    signed_distance_to_hull,
)

Vec2 = tuple[float, float]

# pointing-distance exponential falloff: 0 at the unit-square diagonal
_NNDC_SCALE = 5.0
_NNDC_FLOOR = math.exp(-_NNDC_SCALE * math.sqrt(2.0))

# collinear annotated regions: binary hit = within this distance of the segment
_DEGENERATE_REGION_TOL = 1e-3


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


# ---------------------------------------------------------------------------
# choice answers

_OPTION_LETTER = re.compile(r"^[\(\[]?([a-z])(?:[\)\]\.:,])?$")


def _normalize_choice(text: str) -> str:
    return " ".join(text.strip().lower().split())


def _extract_option_letter(text: str) -> str | None:
    m = _OPTION_LETTER.match(_normalize_choice(text).split(" ")[0] if text.strip() else "")
    return m.group(1) if m else None


def binary_reward(ans: str, gt: str) -> float:
    """1.0 iff normalized equality; single-letter gt also accepts "(a)" forms."""
    ans_n = _normalize_choice(ans)
    gt_n = _normalize_choice(gt)
    if ans_n == gt_n:
        return 1.0
    if len(gt_n) == 1 and gt_n.isalpha():
        letter = _extract_option_letter(ans)
        if letter == gt_n:
            return 1.0
    return 0.0


# ---------------------------------------------------------------------------
# 2D boxes

Box = tuple[float, float, float, float]  # x1, y1, x2, y2


def box_iou(a: Box, b: Box) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0:
        return 0.0
    return inter / union


def miou_reward(pred: Sequence[Box], gt: Sequence[Box]) -> float:
    """Mean over predicted boxes of the best IoU against any gt box."""
    if not gt:
        raise BadArgs("ground truth box list is empty")
    if not pred:
        return 0.0
    total = sum(max(box_iou(p, g) for g in gt) for p in pred)
    return _clamp01(total / len(pred))


# ---------------------------------------------------------------------------
# pointing

@dataclass(frozen=True)
class Region:
    """Annotated target region: a point set with its centroid and hull."""

    points: tuple[Vec2, ...]

    def __post_init__(self):
        if not self.points:
            raise BadArgs("region needs at least one point")

    @property
    def centroid(self) -> Vec2:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return (sum(xs) / len(xs), sum(ys) / len(ys))

    @property
    def hull(self):
        return convex_hull(list(self.points))


def _binary_point_hit(pred: Vec2, region: Region) -> float:
    hull = region.hull
    if isinstance(hull, Degenerate):
        pts = hull.points
        if len(pts) == 1:
            d = math.dist(pred, pts[0])
        else:
            d = _point_segment_distance(pred, pts[0], pts[1])
        return 1.0 if d <= _DEGENERATE_REGION_TOL else 0.0
    return 1.0 if point_in_hull(pred, hull) else 0.0


def nndc_reward(pred: Vec2, gt: Region) -> float:
    """Exponential falloff of centroid distance, clipped by the in-region hit."""
    d = math.dist(pred, gt.centroid)
    raw = (math.exp(-_NNDC_SCALE * d) - _NNDC_FLOOR) / (1.0 - _NNDC_FLOOR)
    return _clamp01(max(raw, _binary_point_hit(pred, gt)))


def nsdh_reward(pred: Vec2, gt: Region, clip_binary: bool = True) -> float:
    """Signed-distance falloff: 1.0 on the boundary, decaying either side."""
    hull = gt.hull
    if isinstance(hull, Degenerate):
        raise BadArgs("signed-distance reward needs a non-degenerate hull")
    s = signed_distance_to_hull(pred, hull)
    raw = 0.5 + 0.5 * math.exp(s) if s <= 0 else 0.5 * math.exp(-s)
    if clip_binary:
        raw = max(raw, _binary_point_hit(pred, gt))
    return _clamp01(raw)


def nac_reward(pred: Vec2, gt: Region, clip_binary: bool = True) -> float:
    """Relative hull-area growth after adding the predicted point."""
    hull = gt.hull
    base_area = polygon_area(hull)
    if isinstance(hull, Degenerate) or base_area <= 0.0:
        raise BadArgs("area-change reward needs a hull with positive area")
    grown = convex_hull(list(hull.vertices) + [pred])
    delta = max(0.0, polygon_area(grown) - base_area)
    raw = math.exp(-delta / base_area)
    if clip_binary:
        raw = max(raw, _binary_point_hit(pred, gt))
    return _clamp01(raw)


# ---------------------------------------------------------------------------
# projected pose

def pose_hull_iou_reward(pred_corners: Sequence[Vec2], gt_corners: Sequence[Vec2]) -> float:
    """IoU of the convex hulls of the 8 projected corners; 0 unless both sides
    supply exactly 8 corners and both hulls are non-degenerate."""
    if len(pred_corners) != 8 or len(gt_corners) != 8:
        return 0.0
    hp = convex_hull(list(pred_corners))
    hg = convex_hull(list(gt_corners))
    return _clamp01(hull_iou(hp, hg))


# ---------------------------------------------------------------------------
# grasp keypoints

class GraspKeypoints(NamedTuple):
    """Five normalized image points describing a parallel-jaw grasp."""

    center: Vec2
    left_base: Vec2
    right_base: Vec2
    left_tip: Vec2
    right_tip: Vec2

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    def direction_vectors(self) -> np.ndarray:
        """Four finger vectors: center->bases, bases->tips."""
        c, lb, rb, lt, rt = (np.array(p, dtype=float) for p in self)
        return np.stack([lb - c, rb - c, lt - lb, rt - rb])


class MaceResult(NamedTuple):
    score: float  # [0, 100]
    success: bool  # score > 40


def nnce_reward(pred: GraspKeypoints, gt: GraspKeypoints, width: float,
                delta_max: float = 10.0) -> float:
    """1 minus the width-normalized mean keypoint error, capped at delta_max."""
    if width <= 0:
        raise BadArgs(f"gripper width must be positive, got {width}")
    errs = np.linalg.norm(pred.as_array() - gt.as_array(), axis=1)
    mean_norm = float(errs.mean()) / width
    return _clamp01(1.0 - min(delta_max, mean_norm) / delta_max)


def _safe_cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return -1.0
    return float(np.dot(a, b)) / (na * nb)


def mace_score(pred: GraspKeypoints, gt: GraspKeypoints, width: float) -> MaceResult:
    """Mean angular-coordinate error on a [0,100] scale; success above 40."""
    if width <= 0:
        raise BadArgs(f"gripper width must be positive, got {width}")
    center_err = math.dist(pred.center, gt.center) / width
    cos_terms = [
        (1.0 - _safe_cosine(pv, gv)) / 2.0
        for pv, gv in zip(pred.direction_vectors(), gt.direction_vectors())
    ]
    raw = 1.0 - 0.5 * (center_err + sum(cos_terms) / 4.0)
    score = 100.0 * _clamp01(raw)
    return MaceResult(score=score, success=score > 40.0)


# ---------------------------------------------------------------------------
# structural format reward

THINK, TOOL_CALL, ANSWER = "think", "tool_call", "answer"


def format_score(tags: Sequence[str], require_tool_call: bool = False) -> float:
    """1.0 iff every tool_call follows a think, a single think-preceded answer
    closes the sequence, and (optionally) at least one tool_call appears."""
    tags = list(tags)
    if tags.count(ANSWER) != 1 or not tags or tags[-1] != ANSWER:
        return 0.0
    for i, tag in enumerate(tags):
        if tag in (TOOL_CALL, ANSWER) and (i == 0 or tags[i - 1] != THINK):
            return 0.0
    if require_tool_call and TOOL_CALL not in tags:
        return 0.0
    return 1.0


def combine_with_format(r_acc: float, r_format: float, lam: float = 0.3) -> float:
    """R_final = accuracy reward plus lam times the format reward."""
    if not (0.0 <= lam <= 1.0):
        raise BadArgs(f"lambda must lie in [0,1], got {lam}")
    return r_acc + lam * r_format
