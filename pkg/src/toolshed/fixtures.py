"""Scene fixtures: the ground truth behind mock tools and reward scoring.

A dataset is a directory holding manifest.jsonl (one fixture per line),
PNG images, and binary depth files. Masks travel inline in the manifest as
run-length arrays. Depth files are little-endian: magic "DPTH", u32 width,
u32 height, f32 focal_length_px, then width*height f32 values in meters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadArgs, LoadError
from .geometry import OrientedBox3
from .rewards import GraspKeypoints, Region
from .wire import mask_to_rle, rle_to_mask

DPTH_MAGIC = b"DPTH"

TASK_KINDS = ("choice", "boxes", "point", "pose", "grasp")


@dataclass(frozen=True)
class QASpec:
    """Question plus typed ground truth for one of the reward families."""

    task: str
    question: str
    # exactly one of these is populated, matching task
    answer: str | None = None                      # choice
    boxes: tuple[tuple[float, float, float, float], ...] | None = None
    region: Region | None = None                   # point
    corners: tuple[tuple[float, float], ...] | None = None  # pose
    grasp: GraspKeypoints | None = None
    gripper_width: float | None = None


@dataclass(eq=False)
class ObjectAnnotation:
    points: tuple[tuple[float, float], ...] = ()
    mask: np.ndarray | None = None          # bool HxW
    box3d: OrientedBox3 | None = None
    grasp: GraspKeypoints | None = None
    gripper_width: float | None = None


@dataclass(eq=False)
class SceneFixture:
    id: str
    image: np.ndarray                        # uint8 HxWx3
    depth: np.ndarray | None = None          # float32 HxW, meters
    focal_length_px: float | None = None
    objects: dict[str, ObjectAnnotation] = field(default_factory=dict)
    qa: QASpec | None = None
    noise_seed: int = 0

    @property
    def size(self) -> tuple[int, int]:
        """(width, height)"""
        h, w = self.image.shape[:2]
        return (w, h)


# ---------------------------------------------------------------------------
# depth file codec

def write_dpth(path: Path, depth: np.ndarray, focal_length_px: float) -> None:
    d = np.ascontiguousarray(depth, dtype="<f4")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(DPTH_MAGIC)
        fh.write(struct.pack("<IIf", w, h, focal_length_px))
        fh.write(d.tobytes())


def read_dpth(path: Path) -> tuple[np.ndarray, float]:
    raw = Path(path).read_bytes()
    if raw[:4] != DPTH_MAGIC:
        raise BadArgs(f"{path}: bad depth magic {raw[:4]!r}")
    w, h, focal = struct.unpack_from("<IIf", raw, 4)
    expected = 16 + 4 * w * h
    if len(raw) != expected:
        raise BadArgs(f"{path}: depth payload is {len(raw)} bytes, expected {expected}")
    depth = np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w).copy()
    return depth, float(focal)


# ---------------------------------------------------------------------------
# manifest (de)serialization

def _point_list(raw, what: str) -> tuple[tuple[float, float], ...]:
    pts = []
    for p in raw:
        x, y = float(p[0]), float(p[1])
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise BadArgs(f"{what}: point ({x}, {y}) outside [0,1]^2")
        pts.append((x, y))
    return tuple(pts)


def _grasp_from_json(raw: dict) -> tuple[GraspKeypoints, float]:
    kp = GraspKeypoints(
        center=tuple(raw["center"]),
        left_base=tuple(raw["left_base"]),
        right_base=tuple(raw["right_base"]),
        left_tip=tuple(raw["left_tip"]),
        right_tip=tuple(raw["right_tip"]),
    )
    width = float(raw["width"])
    if width <= 0:
        raise BadArgs(f"gripper width must be positive, got {width}")
    return kp, width


def _grasp_to_json(kp: GraspKeypoints, width: float) -> dict:
    return {
        "center": list(kp.center),
        "left_base": list(kp.left_base),
        "right_base": list(kp.right_base),
        "left_tip": list(kp.left_tip),
        "right_tip": list(kp.right_tip),
        "width": width,
    }


def _box3d_from_json(raw: dict) -> OrientedBox3:
    return OrientedBox3(
        center=tuple(raw["center"]),
        axes=tuple(tuple(row) for row in raw["axes"]),
        extent=tuple(raw["extent"]),
        degenerate=bool(raw.get("degenerate", False)),
    )


def _box3d_to_json(box: OrientedBox3) -> dict:
    return {
        "center": list(box.center),
        "axes": [list(row) for row in box.axes],
        "extent": list(box.extent),
        "degenerate": box.degenerate,
    }


def _qa_from_json(raw: dict) -> QASpec:
    task = raw["task"]
    if task not in TASK_KINDS:
        raise BadArgs(f"unknown task kind {task!r}")
    question = raw["question"]
    if task == "choice":
        return QASpec(task, question, answer=str(raw["answer"]))
    if task == "boxes":
        boxes = tuple(tuple(float(v) for v in b) for b in raw["boxes"])
        for b in boxes:
            if not (b[0] < b[2] and b[1] < b[3]):
                raise BadArgs(f"box {b} is not x1<x2, y1<y2")
        return QASpec(task, question, boxes=boxes)
    if task == "point":
        return QASpec(task, question, region=Region(_point_list(raw["region"], "qa region")))
    if task == "pose":
        corners = _point_list(raw["corners"], "qa corners")
        if len(corners) != 8:
            raise BadArgs(f"pose ground truth needs 8 corners, got {len(corners)}")
        return QASpec(task, question, corners=corners)
    kp, width = _grasp_from_json(raw["grasp"])
    return QASpec(task, question, grasp=kp, gripper_width=width)


def _qa_to_json(qa: QASpec) -> dict:
    out: dict = {"task": qa.task, "question": qa.question}
    if qa.task == "choice":
        out["answer"] = qa.answer
    elif qa.task == "boxes":
        out["boxes"] = [list(b) for b in qa.boxes]
    elif qa.task == "point":
        out["region"] = [list(p) for p in qa.region.points]
    elif qa.task == "pose":
        out["corners"] = [list(p) for p in qa.corners]
    else:
        out["grasp"] = _grasp_to_json(qa.grasp, qa.gripper_width)
    return out


def _fixture_from_entry(entry: dict, root: Path) -> SceneFixture:
    fid = entry["id"]
    image_path = root / entry["image"]
    image = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.uint8)
    h, w = image.shape[:2]

    depth = None
    focal = None
    if entry.get("depth"):
        depth, focal = read_dpth(root / entry["depth"])
        if depth.shape != (h, w):
            raise BadArgs(
                f"depth dims {depth.shape[1]}x{depth.shape[0]} do not match "
                f"image dims {w}x{h}"
            )

    objects: dict[str, ObjectAnnotation] = {}
    for name, raw in entry.get("objects", {}).items():
        mask = None
        if raw.get("mask") is not None:
            m = raw["mask"]
            if (m["width"], m["height"]) != (w, h):
                raise BadArgs(f"object {name!r}: mask dims do not match image")
            mask = rle_to_mask(m["runs"], m["width"], m["height"])
        grasp = gw = None
        if raw.get("grasp") is not None:
            grasp, gw = _grasp_from_json(raw["grasp"])
        objects[name] = ObjectAnnotation(
            points=_point_list(raw.get("points", []), f"object {name!r}"),
            mask=mask,
            box3d=_box3d_from_json(raw["box3d"]) if raw.get("box3d") else None,
            grasp=grasp,
            gripper_width=gw,
        )

    qa = _qa_from_json(entry["qa"]) if entry.get("qa") else None
    return SceneFixture(
        id=fid, image=image, depth=depth, focal_length_px=focal,
        objects=objects, qa=qa, noise_seed=int(entry.get("noise_seed", 0)),
    )


def fixture_to_doc(fx: SceneFixture) -> dict:
    """Self-contained JSON document (image/depth inlined base64) so a fixture
    can travel over HTTP without sibling files."""
    import base64
    import io

    buf = io.BytesIO()
    Image.fromarray(fx.image, mode="RGB").save(buf, format="PNG")
    doc: dict = {"id": fx.id, "image_png": base64.b64encode(buf.getvalue()).decode()}
    if fx.depth is not None:
        d = np.ascontiguousarray(fx.depth, dtype="<f4")
        doc["depth_f32"] = base64.b64encode(d.tobytes()).decode()
        doc["focal_length_px"] = float(fx.focal_length_px or 0.0)
    objs = {}
    for name, ann in fx.objects.items():
        raw: dict = {}
        if ann.points:
            raw["points"] = [list(p) for p in ann.points]
        if ann.mask is not None:
            h, w = ann.mask.shape
            raw["mask"] = {"width": w, "height": h, "runs": mask_to_rle(ann.mask)}
        if ann.box3d is not None:
            raw["box3d"] = _box3d_to_json(ann.box3d)
        if ann.grasp is not None:
            raw["grasp"] = _grasp_to_json(ann.grasp, ann.gripper_width)
        objs[name] = raw
    if objs:
        doc["objects"] = objs
    if fx.qa is not None:
        doc["qa"] = _qa_to_json(fx.qa)
    if fx.noise_seed:
        doc["noise_seed"] = fx.noise_seed
    return doc


def fixture_from_doc(doc: dict) -> SceneFixture:
    import base64
    import io

    image = np.asarray(
        Image.open(io.BytesIO(base64.b64decode(doc["image_png"]))).convert("RGB"),
        dtype=np.uint8,
    )
    h, w = image.shape[:2]
    depth = None
    focal = None
    if doc.get("depth_f32"):
        depth = np.frombuffer(base64.b64decode(doc["depth_f32"]), dtype="<f4")
        if depth.size != w * h:
            raise BadArgs("depth payload does not match image dims")
        depth = depth.reshape(h, w).copy()
        focal = float(doc.get("focal_length_px", 0.0))

    objects: dict[str, ObjectAnnotation] = {}
    for name, raw in doc.get("objects", {}).items():
        mask = None
        if raw.get("mask") is not None:
            m = raw["mask"]
            if (m["width"], m["height"]) != (w, h):
                raise BadArgs(f"object {name!r}: mask dims do not match image")
            mask = rle_to_mask(m["runs"], m["width"], m["height"])
        grasp = gw = None
        if raw.get("grasp") is not None:
            grasp, gw = _grasp_from_json(raw["grasp"])
        objects[name] = ObjectAnnotation(
            points=_point_list(raw.get("points", []), f"object {name!r}"),
            mask=mask,
            box3d=_box3d_from_json(raw["box3d"]) if raw.get("box3d") else None,
            grasp=grasp,
            gripper_width=gw,
        )
    qa = _qa_from_json(doc["qa"]) if doc.get("qa") else None
    return SceneFixture(
        id=doc["id"], image=image, depth=depth, focal_length_px=focal,
        objects=objects, qa=qa, noise_seed=int(doc.get("noise_seed", 0)),
    )


def load_dataset(path: str | Path) -> list[SceneFixture]:
    """Load and validate every fixture; collects all violations before failing."""
    root = Path(path)
    manifest = root / "manifest.jsonl"
    if not manifest.is_file():
        raise LoadError([f"missing manifest: {manifest}"])

    fixtures: list[SceneFixture] = []
    violations: list[str] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        label = f"manifest line {lineno}"
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            violations.append(f"{label}: invalid JSON ({exc})")
            continue
        label = f"fixture {entry.get('id', '?')!r} ({label})"
        try:
            fx = _fixture_from_entry(entry, root)
        except (BadArgs, KeyError, OSError, ValueError) as exc:
            violations.append(f"{label}: {exc}")
            continue
        if fx.id in seen_ids:
            violations.append(f"{label}: duplicate id")
            continue
        seen_ids.add(fx.id)
        fixtures.append(fx)

    if violations:
        raise LoadError(violations)
    return fixtures


def save_dataset(fixtures: list[SceneFixture], path: str | Path) -> None:
    """Write fixtures plus sibling image/depth files; inverse of load_dataset."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for fx in fixtures:
        image_name = f"{fx.id}.png"
        Image.fromarray(fx.image, mode="RGB").save(root / image_name)
        entry: dict = {"id": fx.id, "image": image_name}
        if fx.depth is not None:
            depth_name = f"{fx.id}.dpth"
            write_dpth(root / depth_name, fx.depth, fx.focal_length_px or 0.0)
            entry["depth"] = depth_name
        objs = {}
        for name, ann in fx.objects.items():
            raw: dict = {}
            if ann.points:
                raw["points"] = [list(p) for p in ann.points]
            if ann.mask is not None:
                h, w = ann.mask.shape
                raw["mask"] = {"width": w, "height": h, "runs": mask_to_rle(ann.mask)}
            if ann.box3d is not None:
                raw["box3d"] = _box3d_to_json(ann.box3d)
            if ann.grasp is not None:
                raw["grasp"] = _grasp_to_json(ann.grasp, ann.gripper_width)
            objs[name] = raw
        if objs:
            entry["objects"] = objs
        if fx.qa is not None:
            entry["qa"] = _qa_to_json(fx.qa)
        if fx.noise_seed:
            entry["noise_seed"] = fx.noise_seed
        lines.append(json.dumps(entry, sort_keys=True))
    (root / "manifest.jsonl").write_text("\n".join(lines) + "\n")
