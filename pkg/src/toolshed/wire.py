"""Multimodal wire messages exchanged among policy client, router, tools, and harness.

Frame layout:
    [4 bytes  - magic "TSH1"]
    [4 bytes  - u32 LE header length]
    [N bytes  - header: canonical JSON of all non-binary fields]
    per attachment, in header order:
        [4 bytes - u32 LE name length][name utf-8]
        [4 bytes - u32 LE byte length][payload bytes]

The header JSON is canonical (sorted keys, no insignificant whitespace) so
hashes of traces are stable. All numeric attachment payloads are little-endian
row-major. Boolean masks travel RLE-compressed: alternating run lengths
starting with the count of false cells.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, NamedTuple, Union

import numpy as np

from .errors import BadArgs, DecodeError, EncodeError

MAGIC = b"TSH1"
DEFAULT_ATTACHMENT_CAP = 64 * 1024 * 1024


class Kind(str, Enum):
    TOOL_REQUEST = "ToolRequest"
    TOOL_RESULT = "ToolResult"
    SESSION_EVENT = "SessionEvent"
    CONTROL = "Control"


class Media(str, Enum):
    RASTER_IMAGE = "RasterImage"      # PNG bytes, RGB8
    FLOAT32_GRID = "Float32Grid"      # 4*width*height bytes, f32 LE row-major
    FLOAT32_POINTS_N3 = "Float32PointsN3"  # N*12 bytes, f32 LE rows of (x, y, z)
    BOOL_MASK_RLE = "BoolMaskRLE"     # u32 LE run lengths, alternating false/true
    OPAQUE = "Opaque"

    @property
    def has_dims(self) -> bool:
        return self in (Media.RASTER_IMAGE, Media.FLOAT32_GRID, Media.BOOL_MASK_RLE)


class Status(str, Enum):
    OK = "Ok"
    TOOL_ERROR = "ToolError"
    TIMEOUT = "Timeout"
    UNKNOWN_TOOL = "UnknownTool"
    BAD_ARGS = "BadArgs"


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class VariableRef:
    """Reference to a session variable; serialized with a leading "$"."""

    name: str


# Scalars, normalized 2D points, lists thereof, or session-variable references.
ArgValue = Union[bool, int, float, str, Point2, VariableRef, list]


@dataclass
class Attachment:
    name: str
    media: Media
    data: bytes
    width: int = 0
    height: int = 0

    def validate(self) -> None:
        if not self.name:
            raise EncodeError("attachment name empty")
        if self.media.has_dims and (self.width <= 0 or self.height <= 0):
            raise EncodeError(f"attachment {self.name!r}: {self.media.value} requires positive dims")
        if self.media is Media.FLOAT32_GRID and len(self.data) != 4 * self.width * self.height:
            raise EncodeError(
                f"attachment {self.name!r}: Float32Grid needs {4 * self.width * self.height} bytes, "
                f"got {len(self.data)}"
            )
        if self.media is Media.FLOAT32_POINTS_N3 and len(self.data) % 12 != 0:
            raise EncodeError(f"attachment {self.name!r}: Float32PointsN3 length not divisible by 12")
        if self.media is Media.BOOL_MASK_RLE:
            if len(self.data) % 4 != 0:
                raise EncodeError(f"attachment {self.name!r}: RLE payload not u32-aligned")
            runs = np.frombuffer(self.data, dtype="<u4")
            if int(runs.sum()) != self.width * self.height:
                raise EncodeError(
                    f"attachment {self.name!r}: RLE runs sum to {int(runs.sum())}, "
                    f"expected {self.width * self.height}"
                )


@dataclass
class ToolRequest:
    tool: str
    method: str
    args: dict[str, ArgValue] = field(default_factory=dict)
    timeout_ms: int = 30_000

    def validate(self) -> None:
        if not self.tool or not self.method:
            raise EncodeError("tool and method must be nonempty")
        if self.timeout_ms <= 0:
            raise EncodeError("timeout_ms must be positive")


@dataclass
class ToolResult:
    status: Status
    text: str = ""
    image: Attachment | None = None
    variables: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.status is not Status.OK and self.variables:
            raise EncodeError(f"status {self.status.value} forbids variables")

    @property
    def is_ok(self) -> bool:
        return self.status is Status.OK

    @classmethod
    def ok(cls, text: str, image: Attachment | None = None,
           variables: dict[str, Any] | None = None) -> "ToolResult":
        return cls(Status.OK, text=text, image=image, variables=variables or {})

    @classmethod
    def fail(cls, status: Status, text: str) -> "ToolResult":
        return cls(status, text=text)


@dataclass
class SessionEvent:
    event: str
    payload: Any = None


@dataclass
class Control:
    op: str
    payload: Any = None


Body = Union[ToolRequest, ToolResult, SessionEvent, Control]

_BODY_KIND = {
    ToolRequest: Kind.TOOL_REQUEST,
    ToolResult: Kind.TOOL_RESULT,
    SessionEvent: Kind.SESSION_EVENT,
    Control: Kind.CONTROL,
}


@dataclass
class Envelope:
    kind: Kind
    session_id: str
    seq: int
    body: Body
    attachments: list[Attachment] = field(default_factory=list)

    @classmethod
    def wrap(cls, session_id: str, seq: int, body: Body,
             attachments: list[Attachment] | None = None) -> "Envelope":
        return cls(_BODY_KIND[type(body)], session_id, seq, body, attachments or [])


# ---------------------------------------------------------------------------
# RLE masks

def mask_to_rle(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, alternating false/true, first run counts false."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate(([0], boundaries, [flat.size]))).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_to_mask(runs: list[int], width: int, height: int) -> np.ndarray:
    total = sum(runs)
    if total != width * height:
        raise DecodeError(f"RLE runs sum to {total}, expected {width * height}")
    if any(r < 0 for r in runs) or any(r == 0 for r in runs[1:]):
        raise DecodeError("RLE runs must be positive after the leading false count")
    flat = np.zeros(width * height, dtype=bool)
    pos, value = 0, False
    for run in runs:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    return flat.reshape(height, width)


# ---------------------------------------------------------------------------
# numpy / PIL bridges

def grid_attachment(name: str, arr: np.ndarray) -> Attachment:
    a = np.ascontiguousarray(arr, dtype="<f4")
    if a.ndim != 2:
        raise BadArgs("Float32Grid requires a 2-D array")
    h, w = a.shape
    return Attachment(name, Media.FLOAT32_GRID, a.tobytes(), width=w, height=h)


def grid_to_array(att: Attachment) -> np.ndarray:
    return np.frombuffer(att.data, dtype="<f4").reshape(att.height, att.width).copy()


def points_attachment(name: str, pts: np.ndarray) -> Attachment:
    a = np.ascontiguousarray(pts, dtype="<f4")
    if a.ndim != 2 or a.shape[1] != 3:
        raise BadArgs("Float32PointsN3 requires an N x 3 array")
    return Attachment(name, Media.FLOAT32_POINTS_N3, a.tobytes())


def points_to_array(att: Attachment) -> np.ndarray:
    return np.frombuffer(att.data, dtype="<f4").reshape(-1, 3).copy()


def mask_attachment(name: str, mask: np.ndarray) -> Attachment:
    m = np.asarray(mask, dtype=bool)
    runs = np.array(mask_to_rle(m), dtype="<u4")
    h, w = m.shape
    return Attachment(name, Media.BOOL_MASK_RLE, runs.tobytes(), width=w, height=h)


def mask_to_array(att: Attachment) -> np.ndarray:
    runs = np.frombuffer(att.data, dtype="<u4").tolist()
    return rle_to_mask([int(r) for r in runs], att.width, att.height)


def image_attachment(name: str, rgb: np.ndarray) -> Attachment:
    from PIL import Image

    a = np.ascontiguousarray(rgb, dtype=np.uint8)
    if a.ndim != 3 or a.shape[2] != 3:
        raise BadArgs("RasterImage requires an H x W x 3 uint8 array")
    buf = io.BytesIO()
    Image.fromarray(a, mode="RGB").save(buf, format="PNG")
    h, w = a.shape[:2]
    return Attachment(name, Media.RASTER_IMAGE, buf.getvalue(), width=w, height=h)


def image_to_array(att: Attachment) -> np.ndarray:
    from PIL import Image

    img = Image.open(io.BytesIO(att.data)).convert("RGB")
    return np.asarray(img, dtype=np.uint8)


def attachment_value(att: Attachment) -> Any:
    """Decode an attachment into its natural numpy form."""
    if att.media is Media.FLOAT32_GRID:
        return grid_to_array(att)
    if att.media is Media.FLOAT32_POINTS_N3:
        return points_to_array(att)
    if att.media is Media.BOOL_MASK_RLE:
        return mask_to_array(att)
    if att.media is Media.RASTER_IMAGE:
        return image_to_array(att)
    return att.data


# ---------------------------------------------------------------------------
# argument (de)serialization

def _encode_arg(v: ArgValue) -> Any:
    if isinstance(v, VariableRef):
        return "$" + v.name
    if isinstance(v, Point2):
        return {"pt": [float(v.x), float(v.y)]}
    if isinstance(v, bool) or isinstance(v, (int, float)):
        return v
    if isinstance(v, str):
        if v.startswith("$"):
            raise EncodeError(f"literal string {v!r} starts with the variable sigil; use VariableRef")
        return v
    if isinstance(v, (list, tuple)):
        return [_encode_arg(x) for x in v]
    raise EncodeError(f"unsupported arg value of type {type(v).__name__}")


def _decode_arg(v: Any) -> ArgValue:
    if isinstance(v, str):
        return VariableRef(v[1:]) if v.startswith("$") else v
    if isinstance(v, dict):
        if set(v) == {"pt"}:
            x, y = v["pt"]
            return Point2(float(x), float(y))
        raise DecodeError(f"unknown tagged arg value {sorted(v)}")
    if isinstance(v, list):
        return [_decode_arg(x) for x in v]
    return v


def _validate_arg(name: str, v: ArgValue) -> None:
    if isinstance(v, Point2):
        if not (0.0 <= v.x <= 1.0 and 0.0 <= v.y <= 1.0):
            raise EncodeError(f"arg {name!r}: normalized coordinates must lie in [0,1], got {v}")
    elif isinstance(v, (list, tuple)):
        for item in v:
            _validate_arg(name, item)


def args_from_json(obj: dict[str, Any]) -> dict[str, ArgValue]:
    """Convert a policy's plain-JSON arguments map into ArgValues.

    Strings with a leading "$" become VariableRefs; 2-element numeric arrays
    become Point2.
    """
    def conv(v: Any) -> ArgValue:
        if isinstance(v, str):
            return VariableRef(v[1:]) if v.startswith("$") else v
        if isinstance(v, list):
            if len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
                return Point2(float(v[0]), float(v[1]))
            return [conv(x) for x in v]
        return v

    return {k: conv(v) for k, v in obj.items()}


# ---------------------------------------------------------------------------
# variable values: scalars / points / lists, or attachment references

def _encode_variable(name: str, v: Any, att_names: set[str]) -> Any:
    if isinstance(v, Attachment):
        return {"att": v.name}
    return _encode_arg(v)


def _decode_variable(v: Any, atts: dict[str, Attachment]) -> Any:
    if isinstance(v, dict) and set(v) == {"att"}:
        if v["att"] not in atts:
            raise DecodeError(f"body references unknown attachment {v['att']!r}")
        return atts[v["att"]]
    return _decode_arg(v)


# ---------------------------------------------------------------------------
# body (de)serialization

def _encode_body(body: Body) -> dict[str, Any]:
    if isinstance(body, ToolRequest):
        body.validate()
        if len(set(body.args)) != len(body.args):
            raise EncodeError("duplicate arg names")
        for k, v in body.args.items():
            _validate_arg(k, v)
        return {
            "args": {k: _encode_arg(v) for k, v in body.args.items()},
            "method": body.method,
            "timeout_ms": body.timeout_ms,
            "tool": body.tool,
        }
    if isinstance(body, ToolResult):
        body.validate()
        return {
            "image": {"att": body.image.name} if body.image is not None else None,
            "status": body.status.value,
            "text": body.text,
            "variables": {k: _encode_variable(k, v, set()) for k, v in body.variables.items()},
        }
    if isinstance(body, SessionEvent):
        return {"event": body.event, "payload": body.payload}
    if isinstance(body, Control):
        return {"op": body.op, "payload": body.payload}
    raise EncodeError(f"unsupported body type {type(body).__name__}")


def _decode_body(kind: Kind, obj: dict[str, Any], atts: dict[str, Attachment]) -> Body:
    try:
        if kind is Kind.TOOL_REQUEST:
            return ToolRequest(
                tool=obj["tool"],
                method=obj["method"],
                args={k: _decode_arg(v) for k, v in obj["args"].items()},
                timeout_ms=obj["timeout_ms"],
            )
        if kind is Kind.TOOL_RESULT:
            image = None
            if obj["image"] is not None:
                name = obj["image"]["att"]
                if name not in atts:
                    raise DecodeError(f"body references unknown attachment {name!r}")
                image = atts[name]
            return ToolResult(
                status=Status(obj["status"]),
                text=obj["text"],
                image=image,
                variables={k: _decode_variable(v, atts) for k, v in obj["variables"].items()},
            )
        if kind is Kind.SESSION_EVENT:
            return SessionEvent(event=obj["event"], payload=obj["payload"])
        return Control(op=obj["op"], payload=obj["payload"])
    except KeyError as exc:
        raise DecodeError(f"body missing field {exc}") from exc


def _referenced_attachments(body: Body) -> list[str]:
    names: list[str] = []
    if isinstance(body, ToolResult):
        if body.image is not None:
            names.append(body.image.name)
        for v in body.variables.values():
            if isinstance(v, Attachment):
                names.append(v.name)
    return names


# ---------------------------------------------------------------------------
# framing

def encode_envelope(env: Envelope, attachment_cap: int = DEFAULT_ATTACHMENT_CAP) -> bytes:
    if env.seq < 0:
        raise EncodeError("seq must be nonnegative")
    if _BODY_KIND[type(env.body)] is not env.kind:
        raise EncodeError(f"kind {env.kind.value} does not match body {type(env.body).__name__}")

    att_names = [a.name for a in env.attachments]
    if len(set(att_names)) != len(att_names):
        raise EncodeError("duplicate attachment names")
    referenced = _referenced_attachments(env.body)
    if sorted(set(referenced)) != sorted(att_names):
        raise EncodeError(
            f"attachment set {sorted(att_names)} must equal body references {sorted(set(referenced))}"
        )
    for att in env.attachments:
        att.validate()
        if len(att.data) > attachment_cap:
            raise EncodeError(f"attachment {att.name!r} exceeds cap ({len(att.data)} > {attachment_cap})")

    header = {
        "attachments": [
            {"height": a.height, "media": a.media.value, "name": a.name, "width": a.width}
            for a in env.attachments
        ],
        "body": _encode_body(env.body),
        "kind": env.kind.value,
        "seq": env.seq,
        "session_id": env.session_id,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()

    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", len(header_bytes))
    out += header_bytes
    for att in env.attachments:
        name = att.name.encode()
        out += struct.pack("<I", len(name)) + name
        out += struct.pack("<I", len(att.data)) + att.data
    return bytes(out)


def decode_envelope_prefix(data: bytes, offset: int = 0) -> tuple[Envelope, int]:
    """Decode one frame starting at offset; returns the envelope and the next offset."""
    pos = offset
    if len(data) - pos < 8:
        raise DecodeError("truncated frame header", pos)
    if data[pos:pos + 4] != MAGIC:
        raise DecodeError(f"bad magic {data[pos:pos + 4]!r}", pos)
    (header_len,) = struct.unpack_from("<I", data, pos + 4)
    pos += 8
    if len(data) - pos < header_len:
        raise DecodeError("truncated header", pos)
    try:
        header = json.loads(data[pos:pos + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"header is not valid JSON: {exc}", pos) from exc
    pos += header_len

    try:
        kind = Kind(header["kind"])
        seq = header["seq"]
        session_id = header["session_id"]
        att_meta = header["attachments"]
    except (KeyError, ValueError) as exc:
        raise DecodeError(f"malformed header: {exc}", offset) from exc
    if not isinstance(seq, int) or seq < 0:
        raise DecodeError("seq must be a nonnegative integer", offset)

    attachments: list[Attachment] = []
    for meta in att_meta:
        if len(data) - pos < 4:
            raise DecodeError("truncated attachment name length", pos)
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if len(data) - pos < name_len:
            raise DecodeError("truncated attachment name", pos)
        name = data[pos:pos + name_len].decode()
        pos += name_len
        if name != meta.get("name"):
            raise DecodeError(f"attachment name {name!r} does not match header order", pos)
        if len(data) - pos < 4:
            raise DecodeError("truncated attachment length", pos)
        (blob_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if len(data) - pos < blob_len:
            raise DecodeError(f"truncated attachment {name!r}", pos)
        att = Attachment(
            name=name,
            media=Media(meta["media"]),
            data=data[pos:pos + blob_len],
            width=meta.get("width", 0),
            height=meta.get("height", 0),
        )
        pos += blob_len
        try:
            att.validate()
        except EncodeError as exc:
            raise DecodeError(str(exc), pos) from exc
        attachments.append(att)

    names = [a.name for a in attachments]
    if len(set(names)) != len(names):
        raise DecodeError("duplicate attachment names", offset)
    body = _decode_body(kind, header["body"], {a.name: a for a in attachments})
    referenced = set(_referenced_attachments(body))
    if referenced != set(names):
        raise DecodeError(
            f"attachment set {sorted(names)} does not equal body references {sorted(referenced)}",
            offset,
        )
    return Envelope(kind, session_id, seq, body, attachments), pos


def decode_envelope(data: bytes) -> Envelope:
    env, pos = decode_envelope_prefix(data)
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes after frame", pos)
    return env


def iter_envelopes(data: bytes):
    """Decode a concatenation of frames in order."""
    pos = 0
    while pos < len(data):
        env, pos = decode_envelope_prefix(data, pos)
        yield env


# ---------------------------------------------------------------------------
# variable resolution

def resolve_arguments(args: dict[str, ArgValue], store: dict[str, Any]) -> dict[str, Any]:
    """Replace every VariableRef with its stored value; literals pass through.

    The store is a read-only snapshot owned by the registry. Unknown names
    raise BadArgs naming the missing variable; dispatch turns that into a
    BadArgs ToolResult rather than crashing.
    """
    def res(v: Any) -> Any:
        if isinstance(v, VariableRef):
            if v.name not in store:
                raise BadArgs(v.name)
            return store[v.name]
        if isinstance(v, list):
            return [res(x) for x in v]
        return v

    return {k: res(v) for k, v in args.items()}
