"""Bit-exact binary wire formats for the sync protocol.

Little-endian fixed layouts, IEEE-754 binary32 floats. The header is 22
bytes: magic "ECAR", version, msg type, device id (u32), sequence (u64),
payload length (u32). Codecs are stateless and thread-safe.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from .graph import Keypoint, VirtualLine

MAGIC = b"ECAR"
VERSION = 1
HEADER = struct.Struct("<4sBBIQI")
HEADER_SIZE = HEADER.size  # 22

MSG_FRAME_UPLOAD = 1
MSG_LOCAL_GRAPH = 2
MSG_INTERACTION = 3
MSG_ACK = 4

OP_REGISTRATION = 0
OP_MANIPULATION = 1

_KEYPOINT = struct.Struct("<fffB32s")             # 45 bytes
_FRAME_HEAD = struct.Struct("<QQBH")              # 19 bytes
_POINT_ECAR = struct.Struct("<QffffffB")           # 33 bytes
_POINT_FULL = struct.Struct("<QffffffB32sfffff")   # 85 bytes
_PLANE = struct.Struct("<IBffff")                 # 21 bytes
_VO_HEAD = struct.Struct("<QfffIH")               # 28 bytes
_LINE = struct.Struct("<ffffff3Bffff")            # 43 bytes
_INTERACTION = struct.Struct("<QBfffH")           # 23 bytes


class DecodeError(ValueError):
    """Base decode failure; offset is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class BadMagic(DecodeError):
    pass


class UnknownVersion(DecodeError):
    pass


class TruncatedPayload(DecodeError):
    pass


class CountMismatch(DecodeError):
    pass


def _f32(x: float) -> float:
    """Round-trip a float through binary32 so encode(decode(m)) is exact."""
    return float(np.float32(x))


@dataclass
class FrameUpload:
    frame_id: int
    timestamp_us: int
    quality: int
    keypoints: List[Keypoint] = field(default_factory=list)

    def __post_init__(self):
        if self.quality not in range(10, 101, 10):
            raise ValueError("quality must be one of 10, 20, ..., 100")


@dataclass
class LocalGraphPoint:
    id: int
    position: Tuple[float, float, float]
    obs_u: float
    obs_v: float
    angle: float
    octave: int
    # present only in the full-map (baseline) variant
    descriptor: Optional[bytes] = None
    normal: Optional[Tuple[float, float, float]] = None
    dist_min: Optional[float] = None
    dist_max: Optional[float] = None


@dataclass
class LocalGraphPlane:
    id: int
    label: int
    normal: Tuple[float, float, float]
    d: float


@dataclass
class LocalGraphVO:
    id: int
    position: Tuple[float, float, float]
    version: int
    payload: bytes = b""


@dataclass
class LocalGraphDown:
    pose_rotation: Tuple[float, ...]  # 9 row-major entries
    pose_translation: Tuple[float, float, float]
    points: List[LocalGraphPoint] = field(default_factory=list)
    planes: List[LocalGraphPlane] = field(default_factory=list)
    vos: List[LocalGraphVO] = field(default_factory=list)
    full_map: bool = False


@dataclass
class InteractionMessage:
    vo_id: int  # 0 requests allocation (Registration only)
    op: int
    position: Tuple[float, float, float]
    payload: bytes = b""

    def __post_init__(self):
        if self.op not in (OP_REGISTRATION, OP_MANIPULATION):
            raise ValueError("op must be 0 (Registration) or 1 (Manipulation)")
        if self.op == OP_REGISTRATION and self.vo_id != 0:
            raise ValueError("Registration must carry vo_id 0")


@dataclass
class Ack:
    pass


Message = Union[FrameUpload, LocalGraphDown, InteractionMessage, Ack]


def encode_virtual_line(line: VirtualLine) -> bytes:
    return _LINE.pack(
        *(float(x) for x in line.start), *(float(x) for x in line.end),
        line.rgb[0], line.rgb[1], line.rgb[2], float(line.width),
        *(float(x) for x in line.normal))


def decode_virtual_line(payload: bytes) -> VirtualLine:
    if len(payload) != _LINE.size:
        raise ValueError(f"virtual line payload must be {_LINE.size} bytes")
    vals = _LINE.unpack(payload)
    return VirtualLine(start=vals[0:3], end=vals[3:6],
                       rgb=bytes(vals[6:9]), width=vals[9], normal=vals[10:13])


def _encode_payload(msg: Message) -> Tuple[int, bytes]:
    if isinstance(msg, FrameUpload):
        parts = [_FRAME_HEAD.pack(msg.frame_id, msg.timestamp_us,
                                  msg.quality, len(msg.keypoints))]
        for kp in msg.keypoints:
            parts.append(_KEYPOINT.pack(kp.u, kp.v, kp.angle, kp.octave,
                                        kp.descriptor))
        return MSG_FRAME_UPLOAD, b"".join(parts)
    if isinstance(msg, LocalGraphDown):
        parts = [struct.pack("<12f", *msg.pose_rotation, *msg.pose_translation)]
        parts.append(struct.pack("<H", len(msg.points)))
        for p in msg.points:
            if msg.full_map:
                parts.append(_POINT_FULL.pack(
                    p.id, *p.position, p.obs_u, p.obs_v, p.angle, p.octave,
                    p.descriptor or bytes(32), *(p.normal or (0.0, 0.0, 0.0)),
                    p.dist_min or 0.0, p.dist_max or 0.0))
            else:
                parts.append(_POINT_ECAR.pack(
                    p.id, *p.position, p.obs_u, p.obs_v, p.angle, p.octave))
        parts.append(struct.pack("<B", len(msg.planes)))
        for pl in msg.planes:
            parts.append(_PLANE.pack(pl.id, pl.label, *pl.normal, pl.d))
        parts.append(struct.pack("<H", len(msg.vos)))
        for vo in msg.vos:
            parts.append(_VO_HEAD.pack(vo.id, *vo.position, vo.version,
                                       len(vo.payload)))
            parts.append(vo.payload)
        return MSG_LOCAL_GRAPH, b"".join(parts)
    if isinstance(msg, InteractionMessage):
        return MSG_INTERACTION, _INTERACTION.pack(
            msg.vo_id, msg.op, *msg.position, len(msg.payload)) + msg.payload
    if isinstance(msg, Ack):
        return MSG_ACK, b""
    raise TypeError(f"cannot encode {type(msg).__name__}")


def encode(msg: Message, device_id: int = 0, seq: int = 0) -> bytes:
    msg_type, payload = _encode_payload(msg)
    return HEADER.pack(MAGIC, VERSION, msg_type, device_id, seq,
                       len(payload)) + payload


def message_size(msg: Message) -> int:
    """Wire size in bytes (header included) without encoding."""
    if isinstance(msg, FrameUpload):
        return HEADER_SIZE + _FRAME_HEAD.size + _KEYPOINT.size * len(msg.keypoints)
    if isinstance(msg, LocalGraphDown):
        point = _POINT_FULL.size if msg.full_map else _POINT_ECAR.size
        return (HEADER_SIZE + 48 + 2 + point * len(msg.points)
                + 1 + _PLANE.size * len(msg.planes)
                + 2 + sum(_VO_HEAD.size + len(v.payload) for v in msg.vos))
    if isinstance(msg, InteractionMessage):
        return HEADER_SIZE + _INTERACTION.size + len(msg.payload)
    if isinstance(msg, Ack):
        return HEADER_SIZE
    raise TypeError(f"cannot size {type(msg).__name__}")


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise TruncatedPayload("payload ends early", self.offset)
        out = self.data[self.offset:self.offset + n]
        self.offset += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def decode(data: bytes, full_map: bool = False):
    """Decode one framed message.

    Returns (message, device_id, seq). LocalGraphDown has two wire variants
    that share a message type; the caller signals the run mode via full_map.
    """
    if len(data) < HEADER_SIZE:
        raise TruncatedPayload("short header", len(data))
    magic, version, msg_type, device_id, seq, payload_len = HEADER.unpack(
        data[:HEADER_SIZE])
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise UnknownVersion(f"unsupported version {version}", 4)
    if len(data) < HEADER_SIZE + payload_len:
        raise TruncatedPayload("payload shorter than header claims", len(data))
    r = _Reader(data, HEADER_SIZE)
    end = HEADER_SIZE + payload_len

    if msg_type == MSG_FRAME_UPLOAD:
        frame_id, timestamp_us, quality, kp_count = r.unpack(_FRAME_HEAD)
        kps = []
        for _ in range(kp_count):
            u, v, angle, octave, desc = r.unpack(_KEYPOINT)
            kps.append(Keypoint(u, v, angle, octave, desc))
        msg: Message = FrameUpload(frame_id, timestamp_us, quality, kps)
    elif msg_type == MSG_LOCAL_GRAPH:
        vals = struct.unpack("<12f", r.take(48))
        (mp_count,) = r.unpack(struct.Struct("<H"))
        points = []
        for _ in range(mp_count):
            if full_map:
                (pid, x, y, z, ou, ov, ang, octv, desc,
                 nx, ny, nz, dmin, dmax) = r.unpack(_POINT_FULL)
                points.append(LocalGraphPoint(
                    pid, (x, y, z), ou, ov, ang, octv,
                    descriptor=desc, normal=(nx, ny, nz),
                    dist_min=dmin, dist_max=dmax))
            else:
                pid, x, y, z, ou, ov, ang, octv = r.unpack(_POINT_ECAR)
                points.append(LocalGraphPoint(pid, (x, y, z), ou, ov, ang, octv))
        (plane_count,) = r.unpack(struct.Struct("<B"))
        planes = []
        for _ in range(plane_count):
            pid, label, nx, ny, nz, d = r.unpack(_PLANE)
            planes.append(LocalGraphPlane(pid, label, (nx, ny, nz), d))
        (vo_count,) = r.unpack(struct.Struct("<H"))
        vos = []
        for _ in range(vo_count):
            vid, x, y, z, version_, plen = r.unpack(_VO_HEAD)
            vos.append(LocalGraphVO(vid, (x, y, z), version_, bytes(r.take(plen))))
        msg = LocalGraphDown(tuple(vals[:9]), tuple(vals[9:]), points, planes,
                             vos, full_map=full_map)
    elif msg_type == MSG_INTERACTION:
        vo_id, op, x, y, z, plen = r.unpack(_INTERACTION)
        payload = bytes(r.take(plen))
        if op not in (OP_REGISTRATION, OP_MANIPULATION):
            raise CountMismatch(f"invalid op {op}", HEADER_SIZE + 8)
        if op == OP_REGISTRATION and vo_id != 0:
            raise CountMismatch("Registration with nonzero vo_id", HEADER_SIZE)
        msg = InteractionMessage(vo_id, op, (x, y, z), payload)
    elif msg_type == MSG_ACK:
        msg = Ack()
    else:
        raise CountMismatch(f"unknown message type {msg_type}", 5)

    if r.offset != end:
        raise CountMismatch(
            f"payload length {payload_len} does not match content", r.offset)
    return msg, device_id, seq


def local_graph_from_pose(R: np.ndarray, t: np.ndarray, **kw) -> LocalGraphDown:
    """Build a LocalGraphDown with the pose pre-rounded to f32."""
    rot = tuple(_f32(x) for x in np.asarray(R, dtype=float).reshape(9))
    tr = tuple(_f32(x) for x in np.asarray(t, dtype=float).reshape(3))
    return LocalGraphDown(rot, tr, **kw)
