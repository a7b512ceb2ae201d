"""Length-prefixed binary messages shared by the env and parameter servers.

Frame: u32 little-endian length of (tag + payload), u8 tag, payload.

Payloads (little-endian):

=========== ======================================================================
HELLO       u16 height, u16 width, u16 track, u16 checkpoints, f32 track length
RESET       u16 checkpoint
OBS         u32 episode, u32 step, u8 frame[H*W*3], f32 speed, f32 alpha, f32 d,
            f32 road width, f32 progress, u8 flags
ACT         u8 action class
GET_PARAMS  empty
PARAMS      u64 version, u32 count, f32 weights[count]
PUSH_GRADS  u64 base version, u32 count, f32 gradients[count]
ACK         u64 version
NACK        utf-8 diagnostic
BYE         empty
=========== ======================================================================

OBS flags: bit0 hit, bit1 crash, bit2 checkpoint passed, bits 3-4 crash reason
(1 stalled, 2 wrong way, 3 off road), bit5 end of stage reached.
"""
from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

MAX_PAYLOAD = 16 * 1024 * 1024
LENGTH = struct.Struct("<I")


class ProtocolError(Exception):
    """Malformed, oversized or out-of-order message; the connection must close."""


class Tag(enum.IntEnum):
    HELLO = 1
    RESET = 2
    OBS = 3
    ACT = 4
    GET_PARAMS = 5
    PARAMS = 6
    PUSH_GRADS = 7
    ACK = 8
    BYE = 9
    NACK = 10


FLAG_HIT = 0x01
FLAG_CRASH = 0x02
FLAG_CHECKPOINT = 0x04
FLAG_FINISHED = 0x20
CRASH_SHIFT = 3


@dataclass(frozen=True)
class Hello:
    height: int
    width: int
    track: int = 0
    checkpoints: int = 0
    track_length: float = 0.0


@dataclass(frozen=True)
class Reset:
    checkpoint: int


@dataclass(eq=False)
class ObsPayload:
    episode: int
    step: int
    frame: np.ndarray          # uint8 [H, W, 3]
    speed: float
    alpha: float
    d: float
    road_width: float
    progress: float
    flags: int = 0

    def __eq__(self, other):
        if not isinstance(other, ObsPayload):
            return NotImplemented
        return (self.episode, self.step, self.speed, self.alpha, self.d, self.road_width, self.progress,
                self.flags) == (other.episode, other.step, other.speed, other.alpha, other.d, other.road_width,
                                other.progress, other.flags) and np.array_equal(self.frame, other.frame)

    @property
    def hit(self) -> bool:
        return bool(self.flags & FLAG_HIT)

    @property
    def crash(self) -> bool:
        return bool(self.flags & FLAG_CRASH)

    @property
    def checkpoint(self) -> bool:
        return bool(self.flags & FLAG_CHECKPOINT)

    @property
    def finished(self) -> bool:
        return bool(self.flags & FLAG_FINISHED)

    @property
    def crash_code(self) -> int:
        return (self.flags >> CRASH_SHIFT) & 0x3

    @property
    def terminal(self) -> bool:
        return self.crash or self.finished


@dataclass(frozen=True)
class Act:
    action: int


@dataclass(frozen=True)
class GetParams:
    pass


@dataclass(eq=False)
class Params:
    version: int
    weights: np.ndarray

    def __eq__(self, other):
        return isinstance(other, Params) and self.version == other.version and np.array_equal(self.weights, other.weights)


@dataclass(eq=False)
class PushGrads:
    base_version: int
    grads: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, PushGrads) and self.base_version == other.base_version
                and np.array_equal(self.grads, other.grads))


@dataclass(frozen=True)
class Ack:
    version: int


@dataclass(frozen=True)
class Nack:
    reason: str


@dataclass(frozen=True)
class Bye:
    pass


Message = Union[Hello, Reset, ObsPayload, Act, GetParams, Params, PushGrads, Ack, Nack, Bye]

_HELLO = struct.Struct("<HHHHf")
_OBS_HEAD = struct.Struct("<II")
_OBS_TAIL = struct.Struct("<fffffB")
_VEC_HEAD = struct.Struct("<QI")


def _f32(x: float) -> float:
    return float(np.float32(x))


def obs_payload_size(height: int, width: int) -> int:
    return _OBS_HEAD.size + height * width * 3 + _OBS_TAIL.size


def encode_payload(msg: Message) -> tuple[int, bytes]:
    if isinstance(msg, Hello):
        return Tag.HELLO, _HELLO.pack(msg.height, msg.width, msg.track, msg.checkpoints, msg.track_length)
    if isinstance(msg, Reset):
        return Tag.RESET, struct.pack("<H", msg.checkpoint)
    if isinstance(msg, ObsPayload):
        frame = np.ascontiguousarray(msg.frame, dtype=np.uint8)
        if frame.ndim != 3 or frame.shape[2] != 3:
            raise ProtocolError(f"OBS frame must be [H, W, 3] uint8, got {frame.shape}")
        return Tag.OBS, (_OBS_HEAD.pack(msg.episode, msg.step) + frame.tobytes()
                         + _OBS_TAIL.pack(msg.speed, msg.alpha, msg.d, msg.road_width, msg.progress, msg.flags))
    if isinstance(msg, Act):
        return Tag.ACT, struct.pack("<B", msg.action)
    if isinstance(msg, GetParams):
        return Tag.GET_PARAMS, b""
    if isinstance(msg, Params):
        w = np.ascontiguousarray(msg.weights, dtype="<f4")
        return Tag.PARAMS, _VEC_HEAD.pack(msg.version, w.size) + w.tobytes()
    if isinstance(msg, PushGrads):
        g = np.ascontiguousarray(msg.grads, dtype="<f4")
        return Tag.PUSH_GRADS, _VEC_HEAD.pack(msg.base_version, g.size) + g.tobytes()
    if isinstance(msg, Ack):
        return Tag.ACK, struct.pack("<Q", msg.version)
    if isinstance(msg, Nack):
        return Tag.NACK, msg.reason.encode("utf-8")
    if isinstance(msg, Bye):
        return Tag.BYE, b""
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def encode(msg: Message) -> bytes:
    try:
        tag, payload = encode_payload(msg)
    except struct.error as exc:
        raise ProtocolError(f"field out of range in {type(msg).__name__}: {exc}") from exc
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds the 16 MiB limit")
    return LENGTH.pack(len(payload) + 1) + bytes([tag]) + payload


def _expect(payload: bytes, size: int, name: str) -> None:
    if len(payload) != size:
        raise ProtocolError(f"{name} payload must be {size} bytes, got {len(payload)}")


def decode_payload(tag: int, payload: bytes, frame_shape: tuple[int, int] | None = None) -> Message:
    """Decode one payload.  OBS needs the negotiated (height, width)."""
    try:
        tag = Tag(tag)
    except ValueError:
        raise ProtocolError(f"unknown message tag {tag}") from None
    if tag is Tag.HELLO:
        _expect(payload, _HELLO.size, "HELLO")
        return Hello(*_HELLO.unpack(payload))
    if tag is Tag.RESET:
        _expect(payload, 2, "RESET")
        return Reset(*struct.unpack("<H", payload))
    if tag is Tag.OBS:
        if frame_shape is None:
            raise ProtocolError("OBS received before frame size was negotiated")
        h, w = frame_shape
        _expect(payload, obs_payload_size(h, w), "OBS")
        episode, step = _OBS_HEAD.unpack_from(payload, 0)
        n = h * w * 3
        frame = np.frombuffer(payload, dtype=np.uint8, count=n, offset=_OBS_HEAD.size).reshape(h, w, 3).copy()
        speed, alpha, d, rw, progress, flags = _OBS_TAIL.unpack_from(payload, _OBS_HEAD.size + n)
        return ObsPayload(episode, step, frame, speed, alpha, d, rw, progress, flags)
    if tag is Tag.ACT:
        _expect(payload, 1, "ACT")
        return Act(payload[0])
    if tag in (Tag.GET_PARAMS, Tag.BYE):
        _expect(payload, 0, tag.name)
        return GetParams() if tag is Tag.GET_PARAMS else Bye()
    if tag in (Tag.PARAMS, Tag.PUSH_GRADS):
        if len(payload) < _VEC_HEAD.size:
            raise ProtocolError(f"{tag.name} payload truncated")
        version, count = _VEC_HEAD.unpack_from(payload, 0)
        _expect(payload, _VEC_HEAD.size + 4 * count, tag.name)
        vec = np.frombuffer(payload, dtype="<f4", count=count, offset=_VEC_HEAD.size).astype(np.float32)
        return Params(version, vec) if tag is Tag.PARAMS else PushGrads(version, vec)
    if tag is Tag.ACK:
        _expect(payload, 8, "ACK")
        return Ack(*struct.unpack("<Q", payload))
    if tag is Tag.NACK:
        return Nack(payload.decode("utf-8", errors="replace"))
    raise ProtocolError(f"unhandled tag {tag}")


def decode(data: bytes, frame_shape: tuple[int, int] | None = None) -> Message:
    """Decode exactly one framed message."""
    if len(data) < LENGTH.size + 1:
        raise ProtocolError("frame truncated")
    (length,) = LENGTH.unpack_from(data, 0)
    check_length(length)
    if len(data) != LENGTH.size + length:
        raise ProtocolError(f"frame declares {length} bytes but carries {len(data) - LENGTH.size}")
    return decode_payload(data[LENGTH.size], data[LENGTH.size + 1:], frame_shape)


def check_length(length: int) -> None:
    if length < 1:
        raise ProtocolError("frame length must cover the tag byte")
    if length - 1 > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload of {length - 1} bytes exceeds the 16 MiB limit")


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            raise ConnectionError("peer closed the connection")
        got += k
    return bytes(buf)


def read_message(sock: socket.socket, frame_shape: tuple[int, int] | None = None) -> Message:
    (length,) = LENGTH.unpack(_recv_exact(sock, LENGTH.size))
    check_length(length)
    body = _recv_exact(sock, length)
    return decode_payload(body[0], body[1:], frame_shape)


def write_message(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode(msg))
