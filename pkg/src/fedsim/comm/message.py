"""Messages and the FML1 binary frame codec.

Frame layout (all integers little-endian)::

    magic        4 bytes  b"FML1"
    msg_type     u32
    sender_id    u32
    receiver_id  u32
    param_count  u32
    param_count x:
        key_len  u32, key UTF-8 bytes
        tag      u8   (1 float64, 2 int64, 3 float64 vector, 4 text, 5 bytes)
        value    float64/int64: 8 bytes
                 vector: u32 count + count * 8 bytes
                 text/bytes: u32 length + payload

On a stream each frame is preceded by a u32 frame length (see
:func:`write_frame` / :func:`read_frame`).
"""

from __future__ import annotations

import struct
from typing import Any, Iterable, Mapping

import numpy as np

from fedsim.errors import MalformedFrameError

MAGIC = b"FML1"
U32_MAX = 0xFFFFFFFF

TAG_FLOAT64 = 1
TAG_INT64 = 2
TAG_VECTOR = 3
TAG_TEXT = 4
TAG_BYTES = 5

_HEADER = struct.Struct("<4sIIII")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")
_I64 = struct.Struct("<q")


def _normalize_value(key: str, value: Any):
    if isinstance(value, (bool, np.bool_)):
        raise TypeError(f"param {key!r}: booleans have no wire type; use an int")
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, (int, np.integer)):
        value = int(value)
        if not -(2**63) <= value < 2**63:
            raise ValueError(f"param {key!r}: {value} does not fit in int64")
        return value
    if isinstance(value, str):
        return value
    if isinstance(value, (bytes, bytearray, memoryview)):
        return bytes(value)
    arr = np.asarray(value)
    if arr.dtype.kind not in "fiu":
        raise TypeError(f"param {key!r}: unsupported value type {type(value).__name__}")
    arr = np.array(arr, dtype=np.float64).reshape(-1)
    if arr.size > U32_MAX:
        raise ValueError(f"param {key!r}: vector too long")
    arr.setflags(write=False)
    return arr


def _same_value(a, b) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and a.tobytes() == b.tobytes()
    if isinstance(a, float):
        return _F64.pack(a) == _F64.pack(b)
    return a == b


class Message:
    """A routable, typed unit of communication.

    ``params`` keeps insertion order. Vectors are stored as read-only float64
    arrays, so a payload cannot change after it has been handed to a transport.
    """

    __slots__ = ("msg_type", "sender_id", "receiver_id", "params")

    def __init__(
        self,
        msg_type: int,
        sender_id: int,
        receiver_id: int,
        params: Mapping[str, Any] | Iterable[tuple[str, Any]] = (),
    ):
        for name, v in (("msg_type", msg_type), ("sender_id", sender_id), ("receiver_id", receiver_id)):
            if not 0 <= int(v) <= U32_MAX:
                raise ValueError(f"{name} must fit in u32, got {v}")
        self.msg_type = int(msg_type)
        self.sender_id = int(sender_id)
        self.receiver_id = int(receiver_id)
        items = params.items() if isinstance(params, Mapping) else params
        self.params: dict[str, Any] = {}
        for key, value in items:
            if not isinstance(key, str):
                raise TypeError(f"param keys must be str, got {key!r}")
            if key in self.params:
                raise ValueError(f"duplicate param key {key!r}")
            self.params[key] = _normalize_value(key, value)

    def __getitem__(self, key: str):
        return self.params[key]

    def get(self, key: str, default=None):
        return self.params.get(key, default)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Message):
            return NotImplemented
        if (self.msg_type, self.sender_id, self.receiver_id) != (
            other.msg_type,
            other.sender_id,
            other.receiver_id,
        ):
            return False
        if list(self.params) != list(other.params):
            return False
        return all(_same_value(v, other.params[k]) for k, v in self.params.items())

    __hash__ = None

    def __repr__(self) -> str:
        keys = ", ".join(self.params)
        return f"Message(type={self.msg_type}, {self.sender_id}->{self.receiver_id}, [{keys}])"


def encode_message(msg: Message) -> bytes:
    """Serialize ``msg`` to one FML1 frame (without the stream length prefix)."""
    out = [_HEADER.pack(MAGIC, msg.msg_type, msg.sender_id, msg.receiver_id, len(msg.params))]
    for key, value in msg.params.items():
        kb = key.encode("utf-8")
        out.append(_U32.pack(len(kb)))
        out.append(kb)
        if isinstance(value, float):
            out.append(bytes([TAG_FLOAT64]) + _F64.pack(value))
        elif isinstance(value, int):
            out.append(bytes([TAG_INT64]) + _I64.pack(value))
        elif isinstance(value, np.ndarray):
            out.append(bytes([TAG_VECTOR]) + _U32.pack(value.size))
            out.append(value.astype("<f8", copy=False).tobytes())
        elif isinstance(value, str):
            vb = value.encode("utf-8")
            out.append(bytes([TAG_TEXT]) + _U32.pack(len(vb)) + vb)
        else:
            out.append(bytes([TAG_BYTES]) + _U32.pack(len(value)) + value)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise MalformedFrameError(f"truncated frame: need {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def decode_message(data: bytes) -> Message:
    """Parse one FML1 frame. Raises :class:`MalformedFrameError` on any defect."""
    r = _Reader(data)
    magic, msg_type, sender, receiver, count = _HEADER.unpack(r.take(_HEADER.size))
    if magic != MAGIC:
        raise MalformedFrameError(f"bad magic {bytes(magic)!r}")
    params: dict[str, Any] = {}
    for _ in range(count):
        try:
            key = bytes(r.take(r.u32())).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrameError(f"key is not valid UTF-8: {exc}") from None
        if key in params:
            raise MalformedFrameError(f"duplicate key {key!r}")
        tag = r.take(1)[0]
        if tag == TAG_FLOAT64:
            value = _F64.unpack(r.take(8))[0]
        elif tag == TAG_INT64:
            value = _I64.unpack(r.take(8))[0]
        elif tag == TAG_VECTOR:
            n = r.u32()
            value = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64)
        elif tag == TAG_TEXT:
            try:
                value = bytes(r.take(r.u32())).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise MalformedFrameError(f"text value is not valid UTF-8: {exc}") from None
        elif tag == TAG_BYTES:
            value = bytes(r.take(r.u32()))
        else:
            raise MalformedFrameError(f"bad value tag {tag} for key {key!r}")
        params[key] = value
    if r.pos != len(r.data):
        raise MalformedFrameError(f"{len(r.data) - r.pos} trailing bytes after last param")
    return Message(msg_type, sender, receiver, params)


def write_frame(sock, frame: bytes) -> None:
    sock.sendall(_U32.pack(len(frame)) + frame)


def _recv_exact(sock, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise MalformedFrameError("connection closed mid-frame")
            return None
        buf += chunk
    return bytes(buf)


def read_frame(sock) -> bytes | None:
    """Read one length-prefixed frame; ``None`` on a clean EOF between frames."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (length,) = _U32.unpack(head)
    body = _recv_exact(sock, length)
    if body is None:
        raise MalformedFrameError("connection closed after length prefix")
    return body
