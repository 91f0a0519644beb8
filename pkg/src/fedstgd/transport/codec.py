"""Binary frame codec.

Frame layout (all integers and floats little-endian)::

    magic     4 bytes  b"FSTG"
    version   u8       1
    msg_type  u8
    round     u32
    timestep  u32
    k         u8
    client_id u16
    n_tensors u16
    tensors   n_tensors x (rank u8, dims u32[rank], values f64[prod(dims)])
    crc32     u32      over every preceding byte

On a stream each frame is preceded by its length as a u32.
"""
import enum
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import BadCRC, BadMagic, BadVersion, PayloadMismatch, Truncated

MAGIC = b"FSTG"
VERSION = 1
_HEADER = struct.Struct("<4sBBIIBHH")
HEADER_SIZE = _HEADER.size
CRC_SIZE = 4
LENGTH_PREFIX = 4
MAX_RANK = 3


class MsgType(enum.IntEnum):
    P_SHARE = 1
    Q_SHARE = 2
    P_SUM = 3
    Q_SUM = 4
    PARAM_UP = 5
    PARAM_DOWN = 6
    STATS = 7


@dataclass(eq=False)
class ProtocolMessage:
    msg_type: MsgType
    round: int = 0
    timestep: int = 0
    k: int = 0
    client_id: int = 0
    tensors: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.msg_type = MsgType(self.msg_type)
        self.tensors = tuple(np.ascontiguousarray(t, dtype="<f8") for t in self.tensors)

    def __eq__(self, other):
        if not isinstance(other, ProtocolMessage):
            return NotImplemented
        return (self.header == other.header
                and len(self.tensors) == len(other.tensors)
                and all(a.shape == b.shape and a.tobytes() == b.tobytes()
                        for a, b in zip(self.tensors, other.tensors)))

    @property
    def header(self):
        return (int(self.msg_type), self.round, self.timestep, self.k, self.client_id)

    def __repr__(self):
        shapes = [t.shape for t in self.tensors]
        return (f"ProtocolMessage({self.msg_type.name}, round={self.round}, "
                f"timestep={self.timestep}, k={self.k}, client={self.client_id}, "
                f"tensors={shapes})")


def frame_size(shapes):
    """Encoded length in bytes (without the stream length prefix)."""
    total = HEADER_SIZE + CRC_SIZE
    for s in shapes:
        total += 1 + 4 * len(s) + 8 * int(np.prod(s, dtype=np.int64))
    return total


def wire_size(shapes):
    return LENGTH_PREFIX + frame_size(shapes)


def encode(msg):
    parts = [_HEADER.pack(MAGIC, VERSION, int(msg.msg_type), msg.round, msg.timestep,
                          msg.k, msg.client_id, len(msg.tensors))]
    for t in msg.tensors:
        if not 1 <= t.ndim <= MAX_RANK:
            raise PayloadMismatch(f"tensor rank {t.ndim} outside 1..{MAX_RANK}")
        parts.append(struct.pack(f"<B{t.ndim}I", t.ndim, *t.shape))
        parts.append(t.reshape(-1).view(np.uint8))
    crc = 0
    for part in parts:
        crc = zlib.crc32(part, crc)
    parts.append(struct.pack("<I", crc))
    return b"".join(parts)


def decode(data):
    """Parse one frame; raises a :class:`~fedstgd.errors.DecodeError` subclass."""
    if not isinstance(data, bytes):
        data = bytes(data)
    if len(data) < 4:
        raise Truncated("frame shorter than magic")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < HEADER_SIZE:
        raise Truncated("frame shorter than header")
    _, version, mtype, rnd, ts, k, cid, n_t = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    pos = HEADER_SIZE
    tensors = []
    for _ in range(n_t):
        if pos + 1 > len(data):
            raise Truncated("frame ends inside tensor header")
        rank = data[pos]
        pos += 1
        if not 1 <= rank <= MAX_RANK:
            raise PayloadMismatch(f"tensor rank {rank} outside 1..{MAX_RANK}")
        if pos + 4 * rank > len(data):
            raise Truncated("frame ends inside tensor dims")
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        nbytes = 8 * int(np.prod(dims, dtype=object))
        if pos + nbytes > len(data) - CRC_SIZE:
            raise Truncated("frame ends inside tensor values")
        tensors.append(np.frombuffer(data, dtype="<f8", count=nbytes // 8,
                                     offset=pos).reshape(dims).copy())
        pos += nbytes
    if pos + CRC_SIZE > len(data):
        raise Truncated("frame ends before checksum")
    if pos + CRC_SIZE < len(data):
        raise PayloadMismatch(f"{len(data) - pos - CRC_SIZE} trailing bytes after payload")
    (crc,) = struct.unpack_from("<I", data, pos)
    if crc != zlib.crc32(memoryview(data)[:pos]):
        raise BadCRC("checksum mismatch")
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise PayloadMismatch(f"unknown message type {mtype}") from None
    return ProtocolMessage(mtype, rnd, ts, k, cid, tuple(tensors))
