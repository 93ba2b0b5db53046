"""Binary wire format for collaboration messages.

Layout (little-endian, no padding)::

    offset  size      field
    0       4         magic b"FKM1"
    4       1         version (u8, currently 1)
    5       4         agent_id (u32)
    9       48        pose: x, y, z, yaw, pitch, roll (6 x f64; meters, radians)
    57      4         keypoint count N (u32)
    61      2         descriptor dim D (u16)
    63      8N        coords, N x 2 f32 (grid cells, (col, row))
    63+8N   4N        scores, N f32
    63+12N  4ND       descriptors, N x D f32, row-major

Total length is ``63 + N * (12 + 4 * D)`` bytes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"FKM1"
VERSION = 1
HEADER = struct.Struct("<4sBI6dIH")
HEADER_SIZE = HEADER.size  # 63
MAX_PAYLOAD = 1 << 30


class ProtocolError(ValueError):
    pass


class BadMagicError(ProtocolError):
    pass


class UnsupportedVersionError(ProtocolError):
    pass


class TruncatedPayloadError(ProtocolError):
    pass


class PayloadOverflowError(ProtocolError):
    pass


class TrailingBytesError(ProtocolError):
    pass


class InvalidPayloadError(ProtocolError):
    pass


@dataclass(eq=False)
class CollabMessage:
    agent_id: int
    pose: tuple
    coords: np.ndarray
    scores: np.ndarray
    descriptors: np.ndarray
    version: int = VERSION

    def __post_init__(self):
        self.pose = tuple(float(v) for v in self.pose)
        self.coords = np.ascontiguousarray(self.coords, dtype="<f4").reshape(-1, 2)
        n = len(self.coords)
        self.scores = np.ascontiguousarray(self.scores, dtype="<f4").reshape(n)
        self.descriptors = np.ascontiguousarray(self.descriptors, dtype="<f4")
        if self.descriptors.ndim != 2 or self.descriptors.shape[0] != n:
            raise InvalidPayloadError(f"descriptors must be {n} x D, got {self.descriptors.shape}")

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    def __eq__(self, other):
        if not isinstance(other, CollabMessage):
            return NotImplemented
        return (
            self.version == other.version
            and self.agent_id == other.agent_id
            and struct.pack("<6d", *self.pose) == struct.pack("<6d", *other.pose)
            and self.descriptors.shape == other.descriptors.shape
            and self.coords.tobytes() == other.coords.tobytes()
            and self.scores.tobytes() == other.scores.tobytes()
            and self.descriptors.tobytes() == other.descriptors.tobytes()
        )

    @classmethod
    def from_keypoints(cls, agent_id: int, pose, kp) -> "CollabMessage":
        d = kp.descriptors.shape[1] if kp.descriptors.ndim == 2 else 0
        return cls(agent_id, pose.as_tuple(), kp.coords, kp.scores, kp.descriptors.reshape(len(kp), d))


def message_length(n: int, d: int) -> int:
    return HEADER_SIZE + n * (12 + 4 * d)


def _check_invariants(m: CollabMessage, err=InvalidPayloadError):
    if not 0 <= m.agent_id < 2 ** 32:
        raise err(f"agent_id {m.agent_id} does not fit in u32")
    if m.n >= 2 ** 32 or not 0 <= m.dim < 2 ** 16:
        raise PayloadOverflowError(f"N={m.n}, D={m.dim} exceed the field widths")
    if len(m.pose) != 6:
        raise err("pose must have 6 components")
    if m.n and m.dim == 0:
        raise err("keypoints need a positive descriptor dimension")
    if m.n:
        norms = np.linalg.norm(m.descriptors.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise err("descriptors must be unit norm")
        if np.any((m.scores < 0) | (m.scores > 1)):
            raise err("scores must lie in [0, 1]")


def encode_message(m: CollabMessage) -> bytes:
    if m.version != VERSION:
        raise UnsupportedVersionError(f"cannot encode version {m.version}")
    _check_invariants(m)
    head = HEADER.pack(MAGIC, m.version, m.agent_id, *m.pose, m.n, m.dim)
    return head + m.coords.tobytes() + m.scores.tobytes() + m.descriptors.tobytes()


def decode_message(buf: bytes) -> CollabMessage:
    """Parse one message; validates magic, version and length before reading the payload."""
    buf = bytes(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    if len(buf) < HEADER_SIZE:
        raise TruncatedPayloadError(f"header needs {HEADER_SIZE} bytes, got {len(buf)}")
    magic, version, agent_id, *rest = HEADER.unpack_from(buf, 0)
    pose, n, d = tuple(rest[:6]), rest[6], rest[7]
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if n * (12 + 4 * d) > MAX_PAYLOAD:
        raise PayloadOverflowError(f"declared payload N={n}, D={d} exceeds {MAX_PAYLOAD} bytes")
    expected = message_length(n, d)
    if len(buf) < expected:
        raise TruncatedPayloadError(f"expected {expected} bytes, got {len(buf)}")
    if len(buf) > expected:
        raise TrailingBytesError(f"expected {expected} bytes, got {len(buf)}")
    off = HEADER_SIZE
    coords = np.frombuffer(buf, dtype="<f4", count=2 * n, offset=off).reshape(n, 2)
    off += 8 * n
    scores = np.frombuffer(buf, dtype="<f4", count=n, offset=off)
    off += 4 * n
    desc = np.frombuffer(buf, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    m = CollabMessage(agent_id, pose, coords.copy(), scores.copy(), desc.copy(), version)
    _check_invariants(m)
    return m


def bandwidth_report(messages) -> dict:
    """Closed-form encoded sizes: ``{"per_agent": {agent_id: bytes}, "total": bytes}``."""
    per_agent: dict[int, int] = {}
    for m in messages:
        per_agent[m.agent_id] = per_agent.get(m.agent_id, 0) + message_length(m.n, m.dim)
    return {"per_agent": per_agent, "total": sum(per_agent.values())}


def write_message(path, m: CollabMessage) -> None:
    Path(path).write_bytes(encode_message(m))


def read_message(path) -> CollabMessage:
    return decode_message(Path(path).read_bytes())
