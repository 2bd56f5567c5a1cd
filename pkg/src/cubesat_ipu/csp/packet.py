"""Packet codec.

Wire layout (big-endian 32-bit header, MSB first)::

    priority:2 | src:6 | dst:6 | dst_port:6 | src_port:6 | flags:6

followed by the payload, an optional 4-byte HMAC tag over header+payload and
an optional 4-byte little-endian CRC-32 over everything before it.
"""

from __future__ import annotations

import enum
import hmac as _hmac
import struct
from dataclasses import dataclass, field

from .integrity import CRC_LEN, HMAC_TAG_LEN, crc32_of, hmac_tag

HEADER_LEN = 4
MAX_PAYLOAD = 1024


class Flag(enum.IntFlag):
    NONE = 0
    HMAC = 0b100000
    CRC = 0b010000
    FRAG = 0b001000
    ACKREQ = 0b000100


RESERVED_MASK = 0b000011
_KNOWN = Flag.HMAC | Flag.CRC | Flag.FRAG | Flag.ACKREQ


class PacketError(Exception):
    """Base class for decode/encode failures."""


class ShortFrame(PacketError):
    pass


class CrcMismatch(PacketError):
    pass


class AuthFailure(PacketError):
    pass


class MalformedPacket(PacketError):
    pass


@dataclass(frozen=True)
class CspPacket:
    priority: int = 2
    src: int = 0
    dst: int = 0
    dst_port: int = 0
    src_port: int = 0
    flags: Flag = Flag.NONE
    payload: bytes = field(default=b"", repr=False)

    def __post_init__(self):
        if not 0 <= self.priority <= 3:
            raise MalformedPacket(f"priority {self.priority} out of range")
        for name in ("src", "dst", "dst_port", "src_port"):
            v = getattr(self, name)
            if not 0 <= v <= 63:
                raise MalformedPacket(f"{name}={v} does not fit 6 bits")
        if int(self.flags) & ~int(_KNOWN):
            raise MalformedPacket(f"reserved flag bits set: {int(self.flags):#x}")
        if len(self.payload) > MAX_PAYLOAD:
            raise MalformedPacket(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")
        object.__setattr__(self, "flags", Flag(self.flags))
        object.__setattr__(self, "payload", bytes(self.payload))

    def header_word(self) -> int:
        return (
            self.priority << 30
            | self.src << 24
            | self.dst << 18
            | self.dst_port << 12
            | self.src_port << 6
            | int(self.flags)
        )

    def reply(self, payload: bytes, flags: Flag | None = None) -> CspPacket:
        """Packet going back to the sender's port."""
        return CspPacket(
            priority=self.priority,
            src=self.dst,
            dst=self.src,
            dst_port=self.src_port,
            src_port=self.dst_port,
            flags=self.flags if flags is None else flags,
            payload=payload,
        )

    def with_flags(self, flags: Flag) -> CspPacket:
        return CspPacket(self.priority, self.src, self.dst, self.dst_port, self.src_port, flags, self.payload)


def encode_packet(p: CspPacket, key: bytes | None = None) -> bytes:
    if len(p.payload) > MAX_PAYLOAD:
        raise MalformedPacket("payload too long")
    out = bytearray(struct.pack(">I", p.header_word()))
    out += p.payload
    if p.flags & Flag.HMAC:
        if not key:
            raise AuthFailure("HMAC flag set but no key configured")
        out += hmac_tag(key, bytes(out))
    if p.flags & Flag.CRC:
        out += struct.pack("<I", crc32_of(bytes(out)))
    return bytes(out)


def decode_packet(
    data: bytes,
    key: bytes | None = None,
    *,
    require_crc: bool = False,
    require_hmac: bool = False,
) -> CspPacket:
    """Parse and verify a packet.

    ``require_crc``/``require_hmac`` reject packets whose header does not
    carry the flag at all; without them a bit flip that clears the CRC flag
    would go unnoticed.
    """
    data = bytes(data)
    if len(data) < HEADER_LEN:
        raise ShortFrame(f"{len(data)} bytes is shorter than the header")
    (word,) = struct.unpack(">I", data[:HEADER_LEN])
    flags = word & 0x3F
    body = data
    if require_crc and not flags & Flag.CRC:
        raise CrcMismatch("CRC required but flag is clear")
    if flags & Flag.CRC:
        if len(body) < HEADER_LEN + CRC_LEN:
            raise ShortFrame("missing CRC trailer")
        (crc,) = struct.unpack("<I", body[-CRC_LEN:])
        body = body[:-CRC_LEN]
        if crc32_of(body) != crc:
            raise CrcMismatch(f"CRC {crc:#010x} != computed {crc32_of(body):#010x}")
    if flags & RESERVED_MASK:
        raise MalformedPacket("reserved flag bits set")
    if require_hmac and not flags & Flag.HMAC:
        raise AuthFailure("HMAC required but flag is clear")
    if flags & Flag.HMAC:
        if len(body) < HEADER_LEN + HMAC_TAG_LEN:
            raise ShortFrame("missing HMAC trailer")
        if not key:
            raise AuthFailure("HMAC packet received but no key configured")
        tag = body[-HMAC_TAG_LEN:]
        body = body[:-HMAC_TAG_LEN]
        if not _hmac.compare_digest(tag, hmac_tag(key, body)):
            raise AuthFailure("HMAC tag mismatch")
    payload = body[HEADER_LEN:]
    if len(payload) > MAX_PAYLOAD:
        raise MalformedPacket("payload too long")
    return CspPacket(
        priority=word >> 30,
        src=(word >> 24) & 0x3F,
        dst=(word >> 18) & 0x3F,
        dst_port=(word >> 12) & 0x3F,
        src_port=(word >> 6) & 0x3F,
        flags=Flag(flags),
        payload=payload,
    )
