"""CRC-32 and truncated HMAC-SHA1 used in packet trailers."""

import hashlib
import hmac
import zlib

HMAC_TAG_LEN = 4
CRC_LEN = 4

#: CRC-32 of any message followed by its own little-endian CRC.
CRC32_RESIDUE = 0x2144DF1C


class ConfigurationError(ValueError):
    pass


def crc32_of(data: bytes) -> int:
    """CRC-32/IEEE 802.3 (reflected 0x04C11DB7, init and xorout 0xFFFFFFFF)."""
    return zlib.crc32(data) & 0xFFFFFFFF


def hmac_tag(key: bytes, data: bytes) -> bytes:
    """First four bytes of HMAC-SHA1(key, data)."""
    if not key:
        raise ConfigurationError("HMAC key must be non-empty")
    return hmac.new(key, data, hashlib.sha1).digest()[:HMAC_TAG_LEN]
