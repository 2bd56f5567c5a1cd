import random

import pytest

from cubesat_ipu.csp.integrity import CRC32_RESIDUE, ConfigurationError, crc32_of, hmac_tag
from oracles import crc32_bitwise

RFC2202_KEY = bytes([0x0B] * 20)


def test_crc_empty_and_check_value():
    assert crc32_of(b"") == 0
    assert crc32_of(b"123456789") == 0xCBF43926


def test_crc_matches_bitwise_oracle():
    rng = random.Random(3)
    for _ in range(200):
        data = rng.randbytes(rng.randrange(0, 300))
        assert crc32_of(data) == crc32_bitwise(data)


def test_crc_residue():
    rng = random.Random(4)
    for _ in range(100):
        data = rng.randbytes(rng.randrange(0, 100))
        assert crc32_bitwise(data + crc32_of(data).to_bytes(4, "little")) == CRC32_RESIDUE
        assert crc32_of(data + crc32_of(data).to_bytes(4, "little")) == 0x2144DF1C


def test_hmac_rfc2202_vectors():
    # full digests from RFC 2202 section 3, truncated to the tag length
    assert hmac_tag(RFC2202_KEY, b"Hi There") == bytes.fromhex("b6173186")
    assert hmac_tag(b"Jefe", b"what do ya want for nothing?") == bytes.fromhex("effcdf6a")
    assert hmac_tag(bytes([0xAA] * 20), bytes([0xDD] * 50)) == bytes.fromhex("125d7342")


def test_hmac_key_bit_changes_tag():
    flipped = bytes([RFC2202_KEY[0] ^ 1]) + RFC2202_KEY[1:]
    assert hmac_tag(flipped, b"Hi There") != hmac_tag(RFC2202_KEY, b"Hi There")


def test_hmac_distinct_data_distinct_tags():
    rng = random.Random(5)
    for _ in range(100):
        a, b = rng.randbytes(32), rng.randbytes(32)
        if a != b:
            assert hmac_tag(b"k", a) != hmac_tag(b"k", b)


def test_hmac_empty_key_rejected():
    with pytest.raises(ConfigurationError):
        hmac_tag(b"", b"data")
