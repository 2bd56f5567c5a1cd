"""KISS framing for byte-stream links (RS422, TCP bridge)."""

import re

FEND = 0xC0
FESC = 0xDB
TFEND = 0xDC
TFESC = 0xDD

_FEND_B = bytes([FEND])
_ESCAPED = re.compile(rb"\xdb([\xdc\xdd])")
_UNESCAPE = {TFEND: bytes([FEND]), TFESC: bytes([FESC])}


def kiss_escape(data: bytes) -> bytes:
    # FESC first, otherwise the escapes inserted for FEND get escaped again
    return bytes(data).replace(b"\xdb", b"\xdb\xdd").replace(b"\xc0", b"\xdb\xdc")


def kiss_unescape(data: bytes) -> bytes:
    # an FESC followed by anything other than TFEND/TFESC is passed through
    return _ESCAPED.sub(lambda m: _UNESCAPE[m.group(1)[0]], data)


def kiss_frame(data: bytes) -> bytes:
    return _FEND_B + kiss_escape(data) + _FEND_B


def kiss_unframe(stream: bytes) -> tuple[list[bytes], bytes]:
    """Split ``stream`` into complete frames.

    Bytes before the first FEND are noise and dropped. Returns the decoded
    frames and the residual bytes of an incomplete trailing frame (starting
    at its opening FEND), to be prepended to the next read.
    """
    stream = bytes(stream)
    frames = []
    pos = stream.find(_FEND_B)
    while pos != -1:
        end = stream.find(_FEND_B, pos + 1)
        if end == -1:
            return frames, stream[pos:]
        frames.append(kiss_unescape(stream[pos + 1:end]))
        pos = stream.find(_FEND_B, end + 1)
    return frames, b""


class KissDeframer:
    """Incremental wrapper around :func:`kiss_unframe`."""

    def __init__(self):
        self._residual = b""

    def push(self, data: bytes) -> list[bytes]:
        frames, self._residual = kiss_unframe(self._residual + bytes(data))
        return frames

    @property
    def residual(self) -> bytes:
        return self._residual
