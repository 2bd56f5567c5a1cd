"""Chunked, resumable file transfer.

Files are cut into fixed-size chunks, each with its own CRC-32 recorded in
a manifest. Chunks travel individually on the data port; the receiver keeps
a bitmap of verified chunks and, after an interruption, reports it so the
sender only resends what is missing. Nothing is handed over until every
chunk CRC and the whole-file CRC check out.

Data port payload: ``session:u16 | index:u32 | data`` (big-endian).
Control port payload: ``opcode:u8 | session:u16 | ...`` with replies using
``opcode | 0x80`` and ``0xFF`` + JSON for errors.
"""

from __future__ import annotations

import enum
import json
import math
import shutil
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from ..csp.integrity import crc32_of
from ..csp.packet import MAX_PAYLOAD, CspPacket
from .storage import Exists, Storage, StorageError

PORT_FTP_DATA = 9
PORT_FTP = 10

CHUNK_SIZE_UHF = 200
#: largest chunk that fits a packet next to the 6-byte chunk header, rounded down to a multiple of 8
CHUNK_SIZE_MAX = MAX_PAYLOAD - 8
CHUNK_SIZE_SBAND = CHUNK_SIZE_MAX
MIN_CHUNK_SIZE = 64
BITMAP_PAGE_BYTES = 1000
BITMAP_PAGE_CHUNKS = BITMAP_PAGE_BYTES * 8
MANIFEST_PAGE = 1000

_DATA_HDR = struct.Struct(">HI")


class TransferError(Exception):
    code = "TransferError"


class ChunkCrcMismatch(TransferError):
    code = "ChunkCrcMismatch"

    def __init__(self, index: int):
        super().__init__(f"chunk {index} failed its CRC check")
        self.index = index


class FileCrcMismatch(TransferError):
    code = "FileCrcMismatch"


class MissingChunk(TransferError):
    code = "MissingChunk"

    def __init__(self, index: int):
        super().__init__(f"chunk {index} missing")
        self.index = index


class UnknownSession(TransferError):
    code = "UnknownSession"


class State(enum.Enum):
    ACTIVE = "Active"
    COMPLETE = "Complete"
    ABORTED = "Aborted"


class Direction(enum.Enum):
    UP = "Up"
    DOWN = "Down"


@dataclass(frozen=True)
class TransferManifest:
    file_name: str
    total_bytes: int
    chunk_size_bytes: int
    chunk_count: int
    per_chunk_crc32: tuple[int, ...]
    whole_file_crc32: int

    def chunk_len(self, index: int) -> int:
        if index == self.chunk_count - 1:
            return self.total_bytes - index * self.chunk_size_bytes
        return self.chunk_size_bytes

    def to_json(self) -> str:
        d = {
            "file_name": self.file_name,
            "total_bytes": self.total_bytes,
            "chunk_size_bytes": self.chunk_size_bytes,
            "chunk_count": self.chunk_count,
            "per_chunk_crc32": list(self.per_chunk_crc32),
            "whole_file_crc32": self.whole_file_crc32,
        }
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str | bytes) -> TransferManifest:
        d = json.loads(text)
        m = cls(d["file_name"], int(d["total_bytes"]), int(d["chunk_size_bytes"]), int(d["chunk_count"]),
                tuple(int(c) for c in d["per_chunk_crc32"]), int(d["whole_file_crc32"]))
        if m.chunk_count != len(m.per_chunk_crc32) or m.chunk_count != _n_chunks(m.total_bytes, m.chunk_size_bytes):
            raise ValueError("inconsistent manifest")
        return m


def _n_chunks(total: int, chunk_size: int) -> int:
    return math.ceil(total / chunk_size) if total else 0


def ftp_split(data: bytes, chunk_size: int = CHUNK_SIZE_UHF, file_name: str = "") -> tuple[TransferManifest, list[bytes]]:
    if chunk_size < MIN_CHUNK_SIZE:
        raise ValueError(f"chunk size must be >= {MIN_CHUNK_SIZE}")
    data = bytes(data)
    chunks = [data[i:i + chunk_size] for i in range(0, len(data), chunk_size)]
    manifest = TransferManifest(file_name, len(data), chunk_size, len(chunks),
                                tuple(crc32_of(c) for c in chunks), crc32_of(data))
    return manifest, chunks


def ftp_join(manifest: TransferManifest, chunks) -> bytes:
    """Verify and concatenate chunks (a sequence or an index -> bytes mapping)."""
    get = chunks.get if isinstance(chunks, dict) else (lambda i: chunks[i] if i < len(chunks) else None)
    parts = []
    for i in range(manifest.chunk_count):
        c = get(i)
        if c is None:
            raise MissingChunk(i)
        if len(c) != manifest.chunk_len(i) or crc32_of(c) != manifest.per_chunk_crc32[i]:
            raise ChunkCrcMismatch(i)
        parts.append(bytes(c))
    data = b"".join(parts)
    if crc32_of(data) != manifest.whole_file_crc32 or len(data) != manifest.total_bytes:
        raise FileCrcMismatch(manifest.file_name)
    return data


def pack_bitmap(bits) -> bytes:
    """MSB-first byte packing: chunk i is bit 7 - i % 8 of byte i // 8."""
    out = bytearray(math.ceil(len(bits) / 8))
    for i, b in enumerate(bits):
        if b:
            out[i >> 3] |= 0x80 >> (i & 7)
    return bytes(out)


def unpack_bitmap(data: bytes, n: int) -> list[bool]:
    return [bool(data[i >> 3] & (0x80 >> (i & 7))) for i in range(n)]


class TransferSession:
    """Receiver-side state of one transfer."""

    def __init__(self, session_id: int, manifest: TransferManifest, direction: Direction,
                 remote_path: str = ""):
        self.session_id = session_id
        self.manifest = manifest
        self.direction = direction
        self.remote_path = remote_path
        self.received = bytearray(manifest.chunk_count)
        self.chunks: dict[int, bytes] = {}
        self.state = State.ACTIVE
        self.receipts: Counter = Counter()
        self.rejected = 0

    def accept(self, index: int, data: bytes) -> bool:
        """Store a chunk if it verifies. Returns True when it was new."""
        self.receipts[index] += 1
        m = self.manifest
        if not 0 <= index < m.chunk_count or len(data) != m.chunk_len(index) \
                or crc32_of(data) != m.per_chunk_crc32[index]:
            self.rejected += 1
            return False
        if self.received[index]:
            return False
        self.received[index] = 1
        self.chunks[index] = bytes(data)
        return True

    def missing(self) -> list[int]:
        return [i for i, got in enumerate(self.received) if not got]

    @property
    def n_received(self) -> int:
        return sum(self.received)

    def bitmap(self, first: int = 0, count: int | None = None) -> bytes:
        end = self.manifest.chunk_count if count is None else min(first + count, self.manifest.chunk_count)
        return pack_bitmap(self.received[first:end])

    def finish(self) -> bytes:
        """Assemble the file; the session only becomes Complete if it verifies."""
        data = ftp_join(self.manifest, self.chunks)
        self.state = State.COMPLETE
        return data


class SessionStore:
    """Persists receiver sessions so transfers survive restarts.

    Layout per session: ``meta.json``, ``manifest.json``, ``bitmap.bin`` and
    ``data.part`` (chunks written at their file offset).
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _dir(self, sid: int) -> Path:
        return self.root / f"{sid:05d}"

    def save(self, s: TransferSession) -> None:
        d = self._dir(s.session_id)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"session_id": s.session_id, "direction": s.direction.value, "remote_path": s.remote_path,
                "state": s.state.value}
        (d / "meta.json").write_text(json.dumps(meta))
        (d / "manifest.json").write_text(s.manifest.to_json())
        part = d / "data.part"
        with open(part, "r+b" if part.exists() else "w+b") as fh:
            fh.truncate(s.manifest.total_bytes)
            for i, c in sorted(s.chunks.items()):
                fh.seek(i * s.manifest.chunk_size_bytes)
                fh.write(c)
        (d / "bitmap.bin").write_bytes(pack_bitmap(s.received))

    def load(self, sid: int) -> TransferSession | None:
        d = self._dir(sid)
        if not (d / "meta.json").exists():
            return None
        meta = json.loads((d / "meta.json").read_text())
        m = TransferManifest.from_json((d / "manifest.json").read_text())
        s = TransferSession(sid, m, Direction(meta["direction"]), meta.get("remote_path", ""))
        s.state = State(meta["state"])
        bits = unpack_bitmap((d / "bitmap.bin").read_bytes(), m.chunk_count)
        raw = (d / "data.part").read_bytes()
        for i, got in enumerate(bits):
            if got:
                # re-verify: a torn write on power loss must not count as received
                s.accept(i, raw[i * m.chunk_size_bytes:i * m.chunk_size_bytes + m.chunk_len(i)])
        s.receipts.clear()
        return s

    def delete(self, sid: int) -> None:
        shutil.rmtree(self._dir(sid), ignore_errors=True)

    def ids(self) -> list[int]:
        return sorted(int(p.name) for p in self.root.iterdir() if p.name.isdigit())


# -- wire helpers --

class Op(enum.IntEnum):
    OPEN_UP = 0x01
    MANIFEST_PUT = 0x02
    STATUS = 0x03
    COMMIT = 0x05
    OPEN_DOWN = 0x06
    MANIFEST_GET = 0x07
    WANT = 0x08
    CLOSE = 0x09
    ERROR = 0xFF


def encode_chunk(session_id: int, index: int, data: bytes) -> bytes:
    return _DATA_HDR.pack(session_id, index) + data


def decode_chunk(payload: bytes) -> tuple[int, int, bytes]:
    if len(payload) < _DATA_HDR.size:
        raise ValueError("short chunk payload")
    sid, idx = _DATA_HDR.unpack_from(payload)
    return sid, idx, payload[_DATA_HDR.size:]


def control(op: Op, session_id: int, body: bytes = b"") -> bytes:
    return struct.pack(">BH", op, session_id) + body


def parse_control(payload: bytes) -> tuple[int, int, bytes]:
    if len(payload) < 3:
        raise ValueError("short control payload")
    op, sid = struct.unpack_from(">BH", payload)
    return op, sid, payload[3:]


def error_reply(session_id: int, exc: Exception) -> bytes:
    code = getattr(exc, "code", type(exc).__name__)
    return control(Op.ERROR, session_id, json.dumps({"error": code, "detail": str(exc)}).encode())


class FtpServer:
    """Payload-side FTP endpoint bound to the control and data ports.

    Upload sessions are persisted in ``state_dir``; download sessions are
    rebuilt from the file on demand, so only their parameters are kept.
    """

    def __init__(self, storage: Storage, state_dir: str | Path):
        self.storage = storage
        self.store = SessionStore(Path(state_dir) / "up")
        self._down_dir = Path(state_dir) / "down"
        self._down_dir.mkdir(parents=True, exist_ok=True)
        self.up: dict[int, TransferSession] = {}
        self.down: dict[int, tuple[TransferManifest, list[bytes], str]] = {}
        self.sent_counts: dict[int, Counter] = {}
        self.completed: dict[int, bytes] = {}

    def flush(self) -> None:
        """Persist every active upload session (e.g. before the process exits)."""
        for s in self.up.values():
            if s.state is State.ACTIVE:
                self.store.save(s)

    # -- ports --
    def handle_data(self, node, packet: CspPacket):
        try:
            sid, idx, data = decode_chunk(packet.payload)
        except ValueError:
            return None
        s = self._up_session(sid)
        if s is not None and s.state is State.ACTIVE:
            s.accept(idx, data)
        return None

    def handle_control(self, node, packet: CspPacket):
        try:
            op, sid, body = parse_control(packet.payload)
        except ValueError:
            return [packet.reply(error_reply(0, ValueError("bad control payload")))]
        try:
            handler = {
                Op.OPEN_UP: self._open_up,
                Op.MANIFEST_PUT: self._manifest_put,
                Op.STATUS: self._status,
                Op.COMMIT: self._commit,
                Op.OPEN_DOWN: self._open_down,
                Op.MANIFEST_GET: self._manifest_get,
                Op.WANT: self._want,
                Op.CLOSE: self._close,
            }[Op(op)]
        except (KeyError, ValueError):
            return [packet.reply(error_reply(sid, ValueError(f"unknown opcode {op:#x}")))]
        try:
            body, extra = handler(sid, body, packet)
        except (TransferError, StorageError, ValueError, KeyError) as exc:
            return [packet.reply(error_reply(sid, exc))]
        return [packet.reply(struct.pack(">BH", op | 0x80, sid) + body)] + extra

    # -- upload --
    def _up_session(self, sid):
        s = self.up.get(sid)
        if s is None:
            s = self.store.load(sid)
            if s is not None:
                self.up[sid] = s
        return s

    def _pending_manifest_path(self, sid):
        return self.store.root / f"{sid:05d}.manifest.partial"

    def _open_up(self, sid, body, packet):
        req = json.loads(body)
        path = req["path"]
        self.storage.resolve(path)
        if not req.get("overwrite", True) and self.storage.exists(path):
            raise Exists(path)
        self.completed.pop(sid, None)
        s = self._up_session(sid)
        if s is not None and (s.remote_path != path or s.manifest.whole_file_crc32 != req.get("whole_file_crc32")):
            self.store.delete(sid)
            self.up.pop(sid, None)
            s = None
        if s is None:
            pending = self._pending_manifest_path(sid)
            if not pending.exists() or json.loads(pending.with_suffix(".meta").read_text()).get("path") != path:
                pending.write_bytes(b"")
                pending.with_suffix(".meta").write_text(json.dumps({"path": path}))
        resp = {"have_manifest": s is not None, "received": s.n_received if s else 0}
        return json.dumps(resp).encode(), []

    def _manifest_put(self, sid, body, packet):
        (offset,) = struct.unpack_from(">I", body)
        data = body[4:]
        pending = self._pending_manifest_path(sid)
        if not pending.exists():
            s = self._up_session(sid)
            if s is not None and not body[4:]:
                # retry of the final page after its reply was lost
                return struct.pack(">I", len(s.manifest.to_json())), []
            raise UnknownSession(f"session {sid} not open")
        buf = bytearray(pending.read_bytes())
        if offset > len(buf):
            raise ValueError("manifest page out of order")
        buf[offset:offset + len(data)] = data
        pending.write_bytes(bytes(buf))
        last = len(data) == 0
        if last:
            m = TransferManifest.from_json(bytes(buf))
            path = json.loads(pending.with_suffix(".meta").read_text())["path"]
            s = TransferSession(sid, m, Direction.UP, path)
            self.up[sid] = s
            self.store.save(s)
            pending.unlink()
            pending.with_suffix(".meta").unlink()
        return struct.pack(">I", len(buf)), []

    def _status(self, sid, body, packet):
        (first,) = struct.unpack_from(">I", body)
        s = self._up_session(sid)
        if s is None:
            raise UnknownSession(f"session {sid}")
        self.store.save(s)
        bits = s.bitmap(first, BITMAP_PAGE_CHUNKS)
        return struct.pack(">II", first, s.manifest.chunk_count) + bits, []

    def _commit(self, sid, body, packet):
        if sid in self.completed:
            return self.completed[sid], []
        s = self._up_session(sid)
        if s is None:
            raise UnknownSession(f"session {sid}")
        try:
            data = s.finish()
        except MissingChunk:
            raise
        except TransferError:
            # corrupt assembly: drop everything and let the client restart
            self.store.delete(sid)
            self.up.pop(sid, None)
            raise
        info = self.storage.write(s.remote_path, data)
        self.store.delete(sid)
        self.up.pop(sid, None)
        result = json.dumps({"path": info.name, "size": info.size, "crc32": s.manifest.whole_file_crc32}).encode()
        self.completed[sid] = result
        return result, []

    # -- download --
    def _open_down(self, sid, body, packet):
        req = json.loads(body)
        path, chunk_size = req["path"], int(req.get("chunk_size", CHUNK_SIZE_UHF))
        if not MIN_CHUNK_SIZE <= chunk_size <= CHUNK_SIZE_MAX:
            raise ValueError(f"chunk size must be in [{MIN_CHUNK_SIZE}, {CHUNK_SIZE_MAX}]")
        data = self.storage.read(path)
        manifest, chunks = ftp_split(data, chunk_size, file_name=path)
        self.down[sid] = (manifest, chunks, path)
        (self._down_dir / f"{sid:05d}.json").write_text(json.dumps({"path": path, "chunk_size": chunk_size}))
        self.sent_counts.setdefault(sid, Counter())
        text = manifest.to_json().encode()
        resp = {"manifest_len": len(text), "whole_file_crc32": manifest.whole_file_crc32,
                "chunk_count": manifest.chunk_count}
        return json.dumps(resp).encode(), []

    def _down_session(self, sid):
        if sid not in self.down:
            rec = self._down_dir / f"{sid:05d}.json"
            if not rec.exists():
                raise UnknownSession(f"session {sid}")
            req = json.loads(rec.read_text())
            data = self.storage.read(req["path"])
            m, chunks = ftp_split(data, req["chunk_size"], file_name=req["path"])
            self.down[sid] = (m, chunks, req["path"])
        return self.down[sid]

    def _manifest_get(self, sid, body, packet):
        (offset,) = struct.unpack_from(">I", body)
        m, _, _ = self._down_session(sid)
        text = m.to_json().encode()
        return struct.pack(">I", offset) + text[offset:offset + MANIFEST_PAGE], []

    def _want(self, sid, body, packet):
        (first,) = struct.unpack_from(">I", body)
        m, chunks, _ = self._down_session(sid)
        bits = unpack_bitmap(body[4:], min(len(body[4:]) * 8, max(m.chunk_count - first, 0)))
        counts = self.sent_counts.setdefault(sid, Counter())
        out = []
        for k, want in enumerate(bits):
            i = first + k
            if want and i < m.chunk_count:
                counts[i] += 1
                out.append(CspPacket(packet.priority, packet.dst, packet.src, PORT_FTP_DATA, PORT_FTP_DATA,
                                     payload=encode_chunk(sid, i, chunks[i])))
        return struct.pack(">I", len(out)), out

    def _close(self, sid, body, packet):
        self.down.pop(sid, None)
        (self._down_dir / f"{sid:05d}.json").unlink(missing_ok=True)
        return b"", []
