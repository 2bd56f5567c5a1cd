"""Ground-side operations against a payload node."""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from ..csp.integrity import crc32_of
from ..csp.network import PORT_PARAM, PORT_PING, PORT_REBOOT
from ..csp.params import decode_param_response, encode_get, encode_list, encode_set
from ..satellite import PORT_FS, PORT_INFER_TEST, PORT_RAY, PORT_RUN, PORT_SLOTS
from ..services.ftp import (
    BITMAP_PAGE_CHUNKS,
    CHUNK_SIZE_UHF,
    MANIFEST_PAGE,
    PORT_FTP,
    PORT_FTP_DATA,
    Direction,
    Op,
    SessionStore,
    State,
    TransferManifest,
    TransferSession,
    decode_chunk,
    encode_chunk,
    ftp_split,
    pack_bitmap,
    parse_control,
    unpack_bitmap,
)
from .channel import Channel

CHUNK_HEADER = 6


class LinkTimeout(Exception):
    """No reply after all retries."""


class LinkLost(LinkTimeout):
    """Out of contact with no further contact window."""


class RemoteError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class TransferAborted(Exception):
    def __init__(self, outcome: "TransferOutcome", reason: str):
        super().__init__(reason)
        self.outcome = outcome


@dataclass
class TransferOutcome:
    session_id: int
    direction: str
    state: str
    chunk_count: int = 0
    chunks_sent: int = 0
    sent_counts: Counter = field(default_factory=Counter)
    rounds: int = 0
    retries: int = 0
    started_s: float = 0.0
    finished_s: float = 0.0
    data: bytes | None = field(default=None, repr=False)
    result: dict = field(default_factory=dict)

    @property
    def redundant_chunks(self) -> int:
        return sum(c - 1 for c in self.sent_counts.values() if c > 1)

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "direction": self.direction,
            "state": self.state,
            "chunk_count": self.chunk_count,
            "chunks_sent": self.chunks_sent,
            "redundant_chunks": self.redundant_chunks,
            "max_sends_per_chunk": max(self.sent_counts.values(), default=0),
            "rounds": self.rounds,
            "retries": self.retries,
            "virtual_time_s": round(self.finished_s - self.started_s, 6),
            **self.result,
        }


def session_id_for(direction: str, path: str) -> int:
    return crc32_of(f"{direction}:{path}".encode()) & 0xFFFF


Progress = Callable[[int, int], None]


class GroundClient:
    def __init__(self, channel: Channel, sat_addr: int, timeout_s: float = 5.0, retries: int = 8):
        self.ch = channel
        self.sat = sat_addr
        self.timeout_s = timeout_s
        self.retries = retries
        self.retry_count = 0

    # -- transport --
    def call(self, port: int, payload: bytes, timeout: float | None = None) -> bytes:
        attempts = 0
        while True:
            if not self.ch.in_contact() and not self.ch.wait_for_contact():
                raise LinkLost("no further contact window")
            reply = self.ch.request(self.sat, port, payload, timeout or self.timeout_s)
            if reply is not None:
                return reply.payload
            attempts += 1
            self.retry_count += 1
            if attempts > self.retries:
                raise LinkTimeout(f"no reply from node {self.sat} port {port} after {attempts} attempts")

    def call_json(self, port: int, req: dict, timeout: float | None = None) -> dict:
        resp = json.loads(self.call(port, json.dumps(req).encode(), timeout))
        if not resp.get("ok", False):
            raise RemoteError(resp.get("error", "Error"), resp.get("detail", ""))
        return resp

    # -- core services --
    def ping(self, payload: bytes = b"ping") -> float:
        """Round-trip time in channel seconds."""
        t0 = self.ch.now()
        echo = self.call(PORT_PING, payload)
        if echo != payload:
            raise RemoteError("BadEcho", "ping payload not echoed")
        return self.ch.now() - t0

    def reboot(self, watchdog: bool = False) -> dict:
        return json.loads(self.call(PORT_REBOOT, json.dumps({"watchdog": watchdog}).encode()))

    def param_get(self, pid: str) -> dict:
        return decode_param_response(self.call(PORT_PARAM, encode_get(pid)))

    def param_set(self, pid: str, value) -> dict:
        return decode_param_response(self.call(PORT_PARAM, encode_set(pid, value)))

    def param_list(self) -> list[str]:
        return decode_param_response(self.call(PORT_PARAM, encode_list()))["ids"]

    # -- payload services --
    def fs(self, op: str, **kw) -> dict:
        if op != "list":
            return self.call_json(PORT_FS, {"op": op, **kw})
        entries, offset = [], 0
        while True:
            resp = self.call_json(PORT_FS, {"op": "list", "offset": offset, **kw})
            entries += resp["entries"]
            if not resp["truncated"]:
                return {"ok": True, "entries": entries}
            offset += len(resp["entries"])

    def infer_test(self, **kw) -> dict:
        return self.call_json(PORT_INFER_TEST, kw, timeout=max(self.timeout_s, 60.0))["record"]

    def ray_scan(self, image: str, threshold: int | None = None) -> dict:
        req = {"image": image}
        if threshold is not None:
            req["threshold"] = threshold
        return self.call_json(PORT_RAY, req, timeout=max(self.timeout_s, 30.0))

    def slots(self, op: str = "show", **kw) -> dict:
        return self.call_json(PORT_SLOTS, {"op": op, **kw})

    def run(self, entry_id: str, args: dict | None = None, time_limit_s: float = 60.0) -> dict:
        req = {"entry_id": entry_id, "args": args or {}, "time_limit_s": time_limit_s}
        return self.call_json(PORT_RUN, req, timeout=self.timeout_s + time_limit_s + 5)["result"]

    # -- file transfer --
    def _ftp(self, op: Op, sid: int, body: bytes = b"") -> bytes:
        payload = self.call(PORT_FTP, struct.pack(">BH", op, sid) + body)
        rop, rsid, rbody = parse_control(payload)
        if rop == Op.ERROR:
            err = json.loads(rbody)
            raise RemoteError(err.get("error", "Error"), err.get("detail", ""))
        if rop != op | 0x80 or rsid != sid:
            raise RemoteError("BadReply", f"unexpected reply {rop:#x} for session {rsid}")
        return rbody

    def _window_budget(self, chunk_bytes: int) -> int | None:
        """How many chunks still fit in this contact window, leaving time for one exchange.

        None means unlimited. Chunks that would be cut off by the end of the
        pass are held back for the next one instead of being wasted.
        """
        rem = self.ch.contact_remaining()
        if rem == float("inf"):
            return None
        per = self.ch.frame_time(chunk_bytes + CHUNK_HEADER)
        if per <= 0:
            return None
        return max(int((rem - self.timeout_s) / per), 0)

    def _next_pass(self) -> None:
        self.ch.skip_window()
        if not self.ch.wait_for_contact():
            raise LinkLost("no further contact window")

    def _stalled(self, state: dict, n_missing: int) -> bool:
        prev = state.get("prev")
        state["prev"] = n_missing
        if prev is not None and n_missing >= prev:
            state["stall"] = state.get("stall", 0) + 1
        else:
            state["stall"] = 0
        return state["stall"] > self.retries

    def upload(self, data: bytes, remote_path: str, session_id: int | None = None,
               chunk_size: int = CHUNK_SIZE_UHF, overwrite: bool = True,
               progress: Progress | None = None) -> TransferOutcome:
        sid = session_id_for("up", remote_path) if session_id is None else session_id
        manifest, chunks = ftp_split(data, chunk_size, file_name=remote_path)
        out = TransferOutcome(sid, Direction.UP.value, State.ACTIVE.value, manifest.chunk_count,
                              started_s=self.ch.now())
        retries0 = self.retry_count
        try:
            opened = json.loads(self._ftp(Op.OPEN_UP, sid, json.dumps(
                {"path": remote_path, "overwrite": overwrite, "whole_file_crc32": manifest.whole_file_crc32}).encode()))
            if not opened["have_manifest"]:
                text = manifest.to_json().encode()
                for off in range(0, len(text), MANIFEST_PAGE):
                    self._ftp(Op.MANIFEST_PUT, sid, struct.pack(">I", off) + text[off:off + MANIFEST_PAGE])
                self._ftp(Op.MANIFEST_PUT, sid, struct.pack(">I", len(text)))
            stall: dict = {}
            while True:
                missing = self._remote_missing(sid, manifest.chunk_count)
                if progress:
                    progress(manifest.chunk_count - len(missing), manifest.chunk_count)
                if not missing:
                    break
                budget = self._window_budget(chunk_size)
                if budget == 0:
                    self._next_pass()
                    continue
                if self._stalled(stall, len(missing)):
                    out.state = State.ABORTED.value
                    raise TransferAborted(out, "no progress within the retry budget")
                out.rounds += 1
                for i in missing[:budget]:
                    self.ch.send(self.sat, PORT_FTP_DATA, encode_chunk(sid, i, chunks[i]))
                    out.sent_counts[i] += 1
                    out.chunks_sent += 1
                self.ch.settle()
            out.result = json.loads(self._ftp(Op.COMMIT, sid))
            out.state = State.COMPLETE.value
        except LinkTimeout:
            out.state = "Interrupted"
            raise
        finally:
            out.retries = self.retry_count - retries0
            out.finished_s = self.ch.now()
        return out

    def _remote_missing(self, sid: int, n: int) -> list[int]:
        missing = []
        first = 0
        while True:
            body = self._ftp(Op.STATUS, sid, struct.pack(">I", first))
            rfirst, total = struct.unpack_from(">II", body)
            bits = unpack_bitmap(body[8:], min(BITMAP_PAGE_CHUNKS, total - rfirst))
            missing += [rfirst + k for k, got in enumerate(bits) if not got]
            first += BITMAP_PAGE_CHUNKS
            if first >= n:
                break
        return missing

    def download(self, remote_path: str, session_id: int | None = None, chunk_size: int = CHUNK_SIZE_UHF,
                 store: SessionStore | None = None, progress: Progress | None = None) -> TransferOutcome:
        sid = session_id_for("down", remote_path) if session_id is None else session_id
        out = TransferOutcome(sid, Direction.DOWN.value, State.ACTIVE.value, started_s=self.ch.now())
        retries0 = self.retry_count
        session: TransferSession | None = None
        try:
            opened = json.loads(self._ftp(Op.OPEN_DOWN, sid, json.dumps(
                {"path": remote_path, "chunk_size": chunk_size}).encode()))
            session = store.load(sid) if store is not None else None
            if session is not None and (session.manifest.whole_file_crc32 != opened["whole_file_crc32"]
                                        or session.manifest.chunk_count != opened["chunk_count"]
                                        or session.manifest.chunk_size_bytes != chunk_size):
                store.delete(sid)
                session = None
            if session is None:
                text = b""
                while len(text) < opened["manifest_len"]:
                    body = self._ftp(Op.MANIFEST_GET, sid, struct.pack(">I", len(text)))
                    text += body[4:]
                session = TransferSession(sid, TransferManifest.from_json(text), Direction.DOWN, remote_path)
            m = session.manifest
            out.chunk_count = m.chunk_count

            def on_chunk(packet):
                try:
                    csid, idx, chunk = decode_chunk(packet.payload)
                except ValueError:
                    return
                if csid == sid:
                    out.sent_counts[idx] += 1
                    out.chunks_sent += 1
                    session.accept(idx, chunk)

            self.ch.on_data(PORT_FTP_DATA, on_chunk)
            stall: dict = {}
            try:
                while True:
                    missing = session.missing()
                    if progress:
                        progress(m.chunk_count - len(missing), m.chunk_count)
                    if not missing:
                        break
                    budget = self._window_budget(m.chunk_size_bytes)
                    if budget == 0:
                        self._next_pass()
                        continue
                    if self._stalled(stall, len(missing)):
                        out.state = State.ABORTED.value
                        raise TransferAborted(out, "no progress within the retry budget")
                    out.rounds += 1
                    wanted = set(missing[:budget])
                    for first in sorted({i - i % BITMAP_PAGE_CHUNKS for i in wanted}):
                        end = min(first + BITMAP_PAGE_CHUNKS, m.chunk_count)
                        want = [i in wanted for i in range(first, end)]
                        self._ftp(Op.WANT, sid, struct.pack(">I", first) + pack_bitmap(want))
                        self.ch.settle()
                    if store is not None:
                        store.save(session)
            finally:
                self.ch.on_data(PORT_FTP_DATA, None)
            out.data = session.finish()
            out.state = State.COMPLETE.value
            out.result = {"path": remote_path, "size": m.total_bytes, "crc32": m.whole_file_crc32}
            if store is not None:
                store.delete(sid)
            try:
                self._ftp(Op.CLOSE, sid)
            except LinkTimeout:
                pass
        except LinkTimeout:
            out.state = "Interrupted"
            if store is not None and session is not None:
                store.save(session)
            raise
        finally:
            out.retries = self.retry_count - retries0
            out.finished_s = self.ch.now()
        return out
