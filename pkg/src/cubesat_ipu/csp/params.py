"""Per-node parameter tables (telemetry values and control flags)."""

from __future__ import annotations

import base64
import json
import threading
import time
from dataclasses import dataclass
from typing import Callable

MAX_ID_LEN = 32
MAX_STR_LEN = 128
MAX_BLOB_LEN = 256
INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1

TYPE_NAMES = {bool: "bool", int: "int64", float: "float64", str: "string", bytes: "blob"}
_TYPES_BY_NAME = {v: k for k, v in TYPE_NAMES.items()}


class ParamError(Exception):
    code = "ParamError"


class UnknownParameter(ParamError, KeyError):
    code = "UnknownParameter"
    __str__ = Exception.__str__


class NotWritable(ParamError):
    code = "NotWritable"


class TypeMismatch(ParamError, TypeError):
    code = "TypeMismatch"


PARAM_ERRORS = {cls.code: cls for cls in (UnknownParameter, NotWritable, TypeMismatch)}


@dataclass(frozen=True)
class ParamEntry:
    value: object
    writable: bool
    timestamp_ms: int
    ptype: type

    @property
    def type_name(self) -> str:
        return TYPE_NAMES[self.ptype]


def _check_value(ptype: type, value) -> None:
    if type(value) is not ptype:
        raise TypeMismatch(f"expected {TYPE_NAMES[ptype]}, got {type(value).__name__}")
    if ptype is int and not INT64_MIN <= value <= INT64_MAX:
        raise TypeMismatch("int64 overflow")
    if ptype is str and len(value) > MAX_STR_LEN:
        raise TypeMismatch(f"string longer than {MAX_STR_LEN}")
    if ptype is bytes and len(value) > MAX_BLOB_LEN:
        raise TypeMismatch(f"blob longer than {MAX_BLOB_LEN}")


def _wall_ms() -> int:
    return int(time.time() * 1000)


class ParameterTable:
    """Thread-safe map of parameter id to typed, timestamped value.

    ``set`` is the remote path and honours the writable bit; ``publish`` is
    used by the owning node (e.g. telemetry) and may update read-only
    entries. Timestamps never go backwards for an entry even if the clock does.
    """

    def __init__(self, clock_ms: Callable[[], int] = _wall_ms):
        self._entries: dict[str, ParamEntry] = {}
        self._lock = threading.Lock()
        self._clock_ms = clock_ms
        self.on_change: list[Callable[[str, ParamEntry], None]] = []

    def define(self, pid: str, value, writable: bool = True) -> None:
        if not pid or len(pid) > MAX_ID_LEN:
            raise ValueError(f"parameter id must be 1..{MAX_ID_LEN} chars: {pid!r}")
        ptype = type(value)
        if ptype not in TYPE_NAMES:
            raise TypeMismatch(f"unsupported parameter type {ptype.__name__}")
        _check_value(ptype, value)
        with self._lock:
            if pid in self._entries:
                raise ValueError(f"duplicate parameter {pid!r}")
            self._entries[pid] = ParamEntry(value, writable, self._clock_ms(), ptype)

    def __contains__(self, pid: str) -> bool:
        return pid in self._entries

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._entries)

    def get(self, pid: str) -> ParamEntry:
        with self._lock:
            try:
                return self._entries[pid]
            except KeyError:
                raise UnknownParameter(pid) from None

    def set(self, pid: str, value) -> ParamEntry:
        return self._update(pid, value, remote=True)

    def publish(self, pid: str, value) -> ParamEntry:
        return self._update(pid, value, remote=False)

    def _update(self, pid, value, remote):
        with self._lock:
            try:
                entry = self._entries[pid]
            except KeyError:
                raise UnknownParameter(pid) from None
            if remote and not entry.writable:
                raise NotWritable(pid)
            _check_value(entry.ptype, value)
            ts = max(self._clock_ms(), entry.timestamp_ms)
            entry = ParamEntry(value, entry.writable, ts, entry.ptype)
            self._entries[pid] = entry
        for cb in self.on_change:
            cb(pid, entry)
        return entry

    # persistence: only values are restored, definitions come from code
    def snapshot(self) -> dict:
        with self._lock:
            return {pid: entry_to_json(e) for pid, e in self._entries.items()}

    def restore(self, snap: dict) -> None:
        with self._lock:
            for pid, rec in snap.items():
                old = self._entries.get(pid)
                if old is None or rec.get("type") != old.type_name:
                    continue
                value = value_from_json(rec["type"], rec["value"])
                self._entries[pid] = ParamEntry(value, old.writable, int(rec["ts"]), old.ptype)


def value_to_json(value):
    if isinstance(value, bytes):
        return base64.b64encode(value).decode("ascii")
    return value


def value_from_json(type_name: str, raw):
    ptype = _TYPES_BY_NAME[type_name]
    if ptype is bytes:
        return base64.b64decode(raw)
    if ptype is float and type(raw) is int:
        return float(raw)
    return raw


def entry_to_json(e: ParamEntry) -> dict:
    return {"value": value_to_json(e.value), "type": e.type_name, "writable": e.writable, "ts": e.timestamp_ms}


# -- param service wire format (JSON payloads on port 3) --

def encode_get(pid: str) -> bytes:
    return json.dumps({"op": "get", "id": pid}).encode()


def encode_set(pid: str, value) -> bytes:
    msg = {"op": "set", "id": pid, "value": value_to_json(value), "type": TYPE_NAMES.get(type(value), "?")}
    return json.dumps(msg).encode()


def encode_list() -> bytes:
    return json.dumps({"op": "list"}).encode()


def handle_param_request(table: ParameterTable, payload: bytes) -> bytes:
    try:
        req = json.loads(payload)
        op = req["op"]
        if op == "get":
            e = table.get(req["id"])
            resp = {"ok": True, **entry_to_json(e)}
        elif op == "set":
            ptype = _TYPES_BY_NAME.get(req.get("type"))
            if ptype is None:
                raise TypeMismatch(f"unsupported type {req.get('type')!r}")
            value = value_from_json(req["type"], req["value"])
            e = table.set(req["id"], value)
            resp = {"ok": True, **entry_to_json(e)}
        elif op == "list":
            resp = {"ok": True, "ids": table.ids()}
        else:
            resp = {"ok": False, "error": "BadRequest", "detail": f"unknown op {op!r}"}
    except ParamError as exc:
        resp = {"ok": False, "error": exc.code, "detail": str(exc)}
    except (ValueError, KeyError, TypeError) as exc:
        resp = {"ok": False, "error": "BadRequest", "detail": str(exc)}
    return json.dumps(resp).encode()


def decode_param_response(payload: bytes) -> dict:
    """Parse a param reply, raising the matching :class:`ParamError`."""
    resp = json.loads(payload)
    if not resp.get("ok"):
        cls = PARAM_ERRORS.get(resp.get("error"), ParamError)
        raise cls(resp.get("detail", ""))
    if "type" in resp:
        resp["value"] = value_from_json(resp["type"], resp["value"])
    return resp
