"""The payload computer as a network node: storage, services and state on disk.

Port map (core ports 1-4 come from :class:`~cubesat_ipu.csp.Node`)::

    9  ftp data     10 ftp control   11 file ops    12 inference test
    13 ray scan     14 slots         15 user workload

Everything persistent lives under ``root``: ``files/`` is the storage root
visible to the ground, ``state/`` holds the parameter table, slot table,
boot log, transfer sessions and service logs.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Callable

import numpy as np

from .backend import GoldenTable, golden_backend
from .csp.network import Node
from .csp.params import ParameterTable
from .csp.packet import MAX_PAYLOAD
from .services.cosmic import crop, detect_clusters
from .services.ftp import PORT_FTP, PORT_FTP_DATA, FtpServer
from .services.inference_test import InferenceTestService
from .services.slots import SAFE_MODE, Slot, SlotError, SlotManager, SlotStatus, SlotTable
from .services.storage import Storage, StorageError
from .services.telemetry import TELEMETRY_IDS, SimulatedSensors, TelemetryService
from .services.workloads import BASE_BUNDLE, UnknownWorkload, base_registry, run_user_workload
from .tiling import read_frame, write_frame

PORT_FS = 11
PORT_INFER_TEST = 12
PORT_RAY = 13
PORT_SLOTS = 14
PORT_RUN = 15

#: reply budget for JSON bodies; leaves room for trailers
_REPLY_BUDGET = MAX_PAYLOAD - 24


def ok(**body) -> bytes:
    return json.dumps({"ok": True, **body}, separators=(",", ":")).encode()


def fail(code: str, detail: str = "") -> bytes:
    return json.dumps({"ok": False, "error": code, "detail": detail[:400]}).encode()


def _fit_list(items: list, key: str, **extra) -> bytes:
    """Largest prefix of ``items`` that fits one reply payload."""
    n = len(items)
    while True:
        body = ok(**{key: items[:n]}, truncated=n < len(items), total=len(items), **extra)
        if len(body) <= _REPLY_BUDGET or n == 0:
            return body
        n = n // 2 if n > 8 else n - 1


class _FaultyBackend:
    """Flips the lowest bit of the first logit in every batch, like a single-event upset."""

    def __init__(self, inner):
        self.inner = inner

    def infer(self, tiles, indices):
        out = self.inner.infer(tiles, indices).copy()
        out.view(np.uint32)[0, 0] ^= 1
        return out


class Satellite:
    def __init__(self, address: int, root: str | Path, hmac_key: bytes | None = None,
                 clock: Callable[[], float] = time.time, seed: int = 0):
        self.root = Path(root)
        self.state_dir = self.root / "state"
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self.storage = Storage(self.root / "files")
        params = ParameterTable(clock_ms=lambda: int(self.clock() * 1000))
        self.node = Node(address, hmac_key, params)
        self._define_params()
        self.telemetry = TelemetryService(
            params, SimulatedSensors(seed, disk_used=self.storage.used_bytes),
            csv_path=self.state_dir / "telemetry.csv")
        self._restore_params()
        params.on_change.append(self._persist_param)
        self.slots = SlotManager(self.state_dir / "slots.json", self.state_dir / "boot_log.jsonl",
                                 initial=SlotTable((Slot(BASE_BUNDLE, SlotStatus.COMMITTED),) + (Slot(),) * 3, 0))
        self.workloads = base_registry()
        self.ftp = FtpServer(self.storage, self.state_dir / "ftp")
        self._runs = 0
        self.node.before_param = self._before_param
        self.node.on_reboot = self._on_reboot
        n = self.node
        n.bind(PORT_FTP_DATA, self.ftp.handle_data, "ftp-data")
        n.bind(PORT_FTP, self.ftp.handle_control, "ftp")
        n.bind(PORT_FS, self._json_service(self._fs), "fs")
        n.bind(PORT_INFER_TEST, self._json_service(self._infer_test), "infer-test")
        n.bind(PORT_RAY, self._json_service(self._ray_scan), "ray-scan")
        n.bind(PORT_SLOTS, self._json_service(self._slots), "slots")
        n.bind(PORT_RUN, self._json_service(self._run), "run")

    def close(self) -> None:
        self.ftp.flush()

    @property
    def address(self) -> int:
        return self.node.address

    @property
    def params(self) -> ParameterTable:
        return self.node.params

    # -- parameters --
    def _define_params(self):
        p = self.node.params
        p.define("ipu_capture_flag", False)
        p.define("ipu_mode", "nominal")
        p.define("infer_period_s", 3600)
        p.define("ray_threshold", -1)
        p.define("boot_count", 0, writable=False)
        p.define("current_slot", 0, writable=False)

    def _params_path(self):
        return self.state_dir / "params.json"

    def _restore_params(self):
        path = self._params_path()
        if path.exists():
            self.node.params.restore(json.loads(path.read_text()))

    def _persist_param(self, pid, entry):
        if pid in TELEMETRY_IDS:
            return
        snap = {k: v for k, v in self.node.params.snapshot().items() if k not in TELEMETRY_IDS}
        self._params_path().write_text(json.dumps(snap, indent=1))

    def _before_param(self, packet):
        last = self.telemetry.last
        if last is None or self.clock() * 1000 - last.timestamp_ms >= 1000:
            self.telemetry.sample()

    # -- reboot / slots --
    def boot(self, watchdog_fired: bool = False) -> int:
        slot = self.slots.boot(watchdog_fired, self.clock())
        p = self.node.params
        p.publish("boot_count", p.get("boot_count").value + 1)
        p.publish("current_slot", slot)
        return slot

    def _on_reboot(self, node, packet) -> bytes:
        try:
            req = json.loads(packet.payload) if packet.payload else {}
        except ValueError:
            req = {}
        slot = self.boot(bool(req.get("watchdog", False)))
        return ok(slot=slot, safe_mode=slot == SAFE_MODE, table=self.slots.table.to_json())

    def _slots(self, req):
        op = req.get("op", "show")
        if op == "show":
            return ok(table=self.slots.table.to_json(), current=self.slots.current,
                      pending_confirm=self.slots.pending_confirm, log=self.slots.read_log()[-5:])
        if op == "stage":
            bundle = req["bundle_id"]
            if req.get("path"):
                self.storage.read(req["path"])  # must have been uploaded
            self.slots.stage(int(req["slot"]), bundle, self.clock())
            return ok(table=self.slots.table.to_json())
        if op == "confirm":
            self.slots.confirm()
            return ok(pending_confirm=True)
        if op == "boot":
            slot = self.boot(bool(req.get("watchdog", False)))
            return ok(slot=slot, safe_mode=slot == SAFE_MODE, table=self.slots.table.to_json())
        return fail("BadRequest", f"unknown op {op!r}")

    # -- JSON request/response services --
    def _json_service(self, fn):
        def handler(node, packet):
            try:
                req = json.loads(packet.payload) if packet.payload else {}
                body = fn(req)
            except StorageError as exc:
                body = fail(exc.code, str(exc))
            except UnknownWorkload as exc:
                body = fail("UnknownWorkload", str(exc))
            except SlotError as exc:
                body = fail("SlotError", str(exc))
            except (ValueError, KeyError, TypeError) as exc:
                body = fail("BadRequest", f"{type(exc).__name__}: {exc}")
            return [packet.reply(body)]
        handler.__name__ = fn.__name__
        return handler

    def _fs(self, req):
        op = req["op"]
        ow = bool(req.get("overwrite", False))
        if op == "list":
            entries = [e.to_json() for e in self.storage.list(req.get("path", "."))]
            off = int(req.get("offset", 0))
            return _fit_list(entries[off:], "entries", offset=off)
        if op == "move":
            self.storage.move(req["src"], req["dst"], ow)
        elif op == "copy":
            self.storage.copy(req["src"], req["dst"], ow)
        elif op == "remove":
            self.storage.remove(req["path"])
        else:
            return fail("BadRequest", f"unknown op {op!r}")
        return ok()

    def _infer_test(self, req):
        golden = GoldenTable.from_json(self.storage.read(req.get("golden", "golden/table.json")))
        frame = read_frame(self.storage.resolve(req.get("frame", "golden/frame.rgb")))
        backend = golden_backend(golden)
        if req.get("inject_fault"):
            backend = _FaultyBackend(backend)
        svc = InferenceTestService(golden, frame, backend, log_path=self.state_dir / "inference_log.jsonl",
                                   clock=self.clock)
        rec = svc.run()
        return ok(record=rec.to_json())

    def _ray_scan(self, req):
        path = req["image"]
        img = read_frame(self.storage.resolve(path))
        if img.ndim == 3:
            img = img.mean(axis=2).astype("uint8")
        thr = req.get("threshold")
        if thr is None and self.node.params.get("ray_threshold").value >= 0:
            thr = self.node.params.get("ray_threshold").value
        det = detect_clusters(img, thr, image_id=path, timestamp=self.clock())
        stem = Path(path).name.split(".")[0]
        crops = []
        for i, c in enumerate(det.clusters[: int(req.get("max_crops", 16))]):
            rel = f"rays/{stem}_{i:03d}.gray"
            target = self.storage.resolve(rel)
            target.parent.mkdir(parents=True, exist_ok=True)
            write_frame(target, crop(img, c))
            crops.append(rel)
        with open(self.state_dir / "ray_log.jsonl", "a") as fh:
            fh.write(json.dumps(det.to_json()) + "\n")
        clusters = det.to_json()["clusters"]
        return _fit_list(clusters, "clusters", threshold=det.threshold, degenerate=det.degenerate,
                         crops=crops[:8])

    def _run(self, req):
        self._runs += 1
        res = run_user_workload(req, self.workloads, self.storage, self.slots.table, self.node.params,
                                run_id=int(self.clock() * 1000) % 10**9 + self._runs)
        body = res.to_json()
        body["log"] = body["log"][-5:]
        return ok(result=body)
