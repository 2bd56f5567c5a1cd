"""User-defined workloads run in-process under a cooperative deadline."""

from __future__ import annotations

import ctypes
import threading
import time
import traceback
from dataclasses import dataclass, field
from typing import Callable

from ..csp.params import ParameterTable
from .slots import SlotStatus, SlotTable
from .storage import Storage


KILL_GRACE_S = 0.5


def _raise_in_thread(thread: threading.Thread, exc_type) -> None:
    """Deliver ``exc_type`` asynchronously; takes effect at the next bytecode boundary."""
    ctypes.pythonapi.PyThreadState_SetAsyncExc(ctypes.c_ulong(thread.ident), ctypes.py_object(exc_type))


class WorkloadTimeout(Exception):
    pass


class UnknownWorkload(KeyError):
    __str__ = Exception.__str__


@dataclass
class WorkloadContext:
    entry_id: str
    args: dict
    deadline: float
    storage: Storage
    output_prefix: str
    outputs: list[str] = field(default_factory=list)
    log: list[str] = field(default_factory=list)
    clock: Callable[[], float] = time.monotonic

    def checkpoint(self) -> None:
        """Call often; raises :class:`WorkloadTimeout` once the deadline has passed."""
        if self.clock() > self.deadline:
            raise WorkloadTimeout(self.entry_id)

    def write_output(self, name: str, data: bytes) -> str:
        rel = f"{self.output_prefix}/{name}"
        self.storage.write(rel, data)
        self.outputs.append(rel)
        return rel

    def print(self, *parts) -> None:
        self.log.append(" ".join(str(p) for p in parts))


@dataclass
class WorkloadResult:
    entry_id: str
    exit_status: str  # ok | error | timeout
    outputs: list[str]
    log: list[str]
    runtime_s: float

    def to_json(self) -> dict:
        return {"entry_id": self.entry_id, "exit_status": self.exit_status, "outputs": self.outputs,
                "log": self.log, "runtime_s": self.runtime_s}


@dataclass(frozen=True)
class Workload:
    entry_id: str
    bundle_id: str
    fn: Callable[[WorkloadContext], None]


class WorkloadRegistry:
    def __init__(self):
        self._entries: dict[str, Workload] = {}

    def register(self, entry_id: str, bundle_id: str, fn: Callable[[WorkloadContext], None]) -> None:
        self._entries[entry_id] = Workload(entry_id, bundle_id, fn)

    def get(self, entry_id: str) -> Workload:
        try:
            return self._entries[entry_id]
        except KeyError:
            raise UnknownWorkload(entry_id) from None

    def ids(self) -> list[str]:
        return sorted(self._entries)


def _bundle_installed(slots: SlotTable | None, bundle_id: str) -> bool:
    if slots is None:
        return True
    return any(s.bundle_id == bundle_id and s.status in (SlotStatus.COMMITTED, SlotStatus.TRIAL)
               for s in slots.slots)


def run_user_workload(descriptor: dict, registry: WorkloadRegistry, storage: Storage,
                      slots: SlotTable | None = None, params: ParameterTable | None = None,
                      run_id: int = 0, clock: Callable[[], float] = time.monotonic) -> WorkloadResult:
    """Run one registered workload.

    ``descriptor`` holds ``entry_id``, optional ``args`` and ``time_limit_s``.
    Outputs go under ``outputs/<entry>-<run_id>/`` in the storage root.
    """
    entry_id = descriptor["entry_id"]
    limit = float(descriptor.get("time_limit_s", 60.0))
    if limit <= 0:
        raise ValueError("time_limit_s must be positive")
    wl = registry.get(entry_id)
    if not _bundle_installed(slots, wl.bundle_id):
        raise UnknownWorkload(f"{entry_id}: bundle {wl.bundle_id} not installed in any slot")
    start = clock()
    ctx = WorkloadContext(entry_id, dict(descriptor.get("args") or {}), start + limit, storage,
                          f"outputs/{entry_id}-{run_id}", clock=clock)
    outcome = ["ok"]

    def target():
        try:
            wl.fn(ctx)
        except WorkloadTimeout:
            outcome[0] = "timeout"
        except Exception:
            outcome[0] = "error"
            ctx.log.append(traceback.format_exc(limit=3))

    worker = threading.Thread(target=target, name=f"workload-{entry_id}", daemon=True)
    worker.start()
    worker.join(limit + KILL_GRACE_S)
    if worker.is_alive():
        # the workload ignored its checkpoints: interrupt it from outside
        _raise_in_thread(worker, WorkloadTimeout)
        worker.join(KILL_GRACE_S)
        outcome[0] = "timeout"
    status = outcome[0]
    if status == "timeout":
        ctx.log.append(f"terminated after exceeding {limit} s")
    result = WorkloadResult(entry_id, status, ctx.outputs, ctx.log, clock() - start)
    if params is not None:
        for pid, value in (("wl_last_entry", entry_id), ("wl_last_status", status),
                           ("wl_last_runtime_ms", int(result.runtime_s * 1000))):
            if pid not in params:
                params.define(pid, value, writable=False)
            else:
                params.publish(pid, value)
    return result


# -- workloads shipped with the base bundle --

def _noop(ctx: WorkloadContext) -> None:
    ctx.checkpoint()


def _write_file(ctx: WorkloadContext) -> None:
    size = int(ctx.args.get("size", 1024))
    ctx.write_output(ctx.args.get("name", "out.bin"), bytes(i % 251 for i in range(size)))


def _spin(ctx: WorkloadContext) -> None:
    while True:
        ctx.checkpoint()


def _histogram(ctx: WorkloadContext) -> None:
    import json

    import numpy as np

    from ..tiling import read_frame

    img = read_frame(ctx.storage.resolve(ctx.args["image"]))
    hist = np.bincount(np.asarray(img).ravel(), minlength=256)
    ctx.write_output("histogram.json", json.dumps(hist.tolist()).encode())


BASE_BUNDLE = "ipu-base-1"


def base_registry() -> WorkloadRegistry:
    reg = WorkloadRegistry()
    reg.register("noop", BASE_BUNDLE, _noop)
    reg.register("write_file", BASE_BUNDLE, _write_file)
    reg.register("spin", BASE_BUNDLE, _spin)
    reg.register("histogram", BASE_BUNDLE, _histogram)
    return reg
