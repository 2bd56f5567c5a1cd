"""Four-slot software update manager.

A freshly uploaded bundle lands in a slot as ``Trial`` and becomes the boot
target. The next boot either commits it (ground confirmed it works), fails
it (the watchdog fired while it ran) or simply runs it again. A failed
trial hands the boot pointer to the next committed slot, cyclically; with
nothing bootable left the node comes up in safe mode.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

N_SLOTS = 4
SAFE_MODE = -1


class SlotStatus(enum.Enum):
    EMPTY = "Empty"
    TRIAL = "Trial"
    COMMITTED = "Committed"
    FAILED = "Failed"


class SlotError(Exception):
    pass


@dataclass(frozen=True)
class Slot:
    bundle_id: str | None = None
    status: SlotStatus = SlotStatus.EMPTY


@dataclass(frozen=True)
class BootRecord:
    timestamp: float
    slot: int
    outcome: str


@dataclass(frozen=True)
class SlotTable:
    slots: tuple[Slot, ...] = (Slot(),) * N_SLOTS
    boot_pointer: int = 0
    boot_log: tuple[BootRecord, ...] = ()

    def status(self, i: int) -> SlotStatus:
        return self.slots[i].status

    @property
    def trial(self) -> int | None:
        found = [i for i, s in enumerate(self.slots) if s.status is SlotStatus.TRIAL]
        return found[0] if found else None

    def committed(self) -> list[int]:
        return [i for i, s in enumerate(self.slots) if s.status is SlotStatus.COMMITTED]

    def state_key(self):
        """Hashable state without the log (for state-space enumeration)."""
        return tuple(s.status for s in self.slots), self.boot_pointer

    def to_json(self) -> dict:
        return {
            "slots": [{"bundle_id": s.bundle_id, "status": s.status.value} for s in self.slots],
            "boot_pointer": self.boot_pointer,
        }

    @classmethod
    def from_json(cls, obj: dict) -> SlotTable:
        slots = tuple(Slot(s.get("bundle_id"), SlotStatus(s["status"])) for s in obj["slots"])
        if len(slots) != N_SLOTS:
            raise SlotError(f"expected {N_SLOTS} slots")
        return cls(slots, int(obj["boot_pointer"]))


def _set(table: SlotTable, i: int, **kw) -> tuple[Slot, ...]:
    slots = list(table.slots)
    slots[i] = replace(slots[i], **kw)
    return tuple(slots)


def stage_update(table: SlotTable, slot: int, bundle_id: str, now: float = 0.0) -> SlotTable:
    """Install ``bundle_id`` into ``slot`` as a trial and point the next boot at it."""
    if not 0 <= slot < N_SLOTS:
        raise SlotError(f"slot {slot} out of range")
    if table.trial is not None and table.trial != slot:
        raise SlotError(f"slot {table.trial} is already on trial")
    if table.status(slot) is SlotStatus.COMMITTED and table.committed() == [slot]:
        raise SlotError("refusing to overwrite the only committed slot")
    slots = _set(table, slot, bundle_id=bundle_id, status=SlotStatus.TRIAL)
    log = table.boot_log + (BootRecord(now, slot, f"staged {bundle_id}"),)
    return SlotTable(slots, slot, log)


def _next_committed(table: SlotTable, after: int) -> int | None:
    for k in range(1, N_SLOTS + 1):
        i = (after + k) % N_SLOTS
        if table.status(i) is SlotStatus.COMMITTED:
            return i
    return None


def slot_boot(table: SlotTable, watchdog_fired: bool = False, ground_confirm: bool = False,
              now: float = 0.0) -> tuple[int, SlotTable]:
    """Decide which slot to boot. Returns (slot, new table); slot is SAFE_MODE if none."""
    log = list(table.boot_log)
    trial = table.trial
    if trial is not None and ground_confirm:
        slots = _set(table, trial, status=SlotStatus.COMMITTED)
        log.append(BootRecord(now, trial, "committed"))
        return trial, SlotTable(slots, trial, tuple(log))
    if trial is not None and watchdog_fired:
        slots = _set(table, trial, status=SlotStatus.FAILED)
        failed = SlotTable(slots, table.boot_pointer, table.boot_log)
        log.append(BootRecord(now, trial, "failed"))
        target = _next_committed(failed, trial)
        if target is None:
            log.append(BootRecord(now, SAFE_MODE, "safe-mode"))
            return SAFE_MODE, SlotTable(slots, _any_nonempty(failed), tuple(log))
        log.append(BootRecord(now, target, "reverted"))
        return target, SlotTable(slots, target, tuple(log))
    ptr = table.boot_pointer
    status = table.status(ptr)
    if status in (SlotStatus.COMMITTED, SlotStatus.TRIAL):
        outcome = "trial" if status is SlotStatus.TRIAL else ("watchdog-restart" if watchdog_fired else "booted")
        log.append(BootRecord(now, ptr, outcome))
        return ptr, replace(table, boot_log=tuple(log))
    target = _next_committed(table, ptr)
    if target is None:
        log.append(BootRecord(now, SAFE_MODE, "safe-mode"))
        return SAFE_MODE, replace(table, boot_log=tuple(log))
    log.append(BootRecord(now, target, "booted"))
    return target, SlotTable(table.slots, target, tuple(log))


def _any_nonempty(table: SlotTable) -> int:
    for i, s in enumerate(table.slots):
        if s.status is not SlotStatus.EMPTY:
            return i
    return 0


class SlotManager:
    """Persists the slot table and appends boot records to a JSON-lines log."""

    def __init__(self, state_path: str | Path, log_path: str | Path, initial: SlotTable | None = None):
        self.state_path = Path(state_path)
        self.log_path = Path(log_path)
        self.pending_confirm = False
        self.current = None
        if self.state_path.exists():
            state = json.loads(self.state_path.read_text())
            self.table = SlotTable.from_json(state)
            self.pending_confirm = bool(state.get("pending_confirm", False))
            self.current = state.get("current")
        else:
            self.table = initial or SlotTable()
            self._save()

    def confirm(self) -> None:
        """Ground confirmation, applied at the next boot."""
        self.pending_confirm = True
        self._save()

    def _save(self):
        state = self.table.to_json()
        state["pending_confirm"] = self.pending_confirm
        state["current"] = self.current
        self.state_path.write_text(json.dumps(state, indent=1))

    def _append_log(self, records):
        with open(self.log_path, "a") as fh:
            for r in records:
                fh.write(json.dumps({"timestamp": r.timestamp, "slot": r.slot, "outcome": r.outcome}) + "\n")

    def stage(self, slot: int, bundle_id: str, now: float = 0.0) -> SlotTable:
        n = len(self.table.boot_log)
        self.table = stage_update(self.table, slot, bundle_id, now)
        self._append_log(self.table.boot_log[n:])
        self.table = replace(self.table, boot_log=())
        self._save()
        return self.table

    def boot(self, watchdog_fired: bool = False, now: float = 0.0) -> int:
        slot, table = slot_boot(self.table, watchdog_fired, self.pending_confirm, now)
        self._append_log(table.boot_log)
        self.table = replace(table, boot_log=())
        self.pending_confirm = False
        self.current = slot
        self._save()
        return slot

    def read_log(self) -> list[dict]:
        if not self.log_path.exists():
            return []
        return [json.loads(line) for line in self.log_path.read_text().splitlines() if line.strip()]
