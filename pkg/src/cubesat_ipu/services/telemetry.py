"""Housekeeping telemetry published as read-only parameters."""

from __future__ import annotations

import csv
import datetime as dt
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from ..csp.params import ParameterTable

TELEMETRY_IDS = ("cpu_util_pct", "mem_used_bytes", "disk_free_bytes", "cpu_temp_c", "uptime_s")
MEM_TOTAL_BYTES = 2 * 1024**3


@dataclass(frozen=True)
class TelemetrySample:
    timestamp_ms: int
    cpu_util_pct: float
    mem_used_bytes: int
    disk_free_bytes: int
    cpu_temp_c: float
    uptime_s: float


class SimulatedSensors:
    """Seeded stand-in for the payload computer's sensors.

    Disk usage is real when a ``disk_used`` callable is given (e.g. the bytes
    held by the storage root), so uploads visibly eat free space.
    """

    def __init__(self, seed: int = 0, disk_capacity_bytes: int = 32 * 10**9,
                 disk_used: Callable[[], int] | None = None):
        self._rng = random.Random(seed)
        self._temp = 25.0
        self.disk_capacity_bytes = disk_capacity_bytes
        self._disk_used = disk_used or (lambda: 0)

    def read(self) -> dict:
        self._temp = min(85.0, max(-20.0, self._temp + self._rng.uniform(-0.5, 0.6)))
        return {
            "cpu_util_pct": round(self._rng.uniform(3.0, 60.0), 2),
            "mem_used_bytes": int(self._rng.uniform(0.2, 0.6) * MEM_TOTAL_BYTES),
            "disk_free_bytes": max(0, self.disk_capacity_bytes - int(self._disk_used())),
            "cpu_temp_c": round(self._temp, 2),
        }


class TelemetryService:
    def __init__(self, params: ParameterTable, sensors=None, csv_path: str | Path | None = None,
                 clock_ms: Callable[[], int] | None = None):
        self.params = params
        self.sensors = sensors or SimulatedSensors()
        self.csv_path = Path(csv_path) if csv_path else None
        self._clock_ms = clock_ms or params._clock_ms
        self._boot_ms = self._clock_ms()
        defaults = {"cpu_util_pct": 0.0, "mem_used_bytes": 0, "disk_free_bytes": 0, "cpu_temp_c": 0.0,
                    "uptime_s": 0.0}
        for pid, v in defaults.items():
            if pid not in params:
                params.define(pid, v, writable=False)
        self.last: TelemetrySample | None = None

    def sample(self) -> TelemetrySample:
        now = self._clock_ms()
        values = dict(self.sensors.read())
        values["uptime_s"] = (now - self._boot_ms) / 1000.0
        ts = now
        for pid in TELEMETRY_IDS:
            ts = self.params.publish(pid, values[pid]).timestamp_ms
        self.last = TelemetrySample(ts, **{k: values[k] for k in TELEMETRY_IDS})
        if self.csv_path is not None:
            new = not self.csv_path.exists()
            iso = dt.datetime.fromtimestamp(ts / 1000, dt.timezone.utc).isoformat()
            with open(self.csv_path, "a", newline="") as fh:
                w = csv.writer(fh)
                if new:
                    w.writerow(["iso_timestamp", "param_id", "value"])
                for pid in TELEMETRY_IDS:
                    w.writerow([iso, pid, values[pid]])
        return self.last


def telemetry_sample(service: TelemetryService) -> TelemetrySample:
    return service.sample()
