import csv
import itertools

import pytest

from cubesat_ipu.csp.params import NotWritable, ParameterTable
from cubesat_ipu.services.telemetry import TELEMETRY_IDS, SimulatedSensors, TelemetryService


def make(tmp_path, step=250):
    ticks = itertools.count(1_700_000_000_000, step)
    clock = lambda: next(ticks)
    params = ParameterTable(clock_ms=clock)
    svc = TelemetryService(params, SimulatedSensors(3), tmp_path / "tm.csv", clock_ms=clock)
    return params, svc


def test_samples_are_monotonic_and_mirrored_in_params(tmp_path):
    params, svc = make(tmp_path)
    stamps = []
    for _ in range(20):
        s = svc.sample()
        stamps.append(s.timestamp_ms)
        for pid in TELEMETRY_IDS:
            assert params.get(pid).value == getattr(s, pid)
    assert stamps == sorted(stamps)
    assert svc.last.uptime_s > 0


def test_telemetry_is_read_only_remotely(tmp_path):
    params, svc = make(tmp_path)
    svc.sample()
    with pytest.raises(NotWritable):
        params.set("cpu_temp_c", 1.0)


def test_csv_log_columns(tmp_path):
    _, svc = make(tmp_path)
    svc.sample()
    svc.sample()
    rows = list(csv.reader(open(tmp_path / "tm.csv")))
    assert rows[0] == ["iso_timestamp", "param_id", "value"]
    assert len(rows) == 1 + 2 * len(TELEMETRY_IDS)
    assert [r[1] for r in rows[1:6]] == list(TELEMETRY_IDS)


def test_disk_free_tracks_usage():
    used = [0]
    sensors = SimulatedSensors(0, disk_capacity_bytes=1000, disk_used=lambda: used[0])
    assert sensors.read()["disk_free_bytes"] == 1000
    used[0] = 400
    assert sensors.read()["disk_free_bytes"] == 600
