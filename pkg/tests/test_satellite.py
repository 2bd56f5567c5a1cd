import json

import numpy as np
import pytest

from cubesat_ipu.backend import GoldenTable, MlpWeights, mlp_backend
from cubesat_ipu.csp.params import NotWritable, UnknownParameter
from cubesat_ipu.ground.client import RemoteError
from cubesat_ipu.linksim import LinkConfig
from cubesat_ipu.satellite import Satellite
from cubesat_ipu.tiling import run_inference, write_frame
from simhelp import KEY, link_pair


@pytest.fixture
def pair(tmp_path):
    client, sat, net = link_pair(tmp_path / "sat", LinkConfig(bandwidth_bps=9600))
    yield client, sat
    sat.close()


def test_ping_rtt_is_positive(pair):
    client, _ = pair
    assert client.ping() > 0


def test_param_set_persists_across_restart(tmp_path):
    client, sat, _ = link_pair(tmp_path / "sat", LinkConfig(bandwidth_bps=9600))
    client.param_set("ipu_capture_flag", True)
    assert client.param_get("ipu_capture_flag")["value"] is True
    again = Satellite(1, tmp_path / "sat", KEY)
    assert again.params.get("ipu_capture_flag").value is True


def test_param_errors(pair):
    client, _ = pair
    with pytest.raises(UnknownParameter):
        client.param_get("no_such_param")
    with pytest.raises(NotWritable):
        client.param_set("boot_count", 3)


def test_telemetry_refreshed_before_param_reads(pair):
    client, sat = pair
    assert "cpu_temp_c" in client.param_list()
    first = client.param_get("uptime_s")
    assert sat.telemetry.last is not None
    assert first["ts"] == sat.telemetry.last.timestamp_ms


def test_fs_list_paginates(pair):
    client, sat = pair
    for i in range(60):
        sat.storage.write(f"many/file_{i:03d}_with_a_longish_name.bin", b"x" * i)
    names = \
        [e["name"] for e in client.fs("list", path="many")["entries"]]
    assert len(names) == 60 and len(set(names)) == 60
    with pytest.raises(RemoteError) as exc:
        client.fs("remove", path="../etc/passwd")
    assert exc.value.code == "OutsideRoot"


def test_ray_scan_reports_clusters_and_crops(pair):
    client, sat = pair
    img = np.full((64, 64), 4, np.uint8)
    img[10:13, 20:23] = 220
    img[40, 40] = 250
    sat.storage.resolve("dark/f1.gray").parent.mkdir(parents=True)
    write_frame(sat.storage.resolve("dark/f1.gray"), img)
    resp = client.ray_scan("dark/f1.gray")
    assert [c["pixel_count"] for c in resp["clusters"]] == [9, 1]
    assert resp["crops"][0] == "rays/f1_000.gray"
    assert sat.storage.read(resp["crops"][0]) == bytes([220] * 9)


def test_infer_test_pass_and_injected_fault(pair):
    client, sat = pair
    rng = np.random.default_rng(0)
    frame = rng.integers(0, 256, size=(224, 448, 3), dtype=np.uint8)
    rep = run_inference(frame, mlp_backend(MlpWeights.random(rng, hidden=4)))
    table = GoldenTable.from_array(rep.per_patch_logits, rep.grid.rows, rep.grid.cols)
    sat.storage.write("golden/table.json", table.to_json().encode())
    write_frame(sat.storage.resolve("golden/frame.rgb"), frame)  # table.json created the directory
    assert client.infer_test()["passed"]
    assert not client.infer_test(inject_fault=True)["passed"]
    log = (sat.state_dir / "inference_log.jsonl").read_text().splitlines()
    assert [json.loads(x)["passed"] for x in log] == [True, False]


def test_slots_stage_confirm_and_watchdog(pair):
    client, sat = pair
    client.slots("stage", slot=1, bundle_id="b2")
    assert client.reboot(watchdog=True)["slot"] == 0
    client.slots("stage", slot=2, bundle_id="b3")
    client.slots("confirm")
    assert client.reboot()["slot"] == 2
    assert sat.params.get("current_slot").value == 2
    with pytest.raises(RemoteError) as exc:
        client.slots("stage", slot=9, bundle_id="x")
    assert exc.value.code == "SlotError"


def test_run_workload_over_the_link(pair):
    client, sat = pair
    res = client.run("write_file", {"size": 1024}, time_limit_s=5)
    assert res["exit_status"] == "ok"
    assert len(sat.storage.read(res["outputs"][0])) == 1024
    assert client.param_get("wl_last_status")["value"] == "ok"
    with pytest.raises(RemoteError) as exc:
        client.run("missing")
    assert exc.value.code == "UnknownWorkload"
