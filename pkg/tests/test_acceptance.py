"""End-to-end acceptance checks, one test per criterion.

Run ``pytest tests/test_acceptance.py`` to get a PASS/FAIL line for each.
"""

import random
import time
from collections import deque

import numpy as np
import pytest

from cubesat_ipu.backend import dequantize, quantize_affine
from cubesat_ipu.csp.integrity import crc32_of, hmac_tag
from cubesat_ipu.csp.packet import CspPacket, Flag, PacketError, decode_packet, encode_packet
from cubesat_ipu.ground.client import LinkLost
from cubesat_ipu.linksim import LinkConfig
from cubesat_ipu.planner import (
    CameraModel,
    DeviceMeasurement,
    OrbitModel,
    Scenario,
    ScenarioParams,
    energy_consumption,
    evaluate_device,
    images_per_pass,
    images_per_pass_quotient,
    inter_image_period,
    scenario_budget,
)
from cubesat_ipu.services.cosmic import detect_clusters, otsu_threshold
from cubesat_ipu.services.ftp import SessionStore
from cubesat_ipu.services.slots import N_SLOTS, SAFE_MODE, Slot, SlotError, SlotStatus, SlotTable, slot_boot, stage_update
from cubesat_ipu.tiling import extract_patch, extrapolate_latency, make_patch_grid, reassemble, run_inference
from datasets import int8_vs_float_accuracy
from oracles import flood_fill_clusters, otsu_brute
from simhelp import link_pair

CAMERA = CameraModel(gsd_m_per_px=14.8495, image_height_px=4512, image_width_px=4512, overlap_fraction=0.5)
ORBIT = OrbitModel(altitude_m=550_000.0, orbital_velocity_m_s=7585.16, orbital_period_s=5739.0)


@pytest.mark.criterion(1, "inter-image period 4.42 s")
def test_criterion_01_inter_image_period():
    t0 = time.perf_counter()
    period = inter_image_period(CAMERA, ORBIT)
    assert abs(period - 4.42) <= 0.01
    assert time.perf_counter() - t0 < 1.0


@pytest.mark.criterion(2, "images per pass and scenario image budgets")
def test_criterion_02_images_per_pass():
    assert abs(images_per_pass_quotient(2_670_000.0, CAMERA) - 79.7) <= 0.05
    assert images_per_pass(2_670_000.0, CAMERA) == 80
    greenland = scenario_budget(Scenario.GREENLAND, CAMERA, ORBIT)
    assert greenland.buffered_images == 320 and greenland.per_image_latency_s == 270.0
    arctic = scenario_budget(Scenario.ARCTIC, CAMERA, ORBIT)
    assert arctic.buffered_images == 80 and abs(arctic.per_image_latency_s - 71.74) <= 0.01


@pytest.mark.criterion(3, "storage sizing at 60 MB per image")
def test_criterion_03_storage():
    assert ScenarioParams().image_bytes == 60_000_000
    assert scenario_budget(Scenario.ARCTIC, CAMERA, ORBIT).storage_required_bytes == 4_800 * 10**6
    assert scenario_budget(Scenario.GREENLAND, CAMERA, ORBIT).storage_required_bytes == 19_200 * 10**6


@pytest.mark.criterion(4, "energy E = P*t and bilinearity")
def test_criterion_04_energy():
    assert energy_consumption(2000, 3600) == 2000
    rng = random.Random(4)
    for _ in range(100):
        p1, p2 = rng.uniform(0, 5000), rng.uniform(0, 5000)
        t1, t2 = rng.uniform(0, 7200), rng.uniform(0, 7200)
        a = rng.uniform(0, 10)
        assert energy_consumption(p1 + p2, t1) == pytest.approx(energy_consumption(p1, t1) + energy_consumption(p2, t1))
        assert energy_consumption(p1, t1 + t2) == pytest.approx(energy_consumption(p1, t1) + energy_consumption(p1, t2))
        assert energy_consumption(a * p1, t1) == pytest.approx(a * energy_consumption(p1, t1))


class _ConstantTimeBackend:
    input_precision = "uint8"

    def __init__(self, clock, per_patch_s):
        self.clock, self.per_patch_s = clock, per_patch_s

    def infer(self, tiles, indices):
        self.clock[0] += self.per_patch_s * len(indices)
        return np.zeros((len(indices), 5), np.float32)


@pytest.mark.criterion(5, "tiling, reassembly and latency extrapolation")
def test_criterion_05_tiling():
    t0 = time.perf_counter()
    frame = np.random.default_rng(5).integers(0, 256, (4512, 4512, 3), dtype=np.uint8)
    grid = make_patch_grid(4512, 4512)
    tiles = [extract_patch(frame, r, c) for r, c in grid.indices()]
    assert len(tiles) == 400
    kept = reassemble(tiles, grid)
    assert np.array_equal(kept, frame[:kept.shape[0], :kept.shape[1]])
    assert kept.shape[:2] == (4480, 4480)

    clock = [0.0]
    backend = _ConstantTimeBackend(clock, 1 / 128)  # a binary fraction keeps the fake clock exact
    one = run_inference(frame[:224, :224], backend, 1, clock=lambda: clock[0])
    hundred = run_inference(frame[:2240, :2240], backend, 1, clock=lambda: clock[0])
    full = run_inference(frame, backend, 1, clock=lambda: clock[0])
    assert one.patches_inferred == 1 and hundred.patches_inferred == 100 and full.patches_inferred == 400
    assert extrapolate_latency(one.total_latency_ms, 1) == one.total_latency_ms * 400 == full.total_latency_ms
    assert extrapolate_latency(hundred.total_latency_ms, 100) == hundred.total_latency_ms * 4 == full.total_latency_ms
    assert time.perf_counter() - t0 < 5.0


@pytest.mark.criterion(6, "CRC-32, HMAC-SHA1, packet codec and corruption rejection")
def test_criterion_06_protocol():
    t0 = time.perf_counter()
    assert crc32_of(b"123456789") == 0xCBF43926
    rfc2202_case1 = bytes.fromhex("b617318655057264e28bc0b6fb378c8ef146be00")
    assert hmac_tag(bytes([0x0B] * 20), b"Hi There") == rfc2202_case1[:4]
    key = b"acceptance"
    rng = random.Random(6)
    flags = [Flag.NONE, Flag.CRC, Flag.HMAC, Flag.HMAC | Flag.CRC, Flag.CRC | Flag.ACKREQ]
    for _ in range(1000):
        p = CspPacket(rng.randrange(4), rng.randrange(64), rng.randrange(64), rng.randrange(64), rng.randrange(64),
                      rng.choice(flags), rng.randbytes(rng.randrange(0, 200)))
        assert decode_packet(encode_packet(p, key), key) == p
    raw = encode_packet(CspPacket(2, 5, 9, 10, 33, Flag.CRC, rng.randbytes(56)))
    assert len(raw) == 64
    for bit in range(512):
        bad = bytearray(raw)
        bad[bit // 8] ^= 0x80 >> (bit % 8)
        with pytest.raises(PacketError):
            decode_packet(bytes(bad), require_crc=True)
    assert time.perf_counter() - t0 < 10.0


@pytest.mark.criterion(7, "1.1 MB over a lossy 9600 bit/s link and lossless resume")
def test_criterion_07_file_transfer(tmp_path):
    t0 = time.perf_counter()
    blob = random.Random(7).randbytes(1_100_000)
    client, sat, net = link_pair(tmp_path / "sat", LinkConfig(bandwidth_bps=9600, loss_rate=0.1, seed=42))
    out = client.upload(blob, "blob.bin")
    assert out.state == "Complete" and sat.storage.read("blob.bin") == blob
    down = client.download("blob.bin", store=SessionStore(tmp_path / "ground"))
    assert down.data == blob

    store = SessionStore(tmp_path / "ground")
    cut, _, _ = link_pair(tmp_path / "sat", LinkConfig(bandwidth_bps=9600, contact_windows=[(0.0, 300.0)]), sat=sat)
    with pytest.raises(LinkLost):
        cut.download("blob.bin", session_id=77, store=store)
    have = store.load(77).n_received
    assert 0 < have < down.chunk_count
    resume, _, _ = link_pair(tmp_path / "sat", LinkConfig(bandwidth_bps=9600), sat=sat)
    again = resume.download("blob.bin", session_id=77, store=store)
    assert again.data == blob
    assert again.chunks_sent == down.chunk_count - have
    assert again.redundant_chunks == 0

    up_cut, _, _ = link_pair(tmp_path / "sat", LinkConfig(bandwidth_bps=9600, contact_windows=[(0.0, 300.0)]), sat=sat)
    with pytest.raises(LinkLost):
        up_cut.upload(blob, "again.bin", session_id=78)
    session = sat.ftp.up[78]
    got = session.n_received
    up_resume, _, _ = link_pair(tmp_path / "sat", LinkConfig(bandwidth_bps=9600), sat=sat)
    up = up_resume.upload(blob, "again.bin", session_id=78)
    assert sat.storage.read("again.bin") == blob
    assert up.chunks_sent == up.chunk_count - got
    assert max(session.receipts.values()) == 1
    assert time.perf_counter() - t0 < 10.0


@pytest.mark.criterion(8, "Otsu threshold equals exhaustive search")
def test_criterion_08_otsu():
    rng = np.random.default_rng(8)
    for _ in range(100):
        hist = rng.integers(0, 1000, 256) * (rng.random(256) < rng.uniform(0.02, 1.0))
        if hist.sum() == 0:
            hist[rng.integers(256)] = 1
        assert otsu_threshold(hist).threshold == otsu_brute([int(v) for v in hist])


@pytest.mark.criterion(9, "cluster detection equals flood fill")
def test_criterion_09_clusters():
    rng = np.random.default_rng(9)
    for _ in range(100):
        h, w = (int(v) for v in rng.integers(1, 65, 2))
        mask = rng.random((h, w)) < rng.uniform(0.05, 0.7)
        img = np.where(mask, rng.integers(128, 256, (h, w)), rng.integers(0, 128, (h, w))).astype(np.uint8)
        det = detect_clusters(img, 127, timestamp=0.0)
        got = [(c.pixel_count, c.bbox, c.peak_intensity) for c in det.clusters]
        assert got == flood_fill_clusters(mask.tolist(), img.tolist())


def _successors(table):
    yield slot_boot(table)[1]
    yield slot_boot(table, watchdog_fired=True)[1]
    yield slot_boot(table, ground_confirm=True)[1]
    for s in range(N_SLOTS):
        try:
            yield stage_update(table, s, f"bundle-{s}")
        except SlotError:
            pass


@pytest.mark.criterion(10, "slot manager recovers within 4 boots and never boots a dead slot")
def test_criterion_10_slots():
    bootable = (SlotStatus.COMMITTED, SlotStatus.TRIAL)
    start = SlotTable((Slot("base", SlotStatus.COMMITTED),) + (Slot(),) * (N_SLOTS - 1), 0)
    seen, queue = {start.state_key()}, deque([start])
    while queue:
        table = queue.popleft()
        for watchdog, confirm in ((False, False), (True, False), (False, True)):
            slot, _ = slot_boot(table, watchdog, confirm)
            assert slot == SAFE_MODE or table.status(slot) in bootable
        # after a watchdog failure, keep failing: a committed slot or safe mode must follow within 4 boots
        cur, reached = table, False
        for _ in range(4):
            slot, cur = slot_boot(cur, watchdog_fired=True)
            assert slot == SAFE_MODE or cur.status(slot) in bootable
            if slot == SAFE_MODE or cur.status(slot) is SlotStatus.COMMITTED:
                reached = True
                break
        assert reached
        for nxt in _successors(table):
            nxt = SlotTable(nxt.slots, nxt.boot_pointer)
            if nxt.state_key() not in seen:
                seen.add(nxt.state_key())
                queue.append(nxt)
    assert len(seen) > 20


@pytest.mark.criterion(11, "quantization error bound and int8 accuracy")
def test_criterion_11_quantization():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        shape = tuple(int(v) for v in rng.integers(1, 16, rng.integers(1, 4)))
        x = rng.uniform(-50, 50) + rng.uniform(0.01, 40) * rng.standard_normal(shape)
        q = quantize_affine(x)
        # half a step, plus float rounding in the dequantize multiply
        assert np.all(np.abs(x - dequantize(q)) <= q.scale / 2 * (1 + 1e-9))
    acc_float, acc_int8 = int8_vs_float_accuracy()
    assert abs(acc_float - acc_int8) <= 0.02


@pytest.mark.criterion(12, "device verdict at 4.118 s and monotonicity")
def test_criterion_12_verdicts():
    realtime = scenario_budget(Scenario.REALTIME, CAMERA, ORBIT)
    assert abs(realtime.per_image_latency_s - 4.42) <= 0.01
    row = DeviceMeasurement("accelerator", 4.118, 1500, 3000, 10**10)
    assert evaluate_device(row, realtime).latency_ok
    rng = random.Random(12)
    checks = ("latency_ok", "nominal_power_ok", "peak_power_ok", "storage_ok", "passed")
    for _ in range(1000):
        scenario = rng.choice(list(Scenario))
        budget = scenario_budget(scenario, CAMERA, ORBIT, strict_margin=rng.random() < 0.5)
        avg = rng.uniform(1, 5000)
        m = DeviceMeasurement("d", rng.uniform(0.01, 500), avg, avg * rng.uniform(1, 3), rng.randrange(10**11))
        worse_avg = avg * rng.uniform(1, 2)
        worse = DeviceMeasurement("d", m.full_image_latency_s * rng.uniform(1, 2), worse_avg,
                                  max(m.peak_power_mw * rng.uniform(1, 2), worse_avg),
                                  int(m.storage_bytes * rng.uniform(0, 1)))
        before, after = evaluate_device(m, budget), evaluate_device(worse, budget)
        for field in checks:
            assert getattr(before, field) or not getattr(after, field)
