"""A short operator session: inference self-test, cosmic-ray scan and a software update.

    python3 demos/payload_ops.py
"""

import tempfile
from pathlib import Path

import numpy as np

from cubesat_ipu.backend import GoldenTable, MlpBackend, MlpWeights
from cubesat_ipu.csp.network import Node
from cubesat_ipu.ground.channel import SimChannel
from cubesat_ipu.ground.client import GroundClient
from cubesat_ipu.linksim import LinkConfig, SimNetwork
from cubesat_ipu.satellite import Satellite
from cubesat_ipu.tiling import run_inference, write_frame

rng = np.random.default_rng(1)

with tempfile.TemporaryDirectory() as tmp:
    net = SimNetwork(LinkConfig(bandwidth_bps=9600))
    ground = Node(10)
    net.add(ground, "ground")
    sat = Satellite(1, Path(tmp) / "sat", clock=lambda: 1.7e9 + net.loop.now)
    net.add(sat.node, "space")
    client = GroundClient(SimChannel(net, ground), 1)

    # golden reference logits computed on the ground, then uploaded
    frame = rng.integers(0, 256, (448, 448, 3), dtype=np.uint8)
    report = run_inference(frame, MlpBackend(MlpWeights.random(rng)))
    table = GoldenTable(dict(zip(report.grid.indices(), report.per_patch_logits)))
    golden_dir = Path(tmp) / "golden"
    golden_dir.mkdir()
    write_frame(golden_dir / "frame.rgb", frame)
    for name in ("frame.rgb", "frame.rgb.json"):
        client.upload((golden_dir / name).read_bytes(), f"golden/{name}")
    client.upload(table.to_json().encode(), "golden/table.json")
    print("infer-test:", "PASS" if client.infer_test()["passed"] else "FAIL")
    print("infer-test with an injected upset:", "PASS" if client.infer_test(inject_fault=True)["passed"] else "FAIL")

    # a dark frame with two particle hits
    dark = rng.integers(0, 12, (128, 128), dtype=np.uint8)
    dark[30:33, 40:44] = 230
    dark[90, 15:22] = 200
    client.upload(dark.tobytes(), "dark/d1.gray")
    client.upload(b'{"width": 128, "height": 128, "channels": 1}', "dark/d1.gray.json")
    scan = client.ray_scan("dark/d1.gray")
    print(f"ray scan: threshold {scan['threshold']}, clusters",
          [(c["pixel_count"], tuple(c["bbox"])) for c in scan["clusters"]])

    # stage a new bundle, watchdog fires, ground retries and confirms
    client.slots("stage", slot=1, bundle_id="ipu-app-2")
    print("watchdog reboot ->", client.reboot(watchdog=True)["slot"])
    client.slots("stage", slot=2, bundle_id="ipu-app-3")
    client.slots("confirm")
    print("confirmed reboot ->", client.reboot()["slot"])
    print("run write_file ->", client.run("write_file", {"size": 2048}, time_limit_s=5)["exit_status"])
    sat.close()
