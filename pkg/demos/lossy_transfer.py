"""Upload a file over a lossy UHF link, lose contact halfway through a download and resume.

Everything runs in virtual time: several minutes of 9600 bit/s radio time
pass in about a second of wall clock.

    python3 demos/lossy_transfer.py
"""

import os
import tempfile
from pathlib import Path

from cubesat_ipu.csp.network import Node
from cubesat_ipu.ground.channel import SimChannel
from cubesat_ipu.ground.client import GroundClient, LinkLost
from cubesat_ipu.linksim import LinkConfig, SimNetwork
from cubesat_ipu.satellite import Satellite
from cubesat_ipu.services.ftp import SessionStore

KEY = b"demo-key"


def connect(sat_root, cfg, sat=None):
    net = SimNetwork(cfg)
    ground = Node(10, KEY)
    net.add(ground, "ground")
    sat = sat or Satellite(1, sat_root, KEY, clock=lambda: net.loop.now)
    net.add(sat.node, "space")
    return GroundClient(SimChannel(net, ground), 1, timeout_s=2.0), sat, net


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    blob = os.urandom(300_000)

    client, sat, net = connect(tmp / "sat", LinkConfig(bandwidth_bps=9600, loss_rate=0.1, seed=42))
    up = client.upload(blob, "science/blob.bin")
    print(f"upload: {up.chunk_count} chunks, {up.chunks_sent} sends, {up.rounds} rounds, "
          f"{net.loop.now:.0f} s of link time")

    store = SessionStore(tmp / "ground")
    client, _, net = connect(None, LinkConfig(bandwidth_bps=9600, contact_windows=[(0, 150)]), sat)
    try:
        client.download("science/blob.bin", session_id=7, store=store)
    except LinkLost:
        print(f"contact lost with {store.load(7).n_received} chunks on the ground")

    client, _, _ = connect(None, LinkConfig(bandwidth_bps=9600), sat)
    down = client.download("science/blob.bin", session_id=7, store=store)
    print(f"resumed: {down.chunks_sent} more chunks, {down.redundant_chunks} redundant, "
          f"intact={down.data == blob}")
