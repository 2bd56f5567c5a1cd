"""Builds a ground client talking to one satellite over a simulated link."""

from cubesat_ipu.csp.network import Node
from cubesat_ipu.ground.channel import SimChannel
from cubesat_ipu.ground.client import GroundClient
from cubesat_ipu.linksim import LinkConfig, SimNetwork
from cubesat_ipu.satellite import Satellite

KEY = b"test-key"


def link_pair(root, cfg: LinkConfig, sat: Satellite | None = None, timeout=2.0, retries=8, key=KEY):
    net = SimNetwork(cfg)
    ground = Node(10, key)
    net.add(ground, "ground")
    if sat is None:
        sat = Satellite(1, root, key, clock=lambda: 1_700_000_000.0 + net.loop.now, seed=0)
    net.add(sat.node, "space")
    client = GroundClient(SimChannel(net, ground), 1, timeout, retries)
    return client, sat, net
