"""Topology files: which nodes exist, where their state lives, and the link between them.

Example::

    {
      "seed": 42,
      "link": {"bandwidth_bps": 9600, "loss_rate": 0.1},
      "ground": {"address": 10, "root": "ground"},
      "satellites": [{"address": 1, "root": "sat1"}],
      "hmac_key_hex": "00112233",
      "timeout_s": 5.0,
      "retries": 8
    }

Relative roots resolve against the topology file's directory. A
``"bridge": "tcp://host:port"`` entry replaces the simulated link with a
connection to ``ipu-ground bridge``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..csp.network import Node
from ..linksim import EventLoop, LinkConfig, RadioLink, SimNetwork
from ..satellite import Satellite
from .channel import Channel, SimChannel, TcpChannel

DEFAULT_SAT = 1
DEFAULT_GROUND = 10


class TopologyError(ValueError):
    pass


@dataclass
class NodeSpec:
    address: int
    root: Path


@dataclass
class Topology:
    link: LinkConfig = field(default_factory=LinkConfig)
    ground: NodeSpec = field(default_factory=lambda: NodeSpec(DEFAULT_GROUND, Path("ipu-sim/ground")))
    satellites: list[NodeSpec] = field(default_factory=lambda: [NodeSpec(DEFAULT_SAT, Path("ipu-sim/sat1"))])
    hmac_key: bytes | None = None
    epoch_s: float = 0.0
    timeout_s: float | None = None
    retries: int = 8
    bridge: str | None = None

    def satellite(self, address: int | None) -> NodeSpec:
        if address is None:
            return self.satellites[0]
        for s in self.satellites:
            if s.address == address:
                return s
        raise TopologyError(f"no satellite with address {address}")

    def request_timeout(self) -> float:
        """Long enough for a full-size frame each way plus processing slack."""
        if self.timeout_s is not None:
            return self.timeout_s
        frame_s = (1100 + self.link.per_packet_overhead) * 8 / self.link.bandwidth_bps
        return 4 * frame_s + 1.0


def _node(obj, base: Path, what: str) -> NodeSpec:
    try:
        addr = int(obj["address"])
        root = Path(obj["root"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TopologyError(f"{what}: needs integer 'address' and string 'root'") from exc
    if not 0 <= addr < 64:
        raise TopologyError(f"{what}: address {addr} outside 0..63")
    return NodeSpec(addr, root if root.is_absolute() else base / root)


def load_topology(path: str | Path | None, seed: int | None = None) -> Topology:
    if path is None:
        topo = Topology()
    else:
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise TopologyError(f"cannot read topology {path}: {exc}") from exc
        base = path.parent
        try:
            link = dict(obj.get("link", {}))
            if "seed" in obj and "seed" not in link:
                link["seed"] = int(obj["seed"])
            sats = [_node(s, base, f"satellites[{i}]") for i, s in enumerate(obj.get("satellites", []))]
            topo = Topology(
                link=LinkConfig.from_json(link),
                ground=_node(obj["ground"], base, "ground") if "ground" in obj else NodeSpec(DEFAULT_GROUND, base / "ground"),
                satellites=sats or [NodeSpec(DEFAULT_SAT, base / "sat1")],
                hmac_key=bytes.fromhex(obj["hmac_key_hex"]) if obj.get("hmac_key_hex") else None,
                epoch_s=float(obj.get("epoch_s", 0.0)),
                timeout_s=float(obj["timeout_s"]) if "timeout_s" in obj else None,
                retries=int(obj.get("retries", 8)),
                bridge=obj.get("bridge"),
            )
        except TopologyError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise TopologyError(f"bad topology {path}: {exc}") from exc
    if seed is not None:
        topo.link.seed = seed
    return topo


@dataclass
class Session:
    """Live objects built from a topology."""

    topology: Topology
    channel: Channel
    satellites: dict[int, Satellite]
    net: SimNetwork | None = None


def connect(topo: Topology) -> Session:
    if topo.bridge:
        if not topo.bridge.startswith("tcp://"):
            raise TopologyError(f"unsupported bridge {topo.bridge!r}")
        host, _, port = topo.bridge[len("tcp://"):].rpartition(":")
        ch = TcpChannel(host or "127.0.0.1", int(port), topo.ground.address, topo.hmac_key)
        return Session(topo, ch, {})
    loop = EventLoop()
    net = SimNetwork(RadioLink(topo.link), loop)
    ground = Node(topo.ground.address, topo.hmac_key)
    net.add(ground, "ground")
    sats = {}
    for spec in topo.satellites:
        sat = Satellite(spec.address, spec.root, topo.hmac_key,
                        clock=lambda: topo.epoch_s + loop.now, seed=topo.link.seed)
        net.add(sat.node, "space")
        sats[spec.address] = sat
    return Session(topo, SimChannel(net, ground), sats, net)
