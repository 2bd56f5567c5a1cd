"""Ground segment: client, channels, topology files and the ``ipu-ground`` CLI."""

from .channel import Channel, SimChannel, TcpChannel, serve_tcp
from .client import GroundClient, LinkLost, LinkTimeout, RemoteError, TransferAborted, TransferOutcome
from .topology import Topology, TopologyError, connect, load_topology

__all__ = [name for name in dir() if not name.startswith("_")]
