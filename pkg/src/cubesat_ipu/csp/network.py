"""Nodes, port-bound services and direct (zero-latency) routing."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .packet import CspPacket
from .params import ParameterTable, handle_param_request

log = logging.getLogger(__name__)

PORT_PING = 1
PORT_REBOOT = 2
PORT_PARAM = 3
PORT_SHUTDOWN = 4
CORE_PORTS = (PORT_PING, PORT_REBOOT, PORT_PARAM, PORT_SHUTDOWN)

Handler = Callable[["Node", CspPacket], Optional[Iterable[CspPacket]]]


class DropReason(enum.Enum):
    NO_ROUTE = "NoRoute"
    NO_SERVICE = "NoService"
    CORRUPT = "CrcMismatch"
    AUTH = "AuthFailure"
    MALFORMED = "Malformed"
    LOST = "Dropped"
    OUT_OF_CONTACT = "OutOfContact"


@dataclass
class DeliveryOutcome:
    delivered: bool
    reason: DropReason | None = None
    replies: list[CspPacket] = field(default_factory=list)

    def __repr__(self):
        if self.delivered:
            return f"Delivered(replies={len(self.replies)})"
        return f"Dropped({self.reason.value})"


@dataclass(frozen=True)
class NodeIdentity:
    address: int
    services: dict[int, str]
    hmac_key: bytes | None = None


def ping_handler(node, packet):
    return [packet.reply(packet.payload)]


def param_handler(node, packet):
    if node.before_param is not None:
        node.before_param(packet)
    return [packet.reply(handle_param_request(node.params, packet.payload))]


class Node:
    """A network endpoint with its own parameter table and port services.

    Core services are bound at construction and cannot be unbound; reboot
    and shutdown call ``on_reboot``/``on_shutdown`` hooks when set.
    """

    def __init__(self, address: int, hmac_key: bytes | None = None, params: ParameterTable | None = None):
        if not 0 <= address <= 63:
            raise ValueError(f"address {address} does not fit 6 bits")
        self.address = address
        self.hmac_key = hmac_key
        self.params = params if params is not None else ParameterTable()
        self.services: dict[int, tuple[str, Handler]] = {}
        self.on_reboot: Callable[[Node, CspPacket], bytes] | None = None
        self.on_shutdown: Callable[[Node, CspPacket], bytes] | None = None
        self.before_param: Callable[[CspPacket], None] | None = None
        self.running = True
        self.bind(PORT_PING, ping_handler, "ping")
        self.bind(PORT_REBOOT, self._reboot, "reboot")
        self.bind(PORT_PARAM, param_handler, "param")
        self.bind(PORT_SHUTDOWN, self._shutdown, "shutdown")

    def bind(self, port: int, handler: Handler, name: str | None = None) -> None:
        if not 0 <= port <= 63:
            raise ValueError(f"port {port} does not fit 6 bits")
        if port in self.services:
            raise ValueError(f"port {port} already bound to {self.services[port][0]}")
        self.services[port] = (name or getattr(handler, "__name__", "handler"), handler)

    def unbind(self, port: int) -> None:
        if port in CORE_PORTS:
            raise ValueError("core service ports stay bound")
        self.services.pop(port, None)

    @property
    def identity(self) -> NodeIdentity:
        return NodeIdentity(self.address, {p: n for p, (n, _) in self.services.items()}, self.hmac_key)

    def handle(self, packet: CspPacket) -> DeliveryOutcome:
        bound = self.services.get(packet.dst_port)
        if bound is None:
            return DeliveryOutcome(False, DropReason.NO_SERVICE)
        replies = bound[1](self, packet)
        return DeliveryOutcome(True, replies=list(replies or ()))

    def _reboot(self, node, packet):
        body = self.on_reboot(self, packet) if self.on_reboot else b"rebooting"
        return [packet.reply(body)]

    def _shutdown(self, node, packet):
        self.running = False
        body = self.on_shutdown(self, packet) if self.on_shutdown else b"shutdown"
        return [packet.reply(body)]


class Network:
    """In-process network: every node reachable with zero delay.

    Replies produced by a handler are returned to the caller rather than
    routed, which keeps single request/response exchanges synchronous.
    """

    def __init__(self, nodes: Iterable[Node] = ()):
        self.nodes: dict[int, Node] = {}
        for n in nodes:
            self.add(n)

    def add(self, node: Node) -> None:
        if node.address in self.nodes:
            raise ValueError(f"duplicate address {node.address}")
        self.nodes[node.address] = node

    def route_and_deliver(self, packet: CspPacket) -> DeliveryOutcome:
        node = self.nodes.get(packet.dst)
        if node is None:
            return DeliveryOutcome(False, DropReason.NO_ROUTE)
        return node.handle(packet)


def route_and_deliver(network: Network, packet: CspPacket) -> DeliveryOutcome:
    return network.route_and_deliver(packet)
