"""How the ground client reaches a node: simulated link or KISS over TCP."""

from __future__ import annotations

import collections
import logging
import socket
import threading
import time
from typing import Callable

from ..csp.kiss import KissDeframer, kiss_frame
from ..csp.network import Node
from ..csp.packet import CspPacket, Flag, PacketError, decode_packet, encode_packet
from ..linksim import SimNetwork

log = logging.getLogger(__name__)

EPHEMERAL_PORTS = range(32, 64)


class Channel:
    """Request/response plus fire-and-forget sends from one ground address."""

    address: int

    def __init__(self):
        self._data_handlers: dict[int, Callable[[CspPacket], None]] = {}
        self._inbox: dict[int, collections.deque] = {p: collections.deque() for p in EPHEMERAL_PORTS}
        self._port_cycle = iter(())

    def _next_port(self) -> int:
        try:
            return next(self._port_cycle)
        except StopIteration:
            self._port_cycle = iter(EPHEMERAL_PORTS)
            return next(self._port_cycle)

    def on_data(self, port: int, fn: Callable[[CspPacket], None] | None) -> None:
        if fn is None:
            self._data_handlers.pop(port, None)
        else:
            self._data_handlers[port] = fn

    def _dispatch(self, packet: CspPacket) -> None:
        if packet.dst_port in self._inbox:
            self._inbox[packet.dst_port].append(packet)
        elif packet.dst_port in self._data_handlers:
            self._data_handlers[packet.dst_port](packet)

    def now(self) -> float:
        raise NotImplementedError

    def request(self, dst: int, port: int, payload: bytes, timeout: float) -> CspPacket | None:
        raise NotImplementedError

    def send(self, dst: int, port: int, payload: bytes, src_port: int | None = None) -> None:
        raise NotImplementedError

    def settle(self) -> None:
        """Let traffic already in flight arrive."""

    def in_contact(self) -> bool:
        return True

    def wait_for_contact(self) -> bool:
        return True

    def contact_remaining(self) -> float:
        """Seconds left in the current contact window."""
        return float("inf")

    def frame_time(self, nbytes: int) -> float:
        """Airtime of one packet carrying ``nbytes`` of payload (0 if unknown)."""
        return 0.0

    def skip_window(self) -> None:
        """Let the current contact window run out."""


class SimChannel(Channel):
    """Drives a :class:`SimNetwork` in virtual time from the ground node."""

    def __init__(self, net: SimNetwork, ground: Node, max_virtual_s: float = 30 * 86400):
        super().__init__()
        self.net = net
        self.node = ground
        self.address = ground.address
        self.max_virtual_s = max_virtual_s
        for p in EPHEMERAL_PORTS:
            ground.bind(p, self._on_packet, f"client-{p}")

    def _on_packet(self, node, packet):
        self._dispatch(packet)
        return None

    def bind_data_port(self, port: int) -> None:
        if port not in self.node.services:
            self.node.bind(port, self._on_packet, f"data-{port}")

    def on_data(self, port, fn):
        if fn is not None:
            self.bind_data_port(port)
        super().on_data(port, fn)

    def now(self) -> float:
        return self.net.loop.now

    def _packet(self, dst, port, payload, src_port):
        return CspPacket(2, self.address, dst, port, src_port, Flag.NONE, payload)

    def request(self, dst, port, payload, timeout):
        sport = self._next_port()
        box = self._inbox[sport]
        box.clear()
        out = self.net.send(self._packet(dst, port, payload, sport))
        if out is not None and not out.delivered:
            return None
        loop = self.net.loop
        loop.run(until=loop.now + timeout, stop=lambda: bool(box), max_time=self.max_virtual_s)
        return box.popleft() if box else None

    def send(self, dst, port, payload, src_port=None):
        self.net.send(self._packet(dst, port, payload, port if src_port is None else src_port))

    def settle(self):
        self.net.loop.run(max_time=self.max_virtual_s)

    def in_contact(self):
        return self.net.link.in_contact(self.now())

    def contact_remaining(self):
        wins = self.net.link.config.contact_windows
        if wins is None:
            return float("inf")
        now = self.now()
        for a, b in wins:
            if a <= now < b:
                return b - now
        return 0.0

    def frame_time(self, nbytes):
        # header, HMAC and CRC trailers, two FENDs, and a little escaping slack
        wire = nbytes + 4 + 4 + 4 + 2
        return self.net.link.serialization_delay(wire + wire // 64)

    def skip_window(self):
        rem = self.contact_remaining()
        if 0 < rem < float("inf"):
            self.net.loop.run(until=self.now() + rem, max_time=self.max_virtual_s)

    def wait_for_contact(self):
        t = self.net.link.next_contact(self.now())
        if t is None:
            return False
        self.net.loop.run(until=t, max_time=self.max_virtual_s)
        return True


class TcpChannel(Channel):
    """KISS-framed packets over a TCP byte stream (two-process operation)."""

    def __init__(self, host: str, port: int, address: int, hmac_key: bytes | None = None,
                 quiet_s: float = 0.3, connect_timeout: float = 5.0):
        super().__init__()
        self.address = address
        self.key = hmac_key
        self.quiet_s = quiet_s
        self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._deframer = KissDeframer()
        self._t0 = time.monotonic()

    def close(self):
        self.sock.close()

    def now(self):
        return time.monotonic() - self._t0

    def _write(self, packet: CspPacket):
        flags = packet.flags | Flag.CRC | (Flag.HMAC if self.key else Flag.NONE)
        self.sock.sendall(kiss_frame(encode_packet(packet.with_flags(flags), self.key)))

    def _pump(self, timeout: float) -> bool:
        """Read once; returns False when nothing arrived within ``timeout``."""
        self.sock.settimeout(max(timeout, 1e-3))
        try:
            data = self.sock.recv(65536)
        except socket.timeout:
            return False
        if not data:
            raise ConnectionError("bridge closed the connection")
        for raw in self._deframer.push(data):
            try:
                pkt = decode_packet(raw, self.key, require_crc=True, require_hmac=bool(self.key))
            except PacketError as exc:
                log.warning("dropping frame: %s", exc)
                continue
            self._dispatch(pkt)
        return True

    def request(self, dst, port, payload, timeout):
        sport = self._next_port()
        box = self._inbox[sport]
        box.clear()
        self._write(CspPacket(2, self.address, dst, port, sport, Flag.NONE, payload))
        deadline = time.monotonic() + timeout
        while not box:
            left = deadline - time.monotonic()
            if left <= 0:
                return None
            self._pump(left)
        return box.popleft()

    def send(self, dst, port, payload, src_port=None):
        self._write(CspPacket(2, self.address, dst, port, port if src_port is None else src_port, Flag.NONE,
                              payload))

    def settle(self):
        while self._pump(self.quiet_s):
            pass


def serve_tcp(node: Node, host: str = "127.0.0.1", port: int = 0,
              ready: Callable[[int], None] | None = None, stop: threading.Event | None = None) -> None:
    """Expose ``node`` on a TCP port, one connection at a time.

    Incoming frames are decoded with the node's key and handled; replies go
    back on the same connection.
    """
    stop = stop or threading.Event()
    key = node.hmac_key
    with socket.create_server((host, port)) as srv:
        srv.settimeout(0.2)
        if ready is not None:
            ready(srv.getsockname()[1])
        while not stop.is_set():
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                continue
            with conn:
                conn.settimeout(0.2)
                deframer = KissDeframer()
                while not stop.is_set():
                    try:
                        data = conn.recv(65536)
                    except socket.timeout:
                        continue
                    except OSError:
                        break
                    if not data:
                        break
                    for raw in deframer.push(data):
                        try:
                            pkt = decode_packet(raw, key, require_crc=True, require_hmac=bool(key))
                        except PacketError as exc:
                            log.warning("bridge dropped frame: %s", exc)
                            continue
                        if pkt.dst != node.address:
                            continue
                        for reply in node.handle(pkt).replies:
                            flags = reply.flags | Flag.CRC | (Flag.HMAC if key else Flag.NONE)
                            conn.sendall(kiss_frame(encode_packet(reply.with_flags(flags), key)))
