"""Deterministic virtual-time radio link between ground and space segments.

Nothing here sleeps: a multi-day transfer at 9600 bit/s runs as fast as the
Python event loop can pop events.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
import json
import logging
import random
from dataclasses import asdict, dataclass, field
from typing import Callable

from .csp.kiss import kiss_frame, kiss_unframe
from .csp.network import DeliveryOutcome, DropReason, Node
from .csp.packet import AuthFailure, CrcMismatch, CspPacket, Flag, PacketError, decode_packet, encode_packet

log = logging.getLogger(__name__)

UHF_BPS = 9600
SBAND_BPS = 10_000_000

DELIVERED = "Delivered"
DROPPED = "Dropped"
OUT_OF_CONTACT = "OutOfContact"


class LivelockError(RuntimeError):
    pass


@dataclass
class LinkConfig:
    bandwidth_bps: float = UHF_BPS
    loss_rate: float = 0.0
    # None means permanently in contact
    contact_windows: list[tuple[float, float]] | None = None
    seed: int = 0
    per_packet_overhead: int = 0

    def __post_init__(self):
        if self.bandwidth_bps <= 0:
            raise ValueError("bandwidth must be positive")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must be in [0, 1]")
        if self.per_packet_overhead < 0:
            raise ValueError("overhead must be non-negative")
        if self.contact_windows is not None:
            wins = [(float(a), float(b)) for a, b in self.contact_windows]
            for a, b in wins:
                if b <= a:
                    raise ValueError(f"empty contact window ({a}, {b})")
            for (_, e0), (s1, _) in zip(wins, wins[1:]):
                if s1 < e0:
                    raise ValueError("contact windows must be sorted and non-overlapping")
            self.contact_windows = wins

    @classmethod
    def from_json(cls, obj: dict) -> LinkConfig:
        known = {"bandwidth_bps", "loss_rate", "contact_windows", "seed", "per_packet_overhead"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown link config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LinkEvent:
    t_s: float
    direction: str
    bytes: int
    outcome: str
    t_end_s: float | None = None


@dataclass(frozen=True)
class Transmission:
    outcome: str
    t_start: float
    t_end: float

    @property
    def delivered(self) -> bool:
        return self.outcome == DELIVERED


class RadioLink:
    """Full-duplex link: each direction serialises its own frames FIFO."""

    def __init__(self, config: LinkConfig):
        self.config = config
        self._rng = random.Random(config.seed)
        self._busy_until = {"up": 0.0, "down": 0.0}
        self.log: list[LinkEvent] = []
        wins = config.contact_windows
        self._starts = [a for a, _ in wins] if wins is not None else None

    def _window_at(self, t: float):
        wins = self.config.contact_windows
        if wins is None:
            return (float("-inf"), float("inf"))
        i = bisect.bisect_right(self._starts, t) - 1
        if i >= 0 and wins[i][0] <= t < wins[i][1]:
            return wins[i]
        return None

    def in_contact(self, t: float) -> bool:
        return self._window_at(t) is not None

    def next_contact(self, t: float) -> float | None:
        """Earliest time >= t at which the link is in contact."""
        if self.in_contact(t):
            return t
        wins = self.config.contact_windows
        i = bisect.bisect_right(self._starts, t)
        return wins[i][0] if i < len(wins) else None

    def serialization_delay(self, nbytes: int) -> float:
        return 8 * (nbytes + self.config.per_packet_overhead) / self.config.bandwidth_bps

    def busy_until(self, direction: str) -> float:
        return self._busy_until[direction]

    def transmit(self, t_now: float, frame: bytes, direction: str = "down") -> Transmission:
        if not frame:
            raise ValueError("cannot transmit an empty frame")
        start = max(t_now, self._busy_until[direction])
        end = start + self.serialization_delay(len(frame))
        win = self._window_at(start)
        if win is None or end > win[1]:
            tx = Transmission(OUT_OF_CONTACT, start, end)
        else:
            self._busy_until[direction] = end
            lost = self._rng.random() < self.config.loss_rate
            tx = Transmission(DROPPED if lost else DELIVERED, start, end)
        self.log.append(LinkEvent(t_now, direction, len(frame), tx.outcome, tx.t_end))
        return tx

    def log_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.log)


def transmit(link: RadioLink, t_now: float, frame: bytes, direction: str = "down") -> Transmission:
    return link.transmit(t_now, frame, direction)


class EventLoop:
    def __init__(self):
        self.now = 0.0
        self._queue: list = []
        self._seq = itertools.count()

    def call_at(self, t: float, fn: Callable, *args) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule in the past ({t} < {self.now})")
        heapq.heappush(self._queue, (t, next(self._seq), fn, args))

    def call_later(self, delay: float, fn: Callable, *args) -> None:
        self.call_at(self.now + delay, fn, *args)

    @property
    def idle(self) -> bool:
        return not self._queue

    def next_time(self) -> float | None:
        return self._queue[0][0] if self._queue else None

    def step(self) -> None:
        t, _, fn, args = heapq.heappop(self._queue)
        self.now = t
        fn(*args)

    def run(self, until: float | None = None, stop: Callable[[], bool] | None = None,
            max_time: float = 1e9) -> None:
        """Process events in time order.

        Stops when idle, when ``stop()`` turns true, or when the next event
        lies past ``until`` (the clock is then advanced to ``until``).
        """
        while self._queue:
            if stop is not None and stop():
                return
            t = self._queue[0][0]
            if until is not None and t > until:
                break
            if t > max_time:
                raise LivelockError(f"simulation exceeded {max_time} s of virtual time")
            self.step()
        if until is not None and until > self.now and not (stop is not None and stop()):
            self.now = until


@dataclass
class NetEvent:
    t_s: float
    src: int
    dst: int
    dst_port: int
    outcome: str


class SimNetwork:
    """Nodes on a ground and a space segment joined by one radio link.

    Packets crossing segments are encoded (CRC always, HMAC when the sender
    has a key), KISS framed and pushed through the :class:`RadioLink`.
    Packets within a segment are delivered at the current virtual time.
    """

    def __init__(self, link: RadioLink | LinkConfig, loop: EventLoop | None = None):
        self.link = link if isinstance(link, RadioLink) else RadioLink(link)
        self.loop = loop or EventLoop()
        self.nodes: dict[int, Node] = {}
        self.segment: dict[int, str] = {}
        self.events: list[NetEvent] = []
        self.frames_in_flight = 0

    def add(self, node: Node, segment: str) -> Node:
        if segment not in ("ground", "space"):
            raise ValueError("segment must be 'ground' or 'space'")
        if node.address in self.nodes:
            raise ValueError(f"duplicate address {node.address}")
        self.nodes[node.address] = node
        self.segment[node.address] = segment
        return node

    def _record(self, p: CspPacket, outcome: str) -> None:
        self.events.append(NetEvent(self.loop.now, p.src, p.dst, p.dst_port, outcome))

    def send(self, packet: CspPacket) -> DeliveryOutcome | None:
        """Inject a packet at the current virtual time.

        Returns an immediate drop outcome for unroutable packets, otherwise
        None (delivery happens later inside the event loop).
        """
        if packet.dst not in self.nodes:
            self._record(packet, DropReason.NO_ROUTE.value)
            return DeliveryOutcome(False, DropReason.NO_ROUTE)
        src_seg = self.segment.get(packet.src, "ground")
        dst_seg = self.segment[packet.dst]
        if src_seg == dst_seg:
            self.frames_in_flight += 1
            self.loop.call_at(self.loop.now, self._arrive_local, packet)
            return None
        sender = self.nodes.get(packet.src)
        key = sender.hmac_key if sender is not None else None
        flags = packet.flags | Flag.CRC
        if key:
            flags |= Flag.HMAC
        frame = kiss_frame(encode_packet(packet.with_flags(flags), key))
        direction = "up" if src_seg == "ground" else "down"
        tx = self.link.transmit(self.loop.now, frame, direction)
        if tx.delivered:
            self.frames_in_flight += 1
            self.loop.call_at(tx.t_end, self._arrive_frame, frame, packet.dst)
        else:
            self._record(packet, tx.outcome)
        return None

    def _arrive_local(self, packet):
        self.frames_in_flight -= 1
        self._deliver(self.nodes[packet.dst], packet)

    def _arrive_frame(self, frame, dst):
        self.frames_in_flight -= 1
        node = self.nodes[dst]
        frames, _ = kiss_unframe(frame)
        for raw in frames:
            try:
                packet = decode_packet(raw, node.hmac_key, require_crc=True, require_hmac=bool(node.hmac_key))
            except CrcMismatch:
                self.events.append(NetEvent(self.loop.now, -1, dst, -1, DropReason.CORRUPT.value))
                continue
            except AuthFailure:
                self.events.append(NetEvent(self.loop.now, -1, dst, -1, DropReason.AUTH.value))
                continue
            except PacketError:
                self.events.append(NetEvent(self.loop.now, -1, dst, -1, DropReason.MALFORMED.value))
                continue
            self._deliver(node, packet)

    def _deliver(self, node, packet):
        outcome = node.handle(packet)
        self._record(packet, "Delivered" if outcome.delivered else outcome.reason.value)
        for reply in outcome.replies:
            self.send(reply)
        return outcome

    def route_and_deliver(self, packet: CspPacket) -> DeliveryOutcome:
        """Send and run the loop until the packet's own delivery is recorded."""
        mark = len(self.events)
        immediate = self.send(packet)
        if immediate is not None:
            return immediate
        mine = lambda e: e.src == packet.src and e.dst == packet.dst and e.dst_port == packet.dst_port  # noqa: E731
        while True:
            for e in self.events[mark:]:
                if mine(e) or e.src == -1:
                    return _outcome_from(e.outcome)
            mark = len(self.events)
            if self.loop.idle:
                return DeliveryOutcome(False, DropReason.NO_ROUTE)
            self.loop.step()

    def run_until_idle(self, max_time: float = 1e7) -> list[LinkEvent]:
        self.loop.run(max_time=max_time)
        return self.link.log


def _outcome_from(name: str) -> DeliveryOutcome:
    if name == "Delivered":
        return DeliveryOutcome(True)
    for r in DropReason:
        if r.value == name:
            return DeliveryOutcome(False, r)
    return DeliveryOutcome(False, None)


def run_until_idle(network: SimNetwork, max_time: float = 1e7) -> list[LinkEvent]:
    return network.run_until_idle(max_time)
