import random

import pytest

from cubesat_ipu.csp.kiss import kiss_frame
from cubesat_ipu.csp.network import PORT_PING, DropReason, Node
from cubesat_ipu.csp.packet import CspPacket, Flag, encode_packet
from cubesat_ipu.linksim import (
    DELIVERED,
    DROPPED,
    OUT_OF_CONTACT,
    EventLoop,
    LinkConfig,
    LivelockError,
    RadioLink,
    SimNetwork,
    run_until_idle,
    transmit,
)


def test_serialization_examples():
    link = RadioLink(LinkConfig(bandwidth_bps=9600))
    tx = transmit(link, 5.0, bytes(1200))
    assert (tx.outcome, tx.t_start, tx.t_end) == (DELIVERED, 5.0, 6.0)
    assert link.serialization_delay(61_074_432) == pytest.approx(50_895.36, abs=1e-6)


def test_overhead_counts():
    link = RadioLink(LinkConfig(bandwidth_bps=8000, per_packet_overhead=10))
    assert link.serialization_delay(990) == pytest.approx(1.0)


def test_lossless_delivers_everything_fifo():
    link = RadioLink(LinkConfig())
    txs = [link.transmit(0.0, bytes(120)) for _ in range(50)]
    assert all(t.outcome == DELIVERED for t in txs)
    assert [t.t_start for t in txs] == pytest.approx([0.1 * k for k in range(50)])


def test_directions_are_independent():
    link = RadioLink(LinkConfig(bandwidth_bps=9600))
    up = link.transmit(0.0, bytes(1200), "up")
    down = link.transmit(0.0, bytes(1200), "down")
    assert up.t_start == down.t_start == 0.0
    assert link.busy_until("up") == link.busy_until("down") == 1.0


def test_loss_follows_seeded_draws():
    cfg = LinkConfig(loss_rate=0.3, seed=42)
    link = RadioLink(cfg)
    outcomes = [link.transmit(0.0, b"x").outcome for _ in range(500)]
    rng = random.Random(42)
    assert outcomes == [DROPPED if rng.random() < 0.3 else DELIVERED for _ in range(500)]


def test_contact_windows():
    cfg = LinkConfig(bandwidth_bps=8, contact_windows=[(10.0, 20.0), (30.0, 40.0)], loss_rate=0.5, seed=1)
    link = RadioLink(cfg)
    assert link.transmit(5.0, b"a").outcome == OUT_OF_CONTACT
    assert link.transmit(19.5, b"a").outcome == OUT_OF_CONTACT  # would end at 20.5
    assert link.next_contact(25.0) == 30.0 and link.next_contact(45.0) is None
    assert link.in_contact(10.0) and not link.in_contact(20.0)
    # out-of-contact frames consume no random draws
    twin = RadioLink(cfg)
    a = [link.transmit(12.0, b"a").outcome for _ in range(5)]
    b = [twin.transmit(12.0, b"a").outcome for _ in range(5)]
    assert a == b


def test_bad_configs():
    for kw in ({"bandwidth_bps": 0}, {"loss_rate": 1.5}, {"contact_windows": [(5, 5)]},
               {"contact_windows": [(0, 10), (5, 20)]}):
        with pytest.raises(ValueError):
            LinkConfig(**kw)
    with pytest.raises(ValueError):
        LinkConfig.from_json({"bandwidth": 1})


def test_event_loop_order_and_guards():
    loop = EventLoop()
    seen = []
    loop.call_at(2.0, seen.append, "b")
    loop.call_at(1.0, seen.append, "a")
    loop.call_at(2.0, seen.append, "c")
    loop.run()
    assert seen == ["a", "b", "c"] and loop.now == 2.0
    with pytest.raises(ValueError):
        loop.call_at(1.0, seen.append, "late")

    def again():
        loop.call_later(1.0, again)
    loop.call_later(0, again)
    with pytest.raises(LivelockError):
        loop.run(max_time=100.0)


def _pair(cfg, ground_key=None, sat_key=None):
    net = SimNetwork(cfg)
    net.add(Node(10, ground_key), "ground")
    sat = net.add(Node(1, sat_key), "space")
    return net, sat


def test_empty_traffic_empty_log():
    net, _ = _pair(LinkConfig())
    assert run_until_idle(net) == []


def test_ping_rtt_is_both_serialization_delays():
    net, _ = _pair(LinkConfig(bandwidth_bps=9600))
    got = []
    net.nodes[10].bind(40, lambda node, p: got.append(net.loop.now), "client")
    ping = CspPacket(2, 10, 1, PORT_PING, 40, Flag.NONE, b"hello")
    net.send(ping)
    net.run_until_idle()
    frame_up = kiss_frame(encode_packet(ping.with_flags(Flag.CRC)))
    frame_down = kiss_frame(encode_packet(ping.reply(b"hello").with_flags(Flag.CRC)))
    assert got == [pytest.approx((len(frame_up) + len(frame_down)) * 8 / 9600)]
    assert [e.outcome for e in net.link.log] == [DELIVERED, DELIVERED]


def test_identical_seeds_identical_logs():
    def run():
        net, _ = _pair(LinkConfig(loss_rate=0.2, seed=7))
        for i in range(100):
            net.send(CspPacket(2, 10, 1, PORT_PING, 40, Flag.NONE, bytes([i]) * i))
        net.run_until_idle()
        return net.link.log_jsonl()
    assert run() == run()
    assert run().count("Dropped") > 0


def test_key_mismatch_is_auth_failure():
    net, _ = _pair(LinkConfig(), ground_key=b"a", sat_key=b"b")
    out = net.route_and_deliver(CspPacket(2, 10, 1, PORT_PING, 40, Flag.NONE, b"x"))
    assert out.reason is DropReason.AUTH


def test_unroutable_is_immediate():
    net, _ = _pair(LinkConfig())
    assert net.send(CspPacket(2, 10, 50, 1, 40)).reason is DropReason.NO_ROUTE
