from cubesat_ipu.csp.network import (
    PORT_PARAM,
    PORT_PING,
    PORT_REBOOT,
    PORT_SHUTDOWN,
    DropReason,
    Network,
    Node,
    route_and_deliver,
)
from cubesat_ipu.csp.packet import CspPacket, Flag
from cubesat_ipu.csp.params import decode_param_response, encode_set
from cubesat_ipu.linksim import LinkConfig, SimNetwork


def test_ping_echo():
    net = Network([Node(1), Node(10)])
    out = route_and_deliver(net, CspPacket(2, 10, 1, PORT_PING, 40, Flag.NONE, b"hello"))
    assert out.delivered
    (reply,) = out.replies
    assert (reply.payload, reply.dst, reply.dst_port) == (b"hello", 10, 40)


def test_no_route_and_no_service():
    net = Network([Node(1)])
    assert route_and_deliver(net, CspPacket(dst=63, dst_port=1)).reason is DropReason.NO_ROUTE
    assert route_and_deliver(net, CspPacket(dst=1, dst_port=30)).reason is DropReason.NO_SERVICE


def test_core_services_bound():
    n = Node(5)
    assert {PORT_PING, PORT_REBOOT, PORT_PARAM, PORT_SHUTDOWN} <= set(n.identity.services)
    out = n.handle(CspPacket(dst=5, dst_port=PORT_SHUTDOWN))
    assert out.delivered and not n.running


def test_param_over_network():
    n = Node(1)
    n.params.define("ipu_capture_flag", False)
    out = Network([n]).route_and_deliver(CspPacket(dst=1, dst_port=PORT_PARAM,
                                                   payload=encode_set("ipu_capture_flag", True)))
    assert decode_param_response(out.replies[0].payload)["value"] is True


def test_in_order_delivery_over_link():
    seen = []
    sat = Node(1)
    sat.bind(20, lambda node, p: seen.append(p.payload), "sink")
    net = SimNetwork(LinkConfig(bandwidth_bps=9600))
    net.add(Node(10), "ground")
    net.add(sat, "space")
    for i in range(20):
        net.send(CspPacket(2, 10, 1, 20, 20, Flag.NONE, bytes([i]) * (1 + (7 * i) % 50)))
    net.run_until_idle()
    assert [p[0] for p in seen] == list(range(20))
