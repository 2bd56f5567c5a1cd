"""Lightweight CubeSat-style protocol stack."""

from .integrity import CRC32_RESIDUE, ConfigurationError, crc32_of, hmac_tag
from .kiss import FEND, FESC, TFEND, TFESC, KissDeframer, kiss_frame, kiss_unframe
from .network import (
    CORE_PORTS,
    PORT_PARAM,
    PORT_PING,
    PORT_REBOOT,
    PORT_SHUTDOWN,
    DeliveryOutcome,
    DropReason,
    Network,
    Node,
    NodeIdentity,
    route_and_deliver,
)
from .packet import (
    MAX_PAYLOAD,
    AuthFailure,
    CrcMismatch,
    CspPacket,
    Flag,
    MalformedPacket,
    PacketError,
    ShortFrame,
    decode_packet,
    encode_packet,
)
from .params import NotWritable, ParameterTable, ParamError, TypeMismatch, UnknownParameter

__all__ = [name for name in dir() if not name.startswith("_")]
