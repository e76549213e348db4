"""Address, prefix and packet types with bit-exact wire codecs.

The outer IPv6 header is the standard 40-byte fixed header. The routing
extension header carried inside it is the segment-routing header (routing
type 4): the segment list is stored in reverse path order and Segments Left
indexes the active SID.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from ipaddress import IPv4Address, IPv4Network, IPv6Address, IPv6Network
from typing import Optional, Union

from .errors import (
    AddrParseError,
    FamilyMismatchError,
    MalformedPacketError,
    TruncationError,
    UnsupportedTypeError,
)

Addr = Union[IPv4Address, IPv6Address]
Prefix = Union[IPv4Network, IPv6Network]

# Protocol numbers used in outer/SRH next_header chaining.
PROTO_IPV4_ENCAP = 4
PROTO_IPV6_ENCAP = 41
PROTO_ROUTING = 43
# Inner packets carry an opaque payload; the inner protocol number is fixed.
PROTO_OPAQUE = 253

SRH_ROUTING_TYPE = 4


def parse_addr(text: str) -> Addr:
    """Parse a textual IPv4 or IPv6 address into its canonical binary form."""
    try:
        return ipaddress.ip_address(text.strip())
    except ValueError as exc:
        raise AddrParseError(f"malformed address {text!r}") from exc


def parse_v6(text: str) -> IPv6Address:
    addr = parse_addr(text)
    if not isinstance(addr, IPv6Address):
        raise AddrParseError(f"expected an IPv6 address, got {text!r}")
    return addr


def parse_prefix(text: str) -> Prefix:
    """Parse ``base/len`` notation; a non-canonical base is normalized."""
    try:
        return ipaddress.ip_network(text.strip(), strict=False)
    except ValueError as exc:
        raise AddrParseError(f"malformed prefix {text!r}") from exc


def family_of(addr_or_prefix) -> str:
    return "v4" if addr_or_prefix.version == 4 else "v6"


def prefix_contains(prefix: Prefix, addr: Addr) -> bool:
    """True iff the first prefixlen bits of ``addr`` equal the prefix base."""
    if prefix.version != addr.version:
        raise FamilyMismatchError(
            f"prefix {prefix} and address {addr} are different families"
        )
    return addr in prefix


@dataclass(frozen=True)
class InnerPacket:
    """A pod-level packet as it exists before encapsulation.

    Serialized with a minimal fixed header (20 bytes for IPv4 without
    options, 40 bytes for IPv6); the IPv4 checksum field is carried opaque.
    """

    src: Addr
    dst: Addr
    hop_limit: int = 64
    payload: bytes = b""

    def __post_init__(self):
        if self.src.version != self.dst.version:
            raise FamilyMismatchError(
                f"inner src {self.src} and dst {self.dst} are different families"
            )
        if not 0 <= self.hop_limit <= 255:
            raise MalformedPacketError(f"hop_limit {self.hop_limit} out of range")

    @property
    def family(self) -> str:
        return family_of(self.src)

    def encode(self) -> bytes:
        if self.family == "v4":
            header = struct.pack(
                "!BBHHHBBH4s4s",
                0x45,  # version 4, IHL 5
                0,
                20 + len(self.payload),
                0,
                0,
                self.hop_limit,
                PROTO_OPAQUE,
                0,  # checksum carried opaque, never recomputed
                self.src.packed,
                self.dst.packed,
            )
        else:
            header = struct.pack(
                "!IHBB16s16s",
                6 << 28,
                len(self.payload),
                PROTO_OPAQUE,
                self.hop_limit,
                self.src.packed,
                self.dst.packed,
            )
        return header + self.payload


def decode_inner(data: bytes) -> InnerPacket:
    """Inverse of :meth:`InnerPacket.encode`; family read from the version nibble."""
    if not data:
        raise TruncationError("empty inner packet")
    version = data[0] >> 4
    if version == 4:
        if len(data) < 20:
            raise TruncationError("IPv4 inner packet shorter than 20 bytes")
        total_length = struct.unpack_from("!H", data, 2)[0]
        if total_length != len(data):
            raise TruncationError(
                f"IPv4 total length {total_length} != buffer {len(data)}"
            )
        return InnerPacket(
            src=IPv4Address(data[12:16]),
            dst=IPv4Address(data[16:20]),
            hop_limit=data[8],
            payload=data[20:],
        )
    if version == 6:
        if len(data) < 40:
            raise TruncationError("IPv6 inner packet shorter than 40 bytes")
        payload_length = struct.unpack_from("!H", data, 4)[0]
        if payload_length != len(data) - 40:
            raise TruncationError(
                f"IPv6 payload length {payload_length} != buffer {len(data) - 40}"
            )
        return InnerPacket(
            src=IPv6Address(data[8:24]),
            dst=IPv6Address(data[24:40]),
            hop_limit=data[7],
            payload=data[40:],
        )
    raise MalformedPacketError(f"inner version nibble {version} is neither 4 nor 6")


@dataclass(frozen=True)
class Srh:
    """Segment Routing Header.

    ``segment_list`` is stored in reverse path order: entry ``last_entry``
    is the first segment the packet visits and entry 0 is the last.
    """

    next_header: int
    segments_left: int
    segment_list: tuple[IPv6Address, ...]
    flags: int = 0
    tag: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segment_list", tuple(self.segment_list))
        if not self.segment_list:
            raise MalformedPacketError("segment list must not be empty")
        if len(self.segment_list) > 128:
            raise MalformedPacketError("segment list exceeds 128 entries")
        if not 0 <= self.segments_left <= self.last_entry:
            raise MalformedPacketError(
                f"segments_left {self.segments_left} > last_entry {self.last_entry}"
            )
        for name in ("next_header", "flags"):
            if not 0 <= getattr(self, name) <= 0xFF:
                raise MalformedPacketError(f"{name} out of 8-bit range")
        if not 0 <= self.tag <= 0xFFFF:
            raise MalformedPacketError("tag out of 16-bit range")

    @property
    def last_entry(self) -> int:
        return len(self.segment_list) - 1

    @property
    def hdr_ext_len(self) -> int:
        return 2 * len(self.segment_list)

    @property
    def active_segment(self) -> IPv6Address:
        return self.segment_list[self.segments_left]


def encode_srh(h: Srh) -> bytes:
    """Serialize: fixed 8 bytes then each 16-byte SID in stored order."""
    head = struct.pack(
        "!BBBBBBH",
        h.next_header,
        h.hdr_ext_len,
        SRH_ROUTING_TYPE,
        h.segments_left,
        h.last_entry,
        h.flags,
        h.tag,
    )
    return head + b"".join(sid.packed for sid in h.segment_list)


def decode_srh(data: bytes) -> Srh:
    if len(data) < 8:
        raise TruncationError("SRH shorter than its 8 fixed bytes")
    next_header, hdr_ext_len, routing_type, segments_left, last_entry, flags, tag = (
        struct.unpack_from("!BBBBBBH", data)
    )
    if routing_type != SRH_ROUTING_TYPE:
        raise UnsupportedTypeError(f"unsupported routing type {routing_type}")
    expected = 8 + 8 * hdr_ext_len
    if len(data) != expected:
        raise TruncationError(
            f"SRH claims {expected} bytes (hdr_ext_len={hdr_ext_len}), got {len(data)}"
        )
    if hdr_ext_len != 2 * (last_entry + 1):
        raise MalformedPacketError(
            f"hdr_ext_len {hdr_ext_len} inconsistent with last_entry {last_entry}"
        )
    if segments_left > last_entry:
        raise MalformedPacketError(
            f"segments_left {segments_left} > last_entry {last_entry}"
        )
    sids = tuple(
        IPv6Address(data[8 + 16 * i : 24 + 16 * i]) for i in range(last_entry + 1)
    )
    return Srh(
        next_header=next_header,
        segments_left=segments_left,
        segment_list=sids,
        flags=flags,
        tag=tag,
    )


@dataclass(frozen=True)
class OuterPacket:
    """IPv6 envelope, optionally carrying an SRH, around serialized inner bytes."""

    src: IPv6Address
    dst: IPv6Address
    next_header: int
    hop_limit: int
    srh: Optional[Srh] = None
    inner: bytes = b""

    def __post_init__(self):
        if not 0 <= self.hop_limit <= 255:
            raise MalformedPacketError(f"hop_limit {self.hop_limit} out of range")
        if self.srh is not None:
            if self.next_header != PROTO_ROUTING:
                raise MalformedPacketError(
                    "outer next_header must be 43 when an SRH is present"
                )
            if self.srh.next_header not in (PROTO_IPV4_ENCAP, PROTO_IPV6_ENCAP):
                raise MalformedPacketError(
                    f"SRH next_header {self.srh.next_header} does not name an "
                    "encapsulated family (4 or 41)"
                )
            if self.dst != self.srh.active_segment:
                raise MalformedPacketError(
                    f"outer dst {self.dst} != active segment {self.srh.active_segment}"
                )

    def inner_packet(self) -> InnerPacket:
        return decode_inner(self.inner)


def encode_outer(p: OuterPacket) -> bytes:
    srh_bytes = encode_srh(p.srh) if p.srh is not None else b""
    header = struct.pack(
        "!IHBB16s16s",
        6 << 28,
        len(srh_bytes) + len(p.inner),
        p.next_header,
        p.hop_limit,
        p.src.packed,
        p.dst.packed,
    )
    return header + srh_bytes + p.inner


def decode_outer(data: bytes) -> OuterPacket:
    if len(data) < 40:
        raise TruncationError("outer packet shorter than the 40-byte IPv6 header")
    version = data[0] >> 4
    if version != 6:
        raise MalformedPacketError(f"outer version nibble {version} != 6")
    payload_length = struct.unpack_from("!H", data, 4)[0]
    if payload_length != len(data) - 40:
        raise TruncationError(
            f"payload length {payload_length} != buffer {len(data) - 40}"
        )
    next_header = data[6]
    hop_limit = data[7]
    src = IPv6Address(data[8:24])
    dst = IPv6Address(data[24:40])
    rest = data[40:]
    srh = None
    if next_header == PROTO_ROUTING:
        if len(rest) < 8:
            raise TruncationError("routing header truncated")
        srh_len = 8 + 8 * rest[1]
        if len(rest) < srh_len:
            raise TruncationError("SRH extends past end of packet")
        srh = decode_srh(rest[:srh_len])
        rest = rest[srh_len:]
    return OuterPacket(
        src=src,
        dst=dst,
        next_header=next_header,
        hop_limit=hop_limit,
        srh=srh,
        inner=rest,
    )
