"""Per-node SRv6 dataplane: localSIDs, policies, steering, encap source, FIB.

A :class:`NodeDataplane` is owned by exactly one simulation actor and is
mutated single-threaded. ``dump()`` returns an immutable snapshot used for
state comparison across runs and control-plane modes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from ipaddress import IPv6Address
from typing import Optional

from .errors import DanglingPolicyError, FamilyMismatchError, SimError
from .net_types import (
    PROTO_IPV4_ENCAP,
    PROTO_IPV6_ENCAP,
    PROTO_ROUTING,
    Addr,
    InnerPacket,
    OuterPacket,
    Prefix,
    Srh,
    decode_inner,
    family_of,
    prefix_contains,
)

OUTER_HOP_LIMIT = 64

# Numeric endpoint behavior codes as carried on the wire.
BEHAVIOR_END = 1
BEHAVIOR_END_X = 5
BEHAVIOR_END_DT6 = 18
BEHAVIOR_END_DT4 = 19


@dataclass(frozen=True)
class Behavior:
    """Endpoint behavior bound to a localSID."""

    kind: str  # End | EndX | EndDT4 | EndDT6
    next_hop: Optional[IPv6Address] = None  # EndX only
    table_id: int = 0  # EndDT4/EndDT6 only

    _CODES = {
        "End": BEHAVIOR_END,
        "EndX": BEHAVIOR_END_X,
        "EndDT6": BEHAVIOR_END_DT6,
        "EndDT4": BEHAVIOR_END_DT4,
    }

    def __post_init__(self):
        if self.kind not in self._CODES:
            raise SimError(f"unknown behavior kind {self.kind!r}")
        if self.kind == "EndX" and self.next_hop is None:
            raise SimError("EndX requires a next hop")

    @property
    def code(self) -> int:
        return self._CODES[self.kind]

    def render(self) -> str:
        if self.kind == "End":
            return "End"
        if self.kind == "EndX":
            return f"End.X nh {self.next_hop}"
        suffix = "4" if self.kind == "EndDT4" else "6"
        return f"End.DT{suffix} tbl {self.table_id}"


@dataclass
class LocalSidEntry:
    sid: IPv6Address
    behavior: Behavior
    rx_counter: int = 0


@dataclass(frozen=True)
class SrPolicyEntry:
    """BSID-keyed policy; ``segments`` is in forward path order."""

    bsid: IPv6Address
    segments: tuple[IPv6Address, ...]
    family: str  # v4 | v6

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise SimError(f"policy {self.bsid} has an empty segment list")
        if self.family not in ("v4", "v6"):
            raise SimError(f"bad policy family {self.family!r}")


@dataclass(frozen=True)
class SteeringRule:
    match: Prefix
    bsid: IPv6Address


@dataclass(frozen=True)
class Disposition:
    """Result of endpoint processing for one packet."""

    kind: str  # forward | forward_via | deliver | drop
    packet: Optional[OuterPacket] = None
    next_hop: Optional[IPv6Address] = None
    inner: Optional[InnerPacket] = None
    table_id: Optional[int] = None
    reason: Optional[str] = None


def _lpm(table: dict, addr: Addr):
    """Longest-prefix match over a small prefix-keyed dict."""
    best = None
    for prefix, value in table.items():
        if prefix.version != addr.version:
            continue
        if prefix_contains(prefix, addr):
            if best is None or prefix.prefixlen > best[0].prefixlen:
                best = (prefix, value)
    return best


class NodeDataplane:
    """Mutable SRv6 state of one cluster node (or underlay router)."""

    def __init__(self, name: str):
        self.name = name
        self.localsids: dict[IPv6Address, LocalSidEntry] = {}
        self.policies: dict[IPv6Address, SrPolicyEntry] = {}
        self.steering: dict[Prefix, IPv6Address] = {}
        self.encap_source: Optional[IPv6Address] = None
        self.fib: dict[Prefix, str] = {}
        self.tenant_tables: dict[int, dict[Prefix, str]] = {0: {}}
        self.version = 0  # bumped on every effective mutation

    # -- installation ------------------------------------------------------

    def install_localsid(self, entry: LocalSidEntry) -> None:
        existing = self.localsids.get(entry.sid)
        if existing is not None and existing.behavior == entry.behavior:
            return
        self.localsids[entry.sid] = entry
        self.version += 1

    def remove_localsid(self, sid: IPv6Address) -> None:
        if self.localsids.pop(sid, None) is not None:
            self.version += 1

    def install_policy(self, entry: SrPolicyEntry) -> None:
        if self.policies.get(entry.bsid) == entry:
            return
        self.policies[entry.bsid] = entry
        self.version += 1

    def remove_policy(self, bsid: IPv6Address) -> None:
        if self.policies.pop(bsid, None) is not None:
            dangling = [p for p, b in self.steering.items() if b == bsid]
            for prefix in dangling:
                del self.steering[prefix]
            self.version += 1

    def install_steering(self, rule: SteeringRule) -> None:
        policy = self.policies.get(rule.bsid)
        if policy is None:
            raise DanglingPolicyError(
                f"steering rule {rule.match} references unknown BSID {rule.bsid}"
            )
        if policy.family != family_of(rule.match):
            raise FamilyMismatchError(
                f"steering prefix {rule.match} does not match policy family "
                f"{policy.family}"
            )
        if self.steering.get(rule.match) == rule.bsid:
            return
        self.steering[rule.match] = rule.bsid
        self.version += 1

    def remove_steering(self, match: Prefix) -> None:
        if self.steering.pop(match, None) is not None:
            self.version += 1

    def set_encap_source(self, addr: IPv6Address) -> None:
        if self.encap_source == addr:
            return
        self.encap_source = addr
        self.version += 1

    def add_fib_route(self, prefix: Prefix, next_hop: str) -> None:
        if self.fib.get(prefix) == next_hop:
            return
        self.fib[prefix] = next_hop
        self.version += 1

    def add_tenant_route(self, prefix: Prefix, target: str, table_id: int = 0) -> None:
        table = self.tenant_tables.setdefault(table_id, {})
        if table.get(prefix) == target:
            return
        table[prefix] = target
        self.version += 1

    def remove_tenant_route(self, prefix: Prefix, table_id: int = 0) -> None:
        table = self.tenant_tables.get(table_id, {})
        if table.pop(prefix, None) is not None:
            self.version += 1

    # -- forwarding --------------------------------------------------------

    def steer_lookup(self, dst: Addr) -> Optional[IPv6Address]:
        """Longest-prefix match of ``dst`` over the steering rules of its family."""
        hit = _lpm(self.steering, dst)
        return hit[1] if hit else None

    def h_encaps(self, inner: InnerPacket, bsid: IPv6Address) -> OuterPacket:
        """Encapsulate ``inner`` according to the policy bound to ``bsid``.

        The SRH stores the policy segments in reverse order with Segments
        Left pointing at the first segment, which also becomes the outer
        destination.
        """
        policy = self.policies.get(bsid)
        if policy is None:
            raise DanglingPolicyError(f"no policy installed for BSID {bsid}")
        if inner.family != policy.family:
            raise FamilyMismatchError(
                f"inner family {inner.family} != policy family {policy.family}"
            )
        if self.encap_source is None:
            raise SimError(f"{self.name}: encap source not configured")
        srh = Srh(
            next_header=PROTO_IPV4_ENCAP if policy.family == "v4" else PROTO_IPV6_ENCAP,
            segments_left=len(policy.segments) - 1,
            segment_list=tuple(reversed(policy.segments)),
        )
        return OuterPacket(
            src=self.encap_source,
            dst=policy.segments[0],
            next_header=PROTO_ROUTING,
            hop_limit=OUTER_HOP_LIMIT,
            srh=srh,
            inner=inner.encode(),
        )

    def process_local(self, pkt: OuterPacket) -> Disposition:
        """Execute the behavior bound to ``pkt.dst`` and account the packet."""
        entry = self.localsids.get(pkt.dst)
        if entry is None:
            raise SimError(f"{self.name}: {pkt.dst} is not a localSID")
        entry.rx_counter += 1
        behavior = entry.behavior
        if behavior.kind in ("End", "EndX"):
            if pkt.srh is None:
                return Disposition(kind="drop", reason="no SRH")
            if pkt.srh.segments_left == 0:
                return Disposition(kind="drop", reason="no more segments")
            srh = replace(pkt.srh, segments_left=pkt.srh.segments_left - 1)
            out = replace(pkt, srh=srh, dst=srh.active_segment)
            if behavior.kind == "EndX":
                return Disposition(
                    kind="forward_via", packet=out, next_hop=behavior.next_hop
                )
            return Disposition(kind="forward", packet=out)
        # End.DT4 / End.DT6
        if pkt.srh is not None and pkt.srh.segments_left > 0:
            return Disposition(kind="drop", reason="premature decap")
        inner = decode_inner(pkt.inner)
        wanted = "v4" if behavior.kind == "EndDT4" else "v6"
        if inner.family != wanted:
            return Disposition(kind="drop", reason="family mismatch")
        return Disposition(kind="deliver", inner=inner, table_id=behavior.table_id)

    def fib_lookup(self, dst: IPv6Address):
        """``"local"`` on an exact localSID hit, else LPM next hop, else None."""
        if dst in self.localsids:
            return "local"
        hit = _lpm(self.fib, dst)
        return hit[1] if hit else None

    def tenant_lookup(self, dst: Addr, table_id: int = 0) -> Optional[str]:
        hit = _lpm(self.tenant_tables.get(table_id, {}), dst)
        return hit[1] if hit else None

    # -- inspection --------------------------------------------------------

    def show_localsids(self) -> str:
        lines = [f"{self.name} SR localSIDs:"]
        for sid in sorted(self.localsids):
            entry = self.localsids[sid]
            lines.append(
                f"  {sid}  behavior {entry.behavior.render()}  "
                f"counter {entry.rx_counter}"
            )
        return "\n".join(lines)

    def show_policies(self) -> str:
        lines = [f"{self.name} SR policies:"]
        for bsid in sorted(self.policies):
            policy = self.policies[bsid]
            segs = ", ".join(str(s) for s in policy.segments)
            lines.append(f"  bsid {bsid}  {policy.family}  segments [{segs}]")
        return "\n".join(lines)

    def show_steering(self) -> str:
        lines = [f"{self.name} SR steering policies:"]
        for prefix in sorted(self.steering, key=str):
            lines.append(f"  {prefix} -> bsid {self.steering[prefix]}")
        return "\n".join(lines)

    def show_encap_source(self) -> str:
        return f"{self.name} SR encap source: {self.encap_source}"

    def counters(self) -> dict[str, int]:
        return {str(sid): e.rx_counter for sid, e in sorted(self.localsids.items())}

    def dump(self) -> dict:
        """Canonical snapshot of configured state; counters excluded."""
        return {
            "encap_source": str(self.encap_source) if self.encap_source else None,
            "localsids": [
                {"sid": str(sid), "behavior": self.localsids[sid].behavior.render()}
                for sid in sorted(self.localsids)
            ],
            "policies": [
                {
                    "bsid": str(b),
                    "family": self.policies[b].family,
                    "segments": [str(s) for s in self.policies[b].segments],
                }
                for b in sorted(self.policies)
            ],
            "steering": [
                {"prefix": str(p), "bsid": str(self.steering[p])}
                for p in sorted(self.steering, key=str)
            ],
        }
