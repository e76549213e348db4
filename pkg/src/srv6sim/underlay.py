"""Emulated routed backbone: link-state route computation and hop-by-hop
forwarding of outer packets, with path tracing.

Route computation is Dijkstra over the router graph plus cluster-node
attachment edges; equal-cost ties are broken by the lexicographically
smallest sequence of link names, so the first link name decides.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from ipaddress import IPv6Address
from typing import Optional

from .dataplane import Disposition, NodeDataplane, _lpm
from .errors import RouteComputationError, SimError
from .net_types import OuterPacket, Prefix

MAX_TRACE_HOPS = 1024


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    cost: int
    name: str

    def __post_init__(self):
        if self.cost <= 0:
            raise SimError(f"link {self.name} must have positive cost")

    def other(self, end: str) -> str:
        return self.b if end == self.a else self.a


@dataclass
class Topology:
    routers: set[str] = field(default_factory=set)
    links: list[Link] = field(default_factory=list)
    attachments: dict[str, str] = field(default_factory=dict)  # node -> router

    def add_router(self, name: str) -> None:
        self.routers.add(name)

    def add_link(self, a: str, b: str, cost: int = 1, name: str = "") -> None:
        self.links.append(Link(a, b, cost, name or f"{a}-{b}"))

    def attach(self, node: str, router: str) -> None:
        if router not in self.routers:
            raise SimError(f"attachment router {router} does not exist")
        self.attachments[node] = router

    def edges(self) -> dict[str, list[tuple[str, int, str]]]:
        """Adjacency over routers and attached cluster nodes."""
        adj: dict[str, list[tuple[str, int, str]]] = {r: [] for r in self.routers}
        for link in self.links:
            adj.setdefault(link.a, []).append((link.b, link.cost, link.name))
            adj.setdefault(link.b, []).append((link.a, link.cost, link.name))
        for node, router in self.attachments.items():
            name = f"att-{node}"
            adj.setdefault(node, []).append((router, 1, name))
            adj[router].append((node, 1, name))
        return adj


@dataclass(frozen=True)
class Hop:
    at: str
    dst: IPv6Address
    action: str  # source | transit | end | endx | deliver | drop:<reason>


@dataclass
class TraceRecord:
    hops: list[Hop] = field(default_factory=list)
    disposition: Optional[Disposition] = None
    deliver_node: Optional[str] = None

    @property
    def delivered(self) -> bool:
        return self.disposition is not None and self.disposition.kind == "deliver"

    @property
    def drop_reason(self) -> Optional[str]:
        if self.disposition is not None and self.disposition.kind == "drop":
            return self.disposition.reason
        return None

    def render(self) -> str:
        return "\n".join(
            f"hop {h.at} dst={h.dst} action={h.action}" for h in self.hops
        )


# RouteTable: router/node -> prefix -> (neighbor, link name)
RouteTable = dict[str, dict[Prefix, tuple[str, str]]]


def _best_paths(topology: Topology, source: str) -> dict[str, tuple]:
    """Dijkstra from ``source``; value is (cost, link-name path, first hop)."""
    adj = topology.edges()
    best: dict[str, tuple] = {source: (0, (), None)}
    heap = [(0, (), source, None)]
    while heap:
        cost, names, vertex, first = heapq.heappop(heap)
        if (cost, names) > best[vertex][:2]:
            continue  # stale heap entry
        for neighbor, weight, link_name in adj.get(vertex, []):
            cand = (cost + weight, names + (link_name,))
            prev = best.get(neighbor)
            if prev is None or cand < prev[:2]:
                hop = first if first is not None else (neighbor, link_name)
                best[neighbor] = (cand[0], cand[1], hop)
                heapq.heappush(heap, (cand[0], cand[1], neighbor, hop))
    return best


def compute_routes(topology: Topology, advertised: dict[Prefix, str]) -> RouteTable:
    """Per-vertex next hops along minimum-cost paths to each prefix origin."""
    vertices = set(topology.routers) | set(topology.attachments)
    table: RouteTable = {}
    paths = {v: _best_paths(topology, v) for v in vertices}
    for vertex in vertices:
        entry: dict[Prefix, tuple[str, str]] = {}
        for prefix, origin in advertised.items():
            if origin == vertex:
                continue
            best = paths[vertex].get(origin)
            if best is None:
                raise RouteComputationError(
                    f"prefix {prefix}: origin {origin} unreachable from {vertex}"
                )
            entry[prefix] = best[2]
        table[vertex] = entry
    return table


def forward(
    topology: Topology,
    routes: RouteTable,
    source: str,
    pkt: OuterPacket,
    dataplanes: dict[str, NodeDataplane],
) -> TraceRecord:
    """Forward ``pkt`` hop by hop starting at ``source``.

    At each vertex, a destination matching a local SID executes its behavior;
    otherwise the packet follows the route table. Routers decrement the outer
    hop limit. Terminates with a deliver or drop disposition.
    """
    trace = TraceRecord()
    current = source
    is_first = True
    for _ in range(MAX_TRACE_HOPS):
        dp = dataplanes.get(current)
        if dp is not None and pkt.dst in dp.localsids:
            disp = dp.process_local(pkt)
            if disp.kind == "drop":
                trace.hops.append(Hop(current, pkt.dst, f"drop:{disp.reason}"))
                trace.disposition = disp
                return trace
            if disp.kind == "deliver":
                trace.hops.append(Hop(current, pkt.dst, "deliver"))
                trace.disposition = disp
                trace.deliver_node = current
                return trace
            action = "end" if disp.kind == "forward" else "endx"
            trace.hops.append(Hop(current, pkt.dst, action))
            pkt = disp.packet
        else:
            trace.hops.append(
                Hop(current, pkt.dst, "source" if is_first else "transit")
            )
        is_first = False
        if current in topology.routers:
            if pkt.hop_limit <= 1:
                trace.hops.append(Hop(current, pkt.dst, "drop:ttl"))
                trace.disposition = Disposition(kind="drop", reason="ttl")
                return trace
            pkt = _decrement(pkt)
        hit = _lpm(routes.get(current, {}), pkt.dst)
        if hit is None:
            trace.hops.append(Hop(current, pkt.dst, "drop:no route"))
            trace.disposition = Disposition(kind="drop", reason="no route")
            return trace
        current = hit[1][0]
    raise SimError("forwarding did not terminate")


def _decrement(pkt: OuterPacket) -> OuterPacket:
    from dataclasses import replace

    return replace(pkt, hop_limit=pkt.hop_limit - 1)


def waypoints(trace: TraceRecord) -> list[str]:
    """Ordered vertices at which a segment was consumed (Segments Left fell)."""
    return [h.at for h in trace.hops if h.action in ("end", "endx")]
