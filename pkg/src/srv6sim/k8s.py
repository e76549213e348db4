"""Cluster-control analog: versioned key-value store with poll-based watch,
IPAM pools with block carving, and the per-node SR-TE policy document.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from ipaddress import IPv6Address
from typing import Optional

import yaml

from .errors import (
    NotEligibleError,
    PoolExhaustedError,
    SimError,
    ValidationError,
)
from .net_types import Addr, Prefix, parse_v6


# -- key-value store -------------------------------------------------------


class KvStore:
    """Linearizable key/value store; versions are store-wide monotonic."""

    def __init__(self):
        self.entries: dict[str, tuple[str, int]] = {}
        self._version = 0
        # accounting for the watch cost model
        self.poll_count = 0
        self.scan_units = 0

    def write(self, key: str, value: str) -> int:
        self._version += 1
        self.entries[key] = (value, self._version)
        return self._version

    def read(self, key: str) -> tuple[str, int]:
        if key not in self.entries:
            raise KeyError(key)
        return self.entries[key]

    def snapshot(self) -> dict[str, tuple[str, int]]:
        return dict(self.entries)

    def load(self, snapshot: dict[str, tuple[str, int]]) -> None:
        self.entries = dict(snapshot)
        if snapshot:
            self._version = max(v for _, v in snapshot.values())


@dataclass
class WatchHandle:
    """Poll-based watch over a set of keys."""

    keys: tuple[str, ...]
    last_seen: dict[str, int] = field(default_factory=dict)
    poll_interval: float = 1.0


def poll(store: KvStore, watch: WatchHandle) -> list[tuple[str, str, int]]:
    """Return (key, value, version) for each watched key whose version
    advanced since the last poll. One poll cost unit per call, one scan cost
    unit per returned document the watcher must examine.
    """
    store.poll_count += 1
    changed = []
    for key in watch.keys:
        entry = store.entries.get(key)
        if entry is None:
            continue
        value, version = entry
        if version > watch.last_seen.get(key, 0):
            watch.last_seen[key] = version
            changed.append((key, value, version))
    store.scan_units += len(changed)
    return changed


# -- IPAM ------------------------------------------------------------------


@dataclass(frozen=True)
class IpPool:
    """CIDR-scoped pool; nodes are handed whole blocks of
    2^(family_bits - block_size) addresses, carved sequentially."""

    name: str
    cidr: Prefix
    block_size: int
    node_selector: Optional[str] = None

    def __post_init__(self):
        bits = 128 if self.cidr.version == 6 else 32
        if not self.cidr.prefixlen <= self.block_size <= bits:
            raise ValidationError(
                f"blockSize {self.block_size} outside [{self.cidr.prefixlen}, {bits}]",
                path=f"pool {self.name}",
            )

    @property
    def block_addrs(self) -> int:
        bits = 128 if self.cidr.version == 6 else 32
        return 1 << (bits - self.block_size)

    @property
    def block_count(self) -> int:
        return 1 << (self.block_size - self.cidr.prefixlen)


class IpamAllocator:
    """Deterministic allocator over a set of pools.

    A node's first allocation claims the next free block; subsequent
    allocations are sequential within its blocks. No address is ever handed
    out twice.
    """

    def __init__(self, pools: list[IpPool]):
        self.pools = {p.name: p for p in pools}
        self._blocks: dict[str, dict[str, list[int]]] = {p.name: {} for p in pools}
        self._next_block: dict[str, int] = {p.name: 0 for p in pools}
        self._counts: dict[str, dict[str, int]] = {p.name: {} for p in pools}

    def allocate(self, pool_name: str, node: str) -> Addr:
        pool = self.pools[pool_name]
        if pool.node_selector is not None and pool.node_selector != node:
            raise NotEligibleError(
                f"node {node} does not match selector of pool {pool_name}"
            )
        blocks = self._blocks[pool_name].setdefault(node, [])
        count = self._counts[pool_name].get(node, 0)
        block_index = count // pool.block_addrs
        if block_index >= len(blocks):
            if self._next_block[pool_name] >= pool.block_count:
                raise PoolExhaustedError(f"pool {pool_name} is exhausted")
            blocks.append(self._next_block[pool_name])
            self._next_block[pool_name] += 1
        base = int(pool.cidr.network_address)
        offset = blocks[block_index] * pool.block_addrs + count % pool.block_addrs
        self._counts[pool_name][node] = count + 1
        return pool.cidr.network_address.__class__(base + offset)


# -- ConfigMap documents ---------------------------------------------------


@dataclass(frozen=True)
class PolicyDocEntry:
    egress_node: IPv6Address  # infra address of the tunnel egress
    bsid: IPv6Address
    segment_list: tuple[IPv6Address, ...]
    traffic: str  # IPv4 | IPv6

    @property
    def family(self) -> str:
        return "v4" if self.traffic == "IPv4" else "v6"


@dataclass(frozen=True)
class ConfigMapDoc:
    """Per-node policy document: the node's own localSIDs plus the policy
    list for every egress node it tunnels to."""

    node: str
    localsids: dict[str, IPv6Address]  # DT4/DT6 -> SID
    policies: tuple[PolicyDocEntry, ...]

    def __post_init__(self):
        seen = set()
        for p in self.policies:
            key = (p.egress_node, p.traffic)
            if key in seen:
                raise ValidationError(
                    f"duplicate policy for ({p.egress_node}, {p.traffic})",
                    path=f"node {self.node}",
                )
            seen.add(key)
            if not p.segment_list:
                raise ValidationError(
                    "empty segment list", path=f"node {self.node} bsid {p.bsid}"
                )


def parse_configmap_doc(data, path: str = "configmap") -> ConfigMapDoc:
    """Validate a parsed YAML object into a ConfigMapDoc.

    Both ``egress_node:`` and the shorter ``node:`` spelling are accepted
    for the per-policy egress field.
    """
    if isinstance(data, str):
        try:
            data = yaml.safe_load(data)
        except yaml.YAMLError as exc:
            raise ValidationError(f"not valid YAML: {exc}", path=path) from None
    if not isinstance(data, dict):
        raise ValidationError("document must be a mapping", path=path)
    node = data.get("node")
    if not node:
        raise ValidationError("missing node name", path=path)
    localsids = {}
    for kind, value in (data.get("localsids") or {}).items():
        if kind not in ("DT4", "DT6"):
            raise ValidationError(
                f"unknown localsid kind {kind!r}", path=f"{path}.localsids"
            )
        try:
            localsids[kind] = parse_v6(str(value))
        except SimError as exc:
            raise ValidationError(str(exc), path=f"{path}.localsids.{kind}") from None
    policies = []
    for i, entry in enumerate(data.get("policies") or []):
        where = f"{path}.policies[{i}]"
        if not isinstance(entry, dict):
            raise ValidationError("policy must be a mapping", path=where)
        egress = entry.get("egress_node", entry.get("node"))
        if egress is None:
            raise ValidationError("missing egress_node", path=where)
        traffic = entry.get("traffic")
        if traffic not in ("IPv4", "IPv6"):
            raise ValidationError(f"bad traffic {traffic!r}", path=where)
        try:
            policies.append(
                PolicyDocEntry(
                    egress_node=parse_v6(str(egress)),
                    bsid=parse_v6(str(entry["bsid"])),
                    segment_list=tuple(
                        parse_v6(str(s)) for s in entry.get("segment_list") or []
                    ),
                    traffic=traffic,
                )
            )
        except KeyError as exc:
            raise ValidationError(f"missing field {exc}", path=where) from None
        except SimError as exc:
            raise ValidationError(str(exc), path=where) from None
    return ConfigMapDoc(node=str(node), localsids=localsids, policies=tuple(policies))


def render_configmap_doc(doc: ConfigMapDoc) -> str:
    """Serialize in the reference deployment's field layout."""
    data = {
        "localsids": {k: str(v) for k, v in doc.localsids.items()},
        "node": doc.node,
        "policies": [
            {
                "bsid": str(p.bsid),
                "egress_node": str(p.egress_node),
                "segment_list": [str(s) for s in p.segment_list],
                "traffic": p.traffic,
            }
            for p in doc.policies
        ],
    }
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False)


def configmap_key(node: str) -> str:
    return f"srv6-config-{node}"


SINGLE_MAP_KEY = "srv6-config"


def write_configmap(store: KvStore, key: str, doc: ConfigMapDoc) -> int:
    return store.write(key, render_configmap_doc(doc))


def read_configmap(store: KvStore, key: str) -> tuple[ConfigMapDoc, int]:
    value, version = store.read(key)
    return parse_configmap_doc(value, path=key), version


@dataclass(frozen=True)
class PolicyDiff:
    adds: tuple[PolicyDocEntry, ...]
    replaces: tuple[PolicyDocEntry, ...]
    removes: tuple[PolicyDocEntry, ...]

    @property
    def empty(self) -> bool:
        return not (self.adds or self.replaces or self.removes)

    def summary(self) -> str:
        if self.empty:
            return "0 changes"
        parts = []
        if self.adds:
            parts.append(f"{len(self.adds)} added")
        if self.replaces:
            parts.append(f"{len(self.replaces)} replaced")
        if self.removes:
            parts.append(f"{len(self.removes)} removed")
        return ", ".join(parts)


def diff_policies(old: ConfigMapDoc, new: ConfigMapDoc) -> PolicyDiff:
    """Diff keyed by (egress_node, traffic); a policy is replaced iff its
    bsid or segment list changed. Omission means removal."""

    def keyed(doc):
        return {(p.egress_node, p.traffic): p for p in doc.policies}

    old_map, new_map = keyed(old), keyed(new)
    order = lambda p: (str(p.egress_node), p.traffic)
    adds = sorted(
        (p for k, p in new_map.items() if k not in old_map), key=order
    )
    removes = sorted(
        (p for k, p in old_map.items() if k not in new_map), key=order
    )
    replaces = sorted(
        (
            p
            for k, p in new_map.items()
            if k in old_map
            and (old_map[k].bsid != p.bsid or old_map[k].segment_list != p.segment_list)
        ),
        key=order,
    )
    return PolicyDiff(tuple(adds), tuple(replaces), tuple(removes))
