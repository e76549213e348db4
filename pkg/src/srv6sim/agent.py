"""The per-node connectivity agent: startup allocation and advertisement,
reception of step-1/step-2 or ConfigMap inputs, and idempotent
reconciliation into the node dataplane.

An agent runs in exactly one of two modes for its lifetime: ``bgp`` (both
control steps over the session bus) or ``configmap`` (step 1 over the bus,
policies from the node's ConfigMap document; received step-2 updates are
ignored).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from ipaddress import IPv6Address
from typing import Optional

from .bgp import (
    SessionBus,
    Segment,
    SrPolicySafiUpdate,
    Step1Update,
    decode_safi73,
    encode_safi73,
)
from .dataplane import (
    BEHAVIOR_END_DT4,
    BEHAVIOR_END_DT6,
    Behavior,
    LocalSidEntry,
    NodeDataplane,
    SrPolicyEntry,
    SteeringRule,
)
from .errors import SimError, ValidationError
from .k8s import ConfigMapDoc, IpamAllocator, PolicyDiff, diff_policies
from .net_types import Prefix, family_of


@dataclass(frozen=True)
class InstallIntent:
    """A tunnel the agent wants configured: one policy per (endpoint, family)."""

    endpoint: IPv6Address
    family: str
    bsid: IPv6Address
    segments: tuple[IPv6Address, ...]


class Agent:
    def __init__(
        self,
        name: str,
        infra: IPv6Address,
        dataplane: NodeDataplane,
        bus: SessionBus,
        mode: str,
        cluster_nodes: list[str],
        pod_prefixes: list[Prefix],
        families: set[str],
        router_end_sid: IPv6Address,
        ipam: Optional[IpamAllocator] = None,
        bsid_pool: Optional[str] = None,
        localsid_pool: Optional[str] = None,
        pinned_localsids: Optional[dict[str, IPv6Address]] = None,
        external_peers: Optional[set[str]] = None,
        events: Optional[list] = None,
        metrics: Optional[Counter] = None,
        segment_mode: str = "double",
    ):
        if mode not in ("bgp", "configmap"):
            raise SimError(f"unknown agent mode {mode!r}")
        self.name = name
        self.infra = infra
        self.dp = dataplane
        self.bus = bus
        self.mode = mode
        self.cluster_nodes = list(cluster_nodes)
        self.pod_prefixes = list(pod_prefixes)
        self.families = set(families)
        self.router_end_sid = router_end_sid
        self.ipam = ipam
        self.bsid_pool = bsid_pool
        self.localsid_pool = localsid_pool
        self.pinned_localsids = dict(pinned_localsids or {})
        if segment_mode not in ("double", "single"):
            raise SimError(f"unknown segment mode {segment_mode!r}")
        self.segment_mode = segment_mode
        self.external_peers = set(external_peers or ())
        self.events = events if events is not None else []
        self.metrics = metrics if metrics is not None else Counter()
        # control-plane state
        self.prefix_map: dict[IPv6Address, set[Prefix]] = {}
        self.pending: dict[tuple[IPv6Address, str], InstallIntent] = {}
        self.installed: dict[tuple[IPv6Address, str], InstallIntent] = {}
        self.last_doc: Optional[ConfigMapDoc] = None
        self._distinguisher = 0

    def _event(self, event: str, detail: str = "") -> None:
        # first field is a logical timestamp: the global event sequence number
        self.events.append((len(self.events), self.name, event, detail))

    # -- startup -----------------------------------------------------------

    def startup(self, configmap_doc: Optional[ConfigMapDoc] = None,
                auto_step2: bool = True) -> None:
        """Seed the local dataplane and emit the startup advertisements.

        The node infrastructure address becomes the encap source. DT
        localSIDs come from the ConfigMap document (configmap mode), from a
        pinned scenario assignment, or from IPAM, in that order.
        """
        self.dp.set_encap_source(self.infra)
        localsids = self._obtain_localsids(configmap_doc)
        for kind, sid in sorted(localsids.items()):
            behavior = Behavior("EndDT4" if kind == "DT4" else "EndDT6")
            self.dp.install_localsid(LocalSidEntry(sid=sid, behavior=behavior))
        for prefix in self.pod_prefixes:
            self.dp.add_tenant_route(prefix, "pods")
        # step 1: pod-prefix reachability toward every other cluster node
        for prefix in self.pod_prefixes:
            update = Step1Update(prefix=prefix, next_hop=self.infra)
            sent = self.bus.broadcast(self.name, self.cluster_nodes, update)
            self.metrics["step1_sent"] += 1 if sent else 0
        # step 2 only in bgp mode
        if self.mode == "bgp" and auto_step2:
            for kind in ("DT4", "DT6"):
                if kind not in localsids:
                    continue
                self.advertise_policy(self._double_segment_update(kind, localsids[kind]))
        if self.mode == "configmap" and configmap_doc is not None:
            self.on_configmap_change(configmap_doc)
        self._event("startup", f"mode={self.mode}")

    def _obtain_localsids(self, doc: Optional[ConfigMapDoc]) -> dict[str, IPv6Address]:
        if self.mode == "configmap":
            if doc is None:
                raise SimError(f"{self.name}: configmap mode requires a document")
            return dict(doc.localsids)
        if self.pinned_localsids:
            return {
                k: v for k, v in self.pinned_localsids.items()
                if (k == "DT4" and "v4" in self.families)
                or (k == "DT6" and "v6" in self.families)
            }
        sids = {}
        if "v4" in self.families:
            sids["DT4"] = self.ipam.allocate(self.localsid_pool, self.name)
        if "v6" in self.families:
            sids["DT6"] = self.ipam.allocate(self.localsid_pool, self.name)
        return sids

    def _double_segment_update(self, kind: str, sid: IPv6Address) -> SrPolicySafiUpdate:
        """Egress-originated policy: attachment router End SID, then DT SID.

        In single-segment mode the DT SID alone is advertised; it must then
        be routable in the underlay.
        """
        bsid = self.ipam.allocate(self.bsid_pool, self.name)
        code = BEHAVIOR_END_DT4 if kind == "DT4" else BEHAVIOR_END_DT6
        self._distinguisher += 1
        if self.segment_mode == "single":
            segments = (Segment(sid=sid, behavior_code=code),)
        else:
            segments = (
                Segment(sid=self.router_end_sid, behavior_code=code),
                Segment(sid=sid, behavior_code=code),
            )
        return SrPolicySafiUpdate(
            distinguisher=self._distinguisher,
            color=0,
            endpoint=self.infra,
            bsid=bsid,
            segments=segments,
            next_hop=self.infra,
        )

    def advertise_policy(self, update: SrPolicySafiUpdate) -> None:
        payload = ("safi73", encode_safi73(update))
        self.bus.broadcast(self.name, self.cluster_nodes, payload)
        self.metrics["step2_sent"] += 1

    # -- message handling --------------------------------------------------

    def handle_message(self, sender: str, message) -> None:
        if isinstance(message, Step1Update):
            self.on_step1(message)
        elif isinstance(message, tuple) and message[0] == "safi73":
            self.on_policy(sender, decode_safi73(message[1]))
        else:
            self._event("unknown-message", repr(message))

    def on_step1(self, update: Step1Update) -> None:
        prefixes = self.prefix_map.setdefault(update.next_hop, set())
        if update.withdraw:
            if update.prefix not in prefixes:
                return
            prefixes.discard(update.prefix)
            self._teardown_prefix(update.next_hop, update.prefix)
            self._event("step1-withdraw", f"{update.prefix} via {update.next_hop}")
            return
        if update.prefix in prefixes:
            return  # duplicate advertisement
        prefixes.add(update.prefix)
        self.metrics["step1_received"] += 1
        family = family_of(update.prefix)
        key = (update.next_hop, family)
        if key in self.pending:
            self._try_install(self.pending.pop(key))
        elif key in self.installed:
            # new prefix for an endpoint whose tunnel already exists
            intent = self.installed[key]
            self.dp.install_steering(SteeringRule(match=update.prefix, bsid=intent.bsid))

    def _teardown_prefix(self, endpoint: IPv6Address, prefix: Prefix) -> None:
        self.dp.remove_steering(prefix)
        family = family_of(prefix)
        remaining = [
            p for p in self.prefix_map.get(endpoint, ()) if family_of(p) == family
        ]
        if remaining:
            return
        key = (endpoint, family)
        intent = self.installed.pop(key, None)
        if intent is not None:
            self.dp.remove_policy(intent.bsid)
            self.pending[key] = intent

    def on_policy(self, sender: str, update: SrPolicySafiUpdate) -> None:
        if self.mode == "configmap":
            self._event("step2-ignored", f"from {sender} (configmap mode)")
            return
        if sender not in self.cluster_nodes and sender not in self.external_peers:
            self._event("audit-unregistered-peer", sender)
            return
        if update.endpoint == self.infra:
            return  # no tunnel to self
        self.metrics["step2_received"] += 1
        key = (update.endpoint, update.family)
        if update.withdraw:
            self.pending.pop(key, None)
            intent = self.installed.pop(key, None)
            if intent is not None:
                self.dp.remove_policy(intent.bsid)
                self._event("policy-withdrawn", str(update.endpoint))
            return
        intent = InstallIntent(
            endpoint=update.endpoint,
            family=update.family,
            bsid=update.bsid,
            segments=update.segment_sids,
        )
        self._try_install(intent)

    def _try_install(self, intent: InstallIntent) -> None:
        """Install the tunnel if the endpoint's prefixes are known, else queue.

        Replacing an existing (endpoint, family) tunnel atomically swaps the
        policy; the binding SID may change, in which case the old policy is
        removed after the new one is installed.
        """
        key = (intent.endpoint, intent.family)
        matching = [
            p
            for p in self.prefix_map.get(intent.endpoint, ())
            if family_of(p) == intent.family
        ]
        if not matching:
            self.pending[key] = intent
            self._event("policy-pending", f"{intent.endpoint} {intent.family}")
            return
        previous = self.installed.get(key)
        policy = SrPolicyEntry(
            bsid=intent.bsid, segments=intent.segments, family=intent.family
        )
        rules = [SteeringRule(match=p, bsid=intent.bsid) for p in matching]
        self.dp.install_policy(policy)
        for rule in rules:
            self.dp.install_steering(rule)
        if previous is not None and previous.bsid != intent.bsid:
            self.dp.remove_policy(previous.bsid)
        self.installed[key] = intent
        self.pending.pop(key, None)
        self._event("policy-installed", f"{intent.endpoint} {intent.family}")

    def _uninstall(self, key: tuple[IPv6Address, str]) -> None:
        intent = self.installed.pop(key, None)
        if intent is not None:
            self.dp.remove_policy(intent.bsid)
        self.pending.pop(key, None)

    # -- configmap mode ----------------------------------------------------

    def on_configmap_change(self, doc: ConfigMapDoc) -> "PolicyDiff":
        """Reconcile a (re)read of this node's policy document.

        Validation failures leave the previous state untouched; an identical
        document causes zero dataplane mutations.
        """
        if self.mode != "configmap":
            raise SimError(f"{self.name} is not in configmap mode")
        if doc.node != self.name:
            raise ValidationError(
                f"document for {doc.node} delivered to {self.name}"
            )
        old = self.last_doc or ConfigMapDoc(node=self.name, localsids={}, policies=())
        diff = diff_policies(old, doc)
        if doc.localsids != old.localsids:
            for kind, sid in old.localsids.items():
                if doc.localsids.get(kind) != sid:
                    self.dp.remove_localsid(sid)
            for kind, sid in doc.localsids.items():
                behavior = Behavior("EndDT4" if kind == "DT4" else "EndDT6")
                self.dp.install_localsid(LocalSidEntry(sid=sid, behavior=behavior))
            self._event("localsids-updated", str(sorted(doc.localsids)))
        for entry in diff.removes:
            if entry.egress_node == self.infra:
                continue
            self._uninstall((entry.egress_node, entry.family))
        for entry in list(diff.adds) + list(diff.replaces):
            if entry.egress_node == self.infra:
                continue
            self._try_install(
                InstallIntent(
                    endpoint=entry.egress_node,
                    family=entry.family,
                    bsid=entry.bsid,
                    segments=entry.segment_list,
                )
            )
        self.last_doc = doc
        if not diff.empty:
            self._event("configmap-applied", diff.summary())
        return diff
