"""Simulation driver: wires the underlay, per-node dataplanes, agents and
the chosen control plane together under one deterministic scheduler.

All nondeterminism (cross-session message interleaving) is drawn from a
single seeded RNG, so identical scenario + seed reproduces identical
traces and reports.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from ipaddress import IPv6Network
from typing import Optional

import yaml

from .agent import Agent
from .bgp import SessionBus, SrPolicySafiUpdate, encode_safi73
from .dataplane import Behavior, LocalSidEntry, NodeDataplane
from .errors import (
    ConvergenceError,
    ModeMismatchError,
    SimError,
    UnknownNodeError,
    ValidationError,
)
from .graph import PacketWork, build_tx_pipeline, run_vector
from .k8s import (
    SINGLE_MAP_KEY,
    ConfigMapDoc,
    IpamAllocator,
    KvStore,
    WatchHandle,
    configmap_key,
    parse_configmap_doc,
    poll,
    render_configmap_doc,
)
from .net_types import InnerPacket, parse_prefix
from .scenario import Scenario
from .underlay import Topology, TraceRecord, compute_routes, forward, waypoints


def load_configmap_docs(text: str) -> list[ConfigMapDoc]:
    """Read policy documents from YAML: either plain documents or Kubernetes
    ConfigMap manifests whose ``data.srv6`` value holds the document."""
    docs = []
    for i, raw in enumerate(yaml.safe_load_all(text)):
        if raw is None:
            continue
        if isinstance(raw, dict) and raw.get("kind") == "ConfigMap":
            srv6 = (raw.get("data") or {}).get("srv6")
            if srv6 is None:
                raise ValidationError("ConfigMap manifest lacks data.srv6")
            docs.append(parse_configmap_doc(srv6, path=f"manifest[{i}]"))
        elif isinstance(raw, list):
            docs.extend(parse_configmap_doc(d, path=f"doc[{i}]") for d in raw)
        else:
            docs.append(parse_configmap_doc(raw, path=f"doc[{i}]"))
    return docs


@dataclass
class PingReport:
    src_pod: str
    dst_pod: str
    family: str
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    traces: list[TraceRecord] = field(default_factory=list)
    drop_reasons: list[str] = field(default_factory=list)


class Simulation:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.rng = random.Random(scenario.seed)
        self.metrics: Counter = Counter()
        self.events: list = []
        self.tunnel_counts: Counter = Counter()
        self.trace_archive: list[TraceRecord] = []

        self.topology = Topology()
        self.router_sids: dict[str, IPv6Network] = {}
        self.dataplanes: dict[str, NodeDataplane] = {}
        for router in scenario.routers:
            self.topology.add_router(router.name)
            dp = NodeDataplane(router.name)
            dp.install_localsid(
                LocalSidEntry(sid=router.end_sid, behavior=Behavior("End"))
            )
            self.dataplanes[router.name] = dp
            self.router_sids[router.name] = router.sid_prefix
        for link in scenario.links:
            self.topology.add_link(link.a, link.b, link.cost, link.name)
        for node in scenario.nodes:
            self.topology.attach(node.name, node.router)
            dp = NodeDataplane(node.name)
            dp.add_fib_route(parse_prefix("::/0"), node.router)
            self.dataplanes[node.name] = dp

        self.bus = SessionBus()
        for node in scenario.nodes:
            self.bus.register(node.name)
        self.injector = scenario.injector or "srv6-pi"
        self.bus.register(self.injector)

        self.ipam = IpamAllocator(scenario.pools)
        self.store = KvStore()
        self.watches: dict[str, WatchHandle] = {}

        router_by_name = {r.name: r for r in scenario.routers}
        cluster = [n.name for n in scenario.nodes]
        external = {self.injector} if scenario.injector_registered else set()
        self.agents: dict[str, Agent] = {}
        for node in scenario.nodes:
            self.agents[node.name] = Agent(
                name=node.name,
                infra=node.infra,
                dataplane=self.dataplanes[node.name],
                bus=self.bus,
                mode=scenario.mode,
                cluster_nodes=cluster,
                pod_prefixes=list(node.pod_prefixes),
                families=set(scenario.families),
                router_end_sid=router_by_name[node.router].end_sid,
                ipam=self.ipam,
                bsid_pool=scenario.bsid_pool,
                localsid_pool=node.localsid_pool,
                pinned_localsids=node.localsids,
                external_peers=external,
                events=self.events,
                metrics=self.metrics,
                segment_mode=scenario.segment_mode,
            )
        self.pods = {p.name: p for p in scenario.pods}
        self.started = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "Simulation":
        """Start all agents (sorted node order) and quiesce the control plane."""
        scenario = self.scenario
        if scenario.mode == "configmap":
            for doc in scenario.configmaps:
                self._write_doc(doc)
        for name in sorted(self.agents):
            agent = self.agents[name]
            doc = None
            if scenario.mode == "configmap":
                doc = self._read_doc(name)
                self.watches[name] = self._make_watch(name)
            agent.startup(configmap_doc=doc, auto_step2=scenario.auto_step2)
        self.run_to_quiescence()
        self.started = True
        return self

    def _make_watch(self, node: str) -> WatchHandle:
        if self.scenario.configmap_fanout == "single-map":
            keys = (SINGLE_MAP_KEY,)
        else:
            keys = (configmap_key(node),)
        last_seen = {k: self.store.entries.get(k, ("", 0))[1] for k in keys}
        return WatchHandle(keys=keys, last_seen=last_seen)

    def _write_doc(self, doc: ConfigMapDoc) -> None:
        if self.scenario.configmap_fanout == "single-map":
            current = {}
            if SINGLE_MAP_KEY in self.store.entries:
                current = yaml.safe_load(self.store.entries[SINGLE_MAP_KEY][0]) or {}
            current[doc.node] = render_configmap_doc(doc)
            self.store.write(SINGLE_MAP_KEY, yaml.safe_dump(current, sort_keys=True))
        else:
            self.store.write(configmap_key(doc.node), render_configmap_doc(doc))

    def _read_doc(self, node: str) -> Optional[ConfigMapDoc]:
        if self.scenario.configmap_fanout == "single-map":
            if SINGLE_MAP_KEY not in self.store.entries:
                return None
            mapping = yaml.safe_load(self.store.entries[SINGLE_MAP_KEY][0]) or {}
            if node not in mapping:
                return None
            return parse_configmap_doc(mapping[node], path=f"single-map.{node}")
        key = configmap_key(node)
        if key not in self.store.entries:
            return None
        return parse_configmap_doc(self.store.entries[key][0], path=key)

    def run_to_quiescence(self) -> int:
        """Drain the session bus, one message per step, seeded interleaving."""
        steps = 0
        while not self.bus.quiesced:
            sessions = self.bus.pending_sessions()
            src, dst = self.rng.choice(sessions)
            message = self.bus.pop((src, dst))
            agent = self.agents.get(dst)
            if agent is not None:
                agent.handle_message(src, message)
            steps += 1
            if steps > self.scenario.convergence_steps:
                raise ConvergenceError(
                    f"control plane still busy after {steps} steps"
                )
        return steps

    # -- control-plane inputs ---------------------------------------------

    def inject(self, update: SrPolicySafiUpdate, sender: Optional[str] = None) -> None:
        """Deliver a policy update from the injector peer to every node."""
        if self.scenario.mode != "bgp":
            raise ModeMismatchError("inject requires bgp mode; use apply-configmap")
        sender = sender or self.injector
        payload = ("safi73", encode_safi73(update))
        if sender not in self.bus.peers:
            self.bus.register(sender)
        self.bus.broadcast(sender, [n.name for n in self.scenario.nodes], payload)
        self.metrics["injects"] += 1
        self.run_to_quiescence()

    def apply_configmaps(self, docs: list[ConfigMapDoc]) -> list[str]:
        """Write documents to the store, then let every watcher poll."""
        if self.scenario.mode != "configmap":
            raise ModeMismatchError("apply-configmap requires configmap mode")
        for doc in docs:
            if doc.node not in self.agents:
                raise UnknownNodeError(doc.node)
            self._write_doc(doc)
        return self.poll_all()

    def poll_all(self) -> list[str]:
        """One poll round for every agent, in sorted node order."""
        summaries = []
        for name in sorted(self.agents):
            agent = self.agents[name]
            watch = self.watches.get(name)
            if watch is None:
                continue
            for _key, _value, _version in poll(self.store, watch):
                doc = self._read_doc(name)
                if doc is None:
                    continue
                try:
                    diff = agent.on_configmap_change(doc)
                except ValidationError as exc:
                    self.events.append(
                        (len(self.events), name, "configmap-rejected", str(exc))
                    )
                    continue
                summaries.append(f"{name}: {diff.summary()}")
        self.run_to_quiescence()
        return summaries

    # -- forwarding --------------------------------------------------------

    def current_routes(self):
        advertised = {}
        for router, prefix in self.router_sids.items():
            advertised[prefix] = router
        for node in self.scenario.nodes:
            advertised[IPv6Network((node.infra, 128))] = node.name
            for sid in self.dataplanes[node.name].localsids:
                advertised[IPv6Network((sid, 128))] = node.name
        return compute_routes(self.topology, advertised)

    def _pod_node(self, addr) -> Optional[str]:
        for pod in self.pods.values():
            if addr in pod.addrs.values():
                return pod.node
        return None

    def ping(self, src_pod: str, dst_pod: str, count: int = 4,
             family: str = "v6") -> PingReport:
        """Synthesize ``count`` inner packets and push them through the full
        steer/encap/underlay/decap pipeline."""
        if src_pod not in self.pods or dst_pod not in self.pods:
            raise UnknownNodeError(f"unknown pod {src_pod!r} or {dst_pod!r}")
        src, dst = self.pods[src_pod], self.pods[dst_pod]
        if family not in src.addrs or family not in dst.addrs:
            raise SimError(f"pods lack {family} addresses")
        report = PingReport(src_pod=src_pod, dst_pod=dst_pod, family=family)
        report.sent = count
        if src.node == dst.node:
            # local FIB path: no encapsulation involved
            report.delivered = count
            return report
        dp = self.dataplanes[src.node]
        routes = self.current_routes()
        pipeline = build_tx_pipeline(dp)
        remaining = count
        while remaining > 0:
            batch = min(remaining, 256)
            work = [
                PacketWork(
                    index=i,
                    inner=InnerPacket(
                        src=src.addrs[family],
                        dst=dst.addrs[family],
                        payload=f"ping-{i}".encode(),
                    ),
                )
                for i in range(batch)
            ]
            for disp in run_vector(pipeline, work):
                if disp.kind == "drop":
                    report.dropped += 1
                    report.drop_reasons.append(disp.reason)
                    continue
                trace = forward(
                    self.topology, routes, src.node, disp.outer, self.dataplanes
                )
                report.traces.append(trace)
                self.trace_archive.append(trace)
                if (
                    trace.delivered
                    and trace.deliver_node == dst.node
                    and trace.disposition.inner.dst == dst.addrs[family]
                ):
                    report.delivered += 1
                    self.tunnel_counts[f"{src.node}->{dst.node}/{family}"] += 1
                else:
                    report.dropped += 1
                    report.drop_reasons.append(trace.drop_reason or "misdelivered")
            remaining -= batch
        return report

    def trace(self, src_pod: str, dst_pod: str, family: str = "v6") -> TraceRecord:
        report = self.ping(src_pod, dst_pod, count=1, family=family)
        if not report.traces:
            raise SimError(f"no trace: {report.drop_reasons}")
        return report.traces[0]

    def trace_waypoints(self, src_pod: str, dst_pod: str, family: str = "v6"):
        return waypoints(self.trace(src_pod, dst_pod, family))

    # -- inspection --------------------------------------------------------

    def show(self, node: str, what: str) -> str:
        if node not in self.dataplanes:
            raise UnknownNodeError(node)
        dp = self.dataplanes[node]
        renderers = {
            "localsids": dp.show_localsids,
            "policies": dp.show_policies,
            "steering": dp.show_steering,
            "encap-source": dp.show_encap_source,
        }
        if what not in renderers:
            raise SimError(f"unknown show target {what!r}")
        return renderers[what]()

    def state_dump(self) -> dict:
        """Per-cluster-node configured state (no counters), for equality checks."""
        return {
            n.name: self.dataplanes[n.name].dump() for n in self.scenario.nodes
        }

    def tunnel_count(self) -> dict[str, int]:
        """Installed (endpoint, family) tunnels per node."""
        return {name: len(agent.installed) for name, agent in self.agents.items()}

    def report(self) -> dict:
        return {
            "scenario": self.scenario.name,
            "mode": self.scenario.mode,
            "seed": self.scenario.seed,
            "localsid_counters": {
                n.name: self.dataplanes[n.name].counters()
                for n in self.scenario.nodes
            },
            "router_counters": {
                r.name: self.dataplanes[r.name].counters()
                for r in self.scenario.routers
            },
            "tunnel_packets": dict(sorted(self.tunnel_counts.items())),
            "control": {
                "step1_sent": self.metrics.get("step1_sent", 0),
                "step2_sent": self.metrics.get("step2_sent", 0),
                "step2_received": self.metrics.get("step2_received", 0),
                "injects": self.metrics.get("injects", 0),
                "polls": self.store.poll_count,
                "scan_units": self.store.scan_units,
            },
            "traces": len(self.trace_archive),
        }

    def report_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)


def run_scenario(scenario: Scenario) -> Simulation:
    return Simulation(scenario).start()
