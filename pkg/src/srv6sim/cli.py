"""Scenario-driven command line.

Every subcommand loads a scenario file, brings the simulated cluster to
convergence, then performs its action. Exit codes: 0 success, 1 the
operation ran but failed (lost pings, convergence failure, rejected
input), 2 bad usage or an invalid scenario/policy file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bgp import parse_policy_file
from .dataplane import (
    Behavior,
    LocalSidEntry,
    NodeDataplane,
    SrPolicyEntry,
    SteeringRule,
)
from .errors import SimError, ValidationError
from .graph import PacketWork, bench_dispatch, build_tx_pipeline, render_bench_csv
from .net_types import InnerPacket, parse_addr, parse_prefix, parse_v6
from .scenario import load_scenario
from .sim import Simulation, load_configmap_docs

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _boot(args) -> Simulation:
    scenario = load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        scenario.seed = args.seed
    if getattr(args, "mode", None) is not None:
        scenario.mode = args.mode
    return Simulation(scenario).start()


def cmd_run(args) -> int:
    sim = _boot(args)
    print(sim.report_json())
    return EXIT_OK


def cmd_ping(args) -> int:
    sim = _boot(args)
    report = sim.ping(args.src, args.dst, count=args.count, family=args.family)
    print(
        f"{report.sent} sent, {report.delivered} delivered, "
        f"{report.dropped} dropped"
    )
    for reason in report.drop_reasons:
        print(f"drop: {reason}")
    return EXIT_OK if report.delivered == report.sent else EXIT_FAILED


def cmd_trace(args) -> int:
    sim = _boot(args)
    trace = sim.trace(args.src, args.dst, family=args.family)
    print(trace.render())
    return EXIT_OK if trace.delivered else EXIT_FAILED


def cmd_show(args) -> int:
    sim = _boot(args)
    print(sim.show(args.node, args.what))
    return EXIT_OK


def cmd_inject(args) -> int:
    sim = _boot(args)
    for path in args.policy:
        update = parse_policy_file(Path(path).read_text())
        sim.inject(update)
        print(f"injected policy bsid {update.bsid} endpoint {update.endpoint}")
    return EXIT_OK


def cmd_apply_configmap(args) -> int:
    sim = _boot(args)
    docs = load_configmap_docs(Path(args.file).read_text())
    if not docs:
        print("no documents in file", file=sys.stderr)
        return EXIT_FAILED
    for line in sim.apply_configmaps(docs):
        print(line)
    return EXIT_OK


def cmd_report(args) -> int:
    sim = _boot(args)
    print(sim.report_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    # self-contained synthetic node: one policy, one steering rule
    dp = NodeDataplane("bench")
    dp.set_encap_source(parse_v6("fd00::1"))
    dp.install_localsid(
        LocalSidEntry(sid=parse_v6("fd00::1"), behavior=Behavior("End"))
    )
    dp.install_policy(
        SrPolicyEntry(
            bsid=parse_v6("cafe::1"),
            segments=(parse_v6("fcff:1::1"), parse_v6("fcff:2::1")),
            family="v6",
        )
    )
    dp.install_steering(
        SteeringRule(match=parse_prefix("fd22::/64"), bsid=parse_v6("cafe::1"))
    )
    dp.add_fib_route(parse_prefix("::/0"), "uplink")
    pipeline = build_tx_pipeline(dp, steering_cache=True)

    def packets():
        return [
            PacketWork(
                index=i,
                inner=InnerPacket(
                    src=parse_addr("fd11::10"),
                    dst=parse_addr(f"fd22::{(i % 200) + 1:x}"),
                    payload=b"bench",
                ),
            )
            for i in range(args.packets)
        ]

    rows = [bench_dispatch(pipeline, packets(), batch) for batch in (1, 256)]
    print(render_bench_csv(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srv6sim", description="SRv6 overlay cluster simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_opts(p):
        p.add_argument("--scenario", required=True, help="scenario YAML file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument(
            "--mode", choices=("bgp", "configmap"), help="override the control mode"
        )

    p = sub.add_parser("run", help="converge the scenario and print the report")
    scenario_opts(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ping", help="send pings between two pods")
    scenario_opts(p)
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--family", choices=("v4", "v6"), default="v6")
    p.set_defaults(func=cmd_ping)

    p = sub.add_parser("trace", help="trace one packet between two pods")
    scenario_opts(p)
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--family", choices=("v4", "v6"), default="v6")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("show", help="show a node's SRv6 state")
    scenario_opts(p)
    p.add_argument("node")
    p.add_argument(
        "what", choices=("localsids", "policies", "steering", "encap-source")
    )
    p.set_defaults(func=cmd_show)

    p = sub.add_parser("inject", help="inject SR policies from files")
    scenario_opts(p)
    p.add_argument("--policy", action="append", required=True, help="policy YAML")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("apply-configmap", help="apply policy documents")
    scenario_opts(p)
    p.add_argument("--file", required=True, help="document or manifest YAML")
    p.set_defaults(func=cmd_apply_configmap)

    p = sub.add_parser("report", help="print the converged-state report")
    scenario_opts(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bench", help="vector-vs-scalar dispatch benchmark")
    p.add_argument("--packets", type=int, default=4096)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
