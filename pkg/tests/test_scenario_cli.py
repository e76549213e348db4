import json

import pytest

from srv6sim.cli import main
from srv6sim.errors import ValidationError
from srv6sim.scenario import load_scenario
from srv6sim.sim import Simulation

from conftest import SCENARIOS

BASIC = str(SCENARIOS / "basic.yaml")
FULL_CM = str(SCENARIOS / "full_cm.yaml")
FULL_BGP = str(SCENARIOS / "full_bgp.yaml")


# -- scenario loading ------------------------------------------------------


def test_load_scenarios():
    s = load_scenario(BASIC)
    assert s.mode == "bgp" and len(s.nodes) == 3
    s = load_scenario(FULL_CM)
    assert s.mode == "configmap" and len(s.routers) == 8
    assert len(s.configmaps) == 3
    s = load_scenario(FULL_BGP)
    assert s.auto_step2 is False and s.injector == "srv6-pi"


def test_scenario_validation_errors():
    with pytest.raises(ValidationError, match="router"):
        load_scenario("nodes:\n- {name: x, infra: '::1', router: ghost}\n")
    with pytest.raises(ValidationError, match="mode"):
        load_scenario("mode: carrier-pigeon\n")
    with pytest.raises(ValidationError, match="node"):
        load_scenario(
            "routers: [{name: R1, end_sid: 'fcff:1::1'}]\n"
            "pods: [{name: p, node: ghost, v6: '::2'}]\n"
        )


def test_same_node_ping_skips_encapsulation():
    sim = Simulation(load_scenario(BASIC)).start()
    sim.scenario.pods.append(type(sim.scenario.pods[0])(
        name="pod-master-2", node="master",
        addrs={"v6": sim.pods["pod-master"].addrs["v6"].__class__("fd90:0:10::3")},
    ))
    sim.pods["pod-master-2"] = sim.scenario.pods[-1]
    report = sim.ping("pod-master", "pod-master-2", count=3, family="v6")
    assert report.delivered == 3 and not report.traces


def test_replay_determinism_same_seed():
    reports = []
    for _ in range(2):
        sim = Simulation(load_scenario(BASIC)).start()
        sim.ping("pod-master", "pod-worker2", count=4, family="v6")
        reports.append(sim.report_json())
    assert reports[0] == reports[1]


def test_state_invariant_across_seeds():
    dumps = set()
    for seed in range(5):
        scenario = load_scenario(BASIC)
        scenario.seed = seed
        sim = Simulation(scenario).start()
        dumps.add(json.dumps(sim.state_dump(), sort_keys=True))
    assert len(dumps) == 1


# -- CLI -------------------------------------------------------------------


def test_cli_run_and_report(capsys):
    assert main(["run", "--scenario", BASIC]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["mode"] == "bgp"
    assert payload["control"]["step1_sent"] == 6  # 3 nodes x 2 prefixes


def test_cli_ping_exit_codes(capsys):
    assert main(["ping", "--scenario", BASIC, "pod-master", "pod-worker1"]) == 0
    assert "4 sent, 4 delivered" in capsys.readouterr().out
    # no policies in the TE scenario before injection -> failure exit
    assert main(["ping", "--scenario", FULL_BGP, "pod-master", "pod-worker1"]) == 1


def test_cli_trace(capsys):
    assert main(["trace", "--scenario", FULL_CM, "pod-worker2", "pod-worker1"]) == 0
    out = capsys.readouterr().out
    assert "action=end" in out and "action=deliver" in out


def test_cli_show(capsys):
    assert main(["show", "--scenario", BASIC, "worker1", "encap-source"]) == 0
    assert "fd11::1000" in capsys.readouterr().out
    assert main(["show", "--scenario", BASIC, "ghost", "policies"]) == 1


def test_cli_inject_and_mode_mismatch(capsys):
    policy = str(SCENARIOS / "policies" / "worker2-v6.yaml")
    assert main(["inject", "--scenario", FULL_BGP, "--policy", policy]) == 0
    assert "cafe::5" in capsys.readouterr().out
    # inject is refused in configmap mode
    assert main(["inject", "--scenario", FULL_CM, "--policy", policy]) == 1


def test_cli_apply_configmap(capsys):
    modified = str(SCENARIOS / "configmap_worker2_modified.yaml")
    assert main(["apply-configmap", "--scenario", FULL_CM, "--file", modified]) == 0
    assert "worker2: 1 replaced" in capsys.readouterr().out
    # apply-configmap is refused in bgp mode
    assert main(["apply-configmap", "--scenario", FULL_BGP, "--file", modified]) == 1


def test_cli_usage_errors(capsys):
    assert main(["run", "--scenario", "/nonexistent.yaml"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_cli_bench(capsys):
    assert main(["bench", "--packets", "512"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "batch,packets,seconds,pps"
    assert len(lines) == 3


def test_cli_seed_and_mode_overrides(capsys):
    assert main(["run", "--scenario", BASIC, "--seed", "99"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 99
