import json

import pytest

from mqttguard import frames as fb
from mqttguard.cli import main
from mqttguard.harness import write_pcap
from mqttguard.harness.workloads import random_acl_rules
from mqttguard.control import format_rule
from mqttguard.parser import RawFrame

import goldens as g


def test_run_twice_identical(tmp_path, capsys):
    a, b = tmp_path / "a" / "report.txt", tmp_path / "b.txt"
    assert main(["run", "--scenario", "B", "--seed", "1", "--report", str(a)]) == 0
    assert main(["run", "--scenario", "b", "--seed", "1", "--report", str(b), "--no-figures"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a" / "report.timeline.png").exists() and (tmp_path / "a" / "report.outcomes.png").exists()
    out = capsys.readouterr().out
    assert 'drops_by_reason={"181":1000}' in out


def test_run_default_report_path(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["run", "--scenario", "C", "--duration", "0.2", "--no-figures", "--no-events"]) == 0
    assert (tmp_path / "report.txt").read_text().startswith("# mqttguard scenario report v1")
    assert not (tmp_path / "report.events.jsonl").exists()


def test_run_with_rules_and_limits(tmp_path, capsys):
    rules = tmp_path / "rules.txt"
    rules.write_text('mqtt 1 permit src=0.0.0.0/0 type=publish qos=0,1,2 topic_prefix=""\n')
    limits = tmp_path / "limits.txt"
    limits.write_text("pub_soft_limit=100\n")
    rc = main(["run", "--scenario", "B", "--rules", str(rules), "--limits", str(limits),
               "--report", str(tmp_path / "r.txt"), "--no-figures"])
    assert rc == 0
    assert 'drops_by_reason={"181":15900}' in capsys.readouterr().out


def test_replay_fragment_parse_drop(tmp_path, capsys):
    cap = tmp_path / "frag.pcap"
    fwd = tmp_path / "fwd.pcap"
    write_pcap(cap, [RawFrame(g.GOLDENS["connect_311"][0], 1), RawFrame(g.FRAGMENT, 2)])
    assert main(["replay", "--pcap", str(cap), "--out-forwarded", str(fwd)]) == 0
    lines = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert json.loads(lines["parse_drops"]) == 1 and json.loads(lines["ingested"]) == 2
    assert json.loads(lines["parse_drops_by_cause"]) == {"fragment": 1}
    assert fwd.stat().st_size > 24


def test_tables_install_dump_delete(tmp_path, capsys):
    rules = tmp_path / "rules.txt"
    for rule in random_acl_rules(100, seed=1):
        assert main(["tables", "install", "--rules", str(rules), "--rule", format_rule(rule)]) == 0
    capsys.readouterr()
    assert main(["tables", "dump", "--rules", str(rules)]) == 0
    out = capsys.readouterr().out
    assert "# 100 entries in tbl_mqtt_rule_acl" in out
    assert main(["tables", "delete", "--rules", str(rules), "--rule-id", "7"]) == 0
    capsys.readouterr()
    assert main(["tables", "dump", "--rules", str(rules), "--json"]) == 0
    assert len(json.loads(capsys.readouterr().out)) == 99
    # a duplicate is rejected and leaves the file untouched
    before = rules.read_text()
    first = before.splitlines()[0]
    assert main(["tables", "install", "--rules", str(rules), "--rule", first]) == 2
    assert rules.read_text() == before


def test_state_after_replay(tmp_path, capsys):
    cap = tmp_path / "s.pcap"
    frames = [RawFrame(fb.mqtt_frame("10.0.0.4", fb.mqtt_connect("x", 60)), 10)]
    frames += [RawFrame(fb.mqtt_frame("10.0.0.4", fb.mqtt_publish("telemetry/a", b"1")), 20 + i) for i in range(5)]
    write_pcap(cap, frames)
    assert main(["state", "--client", "10.0.0.4", "--pcap", str(cap), "--json"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["session_open"] == 1 and rec["keepalive_s"] == 60 and rec["pkt_per_type"]["publish"] == 5
    assert main(["state", "--client", "4"]) == 0
    assert "session_open   0" in capsys.readouterr().out


@pytest.mark.parametrize("argv,code", [
    ([], 1),
    (["run"], 1),
    (["run", "--scenario", "Q"], 1),
    (["run", "--scenario", "A", "--bogus"], 1),
    (["tables", "install", "--rules", "x.txt"], 1),
    (["replay", "--pcap", "/nonexistent.pcap"], 2),
    (["run", "--scenario", "A", "--rules", "/nonexistent"], 2),
    (["state", "--client", "600"], 2),
])
def test_exit_codes(argv, code, capsys):
    try:
        rc = main(argv)
    except SystemExit as exc:
        rc = exc.code
    assert rc == code
    assert capsys.readouterr().err
