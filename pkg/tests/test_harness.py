import dataclasses
from collections import Counter

import pytest

from mqttguard.harness import (
    ScenarioSpec, SpecError, build_pipeline, emit_report, generate, load_report, make_spec, measure_throughput,
    read_pcap, run_frames, run_scenario, write_pcap,
)
from mqttguard.harness.pcap import PcapError
from mqttguard.harness.report import dumps_report, loads_report, summary_lines
from mqttguard.harness.runner import ScenarioReport
from mqttguard.harness.scenarios import AUTHORIZED_TOPICS, UNAUTHORIZED_TOPICS, default_rules_text
from mqttguard.harness.workloads import acl_frames, acl_workload
from mqttguard.parser import RawFrame, parse_frame
from mqttguard.pipeline import ACL_DROP, Reason

from oracles import soft_limit_script


def test_scenario_a_frame_count_and_labels():
    spec = make_spec("A", 5000, 2.0, seed=4)
    frames = generate(spec)
    assert len(frames) == 10_000
    assert all(str(x.label) == "benign" for x in frames)
    ts = [x.frame.capture_ts_ns for x in frames]
    assert ts == sorted(ts) and ts[1] - ts[0] == 200_000


def test_scenario_a_full_length():
    assert len(generate(make_spec("A"))) == 300_000


def test_scenario_b_labels_by_independent_count():
    frames = generate(make_spec("B", seed=2))
    pubs = [x for x in frames if parse_frame(x.frame).mqtt.msg_type == 3]
    assert len(frames) == 16_001 and len(pubs) == 16_000
    over = soft_limit_script([parse_frame(x.frame).src_addr for x in pubs], 15_000)
    assert [x.label.kind == "expect_drop" and x.label.drop_reason == Reason.SOFT_LIMIT for x in pubs] == over
    assert over.index(True) == 15_000


def test_scenario_c_composition():
    frames = generate(make_spec("C", seed=1))
    labels = Counter(str(x.label) for x in frames)
    phases = Counter(x.phase for x in frames)
    assert phases["benign"] == 6000
    assert labels["expect_clone(183)"] == 100
    assert labels["expect_clone(182)"] > 10_000
    assert all(str(x.label) == "benign" for x in frames if x.phase == "benign")


def test_seed_reproducibility():
    a1 = generate(make_spec("C", duration_s=0.5, seed=9))
    a2 = generate(make_spec("C", duration_s=0.5, seed=9))
    b = generate(make_spec("C", duration_s=0.5, seed=10))
    assert [x.frame for x in a1] == [x.frame for x in a2]
    assert [x.frame for x in a1] != [x.frame for x in b]


@pytest.mark.parametrize("changes", [
    dict(clients=()), dict(rate_pps=0), dict(duration_s=0), dict(scenario="Z"),
    dict(clients=("10.0.0.4", "10.0.2.4")), dict(unauthorized_fraction=0.2), dict(qos_mix=(0, 0, 0)),
])
def test_impossible_specs_rejected(changes):
    with pytest.raises(SpecError):
        generate(dataclasses.replace(ScenarioSpec(), **changes))


def test_custom_mix_with_unauthorized_topics():
    spec = ScenarioSpec("Custom", 2000, 1.0, unauthorized_pool=UNAUTHORIZED_TOPICS, unauthorized_fraction=0.25,
                        clients=("10.0.0.4", "10.0.0.5", "10.0.0.6"), seed=3)
    run = run_scenario(spec)
    r = run.report
    assert r.label_mismatches == 0
    assert r.drops_by_reason.get(ACL_DROP, 0) == r.expected_drops_by_reason[ACL_DROP] > 300
    assert r.enforcement_accuracy[ACL_DROP] == 1.0


def test_run_scenario_b_report():
    r = run_scenario(make_spec("B", seed=1), record_events=False).report
    assert r.drops_by_reason == {"181": 1000} and r.forwarded == 15_001
    assert r.enforcement_accuracy == {"181": 1.0} and r.label_mismatches == 0
    assert r.delivery_ratio == r.forwarded / r.ingested
    assert sum(v["packets"] for v in r.acl_hits_by_rule.values()) == 15_000


def test_report_round_trip_and_figures(tmp_path):
    run = run_scenario(make_spec("C", duration_s=0.5, seed=5))
    path = tmp_path / "r.txt"
    written = emit_report(run, path)
    names = sorted(p.name for p in written)
    assert names == ["r.clones.jsonl", "r.events.jsonl", "r.outcomes.png", "r.timeline.png", "r.txt"]
    assert load_report(path) == run.report
    assert loads_report(path.read_text()) == run.report.to_dict()
    assert (tmp_path / "r.timeline.png").read_bytes()[:4] == b"\x89PNG"
    events = (tmp_path / "r.events.jsonl").read_text().splitlines()
    assert len(events) == run.report.ingested
    clones = (tmp_path / "r.clones.jsonl").read_text().splitlines()
    # in C no frame carries both clone reasons, so one clone per flagged frame
    assert len(clones) == len(run.clones) == sum(run.report.clones_by_reason.values())
    assert any("183" in line for line in summary_lines(run.report))


def test_empty_run_zeroed_report(tmp_path):
    spec = make_spec("A", 10, 1.0)
    run = run_frames(build_pipeline(rules_text=default_rules_text()), [], spec)
    r = run.report
    assert (r.ingested, r.forwarded, r.dropped, r.delivery_ratio) == (0, 0, 0, 0.0)
    emit_report(run, tmp_path / "empty.txt")
    assert load_report(tmp_path / "empty.txt") == r


def test_reports_byte_identical_across_runs():
    texts = {dumps_report(run_scenario(make_spec("C", duration_s=0.3, seed=8)).report) for _ in range(3)}
    assert len(texts) == 1


def test_report_rejects_dotted_keys():
    r = ScenarioReport("A", 0, 1, 1.0, by_type={"a.b": {}})
    with pytest.raises(ValueError):
        dumps_report(r)


def test_pcap_round_trip(tmp_path):
    frames = [x.frame for x in generate(make_spec("B", publish_count=50))]
    for ns in (True, False):
        path = tmp_path / f"b{ns}.pcap"
        assert write_pcap(path, frames, nanosecond=ns) == 51
        back = list(read_pcap(path))
        assert [f.data for f in back] == [f.data for f in frames]
        expect_ts = [f.capture_ts_ns if ns else f.capture_ts_ns // 1000 * 1000 for f in frames]
        assert [f.capture_ts_ns for f in back] == expect_ts


def test_pcap_interop_with_scapy(tmp_path):
    scapy = pytest.importorskip("scapy.all")
    frames = [x.frame for x in generate(make_spec("B", publish_count=20))]
    ours = tmp_path / "ours.pcap"
    write_pcap(ours, frames, nanosecond=False)
    pkts = scapy.rdpcap(str(ours))
    assert [bytes(p) for p in pkts] == [f.data for f in frames]
    theirs = tmp_path / "theirs.pcap"
    scapy.wrpcap(str(theirs), pkts)
    assert [f.data for f in read_pcap(theirs)] == [f.data for f in frames]


def test_pcap_errors(tmp_path):
    bad = tmp_path / "bad.pcap"
    bad.write_bytes(b"\x00" * 24)
    with pytest.raises(PcapError):
        list(read_pcap(bad))
    short = tmp_path / "short.pcap"
    write_pcap(short, [RawFrame(b"x" * 60, 1)])
    short.write_bytes(short.read_bytes()[:-10])
    with pytest.raises(PcapError):
        list(read_pcap(short))


def test_workload_shape_and_throughput():
    w = acl_workload()
    assert len(w.rules) == 100 and sum(r.action.value == "deny" for r in w.rules) == 50
    frames = acl_frames(w, n_publish=500)
    assert len(frames) == len(w.clients) + 500
    n, fps = measure_throughput(frames)
    assert n == len(frames) and fps > 0


def test_default_policy_covers_topic_pools():
    p = build_pipeline(rules_text=default_rules_text())
    assert len(p.tables.mqtt_acl) == 6
    assert AUTHORIZED_TOPICS and UNAUTHORIZED_TOPICS
