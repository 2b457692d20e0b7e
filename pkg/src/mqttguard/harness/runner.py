"""Scenario execution and metrics."""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from ..control import ControlAPI
from ..meter import MeterConfig
from ..parser import MQTT_TYPE_NAMES, RawFrame
from ..pipeline import DROP, FORWARD_AND_CLONE, CloneRecord, Pipeline, ProcessResult, Reason
from ..tables import MQTT_ACL, GlobalLimits
from .scenarios import LabeledFrame, ScenarioSpec, default_rules_text, generate

ANOMALY_REASONS = (Reason.KEEPALIVE, Reason.REMAINING_LENGTH)


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    rate_pps: int
    duration_s: float
    ingested: int = 0
    forwarded: int = 0
    dropped: int = 0
    parse_drops: int = 0
    delivery_ratio: float = 0.0
    drops_by_reason: dict = field(default_factory=dict)
    clones_by_reason: dict = field(default_factory=dict)
    expected_drops_by_reason: dict = field(default_factory=dict)
    enforcement_accuracy: dict = field(default_factory=dict)
    acl_hits_by_rule: dict = field(default_factory=dict)
    anomaly: dict = field(default_factory=dict)
    label_matches: int = 0
    label_mismatches: int = 0
    by_type: dict = field(default_factory=dict)
    timeline: list = field(default_factory=list)
    clone_overflow: int = 0
    generation: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "rate_pps": self.rate_pps,
            "duration_s": self.duration_s,
            "ingested": self.ingested,
            "forwarded": self.forwarded,
            "dropped": self.dropped,
            "parse_drops": self.parse_drops,
            "delivery_ratio": self.delivery_ratio,
            "drops_by_reason": self.drops_by_reason,
            "clones_by_reason": self.clones_by_reason,
            "expected_drops_by_reason": self.expected_drops_by_reason,
            "enforcement_accuracy": self.enforcement_accuracy,
            "acl_hits_by_rule": self.acl_hits_by_rule,
            "anomaly": self.anomaly,
            "label_matches": self.label_matches,
            "label_mismatches": self.label_mismatches,
            "by_type": self.by_type,
            "timeline": self.timeline,
            "clone_overflow": self.clone_overflow,
            "generation": self.generation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioReport":
        return cls(**data)

    def sensitivity(self, reason: int) -> float:
        row = self.anomaly.get(str(int(reason)), {})
        positives = row.get("tp", 0) + row.get("fn", 0)
        return row.get("tp", 0) / positives if positives else 1.0


@dataclass
class ScenarioRun:
    spec: ScenarioSpec
    report: ScenarioReport
    events: list = field(default_factory=list)
    clones: list = field(default_factory=list)
    results: list = field(default_factory=list)


def build_pipeline(limits: Optional[GlobalLimits] = None, meter: Optional[MeterConfig] = None,
                   rules_text: Optional[str] = None) -> Pipeline:
    pipeline = Pipeline(meter_config=meter)
    api = ControlAPI(pipeline)
    if limits is not None:
        api.set_global_limits(limits)
    if rules_text:
        api.load_rules(rules_text)
    return pipeline


def _matches(label, result: ProcessResult) -> bool:
    v = result.verdict
    if label.kind == "expect_drop":
        return v.action is DROP and v.drop_reason == label.drop_reason
    if label.kind == "expect_clone":
        return v.action is FORWARD_AND_CLONE and v.reasons == label.clone_reasons
    return v.action is not DROP and not v.reasons


def event_record(result: ProcessResult, frame: RawFrame, label=None) -> dict:
    v = result.verdict
    m = v.meta
    record = {
        "ts": frame.capture_ts_ns,
        "action": v.action.value,
        "reasons": sorted(int(r) for r in v.reasons),
        "drop_reason": None if v.drop_reason is None else (
            int(v.drop_reason) if isinstance(v.drop_reason, int) else v.drop_reason),
        "matched_table": m.matched_table,
        "rule_id": m.rule_id,
        "client_idx": m.client_idx,
        "mqtt_type": m.mqtt_type,
        "qos": m.qos,
        "topic_prefix": m.topic_prefix.hex(),
        "rl_value": m.rl_value,
        "delta_t_s": m.delta_t_s,
    }
    if label is not None:
        record["label"] = str(label)
    return record


def clone_record(clone: CloneRecord) -> dict:
    m = clone.meta
    return {
        "ts": clone.emitted_ts_ns,
        "reasons": sorted(int(r) for r in m.reason_codes),
        "matched_table": m.matched_table,
        "rule_id": m.rule_id,
        "client_idx": m.client_idx,
        "mqtt_type": m.mqtt_type,
        "qos": m.qos,
        "topic_prefix": m.topic_prefix.hex(),
        "rl_value": m.rl_value,
        "delta_t_s": m.delta_t_s,
        "frame": clone.original_frame.hex(),
    }


def run_frames(pipeline: Pipeline, labeled: Sequence[LabeledFrame], spec: ScenarioSpec,
               record_events: bool = True, keep_results: bool = False) -> ScenarioRun:
    """Feed labeled frames through ``pipeline`` and score verdicts against labels."""
    report = ScenarioReport(spec.scenario, spec.seed, spec.rate_pps, spec.duration_s)
    events: list[dict] = []
    clones: list[dict] = []
    results: list[ProcessResult] = []
    anomaly = {int(r): Counter() for r in ANOMALY_REASONS}
    expected_drops: Counter = Counter()
    by_type: dict[str, Counter] = {}
    timeline: dict[int, list[int]] = {}
    start = labeled[0].frame.capture_ts_ns if labeled else 0
    matches = 0

    for item in labeled:
        frame, label = item.frame, item.label
        result = pipeline.process_packet(frame)
        if keep_results:
            results.append(result)
        verdict = result.verdict
        if label.kind == "expect_drop":
            expected_drops[label.drop_reason] += 1
        if _matches(label, result):
            matches += 1
        observed = verdict.reasons
        expected = label.clone_reasons
        for r in ANOMALY_REASONS:
            row = anomaly[int(r)]
            if r in expected:
                row["tp" if r in observed else "fn"] += 1
            elif r in observed:
                row["fp"] += 1
            else:
                row["tn"] += 1
        parsed = result.parsed
        mqtt = parsed.mqtt if parsed is not None else None
        tname = MQTT_TYPE_NAMES.get(mqtt.msg_type, str(mqtt.msg_type)) if mqtt is not None else "non_mqtt"
        counts = by_type.setdefault(tname, Counter())
        counts[verdict.action.value] += 1
        second = (frame.capture_ts_ns - start) // 1_000_000_000
        bucket = timeline.setdefault(second, [0, 0, 0])
        if verdict.action is DROP:
            bucket[1] += 1
        else:
            bucket[0] += 1
            if result.clone is not None:
                bucket[2] += 1
        if record_events:
            events.append(event_record(result, frame, label))
        if result.clone is not None:
            clones.append(clone_record(result.clone))

    stats = pipeline.pipeline_stats()
    report.ingested = stats.ingested
    report.forwarded = stats.forwarded
    report.dropped = stats.dropped
    report.parse_drops = stats.parse_drops
    report.delivery_ratio = stats.forwarded / stats.ingested if stats.ingested else 0.0
    report.drops_by_reason = {str(k): v for k, v in sorted(stats.dropped_by_reason.items(), key=_order)}
    report.clones_by_reason = {str(k): v for k, v in sorted(stats.cloned_by_reason.items(), key=_order)}
    report.expected_drops_by_reason = {str(k): v for k, v in sorted(expected_drops.items(), key=_order)}
    report.enforcement_accuracy = {
        str(k): (stats.dropped_by_reason.get(k, 0) / v) for k, v in sorted(expected_drops.items(), key=_order)
    }
    report.acl_hits_by_rule = {str(c["rule_id"]): {"packets": c["packets"], "bytes": c["bytes"]}
                               for c in pipeline.tables.read_counters(MQTT_ACL)}
    report.anomaly = {}
    for r, row in anomaly.items():
        tp, fn, fp, tn = row["tp"], row["fn"], row["fp"], row["tn"]
        report.anomaly[str(r)] = {"tp": tp, "fp": fp, "fn": fn, "tn": tn,
                                  "sensitivity": tp / (tp + fn) if tp + fn else 1.0}
    report.label_matches = matches
    report.label_mismatches = len(labeled) - matches
    report.by_type = {k: dict(sorted(v.items())) for k, v in sorted(by_type.items())}
    report.timeline = [[s, *timeline[s]] for s in sorted(timeline)]
    report.clone_overflow = stats.clone_overflow
    report.generation = {
        "frames": len(labeled),
        "labels": dict(sorted(Counter(str(x.label) for x in labeled).items())),
        "phases": dict(sorted(Counter(x.phase for x in labeled).items())),
        "clients": list(spec.clients),
        "pub_soft_limit": spec.limits.pub_soft_limit,
        "ka_multiplier_gamma": spec.limits.ka_multiplier_gamma,
        "rl_threshold_bytes": spec.limits.rl_threshold_bytes,
        "rl_require_3byte_encoding": spec.limits.rl_require_3byte_encoding,
        "meter": [spec.meter.cir_pps, spec.meter.cbs_pkts, spec.meter.pir_pps, spec.meter.pbs_pkts],
    }
    return ScenarioRun(spec, report, events, clones, results)


def _order(item) -> tuple:
    key = item[0]
    return (0, int(key), "") if isinstance(key, int) else (1, 0, str(key))


def run_scenario(spec: ScenarioSpec, rules_text: Optional[str] = None, limits: Optional[GlobalLimits] = None,
                 meter: Optional[MeterConfig] = None, record_events: bool = True,
                 keep_results: bool = False) -> ScenarioRun:
    """Generate ``spec`` traffic and replay it through a freshly configured pipeline.

    ``limits`` / ``meter`` override the spec's own configuration; the labels are
    computed against whatever limits end up in effect.
    """
    if limits is not None or meter is not None:
        from dataclasses import replace
        spec = replace(spec, limits=limits or spec.limits, meter=meter or spec.meter)
    labeled = generate(spec)
    pipeline = build_pipeline(spec.limits, spec.meter, rules_text if rules_text is not None else default_rules_text())
    return run_frames(pipeline, labeled, spec, record_events, keep_results)


def measure_throughput(frames: Iterable[RawFrame], pipeline: Optional[Pipeline] = None,
                       batch_size: int = 1) -> tuple[int, float]:
    """Wall-clock cost of processing ``frames`` in batches of ``batch_size``
    (1 means one ``process_packet`` call per frame); returns
    ``(frames, frames_per_second)``."""
    pipeline = pipeline or build_pipeline(rules_text=default_rules_text())
    frames = list(frames)
    if batch_size <= 1:
        process = pipeline.process_packet
        t0 = time.perf_counter()
        for frame in frames:
            process(frame)
    else:
        chunks = [frames[i:i + batch_size] for i in range(0, len(frames), batch_size)]
        process_batch = pipeline.process_batch
        t0 = time.perf_counter()
        for chunk in chunks:
            process_batch(chunk)
    elapsed = time.perf_counter() - t0
    return len(frames), (len(frames) / elapsed if elapsed > 0 else float("inf"))
