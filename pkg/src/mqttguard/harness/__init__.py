"""Scenario generation, replay and reporting."""

from .pcap import read_pcap, write_pcap
from .report import emit_report, load_report
from .runner import ScenarioReport, ScenarioRun, build_pipeline, measure_throughput, run_frames, run_scenario
from .scenarios import LabeledFrame, ScenarioSpec, SpecError, generate, make_spec

__all__ = [
    "LabeledFrame", "ScenarioReport", "ScenarioRun", "ScenarioSpec", "SpecError", "build_pipeline",
    "emit_report", "generate", "load_report", "make_spec", "measure_throughput", "read_pcap",
    "run_frames", "run_scenario", "write_pcap",
]
