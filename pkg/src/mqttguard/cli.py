"""Command-line entry point.

    mqttguard run --scenario B --seed 1 --report out/report.txt
    mqttguard generate --scenario C --pcap c.pcap
    mqttguard replay --pcap c.pcap --rules rules.txt --limits limits.txt
    mqttguard tables install --rules rules.txt --rule 'mqtt 5 deny src=0.0.0.0/0 topic_prefix="x/"'
    mqttguard tables dump --rules rules.txt
    mqttguard state --client 10.0.0.4 --pcap c.pcap

Rule and limits files are the persistent form of the tables: ``tables
install``/``delete`` validate the change against a live table and rewrite the
rules file. Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .control import ConfigError, ControlAPI, describe_client, format_rule, parse_limits, parse_rule_line
from .harness.pcap import PcapError, read_pcap, write_pcap
from .harness.report import emit_report, stats_lines, summary_lines
from .harness.runner import build_pipeline, run_scenario
from .harness.scenarios import SpecError, default_rules_text, generate, make_spec
from .parser import RawFrame
from .pipeline import DROP, Pipeline
from .tables import IPV4_ACL, MQTT_ACL, RuleError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path: Optional[str]) -> Optional[str]:
    return None if path is None else Path(path).read_text()


def _configured_pipeline(args) -> Pipeline:
    rules = _read(args.rules)
    pipeline = build_pipeline(rules_text=default_rules_text() if rules is None else rules)
    if args.limits:
        ControlAPI(pipeline).load_limits_file(args.limits)
    return pipeline


def cmd_run(args) -> int:
    overrides = {}
    if args.limits:
        spec0 = make_spec(args.scenario, args.rate, args.duration, args.seed)
        overrides["limits"], overrides["meter"] = parse_limits(Path(args.limits).read_text(), spec0.limits,
                                                               spec0.meter)
    spec = make_spec(args.scenario, args.rate, args.duration, args.seed, **overrides)
    run = run_scenario(spec, rules_text=_read(args.rules), record_events=not args.no_events)
    out = Path(args.report)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    written = emit_report(run, out, events=not args.no_events, figures=not args.no_figures)
    for line in summary_lines(run.report):
        print(line)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    spec = make_spec(args.scenario, args.rate, args.duration, args.seed)
    labeled = generate(spec)
    n = write_pcap(args.pcap, [x.frame for x in labeled])
    print(f"wrote {n} frames to {args.pcap}")
    return EXIT_OK


def _replay(args, pipeline: Pipeline) -> list:
    frames = read_pcap(args.pcap)
    forwarded = []
    for frame in frames:
        result = pipeline.process_packet(frame)
        if result.verdict.action is not DROP:
            forwarded.append(RawFrame(result.forwarded_frame, frame.capture_ts_ns))
    return forwarded


def cmd_replay(args) -> int:
    pipeline = _configured_pipeline(args)
    forwarded = _replay(args, pipeline)
    clones = pipeline.drain_clones()
    if args.out_forwarded:
        write_pcap(args.out_forwarded, forwarded)
    for line in stats_lines(pipeline.pipeline_stats().to_dict(), {"clones_emitted": len(clones)}):
        print(line)
    return EXIT_OK


def _load_rule_file(path: str) -> list[str]:
    p = Path(path)
    if not p.exists():
        return []
    return [ln.strip() for ln in p.read_text().splitlines() if ln.strip() and not ln.strip().startswith("#")]


def cmd_tables(args) -> int:
    table_id = {"acl4": IPV4_ACL, "mqtt": MQTT_ACL}[args.table]
    if args.op == "install":
        if not args.rule:
            raise UsageError("tables install needs a rule")
        lines = _load_rule_file(args.rules)
        kind, entry = parse_rule_line(args.rule)
        lines.append(format_rule(entry))
        api = ControlAPI(Pipeline())
        api.load_rules("\n".join(lines))  # full-table validation before the file is touched
        Path(args.rules).write_text("\n".join(lines) + "\n")
        print(f"installed into {kind}: {lines[-1]}")
        return EXIT_OK
    if args.op == "delete":
        if args.rule_id is None:
            raise UsageError("tables delete needs --rule-id")
        api = ControlAPI(Pipeline())
        lines = _load_rule_file(args.rules)
        installed = api.load_rules("\n".join(lines))
        keep = [ln for ln, (tid, rid) in zip(lines, installed) if not (tid == table_id and rid == args.rule_id)]
        if len(keep) == len(lines):
            raise RuleError(f"no rule {args.rule_id} in {table_id}")
        Path(args.rules).write_text("".join(ln + "\n" for ln in keep))
        print(f"deleted rule {args.rule_id} from {table_id}")
        return EXIT_OK
    # dump: install, optionally replay a capture to populate counters
    pipeline = Pipeline()
    api = ControlAPI(pipeline)
    api.load_rules(_read(args.rules) or "")
    if args.limits:
        api.load_limits_file(args.limits)
    if args.pcap:
        _replay(args, pipeline)
    rows = api.dump_table(table_id)
    if args.json:
        print(json.dumps(rows, indent=1))
    else:
        for row in rows:
            print(f"{row['rule_id']}\t{row['packets']}\t{row['bytes']}\t{row['rule']}")
        print(f"# {len(rows)} entries in {table_id}")
    return EXIT_OK


def cmd_state(args) -> int:
    pipeline = _configured_pipeline(args)
    if args.pcap:
        _replay(args, pipeline)
    state = ControlAPI(pipeline).snapshot_client(args.client)
    if args.json:
        print(json.dumps(state.to_record(), indent=1))
    else:
        print(describe_client(state))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mqttguard", description="MQTT-aware ingress enforcement pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(p):
        p.add_argument("--scenario", required=True, type=str.upper, choices=("A", "B", "C"))
        p.add_argument("--rate", type=int, default=None, help="packets per second")
        p.add_argument("--duration", type=float, default=None, help="seconds (A and C)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("run", help="generate a scenario, replay it, write the report")
    scenario_args(p)
    p.add_argument("--rules", help="rule file (default: built-in topic policy)")
    p.add_argument("--limits", help="key=value limits/meter file")
    p.add_argument("--report", default="./report.txt")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--no-events", action="store_true", help="skip the per-frame event log")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("generate", help="write scenario traffic to a pcap file")
    scenario_args(p)
    p.add_argument("--pcap", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("replay", help="feed a capture through the pipeline and print stats")
    p.add_argument("--pcap", required=True)
    p.add_argument("--rules")
    p.add_argument("--limits")
    p.add_argument("--out-forwarded", help="write forwarded frames to this pcap")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("tables", help="dump, install or delete rules in a rule file")
    p.add_argument("op", choices=("dump", "install", "delete"))
    p.add_argument("--rule", help="rule line to install, quoted as one argument")
    p.add_argument("--rules", required=True, help="rule file")
    p.add_argument("--table", choices=("acl4", "mqtt"), default="mqtt")
    p.add_argument("--rule-id", type=int)
    p.add_argument("--limits")
    p.add_argument("--pcap", help="replay a capture first to populate counters (dump)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("state", help="print one client register slot")
    p.add_argument("--client", required=True, help="slot index or IPv4 source address")
    p.add_argument("--pcap", help="replay a capture first")
    p.add_argument("--rules")
    p.add_argument("--limits")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_state)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mqttguard: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ConfigError, RuleError, PcapError, SpecError, IndexError, ValueError) as exc:
        print(f"mqttguard: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
