"""Report serialization and figures.

The report is tab-delimited ``key<TAB>value`` text: nested mappings are
flattened to dotted keys and every leaf value is JSON-encoded, so the file
diffs cleanly and parses back to exactly the values that were written.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional, Union

from .runner import ScenarioReport, ScenarioRun

HEADER = "# mqttguard scenario report v1"


def _flatten(prefix: str, value, out: list[tuple[str, str]]) -> None:
    if isinstance(value, dict) and value:
        for k, v in value.items():
            key = str(k)
            if "." in key or "\t" in key:
                raise ValueError(f"report key may not contain '.' or tab: {key!r}")
            _flatten(f"{prefix}.{key}" if prefix else key, v, out)
    else:
        out.append((prefix, json.dumps(value, separators=(",", ":"))))


def dumps_report(report: ScenarioReport) -> str:
    rows: list[tuple[str, str]] = []
    _flatten("", report.to_dict(), rows)
    return HEADER + "\n" + "".join(f"{k}\t{v}\n" for k, v in rows)


def loads_report(text: str) -> dict:
    data: dict = {}
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        key, _, raw = line.partition("\t")
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = json.loads(raw)
    return data


def load_report(path: Union[str, Path]) -> ScenarioReport:
    return ScenarioReport.from_dict(loads_report(Path(path).read_text()))


def sidecar(path: Union[str, Path], suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


def write_jsonl(path: Union[str, Path], records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def emit_report(run: Union[ScenarioRun, ScenarioReport], path: Union[str, Path], *, events: bool = True,
                figures: bool = True) -> list[Path]:
    """Write the report, plus event/clone logs and figures next to it.

    Returns every path written. I/O errors propagate.
    """
    report = run.report if isinstance(run, ScenarioRun) else run
    path = Path(path)
    path.write_text(dumps_report(report))
    written = [path]
    if isinstance(run, ScenarioRun):
        if events and run.events:
            written.append(sidecar(path, ".events.jsonl"))
            write_jsonl(written[-1], run.events)
        if run.clones:
            written.append(sidecar(path, ".clones.jsonl"))
            write_jsonl(written[-1], run.clones)
    if figures:
        written.extend(render_figures(report, path))
    return written


def render_figures(report: ScenarioReport, path: Union[str, Path]) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = []
    timeline_path = sidecar(path, ".timeline.png")
    fig, ax = plt.subplots(figsize=(7, 3.2))
    if report.timeline:
        secs = [row[0] for row in report.timeline]
        ax.plot(secs, [row[1] for row in report.timeline], label="forwarded", color="tab:green")
        ax.plot(secs, [row[2] for row in report.timeline], label="dropped", color="tab:red")
        ax.plot(secs, [row[3] for row in report.timeline], label="cloned", color="tab:blue", linestyle="--")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("time since first frame (s)")
    ax.set_ylabel("frames / s")
    ax.set_title(f"Scenario {report.scenario}: verdicts over time", fontsize=10)
    fig.tight_layout()
    fig.savefig(timeline_path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    out.append(timeline_path)

    outcome_path = sidecar(path, ".outcomes.png")
    labels = ["forwarded", "parse_drop"]
    values = [report.forwarded, report.parse_drops]
    for key, value in report.drops_by_reason.items():
        labels.append(f"drop {key}")
        values.append(value)
    for key, value in report.clones_by_reason.items():
        labels.append(f"clone {key}")
        values.append(value)
    fig, ax = plt.subplots(figsize=(7, 3.2))
    bars = ax.bar(range(len(values)), values, color="tab:gray")
    ax.set_xticks(range(len(values)), labels, rotation=30, ha="right", fontsize=8)
    ax.bar_label(bars, fontsize=7)
    ax.set_ylabel("frames")
    ax.set_title(f"Scenario {report.scenario}: outcome counts (delivery {report.delivery_ratio:.4f})",
                 fontsize=10)
    fig.tight_layout()
    fig.savefig(outcome_path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    out.append(outcome_path)
    return out


def summary_lines(report: ScenarioReport) -> list[str]:
    lines = [
        f"scenario={report.scenario} seed={report.seed} ingested={report.ingested} forwarded={report.forwarded} "
        f"dropped={report.dropped} parse_drops={report.parse_drops} delivery={report.delivery_ratio:.6f}",
        "drops_by_reason=" + json.dumps(report.drops_by_reason, separators=(",", ":")),
        "clones_by_reason=" + json.dumps(report.clones_by_reason, separators=(",", ":")),
        f"label_matches={report.label_matches} label_mismatches={report.label_mismatches}",
    ]
    for reason, row in report.anomaly.items():
        if row["tp"] + row["fn"] or row["fp"]:
            lines.append(f"anomaly {reason}: tp={row['tp']} fp={row['fp']} fn={row['fn']} "
                         f"sensitivity={row['sensitivity']:.4f}")
    return lines


def stats_lines(stats_dict: dict, extra: Optional[dict] = None) -> list[str]:
    merged = dict(stats_dict)
    if extra:
        merged.update(extra)
    return [f"{k}\t{json.dumps(v, separators=(',', ':'))}" for k, v in merged.items()]
