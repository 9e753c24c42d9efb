"""Compliance reporting over an exported audit log.

Renders operator-facing summaries of the trail: a delimited activity
table plus matplotlib figures (daily event volume, action breakdown, most
active principals) written next to it. Reads the plain JSONL export; no
keys are needed because reporting does not vouch for integrity (run the
verify command for that).
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def read_entries(path) -> list[dict]:
    entries = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            entries.append(json.loads(line))
    return entries


def _day(ts_ms: int) -> str:
    return datetime.fromtimestamp(ts_ms / 1000, tz=timezone.utc).strftime("%Y-%m-%d")


def summarize(entries: list[dict]) -> dict:
    by_day_action: Counter = Counter()
    by_action: Counter = Counter()
    by_actor: Counter = Counter()
    for e in entries:
        by_day_action[(_day(e["ts"]), e["action"])] += 1
        by_action[e["action"]] += 1
        by_actor[e["actor"]] += 1
    return {
        "total": len(entries),
        "by_day_action": by_day_action,
        "by_action": by_action,
        "by_actor": by_actor,
    }


def write_summary_csv(summary: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "action", "count"])
        for (day, action), count in sorted(summary["by_day_action"].items()):
            writer.writerow([day, action, count])


def render_figures(summary: dict, out_dir: Path) -> list[Path]:
    written: list[Path] = []

    daily: Counter = Counter()
    for (day, _), count in summary["by_day_action"].items():
        daily[day] += count
    days = sorted(daily)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(days, [daily[d] for d in days], marker="o")
    ax.set_title("Audit events per day")
    ax.set_ylabel("entries")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    path = out_dir / "events_over_time.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    actions = summary["by_action"].most_common()
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar([a for a, _ in actions], [c for _, c in actions], color="#4878a8")
    ax.set_title("Events by action")
    ax.set_ylabel("entries")
    ax.tick_params(axis="x", rotation=60)
    fig.tight_layout()
    path = out_dir / "actions_breakdown.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    actors = summary["by_actor"].most_common(15)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.barh([a for a, _ in actors][::-1], [c for _, c in actors][::-1], color="#a85448")
    ax.set_title("Most active principals")
    ax.set_xlabel("entries")
    fig.tight_layout()
    path = out_dir / "actors_top.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    return written


def generate_report(log_path, out_dir) -> dict:
    """Write summary.csv and the figures; returns what was produced."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = read_entries(log_path)
    summary = summarize(entries)
    csv_path = out / "summary.csv"
    write_summary_csv(summary, csv_path)
    figures = render_figures(summary, out) if entries else []
    return {
        "entries": summary["total"],
        "csv": str(csv_path),
        "figures": [str(p) for p in figures],
    }
