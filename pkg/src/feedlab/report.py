"""Report rendering: delimited output, aligned text tables, and figures.

The report path always writes machine-readable CSV; matplotlib figures are
rendered to files alongside it.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .measurement import REPORT_COLUMNS


def write_report_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def format_report_table(rows: list[dict]) -> str:
    if not rows:
        return "(no data)"
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in REPORT_COLUMNS}
    header = "  ".join(c.ljust(widths[c]) for c in REPORT_COLUMNS)
    lines = [header, "  ".join("-" * widths[c] for c in REPORT_COLUMNS)]
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(widths[c]) for c in REPORT_COLUMNS))
    return "\n".join(lines)


def render_report_figures(rows: list[dict], outdir) -> list[Path]:
    """Per-arm engagement bars; returns the written figure paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if not rows:
        return written
    arms = [r["arm"] for r in rows]

    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for ax, metric, title in zip(
            axes,
            ("exposures", "likes_per_1k", "fallback_rate"),
            ("Exposures", "Likes per 1k exposures", "Fallback rate")):
        ax.bar(arms, [r[metric] for r in rows], color="#4878a8")
        ax.set_title(title)
        ax.set_xlabel("arm")
        ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    path = outdir / "engagement_by_arm.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(arms, [r["removed"] for r in rows], label="removed", color="#a85448")
    ax.bar(arms, [r["inserted"] for r in rows],
           bottom=[r["removed"] for r in rows], label="inserted", color="#6aa848")
    ax.set_title("Transform volume by arm")
    ax.legend()
    fig.tight_layout()
    path = outdir / "transforms_by_arm.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def render_latency_figure(sim_report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lat = sim_report["latency_ms"]
    labels = ["p50", "p95", "p99"]
    added = [lat["added_p50"], lat["added_p95"], lat["added_p99"]]
    platform = [lat["platform_p50"], lat["platform_p95"], lat["platform_p99"]]
    x = range(len(labels))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([i - 0.2 for i in x], platform, width=0.4, label="platform RTT")
    ax.bar([i + 0.2 for i in x], added, width=0.4, label="added (rerank RTT)")
    ax.set_xticks(list(x), labels)
    ax.set_ylabel("ms")
    ax.set_title("Request latency")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


EXPORT_KINDS = ("exposure", "engagement", "survey_response", "action", "rerank")


def export_records(log, outdir) -> list[Path]:
    """One CSV per record kind from a full scan of the event log."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    by_kind: dict[str, list] = {k: [] for k in EXPORT_KINDS}
    for rec in log.scan():
        if rec.kind in by_kind:
            row = {"offset": rec.offset, "participant_id": rec.participant_id,
                   "server_received_at": rec.server_received_at}
            row.update({k: v for k, v in rec.payload.items()})
            by_kind[rec.kind].append(row)
    written = []
    for kind, rows in by_kind.items():
        if not rows:
            continue
        fields = sorted({k for r in rows for k in r},
                        key=lambda k: (k not in ("offset", "participant_id"), k))
        path = outdir / f"{kind}.csv"
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
        written.append(path)
    return written
