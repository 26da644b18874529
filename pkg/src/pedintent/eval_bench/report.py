"""Report writers: versioned ``report.json``, flat ``report.csv`` and optional plots."""

from __future__ import annotations

import csv
import json
from pathlib import Path

REPORT_SCHEMA = 1


def _flatten(prefix: str, value, rows: list[tuple[str, object]]) -> None:
    if isinstance(value, dict):
        for k in sorted(value, key=str):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], rows)
    elif isinstance(value, (list, tuple)) and not all(isinstance(v, (int, float)) for v in value):
        for n, v in enumerate(value):
            _flatten(f"{prefix}.{n}", v, rows)
    elif isinstance(value, (list, tuple)):
        rows.append((prefix, ";".join(repr(v) for v in value)))
    else:
        rows.append((prefix, value))


def write_report(out_dir, kind: str, body: dict) -> Path:
    """Write ``report.json`` and a key/value ``report.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": REPORT_SCHEMA, "kind": kind, **body}
    path = out / "report.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=float))
    rows: list[tuple[str, object]] = []
    _flatten("", body, rows)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        w.writerows(rows)
    return path


def write_table_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_latency(report, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in report.buckets:
        meds = [report.median_ms(name, c) for c in report.counts]
        ax.plot(report.counts, meds, marker="o", label=f"{name} ({report.slopes[name].slope_ms:+.2f} ms/ped)")
    ax.set_xlabel("pedestrians in scene")
    ax.set_ylabel("median wall time (ms)")
    ax.set_xscale("log", base=2)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_losses(epoch_losses: list[dict], path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    keys = [k for k in ("total", "detection", "intent") if k in epoch_losses[0]]
    for k in keys:
        ax.plot([r["epoch"] for r in epoch_losses], [r[k] for r in epoch_losses], label=k)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pr_curves(curves: dict, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (recall, precision) in curves.items():
        ax.plot(recall, precision, label=label)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
