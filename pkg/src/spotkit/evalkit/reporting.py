"""Report rendering: JSON summary, delimited metric tables, figures, detail file."""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .runner import EvalReport  # noqa: E402

_AP_COLUMNS = ("ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large", "accuracy")


def _fmt_pct(value: float | None) -> str:
    return "" if value is None else f"{value * 100:.1f}"


def _metrics_rows(report: EvalReport) -> tuple[list[str], list[list[str]]]:
    if report.robustness_curve is not None:
        header = ["scale", "accuracy"]
        halluc = dict(report.robustness_hallucination or ())
        if halluc:
            header.append("hallucination_ratio")
        rows = []
        for scale, acc in report.robustness_curve:
            row = [f"{scale:g}", _fmt_pct(acc)]
            if halluc:
                row.append(_fmt_pct(halluc.get(scale)))
            rows.append(row)
        return header, rows
    if report.ap_table is not None:
        table = report.ap_table.to_dict()
        header = [c for c in _AP_COLUMNS if c in table or c != "accuracy"]
        row = [_fmt_pct(table.get(c)) for c in header]
        if report.hallucination_ratio is not None:
            header.append("hallucination_ratio")
            row.append(_fmt_pct(report.hallucination_ratio))
        return header, [row]
    header = ["accuracy"]
    row = [_fmt_pct(report.accuracy)]
    if report.hallucination_ratio is not None:
        header.append("hallucination_ratio")
        row.append(_fmt_pct(report.hallucination_ratio))
    return header, [row]


def _render_metric_bars(report: EvalReport, path: Path) -> None:
    if report.ap_table is not None:
        table = report.ap_table.to_dict()
        labels = [c for c in _AP_COLUMNS if table.get(c) is not None]
        values = [table[c] * 100 for c in labels]
    else:
        labels = ["accuracy"]
        values = [(report.accuracy or 0.0) * 100]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(labels)), 3.2))
    ax.bar(labels, values, color="#4878a8")
    ax.set_ylabel("%")
    ax.set_ylim(0, 105)
    ax.set_title(f"{report.task} ({report.backend_id})")
    for label in ax.get_xticklabels():
        label.set_rotation(30)
        label.set_ha("right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _render_robustness_curve(report: EvalReport, path: Path) -> None:
    scales = [s for s, _ in report.robustness_curve]
    accs = [a * 100 for _, a in report.robustness_curve]
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.plot(scales, accs, marker="o", color="#4878a8", label="accuracy")
    if report.robustness_hallucination:
        ax.plot(
            [s for s, _ in report.robustness_hallucination],
            [h * 100 for _, h in report.robustness_hallucination],
            marker="s",
            color="#b85450",
            label="hallucination ratio",
        )
    ax.set_xlabel("box noise scale")
    ax.set_ylabel("%")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.set_title(f"{report.task} robustness ({report.backend_id})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(report: EvalReport, outdir, *, figures: bool = True) -> dict[str, Path]:
    """Write report.json, metrics.tsv, outcomes.jsonl, and PNG figures.

    Returns the paths written, keyed by artifact name.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    detail = outdir / "outcomes.jsonl"
    with open(detail, "w", encoding="utf-8", newline="\n") as fh:
        for o in report.outcomes:
            fh.write(json.dumps(o.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n")
    paths["detail"] = detail
    report = replace(report, detail_file=detail.name)

    summary = outdir / "report.json"
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_dict(), fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    paths["report"] = summary

    header, rows = _metrics_rows(report)
    tsv = outdir / "metrics.tsv"
    with open(tsv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")
    paths["metrics"] = tsv

    if figures:
        bars = outdir / "metrics.png"
        _render_metric_bars(report, bars)
        paths["metrics_figure"] = bars
        if report.robustness_curve is not None:
            curve = outdir / "robustness_curve.png"
            _render_robustness_curve(report, curve)
            paths["robustness_figure"] = curve
    return paths
