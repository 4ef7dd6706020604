"""CSV and SVG rendering for evaluation reports.

SVG charts are emitted directly as markup (no plotting dependency): simple
bar charts for histograms and a line chart for the generalization curve.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .analysis import EvalReport, MatchScores


def write_report_csvs(report: EvalReport, out_dir) -> list[Path]:
    """summary.csv, value_histogram.csv, signed_histogram.csv,
    generalization.csv under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    summary = out_dir / "summary.csv"
    with open(summary, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "value"])
        ws = MatchScores(**report.match_with_search)
        po = MatchScores(**report.match_policy_only)
        w.writerow(["game", report.game])
        w.writerow(["label", report.label])
        w.writerow(["seeds_aggregated", report.seeds_aggregated])
        w.writerow(["states_scanned", report.states_scanned])
        w.writerow(["with_search_win", ws.win])
        w.writerow(["with_search_draw", ws.draw])
        w.writerow(["with_search_loss", ws.loss])
        w.writerow(["with_search_non_loss_rate", f"{ws.non_loss_rate():.6f}"])
        w.writerow(["policy_only_win", po.win])
        w.writerow(["policy_only_draw", po.draw])
        w.writerow(["policy_only_loss", po.loss])
        w.writerow(["policy_only_non_loss_rate", f"{po.non_loss_rate():.6f}"])
        w.writerow(["mean_value_error", f"{report.mean_value_error:.6f}"])
        for name, frac in report.error_fractions.items():
            w.writerow([f"error_fraction_{name}", f"{frac:.6f}"])
        w.writerow(["misalignment_mean", f"{report.misalignment_mean:.6f}"])
        if report.generalization_error is not None:
            w.writerow(["generalization_error", f"{report.generalization_error:.6f}"])
    paths.append(summary)

    for name, hist in (
        ("value_histogram", report.value_histogram),
        ("signed_histogram", report.signed_histogram),
    ):
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["bin_lo", "bin_hi", "count"])
            edges, counts = hist["edges"], hist["counts"]
            for i, count in enumerate(counts):
                w.writerow([edges[i], edges[i + 1], count])
        paths.append(path)

    gen = out_dir / "generalization.csv"
    with open(gen, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["visit_bucket", "count", "mean_error"])
        for b in report.generalization_buckets:
            w.writerow([b["label"], b["count"], "" if b["mean_error"] is None else f"{b['mean_error']:.6f}"])
    paths.append(gen)
    return paths


def write_comparison_csv(comparison: dict, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["metric", "baseline", "candidate", "baseline_value", "candidate_value", "delta", "pct_reduction"]
        )
        for row in comparison["rows"]:
            w.writerow(
                [
                    row["metric"],
                    row["baseline"],
                    row["candidate"],
                    _fmt(row["baseline_value"]),
                    _fmt(row["candidate_value"]),
                    _fmt(row["delta"]),
                    _fmt(row["pct_reduction"]),
                ]
            )
    return path


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def comparison_text(comparison: dict) -> str:
    lines = [f"baseline: {comparison['baseline']} ({comparison['game']})"]
    for row in comparison["rows"]:
        pct = "" if row["pct_reduction"] is None else f"  ({row['pct_reduction']:+.1f}% reduction)"
        lines.append(
            f"{row['metric']:>24}  {row['candidate']}: "
            f"{_fmt(row['baseline_value'])} -> {_fmt(row['candidate_value'])}{pct}"
        )
    return "\n".join(lines)


_SVG_W, _SVG_H, _MARGIN = 640, 360, 48


def _svg_header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<text x="{_SVG_W // 2}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
    ]


def svg_bar_chart(labels, values, title: str, y_label: str = "") -> str:
    """Minimal self-contained bar chart as an SVG string."""
    n = max(len(values), 1)
    vmax = max([v for v in values if v is not None] + [1e-12])
    plot_w = _SVG_W - 2 * _MARGIN
    plot_h = _SVG_H - 2 * _MARGIN
    bar_w = plot_w / n
    parts = _svg_header(title)
    parts.append(
        f'<line x1="{_MARGIN}" y1="{_SVG_H - _MARGIN}" x2="{_SVG_W - _MARGIN}" '
        f'y2="{_SVG_H - _MARGIN}" stroke="black"/>'
    )
    for i, (label, v) in enumerate(zip(labels, values)):
        x = _MARGIN + i * bar_w
        if v is not None:
            h = plot_h * (v / vmax)
            parts.append(
                f'<rect x="{x + 1:.1f}" y="{_SVG_H - _MARGIN - h:.1f}" '
                f'width="{bar_w - 2:.1f}" height="{h:.1f}" fill="#4878a8"/>'
            )
        if n <= 24:
            parts.append(
                f'<text x="{x + bar_w / 2:.1f}" y="{_SVG_H - _MARGIN + 16}" '
                f'text-anchor="middle" font-size="10" font-family="sans-serif">{label}</text>'
            )
    parts.append(
        f'<text x="14" y="{_SVG_H // 2}" font-size="11" font-family="sans-serif" '
        f'transform="rotate(-90 14 {_SVG_H // 2})" text-anchor="middle">{y_label}</text>'
    )
    parts.append(f'<text x="{_MARGIN}" y="{_MARGIN - 8}" font-size="11" '
                 f'font-family="sans-serif">max {vmax:.4g}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def svg_line_chart(series: dict[str, list], labels, title: str, y_label: str = "") -> str:
    """Line chart for one or more named series over shared x labels."""
    palette = ("#4878a8", "#c44e52", "#55a868", "#8172b2")
    n = max(len(labels), 2)
    all_vals = [v for vals in series.values() for v in vals if v is not None]
    vmax = max(all_vals + [1e-12])
    plot_w = _SVG_W - 2 * _MARGIN
    plot_h = _SVG_H - 2 * _MARGIN
    parts = _svg_header(title)
    parts.append(
        f'<line x1="{_MARGIN}" y1="{_SVG_H - _MARGIN}" x2="{_SVG_W - _MARGIN}" '
        f'y2="{_SVG_H - _MARGIN}" stroke="black"/>'
    )
    for i, label in enumerate(labels):
        x = _MARGIN + plot_w * i / (n - 1)
        parts.append(
            f'<text x="{x:.1f}" y="{_SVG_H - _MARGIN + 16}" text-anchor="middle" '
            f'font-size="10" font-family="sans-serif">{label}</text>'
        )
    for si, (name, vals) in enumerate(series.items()):
        color = palette[si % len(palette)]
        points = []
        for i, v in enumerate(vals):
            if v is None:
                continue
            x = _MARGIN + plot_w * i / (n - 1)
            y = _SVG_H - _MARGIN - plot_h * (v / vmax)
            points.append(f"{x:.1f},{y:.1f}")
        if points:
            parts.append(
                f'<polyline points="{" ".join(points)}" fill="none" stroke="{color}" stroke-width="2"/>'
            )
        parts.append(
            f'<text x="{_SVG_W - _MARGIN}" y="{_MARGIN + 14 * si}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif" fill="{color}">{name}</text>'
        )
    parts.append(
        f'<text x="14" y="{_SVG_H // 2}" font-size="11" font-family="sans-serif" '
        f'transform="rotate(-90 14 {_SVG_H // 2})" text-anchor="middle">{y_label}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts)


def write_report_svgs(report: EvalReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    hist = report.value_histogram
    labels = [f"{hist['edges'][i]:.2g}" for i in range(len(hist["counts"]))]
    svg = svg_bar_chart(labels, hist["counts"], f"{report.label}: squared value error", "states")
    p = out_dir / "value_histogram.svg"
    p.write_text(svg)
    paths.append(p)

    buckets = report.generalization_buckets
    svg = svg_line_chart(
        {report.label: [b["mean_error"] for b in buckets]},
        [b["label"] for b in buckets],
        "value error vs training visitation",
        "mean squared error",
    )
    p = out_dir / "generalization.svg"
    p.write_text(svg)
    paths.append(p)
    return paths
