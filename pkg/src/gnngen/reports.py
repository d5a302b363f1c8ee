"""Report writers: per-sample CSV, comparison CSV, timing CSV, and a
self-contained SVG accuracy histogram (20 fixed bins on [0, 1]).

Float formatting uses repr so that two identical runs produce byte-identical
files (the determinism contract covers results.csv).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .pipeline import EvalReport

HISTOGRAM_BINS = 20


def _fmt(x: float) -> str:
    return repr(float(x))


def write_results_csv(path, report: EvalReport) -> None:
    lines = ["index,val_accuracy,test_accuracy,selected"]
    for i, (val, test) in enumerate(zip(report.sample_val, report.sample_test)):
        sel = 1 if i == report.selected_index else 0
        lines.append(f"{i},{_fmt(val)},{_fmt(test)},{sel}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_comparison_csv(path, report: EvalReport) -> None:
    lines = ["row,val_accuracy,test_accuracy"]
    for label, val, test in report.comparison:
        lines.append(f"{label},{_fmt(val)},{_fmt(test)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_timing_csv(path, report: EvalReport) -> None:
    lines = ["stage,seconds"]
    for stage, seconds in report.timing:
        lines.append(f"{stage},{_fmt(seconds)}")
    Path(path).write_text("\n".join(lines) + "\n")


def histogram_counts(values) -> np.ndarray:
    """Counts over 20 fixed bins on [0, 1]; values are clipped into range."""
    clipped = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    counts, _ = np.histogram(clipped, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    return counts


def write_histogram_svg(path, report: EvalReport) -> None:
    """Test-accuracy histogram of generated samples, hand-rendered SVG."""
    counts = histogram_counts(report.sample_test)
    width, height = 640, 400
    margin_l, margin_b, margin_t = 50, 40, 20
    plot_w = width - margin_l - 10
    plot_h = height - margin_b - margin_t
    peak = max(int(counts.max()), 1)
    bar_w = plot_w / HISTOGRAM_BINS

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for i, count in enumerate(counts):
        bar_h = plot_h * count / peak
        x = margin_l + i * bar_w
        y = margin_t + plot_h - bar_h
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" height="{bar_h:.2f}" '
            f'fill="#4878a8" stroke="white" stroke-width="1"/>'
        )
    # Axes
    axis_y = margin_t + plot_h
    parts.append(
        f'<line x1="{margin_l}" y1="{axis_y}" x2="{margin_l + plot_w}" y2="{axis_y}" '
        f'stroke="black"/>'
    )
    parts.append(
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" y2="{axis_y}" stroke="black"/>'
    )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = margin_l + frac * plot_w
        parts.append(
            f'<text x="{x:.2f}" y="{axis_y + 18}" font-size="12" text-anchor="middle" '
            f'font-family="sans-serif">{frac:g}</text>'
        )
    for tick in (0, peak):
        y = margin_t + plot_h * (1 - tick / peak)
        parts.append(
            f'<text x="{margin_l - 8}" y="{y + 4:.2f}" font-size="12" text-anchor="end" '
            f'font-family="sans-serif">{tick}</text>'
        )
    parts.append(
        f'<text x="{margin_l + plot_w / 2:.2f}" y="{height - 6}" font-size="13" '
        f'text-anchor="middle" font-family="sans-serif">test accuracy</text>'
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def write_all(outdir, report: EvalReport) -> list:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(out / "results.csv", report)
    write_comparison_csv(out / "comparison.csv", report)
    write_timing_csv(out / "timing.csv", report)
    write_histogram_svg(out / "histogram.svg", report)
    return [out / name for name in ("results.csv", "comparison.csv", "timing.csv", "histogram.svg")]
