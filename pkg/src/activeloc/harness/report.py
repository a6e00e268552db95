"""Rendering of evaluation reports as markdown, CSV or JSON."""
from __future__ import annotations

import csv
import io
import json

from ..errors import ConfigError
from .evaluate import EvalReport

FORMATS = ("markdown", "csv", "json")


def _num(x):
    return format(float(x), "g")


def render_markdown(report: EvalReport):
    th = report.thresholds
    lines = ["| distance [m] | " + " | ".join(_num(d) for d, _ in th) + " |",
             "|---|" + "---:|" * len(th),
             "| orientation [deg] | " + " | ".join(_num(a) for _, a in th) + " |"]
    for p in report.policies:
        lines.append(f"| {p} | " + " | ".join(f"{v:.2f}" for v in report.recall[p]) + " |")
    return "\n".join(lines) + "\n"


def render_csv(report: EvalReport):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy"] + [f"{_num(d)}m/{_num(a)}deg" for d, a in report.thresholds])
    for p in report.policies:
        w.writerow([p] + [f"{v:.4f}" for v in report.recall[p]])
    return buf.getvalue()


def render_cdf_csv(report: EvalReport):
    """Long-format (policy, error, fraction) rows for external plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "position_error_m", "fraction"])
    for p in report.policies:
        for e, f in report.cdf[p]:
            w.writerow([p, repr(float(e)), repr(float(f))])
    return buf.getvalue()


def render_report(report: EvalReport, fmt="markdown", include_timing=False):
    """Deterministic text rendering; timings are wall-clock and left out unless asked for."""
    if fmt == "markdown":
        return render_markdown(report)
    if fmt == "csv":
        return render_csv(report)
    if fmt == "json":
        return json.dumps(report.to_dict(include_timing), sort_keys=True, indent=1) + "\n"
    raise ConfigError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
