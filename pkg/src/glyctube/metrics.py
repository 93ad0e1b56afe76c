"""Clinical and statistical glycemic metrics computed from a trace."""

import math
from dataclasses import dataclass, fields

import numpy as np

from .engine import SimTrace

# band edges read literally from the clinical row labels:
# TIR closed [70,180]; TAR open-left (180,250]; TBR_70 = [54,70); TBR_54 < 54
DEFAULT_THRESHOLDS = {"low_severe": 54.0, "low": 70.0, "tight": 140.0,
                      "high": 180.0, "high_severe": 250.0}

POSTPRANDIAL_WINDOW = 240.0  # min after each meal start


@dataclass
class GlycemicReport:
    tir_70_180: float
    titr_70_140: float
    tar_180_250: float
    tar_250: float
    tbr_54_70: float
    tbr_54: float
    max_g: float
    min_g: float
    mean_g: float
    sd_g: float
    iqr_g: float
    cv: float
    peak_postprandial: float
    max_u: float
    mean_step_time: float  # ms per controller step

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def compute_report(trace: SimTrace, thresholds: dict | None = None,
                   meal_starts=None) -> GlycemicReport:
    """Band percentages, summary statistics and actuator usage for one run.

    Percentages use sample counts over uniform sampling; quantiles are
    linear-interpolation (type 7); CV is computed on absolute glucose.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    th = dict(DEFAULT_THRESHOLDS, **(thresholds or {}))
    g = trace.g_abs
    n = g.size

    def pct(mask):
        return 100.0 * np.count_nonzero(mask) / n

    tir = pct((g >= th["low"]) & (g <= th["high"]))
    titr = pct((g >= th["low"]) & (g <= th["tight"]))
    tar1 = pct((g > th["high"]) & (g <= th["high_severe"]))
    tar2 = pct(g > th["high_severe"])
    tbr1 = pct((g >= th["low_severe"]) & (g < th["low"]))
    tbr2 = pct(g < th["low_severe"])

    mean_g = float(np.mean(g))
    sd_g = float(np.std(g, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(g, [75, 25])

    if meal_starts is None:
        meal_starts = trace.meal_starts
    peak_pp = math.nan
    if len(meal_starts):
        t = trace.t_min
        mask = np.zeros(n, dtype=bool)
        for start in meal_starts:
            mask |= (t >= start) & (t <= start + POSTPRANDIAL_WINDOW)
        if mask.any():
            peak_pp = float(g[mask].max())

    return GlycemicReport(
        tir_70_180=tir, titr_70_140=titr, tar_180_250=tar1, tar_250=tar2,
        tbr_54_70=tbr1, tbr_54=tbr2,
        max_g=float(g.max()), min_g=float(g.min()), mean_g=mean_g, sd_g=sd_g,
        iqr_g=float(q75 - q25), cv=100.0 * sd_g / mean_g,
        peak_postprandial=peak_pp, max_u=float(trace.u.max()),
        mean_step_time=trace.mean_step_time_ms)


def estimated_a1c(mean_g: float) -> float:
    """eA1c (%) from mean glucose via the standard ADAG regression."""
    if mean_g <= 0:
        raise ValueError("mean glucose must be positive")
    return (mean_g + 46.7) / 28.7


def aggregate(reports: list[GlycemicReport]) -> dict:
    """Per-metric sample mean and SD (n-1 denominator) over runs.

    A single report yields SD 0 with ``single_run`` flagged.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    out = {"n": len(reports), "single_run": len(reports) == 1}
    for f in fields(GlycemicReport):
        vals = np.array([getattr(r, f.name) for r in reports], dtype=float)
        mean = float(np.mean(vals))
        sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        out[f.name] = {"mean": mean, "sd": sd}
    return out


TABLE_ROWS = (
    ("TIR [70,180] [%]", "tir_70_180"),
    ("TITR [70,140] [%]", "titr_70_140"),
    ("TAR_180 (180,250] [%]", "tar_180_250"),
    ("TAR_250 >250 [%]", "tar_250"),
    ("TBR_70 [54,70) [%]", "tbr_54_70"),
    ("TBR_54 <54 [%]", "tbr_54"),
    ("MAX [mg/dL]", "max_g"),
    ("IQR [mg/dL]", "iqr_g"),
    ("MIN [mg/dL]", "min_g"),
    ("Mean G [mg/dL]", "mean_g"),
    ("CV [%]", "cv"),
    ("Max u [mU/min]", "max_u"),
    ("Comp. Time [ms/step]", "mean_step_time"),
)


def format_table(reports: dict) -> str:
    """Aligned text table, one column per named report."""
    names = list(reports)
    width = max(len(label) for label, _ in TABLE_ROWS)
    lines = [" " * width + "  " + "  ".join(f"{n:>12}" for n in names)]
    for label, attr in TABLE_ROWS:
        cells = "  ".join(f"{getattr(reports[n], attr):12.5f}" for n in names)
        lines.append(f"{label:<{width}}  {cells}")
    return "\n".join(lines)
