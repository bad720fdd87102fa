"""DET curves, EER, FN-at-fixed-FP operating points, and report output."""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass

from .scoring import ScoredUtterance


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    fp_rate: float
    fn_rate: float


@dataclass(frozen=True)
class DetCurve:
    points: tuple[OperatingPoint, ...]  # sorted by descending threshold
    num_pos: int
    num_neg: int


def det_curve(scored: list[ScoredUtterance]) -> DetCurve:
    """Sweep the accept threshold (accept iff score >= threshold) over the
    distinct score values, plus the all-reject extreme."""
    pos = sorted(s.score for s in scored if s.polarity == "positive")
    neg = sorted(s.score for s in scored if s.polarity == "negative")
    if not pos or not neg:
        raise ValueError("need at least one positive and one negative utterance")
    thresholds = sorted(set(pos) | set(neg), reverse=True)
    points = [OperatingPoint(thresholds[0] + 1.0, 0.0, 1.0)]  # all-reject
    for th in thresholds:
        accepted_pos = len(pos) - bisect.bisect_left(pos, th)
        accepted_neg = len(neg) - bisect.bisect_left(neg, th)
        points.append(
            OperatingPoint(
                th,
                accepted_neg / len(neg),
                (len(pos) - accepted_pos) / len(pos),
            )
        )
    return DetCurve(tuple(points), num_pos=len(pos), num_neg=len(neg))


def eer(curve: DetCurve) -> float:
    """Rate at the crossing of fp_rate and fn_rate, linearly interpolated
    between adjacent operating points when no point attains fp == fn."""
    pts = curve.points
    for p in pts:
        if p.fp_rate == p.fn_rate:
            return p.fp_rate
    # walk toward increasing fp; find the sign change of (fn - fp)
    for a, b in zip(pts, pts[1:]):
        da = a.fn_rate - a.fp_rate
        db = b.fn_rate - b.fp_rate
        if da > 0 >= db or da >= 0 > db:
            frac = da / (da - db)
            return a.fp_rate + frac * (b.fp_rate - a.fp_rate)
    # no crossing inside the sweep: clamp to the nearer extreme
    return min(pts[-1].fn_rate, pts[0].fp_rate)


def fn_at_fp(curve: DetCurve, fp_target: float) -> float:
    """FN rate where the curve meets fp_target, linearly interpolated
    between the bracketing operating points.

    If even the most selective threshold exceeds the target, the minimum-fp
    point's fn is returned.
    """
    if not (0.0 < fp_target < 1.0):
        raise ValueError("fp_target must be in (0, 1)")
    pts = curve.points  # fp non-decreasing along the list
    if pts[0].fp_rate > fp_target:
        return pts[0].fn_rate
    last_ok = 0
    for i, p in enumerate(pts):
        if p.fp_rate <= fp_target:
            last_ok = i
    if last_ok == len(pts) - 1:
        return pts[-1].fn_rate
    a, b = pts[last_ok], pts[last_ok + 1]
    if b.fp_rate == a.fp_rate:
        return a.fn_rate
    frac = (fp_target - a.fp_rate) / (b.fp_rate - a.fp_rate)
    return a.fn_rate + frac * (b.fn_rate - a.fn_rate)


def write_det_csv(curve: DetCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "fp_rate", "fn_rate"])
        for p in curve.points:
            writer.writerow([repr(p.threshold), repr(p.fp_rate), repr(p.fn_rate)])


def read_det_csv(path) -> DetCurve:
    points = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            points.append(
                OperatingPoint(
                    float(row["threshold"]), float(row["fp_rate"]), float(row["fn_rate"])
                )
            )
    return DetCurve(tuple(points), num_pos=0, num_neg=0)


def write_report(metrics: dict[str, dict[str, float]], path) -> None:
    """Report CSV: one row per system with EER and the low-FP operating
    points of interest."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["system", "eer", "fn_at_1pct_fp", "fn_at_0.5pct_fp"])
        for system in sorted(metrics):
            m = metrics[system]
            writer.writerow(
                [system, repr(m["eer"]), repr(m["fn_at_1pct_fp"]), repr(m["fn_at_0.5pct_fp"])]
            )


def evaluate_scores(scored: list[ScoredUtterance]) -> dict[str, float]:
    curve = det_curve(scored)
    return {
        "eer": eer(curve),
        "fn_at_1pct_fp": fn_at_fp(curve, 0.01),
        "fn_at_0.5pct_fp": fn_at_fp(curve, 0.005),
    }


def write_det_svg(curve: DetCurve, path, title: str = "DET curve") -> None:
    """Self-contained log-log DET plot; rates are floored at 1e-4 so the
    axes stay finite."""
    w, h, margin = 480, 480, 50
    floor = 1e-4

    def sx(fp):
        return margin + (math.log10(max(fp, floor)) + 4) / 4 * (w - 2 * margin)

    def sy(fn):
        return h - margin - (math.log10(max(fn, floor)) + 4) / 4 * (h - 2 * margin)

    path_d = " ".join(
        f"{'M' if i == 0 else 'L'}{sx(p.fp_rate):.2f},{sy(p.fn_rate):.2f}"
        for i, p in enumerate(curve.points)
    )
    ticks = [1e-4, 1e-3, 1e-2, 1e-1, 1.0]
    tick_lines = []
    for v in ticks:
        tick_lines.append(
            f'<text x="{sx(v):.0f}" y="{h - margin + 18}" font-size="10" text-anchor="middle">{v:g}</text>'
        )
        tick_lines.append(
            f'<text x="{margin - 8}" y="{sy(v):.0f}" font-size="10" text-anchor="end">{v:g}</text>'
        )
    svg = f"""<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{w/2}" y="20" text-anchor="middle" font-size="14">{title}</text>
<rect x="{margin}" y="{margin}" width="{w-2*margin}" height="{h-2*margin}" fill="none" stroke="black"/>
<path d="{path_d}" fill="none" stroke="crimson" stroke-width="1.5"/>
{chr(10).join(tick_lines)}
<text x="{w/2}" y="{h-10}" text-anchor="middle" font-size="12">false positive rate</text>
<text x="14" y="{h/2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {h/2})">false negative rate</text>
</svg>
"""
    with open(path, "w", encoding="utf-8") as f:
        f.write(svg)
