"""Static SVG charts of predicted compute-optimal allocations.

SVG is emitted by hand (viewBox, polylines, text) with fixed number
formatting, so identical inputs produce byte-identical files and the charts
can be checked against golden files. Axes are log-log with decade ticks; one
allocation curve is drawn per report, reference models appear as labeled
markers, and each reference budget is annotated with the min/max predicted
value across the plotted curves.
"""

from __future__ import annotations

import math
from pathlib import Path

from .errors import EmptyReports
from .forms import dict_to_vector, optimal_allocation, ratio_predict, vector_to_params

AXES = ("c_vs_n", "c_vs_d", "c_vs_rho")
_Y_LABEL = {
    "c_vs_n": "optimal model size N (parameters)",
    "c_vs_d": "optimal data budget D (tokens)",
    "c_vs_rho": "optimal tokens per parameter D/N",
}
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")

WIDTH, HEIGHT = 840, 560
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 78, 24, 40, 58
CURVE_SAMPLES = 64


def _allocation_fn(report: dict):
    """Return (label, f(c) -> (n, d, rho)) for one report, or None if not plottable."""
    form = report["config"]["hypothesis"]["form"]
    flop_constant = report["config"]["counting"]["flop_constant"]
    natural = report.get("natural_params")
    if form in ("chinchilla", "tied") and natural:
        params = vector_to_params(form, dict_to_vector(form, report["params"]))
        return lambda c: optimal_allocation(params, c, flop_constant)
    iso = report.get("isoflop") or {}
    ratio = iso.get("ratio")
    if ratio:
        ratio_params = vector_to_params("ratio", [ratio["log_n0"], ratio["exp_a"]])
        return lambda c: ratio_predict(ratio_params, c, flop_constant)
    return None


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _pow10_label(exponent: int) -> str:
    return f"1e{exponent}"


class _LogMap:
    def __init__(self, lo: float, hi: float, px_lo: float, px_hi: float):
        self.a = math.log10(lo)
        self.b = math.log10(hi)
        self.px_lo = px_lo
        self.px_hi = px_hi

    def __call__(self, v: float) -> float:
        t = (math.log10(v) - self.a) / (self.b - self.a)
        return self.px_lo + t * (self.px_hi - self.px_lo)

    def decades(self):
        return range(math.ceil(self.a), math.floor(self.b) + 1)


def render_allocation_chart(
    reports: list[dict],
    axis: str = "c_vs_n",
    c_lo: float | None = None,
    c_hi: float | None = None,
    labels: list[str] | None = None,
) -> str:
    """Render one log-log allocation chart for the given reports as SVG text.

    The compute range defaults to the union of the reports' data hulls and
    reference budgets, padded one decade on each side.
    """
    if not reports:
        raise EmptyReports("no reports to plot")
    if axis not in AXES:
        raise ValueError(f"unknown axis: {axis!r} (expected one of {AXES})")

    curves = []
    for i, report in enumerate(reports):
        fn = _allocation_fn(report)
        if fn is None:
            continue
        label = labels[i] if labels else f"fit {i + 1} ({report['config']['hypothesis']['form']})"
        curves.append((label, fn, report))
    if not curves:
        raise EmptyReports("no plottable allocation in any report")

    references = []
    seen = set()
    for report in reports:
        for ref in report["config"]["report"]["reference_points"]:
            key = (ref["label"], ref["c"])
            if key not in seen:
                seen.add(key)
                references.append(ref)

    if c_lo is None or c_hi is None:
        los, his = [], []
        for _, _, report in curves:
            rng = report.get("dataset", {}).get("c_range")
            if rng:
                los.append(rng[0])
                his.append(rng[1])
        for ref in references:
            los.append(ref["c"])
            his.append(ref["c"])
        if not los:
            los, his = [1e15], [1e24]
        c_lo = c_lo if c_lo is not None else min(los) / 10.0
        c_hi = c_hi if c_hi is not None else max(his) * 10.0
    if not 0 < c_lo < c_hi:
        raise ValueError("need 0 < c_lo < c_hi")

    pick = {"c_vs_n": 0, "c_vs_d": 1, "c_vs_rho": 2}[axis]
    samples = [
        c_lo * (c_hi / c_lo) ** (i / (CURVE_SAMPLES - 1)) for i in range(CURVE_SAMPLES)
    ]
    series = []
    y_vals = []
    for label, fn, _ in curves:
        ys = [fn(c)[pick] for c in samples]
        series.append((label, ys))
        y_vals.extend(ys)
    for ref in references:
        y = _reference_y(ref, axis)
        if y is not None:
            y_vals.append(y)
    y_lo, y_hi = min(y_vals) / 3.0, max(y_vals) * 3.0

    xmap = _LogMap(c_lo, c_hi, MARGIN_L, WIDTH - MARGIN_R)
    ymap = _LogMap(y_lo, y_hi, HEIGHT - MARGIN_B, MARGIN_T)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'font-family="monospace" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{WIDTH - MARGIN_L - MARGIN_R}" '
        f'height="{HEIGHT - MARGIN_T - MARGIN_B}" fill="none" stroke="#333" stroke-width="1"/>',
    ]

    for exp in xmap.decades():
        x = xmap(10.0**exp)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{MARGIN_T}" x2="{_fmt(x)}" '
            f'y2="{HEIGHT - MARGIN_B}" stroke="#ddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{HEIGHT - MARGIN_B + 18}" '
            f'text-anchor="middle">{_pow10_label(exp)}</text>'
        )
    for exp in ymap.decades():
        y = ymap(10.0**exp)
        parts.append(
            f'<line x1="{MARGIN_L}" y1="{_fmt(y)}" x2="{WIDTH - MARGIN_R}" '
            f'y2="{_fmt(y)}" stroke="#ddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{MARGIN_L - 6}" y="{_fmt(y + 4)}" '
            f'text-anchor="end">{_pow10_label(exp)}</text>'
        )

    parts.append(
        f'<text x="{(MARGIN_L + WIDTH - MARGIN_R) // 2}" y="{HEIGHT - 16}" '
        f'text-anchor="middle">compute budget C (FLOPs)</text>'
    )
    parts.append(
        f'<text x="18" y="{(MARGIN_T + HEIGHT - MARGIN_B) // 2}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(MARGIN_T + HEIGHT - MARGIN_B) // 2})">'
        f"{_Y_LABEL[axis]}</text>"
    )

    for i, (label, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(
            f"{_fmt(xmap(c))},{_fmt(ymap(y))}" for c, y in zip(samples, ys) if y > 0
        )
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{WIDTH - MARGIN_R - 6}" y="{MARGIN_T + 16 + 16 * i}" '
            f'text-anchor="end" fill="{color}">{label}</text>'
        )

    for ref in references:
        x = xmap(ref["c"])
        y_ref = _reference_y(ref, axis)
        if y_ref is not None:
            y = ymap(y_ref)
            parts.append(
                f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="4" fill="#000"/>'
            )
            parts.append(
                f'<text x="{_fmt(x + 7)}" y="{_fmt(y - 6)}">{ref["label"]}</text>'
            )
        else:
            parts.append(
                f'<line x1="{_fmt(x)}" y1="{MARGIN_T}" x2="{_fmt(x)}" '
                f'y2="{HEIGHT - MARGIN_B}" stroke="#999" stroke-width="1" '
                f'stroke-dasharray="4 3"/>'
            )
            parts.append(
                f'<text x="{_fmt(x + 4)}" y="{MARGIN_T + 12}">{ref["label"]}</text>'
            )
        predictions = [fn(ref["c"])[pick] for _, fn, _ in curves]
        lo, hi = min(predictions), max(predictions)
        parts.append(
            f'<text x="{_fmt(x + 4)}" y="{HEIGHT - MARGIN_B - 22}" font-size="10">'
            f"min {lo:.3e}</text>"
        )
        parts.append(
            f'<text x="{_fmt(x + 4)}" y="{HEIGHT - MARGIN_B - 10}" font-size="10">'
            f"max {hi:.3e}</text>"
        )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _reference_y(ref: dict, axis: str) -> float | None:
    if axis == "c_vs_n":
        return ref.get("n")
    if axis == "c_vs_d":
        return ref.get("d")
    if ref.get("n") is not None and ref.get("d") is not None:
        return ref["d"] / ref["n"]
    return None


def write_allocation_chart(reports: list[dict], out_path: str | Path, axis: str, **kwargs) -> None:
    Path(out_path).write_text(render_allocation_chart(reports, axis, **kwargs), encoding="utf-8")
