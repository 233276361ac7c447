"""Ranking and calibration metrics for LTV predictions.

Every metric ranks records by prediction (descending, ties by ascending
sample id) and cuts the ranking into K equal-count groups, the first
``n % K`` groups taking one extra record.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class MetricUndefined(ValueError):
    """Raised when a metric has no meaning for the given records."""


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: int
    predicted: float
    actual: float
    day: int = -1
    expected_counts: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("predicted", "actual"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"record {self.sample_id}: {name} must be finite and >= 0, got {v!r}")


def _ranked(records: Sequence[PredictionRecord]) -> tuple[np.ndarray, np.ndarray]:
    ids = np.fromiter((r.sample_id for r in records), dtype=np.int64, count=len(records))
    pred = np.fromiter((r.predicted for r in records), dtype=np.float64, count=len(records))
    actual = np.fromiter((r.actual for r in records), dtype=np.float64, count=len(records))
    order = np.lexsort((ids, -pred))
    return pred[order], actual[order]


def group_bounds(n: int, k: int) -> list[tuple[int, int]]:
    if k < 1:
        raise ValueError(f"number of groups must be >= 1, got {k}")
    if n < k:
        raise MetricUndefined(f"need at least {k} records for {k} groups, got {n}")
    base, rem = divmod(n, k)
    bounds, start = [], 0
    for g in range(k):
        end = start + base + (1 if g < rem else 0)
        bounds.append((start, end))
        start = end
    return bounds


def group_memberships(records: Sequence[PredictionRecord], k: int) -> list[list[int]]:
    """Sample ids of each group, best-ranked group first."""
    ids = np.fromiter((r.sample_id for r in records), dtype=np.int64, count=len(records))
    pred = np.fromiter((r.predicted for r in records), dtype=np.float64, count=len(records))
    ranked_ids = ids[np.lexsort((ids, -pred))]
    return [ranked_ids[a:b].tolist() for a, b in group_bounds(len(records), k)]


def _cumulative_group_values(records, k: int) -> tuple[list[float], float]:
    _, actual = _ranked(records)
    bounds = group_bounds(len(records), k)
    total = math.fsum(actual)
    if total <= 0:
        raise MetricUndefined("total actual value is zero; Lorenz curve undefined")
    group_sums = [math.fsum(actual[a:b]) for a, b in bounds]
    cum = [math.fsum(group_sums[:g + 1]) for g in range(k)]
    return cum, total


def lorenz_curve(records: Sequence[PredictionRecord], k: int = 100) -> list[tuple[float, float]]:
    """K points ``(k/K, cumulative actual share of the top k groups)``."""
    cum, total = _cumulative_group_values(records, k)
    return [((g + 1) / k, c / total) for g, c in enumerate(cum)]


def aulc(records: Sequence[PredictionRecord], k: int = 100) -> float:
    """Area under the Lorenz curve: mean of the K cumulative shares."""
    cum, total = _cumulative_group_values(records, k)
    return math.fsum(cum) / (k * total)


@dataclass(frozen=True)
class GroupRow:
    group: int
    n: int
    predicted_sum: float
    actual_sum: float
    bias: float
    zero_actual: bool


def decile_table(records: Sequence[PredictionRecord], k: int = 10, eps: float = 1e-9) -> list[GroupRow]:
    """Per-group sums and relative bias ``(pred - actual) / max(actual, eps)``."""
    pred, actual = _ranked(records)
    rows = []
    for g, (a, b) in enumerate(group_bounds(len(records), k)):
        p_sum = math.fsum(pred[a:b])
        v_sum = math.fsum(actual[a:b])
        rows.append(GroupRow(g + 1, b - a, p_sum, v_sum, (p_sum - v_sum) / max(v_sum, eps), v_sum <= 0))
    return rows


def group_bias(records: Sequence[PredictionRecord], k: int = 10, eps: float = 1e-9) -> list[float]:
    return [row.bias for row in decile_table(records, k, eps)]


def gbias_var(biases: Sequence[float], top_fraction: float = 1.0) -> float:
    """Mean squared deviation of group biases from their median.

    Only the first ``ceil(top_fraction * K)`` groups (highest predictions)
    take part.
    """
    if not 0 < top_fraction <= 1:
        raise ValueError(f"top_fraction must lie in (0, 1], got {top_fraction}")
    keep = math.ceil(top_fraction * len(biases) - 1e-9)
    b = np.asarray(biases[:keep], dtype=np.float64)
    if b.size == 0:
        raise MetricUndefined("no groups left after top-fraction restriction")
    return float(np.mean((b - np.median(b)) ** 2))


@dataclass
class EvalReport:
    n: int
    aulc: float | None
    lorenz_points: list[tuple[float, float]]
    decile_table: list[GroupRow]
    gbias_var: float | None
    gbias_var_top: float | None
    top_fraction: float = 0.8
    notes: list[str] = field(default_factory=list)

    @property
    def zero_actual_groups(self) -> list[int]:
        return [row.group for row in self.decile_table if row.zero_actual]


def evaluate(records: Sequence[PredictionRecord], k_lorenz: int = 100, k_bias: int = 10,
             top_fraction: float = 0.8, eps: float = 1e-9) -> EvalReport:
    """All metrics for one record set; undefined metrics become ``None`` with a note."""
    notes = []
    try:
        points = lorenz_curve(records, k_lorenz)
        area = aulc(records, k_lorenz)
    except MetricUndefined as exc:
        points, area = [], None
        notes.append(f"aulc undefined: {exc}")
    try:
        table = decile_table(records, k_bias, eps)
        biases = [row.bias for row in table]
        var_all = gbias_var(biases, 1.0)
        var_top = gbias_var(biases, top_fraction)
    except MetricUndefined as exc:
        table, var_all, var_top = [], None, None
        notes.append(f"gbias undefined: {exc}")
    return EvalReport(len(records), area, points, table, var_all, var_top, top_fraction, notes)


@dataclass
class RollingReport:
    days: list[tuple[int, EvalReport]]
    pooled: EvalReport

    @property
    def mean_daily_aulc(self) -> float | None:
        values = [r.aulc for _, r in self.days if r.aulc is not None]
        return math.fsum(values) / len(values) if values else None


def rolling_report(per_day: Sequence[tuple[int, Sequence[PredictionRecord]]], **kwargs) -> RollingReport:
    """Per-day reports plus one report on the pooled records.

    Days whose AULC is undefined are left out of the daily mean only.
    """
    if not per_day:
        raise MetricUndefined("rolling_report needs at least one evaluated day")
    days = [(day, evaluate(list(recs), **kwargs)) for day, recs in per_day]
    pooled = [r for _, recs in per_day for r in recs]
    return RollingReport(days, evaluate(pooled, **kwargs))


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return "undefined" if v is None else repr(float(v))


def _top_key(q: float) -> str:
    return f"gbias_var_top{int(round(q * 100))}"


def metrics_lines(model: str, report: RollingReport) -> list[str]:
    p = report.pooled
    top = _top_key(p.top_fraction)
    lines = [
        f"model={model}",
        f"pooled.n={p.n}",
        f"pooled.aulc={_fmt(p.aulc)}",
        f"pooled.gbias_var={_fmt(p.gbias_var)}",
        f"pooled.{top}={_fmt(p.gbias_var_top)}",
        f"pooled.zero_actual_groups={','.join(map(str, p.zero_actual_groups))}",
        f"days={len(report.days)}",
        f"mean_daily_aulc={_fmt(report.mean_daily_aulc)}",
    ]
    for day, r in report.days:
        lines += [
            f"day.{day}.n={r.n}",
            f"day.{day}.aulc={_fmt(r.aulc)}",
            f"day.{day}.gbias_var={_fmt(r.gbias_var)}",
            f"day.{day}.{top}={_fmt(r.gbias_var_top)}",
        ]
    return lines


def lorenz_svg(curves: Mapping[str, Sequence[tuple[float, float]]], size: int = 400) -> str:
    """Standalone SVG of one or more Lorenz curves over the unit square."""
    pad = 40
    span = size - 2 * pad
    colors = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"]

    def xy(x, y):
        return f"{pad + x * span:.2f},{pad + (1 - y) * span:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#444"/>',
        f'<polyline points="{xy(0, 0)} {xy(1, 1)}" fill="none" stroke="#999" stroke-dasharray="4 3"/>',
    ]
    for i, (name, points) in enumerate(curves.items()):
        color = colors[i % len(colors)]
        pts = " ".join(xy(x, y) for x, y in [(0.0, 0.0), *points])
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{pad + 8}" y="{pad + 16 + 14 * i}" font-size="12" fill="{color}">{name}</text>'
        )
    parts.append(f'<text x="{size / 2:.0f}" y="{size - 10}" font-size="12" text-anchor="middle">'
                 f'share of samples (ranked by prediction)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_reports(out_dir, model: str, report: RollingReport, svg: bool = True) -> list[Path]:
    """Write metrics.txt, daily.csv, lorenz.csv, deciles.csv (and lorenz.svg)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, lines):
        path = out / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)

    emit("metrics.txt", metrics_lines(model, report))
    top = _top_key(report.pooled.top_fraction)
    emit("daily.csv", [f"day,n,aulc,gbias_var,{top}"] + [
        f"{day},{r.n},{_fmt(r.aulc)},{_fmt(r.gbias_var)},{_fmt(r.gbias_var_top)}"
        for day, r in report.days
    ])
    emit("lorenz.csv", ["k,sample_share,value_share"] + [
        f"{i + 1},{_fmt(x)},{_fmt(y)}" for i, (x, y) in enumerate(report.pooled.lorenz_points)
    ])
    emit("deciles.csv", ["group,n,predicted_sum,actual_sum,bias,zero_actual"] + [
        f"{row.group},{row.n},{_fmt(row.predicted_sum)},{_fmt(row.actual_sum)},"
        f"{_fmt(row.bias)},{int(row.zero_actual)}"
        for row in report.pooled.decile_table
    ])
    if svg and report.pooled.lorenz_points:
        path = out / "lorenz.svg"
        path.write_text(lorenz_svg({model: report.pooled.lorenz_points}), encoding="utf-8")
        written.append(path)
    return written


def read_metrics(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key] = value
    return out


def comparison_table(metrics: Mapping[str, Mapping[str, str]], top_fraction: float = 0.8) -> list[str]:
    """CSV rows in the layout model, AULC, GBiasVar, GBiasVar (top q)."""
    top = _top_key(top_fraction)
    rows = [f"model,aulc,gbias_var,{top}"]
    for model, m in metrics.items():
        rows.append(",".join([
            model, m.get("pooled.aulc", "undefined"), m.get("pooled.gbias_var", "undefined"),
            m.get(f"pooled.{top}", "undefined"),
        ]))
    return rows
