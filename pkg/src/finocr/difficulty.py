"""Table difficulty: attribute extraction, correlation screening, ICD, scoring, curriculum stages."""

from __future__ import annotations

import csv
import io
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from finocr.errors import EmptyInput, LengthMismatch, TooFewRuns, ZeroVariance
from finocr.table_model import HtmlTable, expand_grid, normalize_text

# attribute column -> (TableAttributes / IcdSample field)
ATTRIBUTE_COLUMNS = {
    "Empty Rat.": "empty_cell_ratio",
    "Max RS": "max_rowspan",
    "RS": "rowspan_count",
    "Max CS": "max_colspan",
    "CS": "colspan_count",
    "Diff. Std": "icd_std",
    "Diff. Range": "icd_range",
}
ICD_COLUMNS = ("Diff. Std", "Diff. Range")
STAGES = ("easy", "mid", "hard")


@dataclass(frozen=True)
class TableAttributes:
    empty_cell_ratio: float
    rowspan_count: int
    colspan_count: int
    max_rowspan: int
    max_colspan: int
    span_histogram: dict = field(default_factory=dict)
    line_style: str = "unknown"


@dataclass(frozen=True)
class IcdSample:
    teds_runs: tuple
    icd_std: float
    icd_range: float


@dataclass(frozen=True)
class DifficultyWeights:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("weights must be non-negative with a positive sum")


def extract_attributes(table: HtmlTable, line_style: str = "unknown") -> TableAttributes:
    grid = expand_grid(table)
    cells = [cell for _, _, cell in grid.origins]
    total = grid.n_rows * grid.n_cols
    empty = sum(
        1
        for row in grid.slots
        for ref in row
        if ref is None or not normalize_text(grid.origins[ref][2].text)
    )
    hist = Counter()
    for c in cells:
        if c.rowspan > 1:
            hist[f"rowspan={c.rowspan}"] += 1
        if c.colspan > 1:
            hist[f"colspan={c.colspan}"] += 1
    return TableAttributes(
        empty_cell_ratio=empty / total if total else 1.0,
        rowspan_count=sum(c.rowspan > 1 for c in cells),
        colspan_count=sum(c.colspan > 1 for c in cells),
        max_rowspan=max((c.rowspan for c in cells), default=1),
        max_colspan=max((c.colspan for c in cells), default=1),
        span_histogram=dict(sorted(hist.items())),
        line_style=line_style,
    )


def pearson(a: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation with population moments."""
    if len(a) != len(y):
        raise LengthMismatch(f"{len(a)} vs {len(y)} values")
    n = len(a)
    if n < 2:
        raise LengthMismatch("need at least two observations")
    ma, my = math.fsum(a) / n, math.fsum(y) / n
    da = [v - ma for v in a]
    dy = [v - my for v in y]
    var_a = math.fsum(v * v for v in da) / n
    var_y = math.fsum(v * v for v in dy) / n
    if var_a == 0 or var_y == 0:
        raise ZeroVariance("an input has zero variance")
    cov = math.fsum(p * q for p, q in zip(da, dy)) / n
    return max(-1.0, min(1.0, cov / math.sqrt(var_a * var_y)))


def icd(teds_runs: Sequence[float]) -> IcdSample:
    runs = tuple(float(v) for v in teds_runs)
    if len(runs) < 2:
        raise TooFewRuns(f"need at least two runs, got {len(runs)}")
    return IcdSample(runs, statistics.pstdev(runs), max(runs) - min(runs))


@dataclass(frozen=True)
class CorrelationReport:
    rho: dict  # column -> correlation with TEDS
    ranking: tuple  # columns ordered by |rho| descending
    zero_variance: tuple
    n_samples: int


def _attribute_value(column: str, attrs: TableAttributes, icd_sample: Optional[IcdSample]):
    name = ATTRIBUTE_COLUMNS[column]
    if column in ICD_COLUMNS:
        return None if icd_sample is None else getattr(icd_sample, name)
    return getattr(attrs, name)


def correlation_table(samples: Sequence[tuple]) -> CorrelationReport:
    """Correlate every attribute column with TEDS over ``(attrs, icd or None, teds)`` samples."""
    if len(samples) < 2:
        raise EmptyInput("need at least two samples")
    rho, zero = {}, []
    for column in ATTRIBUTE_COLUMNS:
        pairs = [(_attribute_value(column, a, s), t) for a, s, t in samples]
        pairs = [(v, t) for v, t in pairs if v is not None]
        if len(pairs) < 2:
            continue
        try:
            rho[column] = pearson([v for v, _ in pairs], [t for _, t in pairs])
        except ZeroVariance:
            zero.append(column)
    ranking = tuple(sorted(rho, key=lambda c: (-abs(rho[c]), list(ATTRIBUTE_COLUMNS).index(c))))
    return CorrelationReport(rho, ranking, tuple(zero), len(samples))


def correlation_csv(rho: Mapping[str, float], digits: int = 3) -> str:
    """Two-row CSV in the attribute/correlation layout; missing attributes are left blank."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Attribute", *ATTRIBUTE_COLUMNS])
    writer.writerow(["Correlation", *(f"{rho[c]:.{digits}f}" if c in rho else "" for c in ATTRIBUTE_COLUMNS)])
    return buf.getvalue()


def read_correlation_csv(text: str) -> dict:
    rows = list(csv.reader(io.StringIO(text)))
    header, values = rows[0], rows[1]
    return {col: float(v) for col, v in zip(header[1:], values[1:]) if v != ""}


def structural_complexity(attrs: TableAttributes) -> float:
    """Span load squashed into [0, 1]; 0 for a table without spans."""
    raw = attrs.rowspan_count + attrs.colspan_count + attrs.max_rowspan + attrs.max_colspan - 2
    return min(1.0, raw / 20.0)


def difficulty_score(attrs: TableAttributes, icd_sample: Optional[IcdSample], w: DifficultyWeights = DifficultyWeights()) -> float:
    score = w.alpha * structural_complexity(attrs)
    if icd_sample is not None:
        score += w.beta * icd_sample.icd_std
    return score


@dataclass(frozen=True)
class CurriculumPlan:
    stages: dict  # sample id -> stage
    bounds: dict  # stage -> (low, high) difficulty bounds
    order: tuple  # training priority: hardest first, id ascending on ties

    def members(self, stage: str) -> list:
        return [sid for sid in self.order if self.stages[sid] == stage]


def stratify(scores: Mapping[str, float], quantiles=(1 / 3, 2 / 3), forced_easy: Iterable[str] = ()) -> CurriculumPlan:
    """Split samples at the q1/q2 difficulty quantiles; a boundary value goes to the lower stage.

    ``forced_easy`` ids (e.g. pre-filtered by an external ensemble) are placed
    in the easy stage regardless of score.
    """
    q1, q2 = quantiles
    if not 0 < q1 < q2 < 1:
        raise ValueError("quantiles must satisfy 0 < q1 < q2 < 1")
    if not scores:
        raise EmptyInput("no samples to stratify")
    values = np.array(list(scores.values()), dtype=float)
    lo, hi = float(np.quantile(values, q1)), float(np.quantile(values, q2))
    forced = set(forced_easy)
    stages = {}
    for sid, d in scores.items():
        if sid in forced or d <= lo:
            stages[sid] = "easy"
        elif d <= hi:
            stages[sid] = "mid"
        else:
            stages[sid] = "hard"
    bounds = {"easy": (float(values.min()), lo), "mid": (lo, hi), "hard": (hi, float(values.max()))}
    order = tuple(sorted(scores, key=lambda sid: (-scores[sid], sid)))
    return CurriculumPlan(stages, bounds, order)
