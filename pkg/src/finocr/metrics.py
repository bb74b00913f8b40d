"""Evaluation metrics: TEDS / TEDS-S, cross-page TEDS, TocEDS, NED, C-IoU, ARD, Overall."""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from finocr.errors import EmptyInput, IdSetMismatch, LengthMismatch, RangeError
from finocr.table_model import HtmlTable, normalize_table
from finocr.tree_edit import CONTENT, STRUCTURAL, CostModel, OrderedTree, tree_edit_distance, tree_size


def levenshtein(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def ned(pred: str, gold: str) -> float:
    """Levenshtein distance over the longer length (empty pair scores 0)."""
    return levenshtein(pred, gold) / max(len(pred), len(gold), 1)


@dataclass(frozen=True)
class TedsConfig:
    structure_only: bool = False
    content_relabel: Callable = ned


def _relabel_with(content_relabel):
    def relabel(a: OrderedTree, b: OrderedTree) -> float:
        if a.kind != b.kind or a.label != b.label:
            return 1.0
        if a.kind == CONTENT:
            return float(content_relabel(a.text, b.text))
        return 0.0

    return relabel


def teds_cost(content_relabel: Callable = ned) -> CostModel:
    return CostModel(relabel_cost=_relabel_with(content_relabel))


def td_label(rowspan: int, colspan: int) -> str:
    return f"td[rs={rowspan},cs={colspan}]"


def table_to_tree(table: HtmlTable, structure_only: bool = False) -> OrderedTree:
    """table -> (thead?, tbody) -> tr -> td, spans folded into the td label."""

    def section(name, rows):
        trs = []
        for row in rows:
            tds = [
                OrderedTree(td_label(c.rowspan, c.colspan), CONTENT, (), "" if structure_only else c.text)
                for c in row
            ]
            trs.append(OrderedTree("tr", STRUCTURAL, tds))
        return OrderedTree(name, STRUCTURAL, trs)

    parts = []
    if table.head_rows:
        parts.append(section("thead", table.head_rows))
    parts.append(section("tbody", table.body_rows))
    return OrderedTree("table", STRUCTURAL, parts)


def tree_similarity(a: OrderedTree, b: OrderedTree, cost: CostModel) -> float:
    if a == b:
        return 1.0
    distance = tree_edit_distance(a, b, cost)
    return 1.0 - distance / max(tree_size(a), tree_size(b))


def teds(pred: HtmlTable, gold: HtmlTable, cfg: TedsConfig = TedsConfig()) -> float:
    a = table_to_tree(normalize_table(pred), cfg.structure_only)
    b = table_to_tree(normalize_table(gold), cfg.structure_only)
    return tree_similarity(a, b, teds_cost(cfg.content_relabel))


def concat_fragments(fragments: Sequence[HtmlTable]) -> HtmlTable:
    """First fragment intact; later fragments lose their head rows and append their body."""
    if not fragments:
        raise EmptyInput("at least one table fragment is required")
    first = fragments[0]
    body = list(first.body_rows)
    for frag in fragments[1:]:
        body.extend(frag.body_rows)
    return HtmlTable(first.head_rows, tuple(body), first.source_span)


def crosspage_teds(pred_fragments: Sequence[HtmlTable], gold: HtmlTable, cfg: TedsConfig = TedsConfig()) -> float:
    return teds(concat_fragments(pred_fragments), gold, cfg)


def build_toc_tree(headings) -> OrderedTree:
    """Nest each heading under the nearest preceding heading of smaller level."""
    root_children: list = []
    # stack of (level, children list)
    stack = [(0, root_children)]
    for h in headings:
        if h.level is None or h.level < 1:
            raise ValueError(f"heading {h.text!r} has no valid level")
        while stack[-1][0] >= h.level:
            stack.pop()
        children: list = []
        stack[-1][1].append((h.text, children))
        stack.append((h.level, children))

    def freeze(items):
        return tuple(OrderedTree("heading", CONTENT, freeze(kids), text) for text, kids in items)

    return OrderedTree("toc", STRUCTURAL, freeze(root_children))


def toc_eds(pred, gold, content_relabel: Callable = ned) -> float:
    return tree_similarity(build_toc_tree(pred), build_toc_tree(gold), teds_cost(content_relabel))


@dataclass(frozen=True)
class CellIouReport:
    per_cell_iou: tuple
    thresholds: tuple
    recall_at: dict
    mean_iou: float
    median_iou: float


def cell_iou_report(pred, gold, thresholds=(0.3, 0.5, 0.7)) -> CellIouReport:
    from finocr.cell_grounding import iou

    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predicted boxes vs {len(gold)} gold boxes")
    if not pred:
        raise EmptyInput("no cells to score")
    ious = tuple(iou(p, g) for p, g in zip(pred, gold))
    return iou_report_from_values(ious, thresholds)


def iou_report_from_values(ious, thresholds=(0.3, 0.5, 0.7)) -> CellIouReport:
    ious = tuple(float(v) for v in ious)
    if not ious:
        raise EmptyInput("no cells to score")
    thresholds = tuple(sorted(thresholds))
    recall = {t: sum(v >= t for v in ious) / len(ious) for t in thresholds}
    return CellIouReport(ious, thresholds, recall, math.fsum(ious) / len(ious), statistics.median(ious))


def ard(pred_order: Sequence, gold_order: Sequence) -> float:
    """Mean absolute rank displacement, normalized by N."""
    n = len(gold_order)
    if len(set(pred_order)) != len(pred_order) or len(set(gold_order)) != n:
        raise IdSetMismatch("reading orders must not repeat ids")
    if set(pred_order) != set(gold_order):
        raise IdSetMismatch("predicted and gold reading orders cover different ids")
    if n == 0:
        raise EmptyInput("empty reading order")
    gold_rank = {eid: r for r, eid in enumerate(gold_order)}
    return sum(abs(r - gold_rank[eid]) for r, eid in enumerate(pred_order)) / n / n


@dataclass(frozen=True)
class OverallScore:
    text_edit: float
    formula_cdm: Optional[float]
    table_teds: float
    overall: Optional[float]
    overall_star: float


def overall_scores(text_edit: float, formula_cdm: Optional[float], table_teds: float) -> OverallScore:
    """Combine text edit distance ([0,1]) with formula CDM and table TEDS ([0,100])."""
    if not 0.0 <= text_edit <= 1.0:
        raise RangeError(f"text_edit={text_edit} outside [0, 1]")
    if not 0.0 <= table_teds <= 100.0:
        raise RangeError(f"table_teds={table_teds} outside [0, 100]")
    if formula_cdm is not None and not 0.0 <= formula_cdm <= 100.0:
        raise RangeError(f"formula_cdm={formula_cdm} outside [0, 100]")
    text_score = (1.0 - text_edit) * 100.0
    overall = None if formula_cdm is None else (text_score + formula_cdm + table_teds) / 3.0
    return OverallScore(text_edit, formula_cdm, table_teds, overall, (text_score + table_teds) / 2.0)


REPORT_KEYS = ("teds", "teds_s", "toc_eds", "ned", "ard", "ciou_mean", "ciou_median", "overall", "overall_star")


def ciou_key(threshold: float) -> str:
    return f"ciou_at_{threshold:g}"


@dataclass
class MetricReport:
    """Flat metric report; unset metrics are omitted from the JSON document."""

    values: dict = field(default_factory=dict)

    def set(self, key: str, value):
        if key not in REPORT_KEYS and not key.startswith("ciou_at_"):
            raise KeyError(f"unknown metric key {key!r}")
        self.values[key] = value

    def add_ciou(self, report: CellIouReport):
        self.set("ciou_mean", report.mean_iou)
        self.set("ciou_median", report.median_iou)
        for t, r in report.recall_at.items():
            self.set(ciou_key(t), r)

    def to_dict(self) -> dict:
        ordered = {k: self.values[k] for k in REPORT_KEYS if k in self.values}
        ordered.update({k: v for k, v in sorted(self.values.items()) if k.startswith("ciou_at_")})
        return ordered

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        report = cls()
        for k, v in json.loads(text).items():
            report.set(k, v)
        return report
