"""Document- and corpus-level pipelines behind the command line."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

from PIL import Image

from finocr.cell_grounding import GroundingRecord, align_by_grid
from finocr.crosspage_merge import Category
from finocr.dhr import CropRef, Heading
from finocr.difficulty import (
    DifficultyWeights,
    correlation_table,
    difficulty_score,
    extract_attributes,
    icd,
    stratify,
    structural_complexity,
)
from finocr.docfile import DocumentFile
from finocr.errors import FinocrError, MissingCrop
from finocr.metrics import (
    MetricReport,
    TedsConfig,
    ard,
    cell_iou_report,
    crosspage_teds,
    ned,
    overall_scores,
    toc_eds,
)
from finocr.table_model import parse_table

log = logging.getLogger(__name__)

ALL_METRICS = ("teds", "teds_s", "toc_eds", "ned", "ard", "ciou", "overall")


# ---------------------------------------------------------------- headings

def document_headings(doc: DocumentFile, load_crops: bool = True):
    """Headings of a document in reading order plus a heading-id -> crop image map."""
    headings, crops = [], {}
    for el in doc.elements:
        if el.category != Category.HEADING:
            continue
        try:
            page = doc.page(el.page_index)
            bbox = el.bbox.normalized(page.width, page.height)
        except KeyError:
            bbox = el.bbox
        crop_ref = None
        if load_crops:
            image = _heading_crop(doc, el)
            crops[el.id] = image
            crop_ref = CropRef(el.id, image.width, image.height)
        level = el.extra.get("level")
        headings.append(Heading(el.id, el.content, bbox, el.page_index, crop_ref, level))
    return headings, crops


def _heading_crop(doc: DocumentFile, el) -> Image.Image:
    if "crop" in el.extra:
        path = doc.resolve(el.extra["crop"])
        if not path.exists():
            raise MissingCrop(f"{el.id}: {path}")
        return Image.open(path).convert("RGB")
    try:
        page = doc.page(el.page_index)
    except KeyError:
        page = None
    if page is None or not page.image or not doc.resolve(page.image).exists():
        raise MissingCrop(f"{el.id}: no crop image and no page image to cut it from")
    with Image.open(doc.resolve(page.image)) as img:
        b = el.bbox
        return img.convert("RGB").crop((int(b.x1), int(b.y1), int(b.x1 + b.w), int(b.y1 + b.h)))


def gold_headings(doc: DocumentFile) -> list:
    if doc.gold.headings:
        return [Heading(h["id"], h["text"], _zero_box(), level=h["level"]) for h in doc.gold.headings]
    headings, _ = document_headings(doc, load_crops=False)
    return headings


def _zero_box():
    from finocr.geometry import BBox

    return BBox(0.0, 0.0, 0.0, 0.0)


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalResult:
    report: MetricReport
    per_table: list = field(default_factory=list)
    ciou: Optional[object] = None
    warnings: list = field(default_factory=list)


def _gold_tables(doc: DocumentFile) -> list:
    if doc.gold.tables:
        return doc.gold.tables
    return [
        {"id": el.id, "table": el.content, "source_ids": list(el.source_ids or (el.id,)),
         "cell_boxes": el.extra.get("cell_boxes")}
        for el in doc.elements if el.category == Category.TABLE
    ]


def _table_scores(args):
    fragments, gold = args
    if not fragments:
        return 0.0, 0.0
    return crosspage_teds(fragments, gold), crosspage_teds(fragments, gold, TedsConfig(structure_only=True))


def evaluate(
    pred: DocumentFile,
    gold: DocumentFile,
    metrics=ALL_METRICS,
    thresholds=(0.3, 0.5, 0.7),
    formula_cdm: Optional[float] = None,
    text_edit: Optional[float] = None,
    table_teds: Optional[float] = None,
    jobs: int = 1,
) -> EvalResult:
    """Score a predicted document against its gold counterpart.

    ``text_edit`` and ``table_teds`` (0-100) override the measured values in
    the Overall computation.
    """
    metrics = set(metrics)
    result = EvalResult(MetricReport())
    warn = result.warnings.append
    pred_tables = {el.id: el for el in pred.elements if el.category == Category.TABLE}
    golds = _gold_tables(gold)

    if metrics & {"teds", "teds_s", "overall"} and golds:
        work = []
        for g in golds:
            frags = [pred_tables[i] for i in g["source_ids"] if i in pred_tables]
            frags.sort(key=lambda el: el.order_rank)
            if not frags:
                warn(f"gold table {g['id']} has no predicted counterpart; scored 0")
            work.append(([el.content for el in frags], g["table"]))
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                scores = list(pool.map(_table_scores, work))
        else:
            scores = [_table_scores(w) for w in work]
        result.per_table = [{"id": g["id"], "teds": t, "teds_s": s} for g, (t, s) in zip(golds, scores)]
        if "teds" in metrics or "overall" in metrics:
            result.report.set("teds", sum(t for t, _ in scores) / len(scores))
        if "teds_s" in metrics:
            result.report.set("teds_s", sum(s for _, s in scores) / len(scores))
    elif metrics & {"teds", "teds_s"}:
        warn("no gold tables; teds skipped")

    if metrics & {"ned", "overall"}:
        def text_of(doc):
            return "\n".join(el.content for el in doc.elements if el.category == Category.TEXT)

        result.report.set("ned", ned(text_of(pred), text_of(gold)))

    if "toc_eds" in metrics:
        pred_heads, _ = document_headings(pred, load_crops=False)
        gold_heads = gold_headings(gold)
        if any(h.level is None for h in pred_heads) or any(h.level is None for h in gold_heads):
            warn("headings without levels; toc_eds skipped")
        else:
            result.report.set("toc_eds", toc_eds(pred_heads, gold_heads))

    if "ard" in metrics:
        gold_order = gold.gold.reading_order or [el.id for el in gold.elements]
        pred_order = [el.id for el in pred.elements]
        common = set(gold_order) & set(pred_order)
        if len(common) != len(gold_order) or len(common) != len(pred_order):
            warn(f"reading orders share {len(common)} ids; ard computed on the shared ids")
        if common:
            result.report.set("ard", ard([i for i in pred_order if i in common], [i for i in gold_order if i in common]))
        else:
            warn("no shared element ids; ard skipped")

    if "ciou" in metrics:
        pred_boxes, gold_boxes = [], []
        for g in golds:
            pred_el = pred_tables.get(g["id"])
            if not g.get("cell_boxes") or pred_el is None or not pred_el.extra.get("cell_boxes"):
                continue
            p, q = align_by_grid(
                [GroundingRecord.from_dict(r) for r in pred_el.extra["cell_boxes"]],
                [GroundingRecord.from_dict(r) for r in g["cell_boxes"]],
            )
            pred_boxes += p
            gold_boxes += q
        if gold_boxes:
            result.ciou = cell_iou_report(pred_boxes, gold_boxes, thresholds)
            result.report.add_ciou(result.ciou)
        else:
            warn("no cell boxes on both sides; ciou skipped")

    if "overall" in metrics:
        te = text_edit if text_edit is not None else result.report.values.get("ned")
        tt = table_teds if table_teds is not None else (
            100.0 * result.report.values["teds"] if "teds" in result.report.values else None)
        if te is None or tt is None:
            warn("overall needs text edit and table TEDS; skipped")
        else:
            score = overall_scores(te, formula_cdm, tt)
            if score.overall is not None:
                result.report.set("overall", score.overall)
            result.report.set("overall_star", score.overall_star)
    for w in result.warnings:
        log.warning(w)
    return result


# ---------------------------------------------------------------- difficulty corpus

@dataclass
class DifficultyResult:
    rows: list  # per-sample dicts
    correlation: Optional[object]
    plan: object
    warnings: list = field(default_factory=list)


def read_jsonl(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: invalid JSON: {exc.msg}")
    return out


def _sample_attributes(rec):
    return extract_attributes(parse_table(rec["html"]), rec.get("line_style", "unknown"))


def run_difficulty(
    corpus: list,
    runs: Optional[dict] = None,
    weights: DifficultyWeights = DifficultyWeights(),
    quantiles=(1 / 3, 2 / 3),
    jobs: int = 1,
) -> DifficultyResult:
    """Attributes, correlations, difficulty scores and stages for a table corpus.

    ``corpus`` records carry ``sample_id``, ``html`` and optionally ``teds``;
    ``runs`` maps sample id to repeated-run TEDS values.
    """
    warnings = []
    if runs is None:
        warnings.append("no repeated runs supplied; difficulty uses the structural term only")
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                attrs = list(pool.map(_sample_attributes, corpus))
        else:
            attrs = [_sample_attributes(r) for r in corpus]
    except FinocrError as exc:
        raise ValueError(f"corpus table does not parse: {exc}")

    rows, samples, scores = [], [], {}
    for rec, a in zip(corpus, attrs):
        sid = str(rec["sample_id"])
        sample_runs = (runs or {}).get(sid)
        icd_sample = icd(sample_runs) if sample_runs and len(sample_runs) >= 2 else None
        if runs is not None and icd_sample is None:
            warnings.append(f"{sid}: fewer than two runs; ICD left empty")
        teds_value = rec.get("teds")
        if teds_value is None and icd_sample is not None:
            teds_value = sum(icd_sample.teds_runs) / len(icd_sample.teds_runs)
        d = difficulty_score(a, icd_sample, weights)
        scores[sid] = d
        rows.append({"sample_id": sid, "attrs": a, "icd": icd_sample, "teds": teds_value,
                     "sc": structural_complexity(a), "d": d})
        if teds_value is not None:
            samples.append((a, icd_sample, float(teds_value)))

    correlation = None
    if len(samples) >= 2:
        correlation = correlation_table(samples)
        for col in correlation.zero_variance:
            warnings.append(f"attribute {col!r} has zero variance; excluded from ranking")
    else:
        warnings.append("fewer than two samples with TEDS; correlation skipped")
    plan = stratify(scores, quantiles)
    for row in rows:
        row["stage"] = plan.stages[row["sample_id"]]
    for w in warnings:
        log.warning(w)
    return DifficultyResult(rows, correlation, plan, warnings)


def with_levels(doc: DocumentFile, headings) -> DocumentFile:
    """Copy of ``doc`` whose heading elements carry the given levels."""
    level_of = {h.id: h.level for h in headings}
    elements = []
    for el in doc.elements:
        if el.id in level_of:
            el = replace(el, extra={**el.extra, "level": level_of[el.id]})
        elements.append(el)
    return replace(doc, elements=elements)
