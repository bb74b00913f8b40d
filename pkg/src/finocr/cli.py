"""Command line: ``finocr merge|dhr|eval|difficulty|score``.

Exit codes: 0 success, 2 input error, 3 external-service error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import random
import sys
from dataclasses import replace
from pathlib import Path

from finocr import __version__
from finocr.crosspage_merge import consolidate
from finocr.dhr import DEFAULT_INSTRUCTION, PAGE_H, PAGE_W, run_dhr
from finocr.difficulty import ATTRIBUTE_COLUMNS, DifficultyWeights, correlation_csv
from finocr.docfile import DocumentFormatError, atomic_write, read_document, write_document
from finocr.errors import (
    CropTooLarge,
    DuplicateLabel,
    FinocrError,
    MalformedResponse,
    MissingCrop,
    MissingLabels,
    RetriesExhausted,
    ServiceError,
)
from finocr.pipelines import (
    ALL_METRICS,
    document_headings,
    evaluate,
    read_jsonl,
    run_difficulty,
    with_levels,
)
from finocr.rl_math import RewardConfig, dump_records, score_candidates
from finocr.table_model import parse_table
from finocr.vlm_client import HttpVlmClient, StubClient, VlmConfig, stub_from_gold

log = logging.getLogger("finocr")

EXIT_OK, EXIT_INPUT, EXIT_SERVICE, EXIT_INTERNAL = 0, 2, 3, 4

# service replies that cannot be decoded count as service failures
SERVICE_ERRORS = (ServiceError, RetriesExhausted, MalformedResponse, MissingLabels, DuplicateLabel)
INPUT_ERRORS = (DocumentFormatError, MissingCrop, CropTooLarge, FileNotFoundError, ValueError, KeyError)


class InputError(Exception):
    pass


def load_config(path) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc.msg}")
    if not isinstance(data, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return data


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


# ---------------------------------------------------------------- merge

def cmd_merge(args, config) -> int:
    doc = read_document(args.input)
    elements, report = consolidate(doc.elements)
    out = Path(args.output)
    write_document(replace(doc, elements=elements), out)
    atomic_write(_sidecar(out, ".report.json"), json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n")
    for m in report.merged_tables:
        if len(m.source_ids) > 1:
            print(f"table\t{'+'.join(m.source_ids)}\t{m.branch}")
    for m in report.merged_texts:
        print(f"text\t{'+'.join(m.source_ids)}")
    return EXIT_OK


# ---------------------------------------------------------------- dhr

def _gold_levels(doc, headings) -> dict:
    """Label -> level from the document's gold headings (or element levels)."""
    gold = {h["id"]: h["level"] for h in doc.gold.headings}
    levels = {}
    for i, h in enumerate(headings, 1):
        level = gold.get(h.id, h.level)
        if level is None:
            raise InputError(f"--stub without a response file needs gold levels; heading {h.id!r} has none")
        levels[i] = level
    return levels


def _make_client(args, config, doc, headings):
    if args.stub is not None:
        if args.stub == "":
            return stub_from_gold(_gold_levels(doc, headings))
        try:
            return StubClient(Path(args.stub).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read stub response {args.stub}: {exc.strerror}")
    vlm = VlmConfig.load(args.config)
    if args.endpoint:
        vlm.url = args.endpoint
    if not vlm.url:
        raise InputError("no service endpoint: pass --endpoint, --stub, or set FINOCR_VLM_URL")
    return HttpVlmClient(vlm)


class _AuditedClient:
    """Writes a summary of every request (images as digests) before forwarding it."""

    def __init__(self, inner, path: Path):
        self.inner, self.path = inner, path

    def generate(self, req):
        summary = {
            "instruction": req.instruction,
            "text_lines": list(req.text_lines),
            "images": [{"media_type": m, "sha256": hashlib.sha256(d).hexdigest(), "bytes": len(d)}
                       for m, d in req.images],
        }
        atomic_write(self.path, json.dumps(summary, indent=2, ensure_ascii=False) + "\n")
        return self.inner.generate(req)


def cmd_dhr(args, config) -> int:
    doc = read_document(args.input)
    render = not args.no_render
    headings, crops = document_headings(doc, load_crops=render)
    if not headings:
        raise InputError(f"{args.input}: document has no heading elements")
    out = Path(args.output)
    client = _AuditedClient(_make_client(args, config, doc, headings), _sidecar(out, ".request.json"))
    dhr_cfg = config.get("dhr", {})
    instruction = dhr_cfg.get("instruction", DEFAULT_INSTRUCTION)

    def save_pages(images):
        for i, png in enumerate(images, 1):
            atomic_write(_sidecar(out, f".toc-{i:02d}.png"), png)

    # page images are saved before the service call, so they survive its failure
    result = run_dhr(
        headings, client, crops, render=render,
        page_w=dhr_cfg.get("page_width", PAGE_W), page_h=dhr_cfg.get("page_height", PAGE_H),
        instruction=instruction, on_pages=save_pages,
    )
    atomic_write(_sidecar(out, ".response.txt"), result.response_text or "")
    write_document(with_levels(doc, result.headings), out)
    for h in result.headings:
        print(f"{h.numeric_label}\t{h.level}\t{h.text}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def _summary_table(values: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(["metric", "value"])
    for key, value in values.items():
        shown = 100.0 * value if key in ("teds", "teds_s") else value
        writer.writerow([key, f"{shown:.4f}"])
    return buf.getvalue()


def cmd_eval(args, config) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise InputError(f"unknown metrics: {', '.join(sorted(unknown))} (choose from {', '.join(ALL_METRICS)})")
    pred = read_document(args.pred)
    gold = read_document(args.gold)
    thresholds = tuple(float(t) for t in args.iou_thresholds.split(","))
    result = evaluate(
        pred, gold, metrics, thresholds,
        formula_cdm=args.formula_cdm, text_edit=args.text_edit, table_teds=args.table_teds, jobs=args.jobs,
    )
    values = result.report.to_dict()
    if args.output:
        out = Path(args.output)
        atomic_write(out, result.report.to_json() + "\n")
        if result.per_table:
            atomic_write(_sidecar(out, ".tables.json"), json.dumps(result.per_table, indent=2) + "\n")
        if not args.no_figures:
            from finocr import plotting

            if result.per_table:
                plotting.plot_table_scores(result.per_table, _sidecar(out, ".tables.png"))
            if result.ciou is not None:
                plotting.plot_iou_recall(result.ciou, _sidecar(out, ".ciou.png"))
    sys.stdout.write(_summary_table(values))
    return EXIT_OK


# ---------------------------------------------------------------- difficulty

def _read_runs(path) -> dict:
    runs = {}
    for rec in read_jsonl(path):
        try:
            runs[str(rec["sample_id"])] = [float(v) for v in rec["teds_runs"]]
        except (KeyError, TypeError, ValueError):
            raise InputError(f"{path}: run records need sample_id and a teds_runs list")
    return runs


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _fmt(v):
    return "" if v is None else f"{v:.6g}"


def cmd_difficulty(args, config) -> int:
    dcfg = config.get("difficulty", {})
    weights = DifficultyWeights(
        args.alpha if args.alpha is not None else dcfg.get("alpha", 0.5),
        args.beta if args.beta is not None else dcfg.get("beta", 0.5),
    )
    quantiles = tuple(args.quantiles) if args.quantiles else tuple(dcfg.get("quantiles", (1 / 3, 2 / 3)))
    corpus = read_jsonl(args.corpus)
    for lineno, rec in enumerate(corpus, 1):
        if not isinstance(rec, dict) or "sample_id" not in rec or "html" not in rec:
            raise InputError(f"{args.corpus}: record {lineno} needs sample_id and html")
    runs = _read_runs(args.runs) if args.runs else None
    result = run_difficulty(corpus, runs, weights, quantiles, jobs=args.jobs)

    out = Path(args.output_dir)
    cols = list(ATTRIBUTE_COLUMNS)
    attr_rows = [["sample_id", *cols, "line_style"]]
    score_rows = [["sample_id", "teds", "structural_complexity", "icd_std", "d", "stage"]]
    for row in result.rows:
        a, s = row["attrs"], row["icd"]
        values = [
            a.empty_cell_ratio, a.max_rowspan, a.rowspan_count, a.max_colspan, a.colspan_count,
            None if s is None else s.icd_std, None if s is None else s.icd_range,
        ]
        attr_rows.append([row["sample_id"], *map(_fmt, values), a.line_style])
        score_rows.append([row["sample_id"], _fmt(row["teds"]), _fmt(row["sc"]),
                           _fmt(None if s is None else s.icd_std), _fmt(row["d"]), row["stage"]])
    atomic_write(out / "attributes.csv", _csv(attr_rows))
    atomic_write(out / "scores.csv", _csv(score_rows))
    plan = result.plan
    atomic_write(out / "plan.json", json.dumps({
        "weights": {"alpha": weights.alpha, "beta": weights.beta},
        "quantiles": list(quantiles),
        "bounds": {k: list(v) for k, v in plan.bounds.items()},
        "order": list(plan.order),
        "stages": {stage: plan.members(stage) for stage in ("easy", "mid", "hard")},
        "warnings": list(result.warnings),
    }, indent=2) + "\n")
    if result.correlation is not None:
        atomic_write(out / "correlation.csv", correlation_csv(result.correlation.rho))
    if not args.no_figures:
        from finocr import plotting

        if result.correlation is not None and result.correlation.rho:
            plotting.plot_correlations(result.correlation.rho, out / "correlation.png")
        plotting.plot_difficulty({r["sample_id"]: r["d"] for r in result.rows}, plan.bounds, out / "difficulty.png")
    if result.correlation is not None:
        sys.stdout.write(correlation_csv(result.correlation.rho))
    counts = {stage: len(plan.members(stage)) for stage in ("easy", "mid", "hard")}
    print("stage,count")
    for stage, n in counts.items():
        print(f"{stage},{n}")
    return EXIT_OK


# ---------------------------------------------------------------- score

def cmd_score(args, config) -> int:
    rcfg = {**config.get("reward", {}), **{k: v for k, v in (
        ("lambda1", args.lambda1), ("lambda2", args.lambda2), ("max_len", args.max_len)) if v is not None}}
    cfg = RewardConfig(**{k: rcfg[k] for k in ("lambda1", "lambda2", "max_len") if k in rcfg})
    golds = {}
    for rec in read_jsonl(args.gold):
        try:
            golds[str(rec["sample_id"])] = parse_table(rec["html"])
        except KeyError:
            raise InputError(f"{args.gold}: gold records need sample_id and html")
    candidates = []
    for rec in read_jsonl(args.candidates):
        sid = str(rec.get("sample_id"))
        if sid not in golds:
            raise InputError(f"{args.candidates}: no gold table for sample {sid!r}")
        candidates.append((sid, rec.get("candidate_html", "")))
    records = score_candidates(candidates, golds, cfg)
    text = dump_records(records)
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finocr", description="Document parsing consolidation and evaluation tools.")
    p.add_argument("--version", action="version", version=f"finocr {__version__}")
    p.add_argument("--config", help="JSON config file (sections: vlm, dhr, difficulty, reward)")
    p.add_argument("--seed", type=int, default=0, help="seed for any randomized step (core pipelines are deterministic)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for corpus commands")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("merge", help="merge cross-page tables and paragraphs")
    m.add_argument("input")
    m.add_argument("output")
    m.set_defaults(func=cmd_merge)

    d = sub.add_parser("dhr", help="reconstruct heading levels through the generation service")
    d.add_argument("input")
    d.add_argument("output")
    src = d.add_mutually_exclusive_group()
    src.add_argument("--endpoint", help="service URL (overrides config and FINOCR_VLM_URL)")
    src.add_argument("--stub", nargs="?", const="", default=None, metavar="RESPONSE",
                     help="answer from a canned response file, or from the gold levels when no file is given")
    d.add_argument("--no-render", action="store_true", help="text-only prompt, no pseudo-TOC images")
    d.set_defaults(func=cmd_dhr)

    e = sub.add_parser("eval", help="score a predicted document against gold")
    e.add_argument("pred")
    e.add_argument("gold")
    e.add_argument("--metrics", default=",".join(ALL_METRICS), help="comma-separated subset of: " + ", ".join(ALL_METRICS))
    e.add_argument("--output", help="metric report JSON; figures are written next to it")
    e.add_argument("--iou-thresholds", default="0.3,0.5,0.7")
    e.add_argument("--formula-cdm", type=float, help="formula CDM score (0-100) for the Overall column")
    e.add_argument("--text-edit", type=float, help="override the measured text edit distance (0-1)")
    e.add_argument("--table-teds", type=float, help="override the measured table TEDS (0-100)")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("difficulty", help="table attributes, correlations, difficulty scores and curriculum")
    f.add_argument("corpus", help="JSONL records with sample_id, html and optional teds, line_style")
    f.add_argument("--runs", help="JSONL records with sample_id and teds_runs")
    f.add_argument("--output-dir", default=".")
    f.add_argument("--alpha", type=float)
    f.add_argument("--beta", type=float)
    f.add_argument("--quantiles", type=float, nargs=2, metavar=("Q1", "Q2"))
    f.add_argument("--no-figures", action="store_true")
    f.set_defaults(func=cmd_difficulty)

    s = sub.add_parser("score", help="reward candidate tables against gold")
    s.add_argument("candidates", help="JSONL records with sample_id and candidate_html")
    s.add_argument("--gold", required=True, help="JSONL records with sample_id and html")
    s.add_argument("--output")
    s.add_argument("--lambda1", type=float)
    s.add_argument("--lambda2", type=float)
    s.add_argument("--max-len", type=int)
    s.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    random.seed(args.seed)
    if args.jobs < 1:
        log.error("--jobs must be at least 1")
        return EXIT_INPUT
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except SERVICE_ERRORS as exc:
        log.error("service failure: %s", exc)
        return EXIT_SERVICE
    except INPUT_ERRORS as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    except FinocrError as exc:
        log.error("invariant violation: %s", exc)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
