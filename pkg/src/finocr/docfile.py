"""JSON Lines document interchange format.

One record per line, each tagged with ``section``:

``document``
    first line; ``schema_version``, ``doc_id`` and ``pages`` (``page_index``,
    ``width``, ``height``, optional ``image`` path).
``element``
    ``id``, ``page_index``, ``category``, ``bbox`` ``[x1, y1, w, h]`` in page
    pixels, ``order_rank``, ``content`` (canonical HTML for tables); optional
    ``page_end``, ``source_ids``, ``level``, ``crop`` (image path) and
    ``cell_boxes`` (grounding records).
``gold_table`` / ``gold_heading`` / ``gold_reading_order``
    optional ground truth: ``{id, html, source_ids, cell_boxes}``,
    ``{id, text, level}`` and ``{ids: [...]}``.

Relative image paths resolve against the file's directory.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from finocr.crosspage_merge import Category, DocumentElement
from finocr.errors import FinocrError
from finocr.geometry import BBox
from finocr.table_model import HtmlTable, parse_table, serialize_table

SCHEMA_VERSION = 1
_EXTRA_KEYS = ("level", "crop", "cell_boxes")


class DocumentFormatError(FinocrError, ValueError):
    def __init__(self, path, line: int, message: str):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {message}")


@dataclass
class Page:
    page_index: int
    width: int
    height: int
    image: Optional[str] = None


@dataclass
class GoldData:
    tables: list = field(default_factory=list)  # dicts: id, table, source_ids, cell_boxes
    headings: list = field(default_factory=list)  # dicts: id, text, level
    reading_order: Optional[list] = None

    def is_empty(self) -> bool:
        return not self.tables and not self.headings and self.reading_order is None


@dataclass
class DocumentFile:
    doc_id: str
    pages: list
    elements: list
    gold: GoldData = field(default_factory=GoldData)
    base_dir: Path = field(default_factory=Path.cwd)

    def page(self, index: int) -> Page:
        for p in self.pages:
            if p.page_index == index:
                return p
        raise KeyError(index)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p


def _require(rec: dict, key: str, path, lineno: int, kind=None):
    if key not in rec:
        raise DocumentFormatError(path, lineno, f"missing field {key!r}")
    value = rec[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise DocumentFormatError(path, lineno, f"field {key!r} has the wrong type")
    return value


def _parse_element(rec: dict, path, lineno: int) -> DocumentElement:
    try:
        category = Category.parse(_require(rec, "category", path, lineno, str))
    except ValueError:
        raise DocumentFormatError(path, lineno, f"unknown category {rec['category']!r}")
    bbox_raw = _require(rec, "bbox", path, lineno, list)
    if len(bbox_raw) != 4:
        raise DocumentFormatError(path, lineno, "field 'bbox' needs four numbers")
    try:
        bbox = BBox.from_seq(bbox_raw)
    except (TypeError, ValueError):
        raise DocumentFormatError(path, lineno, "field 'bbox' needs four numbers")
    content = rec.get("content", "")
    if not isinstance(content, str):
        raise DocumentFormatError(path, lineno, "field 'content' must be a string")
    if category == Category.TABLE:
        try:
            content = parse_table(content)
        except FinocrError as exc:
            raise DocumentFormatError(path, lineno, f"field 'content': {exc}")
    return DocumentElement(
        id=str(_require(rec, "id", path, lineno)),
        page_index=_require(rec, "page_index", path, lineno, int),
        category=category,
        bbox=bbox,
        order_rank=_require(rec, "order_rank", path, lineno, int),
        content=content,
        page_end=rec.get("page_end"),
        source_ids=tuple(rec.get("source_ids", ())),
        extra={k: rec[k] for k in _EXTRA_KEYS if k in rec},
    )


def read_document(path) -> DocumentFile:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise DocumentFormatError(path, 0, "no such file")
    except OSError as exc:
        raise DocumentFormatError(path, 0, str(exc))
    doc = None
    ranks = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DocumentFormatError(path, lineno, f"invalid JSON: {exc.msg}")
        if not isinstance(rec, dict):
            raise DocumentFormatError(path, lineno, "record is not an object")
        section = rec.get("section")
        if doc is None:
            if section != "document":
                raise DocumentFormatError(path, lineno, "first record must be the 'document' section")
            version = rec.get("schema_version")
            if version != SCHEMA_VERSION:
                raise DocumentFormatError(path, lineno, f"unsupported schema_version {version!r}")
            pages = []
            for p in rec.get("pages", []):
                try:
                    pages.append(Page(int(p["page_index"]), int(p["width"]), int(p["height"]), p.get("image")))
                except (KeyError, TypeError, ValueError):
                    raise DocumentFormatError(path, lineno, "malformed entry in 'pages'")
            doc = DocumentFile(str(_require(rec, "doc_id", path, lineno)), pages, [], base_dir=path.parent)
            continue
        if section == "element":
            el = _parse_element(rec, path, lineno)
            if doc.pages and el.page_index not in {p.page_index for p in doc.pages}:
                raise DocumentFormatError(path, lineno, f"page_index {el.page_index} is not a declared page")
            if el.order_rank in ranks:
                raise DocumentFormatError(path, lineno, f"duplicate order_rank {el.order_rank}")
            ranks.add(el.order_rank)
            doc.elements.append(el)
        elif section == "gold_table":
            try:
                table = parse_table(_require(rec, "html", path, lineno, str))
            except FinocrError as exc:
                raise DocumentFormatError(path, lineno, f"field 'html': {exc}")
            tid = str(_require(rec, "id", path, lineno))
            doc.gold.tables.append({
                "id": tid,
                "table": table,
                "source_ids": list(rec.get("source_ids") or [tid]),
                "cell_boxes": rec.get("cell_boxes"),
            })
        elif section == "gold_heading":
            level = _require(rec, "level", path, lineno, int)
            doc.gold.headings.append({
                "id": str(_require(rec, "id", path, lineno)),
                "text": _require(rec, "text", path, lineno, str),
                "level": level,
            })
        elif section == "gold_reading_order":
            doc.gold.reading_order = [str(i) for i in _require(rec, "ids", path, lineno, list)]
        else:
            raise DocumentFormatError(path, lineno, f"unknown section {section!r}")
    if doc is None:
        raise DocumentFormatError(path, 1, "empty document file")
    doc.elements.sort(key=lambda el: el.order_rank)
    return doc


def element_record(el: DocumentElement) -> dict:
    content = serialize_table(el.content) if isinstance(el.content, HtmlTable) else el.content
    rec = {
        "section": "element",
        "id": el.id,
        "page_index": el.page_index,
        "category": el.category.value,
        "bbox": list(el.bbox.as_tuple()),
        "order_rank": el.order_rank,
        "content": content,
    }
    if el.page_end is not None and el.page_end != el.page_index:
        rec["page_end"] = el.page_end
    if el.source_ids:
        rec["source_ids"] = list(el.source_ids)
    for k in _EXTRA_KEYS:
        if k in el.extra:
            rec[k] = el.extra[k]
    return rec


def document_lines(doc: DocumentFile) -> list:
    head = {
        "section": "document",
        "schema_version": SCHEMA_VERSION,
        "doc_id": doc.doc_id,
        "pages": [
            {k: v for k, v in vars(p).items() if v is not None} for p in doc.pages
        ],
    }
    records = [head] + [element_record(el) for el in doc.elements]
    for t in doc.gold.tables:
        rec = {"section": "gold_table", "id": t["id"], "html": serialize_table(t["table"]),
               "source_ids": t["source_ids"]}
        if t.get("cell_boxes") is not None:
            rec["cell_boxes"] = t["cell_boxes"]
        records.append(rec)
    for h in doc.gold.headings:
        records.append({"section": "gold_heading", **h})
    if doc.gold.reading_order is not None:
        records.append({"section": "gold_reading_order", "ids": doc.gold.reading_order})
    return [json.dumps(r, ensure_ascii=False) for r in records]


def atomic_write(path, data) -> None:
    """Write via a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_document(doc: DocumentFile, path) -> None:
    atomic_write(path, "\n".join(document_lines(doc)) + "\n")
