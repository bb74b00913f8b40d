"""Restricted HTML table dialect: parsing, span expansion, normalization, serialization.

The dialect admits ``table``, ``thead``, ``tbody``, ``tr``, ``td`` and ``th``
with only ``rowspan``/``colspan`` attributes. Rows placed directly under
``table`` belong to the body.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Optional

from finocr.errors import InvalidSpan, MalformedHtml, SpanOverflow

log = logging.getLogger(__name__)

_TAG_RE = re.compile(
    r"<(/?)\s*([A-Za-z][A-Za-z0-9]*)"
    r"((?:\s+[^\s/>=\"']+(?:\s*=\s*(?:\"[^\"]*\"|'[^']*'|[^\s\"'>]+))?)*)"
    r"\s*(/?)>"
)
_ATTR_RE = re.compile(r"([^\s/>=\"']+)(?:\s*=\s*(\"[^\"]*\"|'[^']*'|[^\s\"'>]+))?")
_ENTITY_RE = re.compile(r"&(amp|lt|gt|quot|apos);")
_ENTITIES = {"amp": "&", "lt": "<", "gt": ">", "quot": '"', "apos": "'"}

_ALLOWED_TAGS = {"table", "thead", "tbody", "tr", "td", "th"}
_ALLOWED_ATTRS = {"rowspan", "colspan"}
_PARENTS = {
    "thead": {"table"},
    "tbody": {"table"},
    "tr": {"table", "thead", "tbody"},
    "td": {"tr"},
    "th": {"tr"},
}


@dataclass(frozen=True)
class Cell:
    text: str = ""
    rowspan: int = 1
    colspan: int = 1
    is_header: bool = False

    def __post_init__(self):
        for name in ("rowspan", "colspan"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise InvalidSpan(f"{name} must be a positive integer, got {value!r}")


Row = tuple  # tuple[Cell, ...]


@dataclass(frozen=True)
class HtmlTable:
    """A parsed table. Cells in ``head_rows`` are always header cells."""

    head_rows: tuple = ()
    body_rows: tuple = ()
    source_span: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        head = tuple(
            tuple(c if c.is_header else replace(c, is_header=True) for c in row)
            for row in self.head_rows
        )
        body = tuple(tuple(row) for row in self.body_rows)
        for row in head + body:
            if not row:
                raise MalformedHtml("every row needs at least one cell")
        object.__setattr__(self, "head_rows", head)
        object.__setattr__(self, "body_rows", body)

    @property
    def rows(self) -> tuple:
        return self.head_rows + self.body_rows

    @property
    def cells(self) -> list:
        return [cell for row in self.rows for cell in row]


@dataclass(frozen=True)
class TableGrid:
    """Logical slot grid. ``slots[r][c]`` indexes ``origins`` or is ``None`` for padding."""

    n_rows: int
    n_cols: int
    slots: tuple
    origins: tuple  # ((row, col, Cell), ...)
    row_widths: tuple
    warnings: tuple = ()

    @property
    def padding_count(self) -> int:
        return sum(1 for row in self.slots for ref in row if ref is None)


@dataclass(frozen=True)
class GridSignature:
    row_widths: tuple

    def __len__(self):
        return len(self.row_widths)


def _decode(text: str) -> str:
    return _ENTITY_RE.sub(lambda m: _ENTITIES[m.group(1)], text)


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _parse_span(name: str, raw: Optional[str]) -> int:
    if raw is None:
        raise InvalidSpan(f"{name} attribute without a value")
    value = raw.strip()
    if value[:1] in "\"'":
        value = value[1:-1].strip()
    if not re.fullmatch(r"\d+", value):
        raise InvalidSpan(f"{name}={raw!r} is not an integer")
    span = int(value)
    if span < 1:
        raise InvalidSpan(f"{name}={raw!r} must be >= 1")
    return span


def parse_table(html: str) -> HtmlTable:
    """Parse a single ``<table>`` element of the restricted dialect."""
    pos = 0
    stack: list = []
    head_rows: list = []
    body_rows: list = []
    seen_table = False
    seen_thead = False
    row: Optional[list] = None
    cell: Optional[dict] = None

    def handle_text(chunk: str):
        if cell is not None:
            cell["text"].append(_decode(chunk))
        elif chunk.strip():
            where = stack[-1] if stack else "document"
            raise MalformedHtml(f"unexpected text {chunk.strip()[:20]!r} inside <{where}>")

    while pos < len(html):
        lt = html.find("<", pos)
        if lt < 0:
            handle_text(html[pos:])
            break
        if lt > pos:
            handle_text(html[pos:lt])
        m = _TAG_RE.match(html, lt)
        if m is None:
            raise MalformedHtml(f"unparseable markup at offset {lt}: {html[lt:lt + 20]!r}")
        pos = m.end()
        closing, tag, attr_src, self_closing = m.group(1), m.group(2).lower(), m.group(3), m.group(4)
        if tag not in _ALLOWED_TAGS:
            raise MalformedHtml(f"unknown tag <{tag}>")

        if closing:
            if attr_src.strip() or self_closing:
                raise MalformedHtml(f"malformed closing tag </{tag}>")
            if not stack or stack[-1] != tag:
                raise MalformedHtml(f"</{tag}> does not close the open element")
            stack.pop()
            if tag in ("td", "th"):
                row.append(Cell("".join(cell["text"]), cell["rowspan"], cell["colspan"], cell["is_header"]))
                cell = None
            elif tag == "tr":
                if not row:
                    raise MalformedHtml("empty <tr>")
                (head_rows if "thead" in stack else body_rows).append(tuple(row))
                row = None
            continue

        attrs = {}
        for am in _ATTR_RE.finditer(attr_src):
            name = am.group(1).lower()
            if name not in _ALLOWED_ATTRS:
                raise MalformedHtml(f"attribute {name!r} not allowed on <{tag}>")
            if name in attrs:
                raise MalformedHtml(f"duplicate attribute {name!r}")
            attrs[name] = am.group(2)
        if attrs and tag not in ("td", "th"):
            raise MalformedHtml(f"<{tag}> takes no attributes")

        if tag == "table":
            if seen_table or stack:
                raise MalformedHtml("exactly one non-nested <table> expected")
            seen_table = True
        else:
            if not stack or stack[-1] not in _PARENTS[tag]:
                raise MalformedHtml(f"<{tag}> not allowed inside <{stack[-1] if stack else 'document'}>")
        if tag == "thead":
            if seen_thead:
                raise MalformedHtml("more than one <thead>")
            seen_thead = True

        if tag in ("td", "th"):
            new_cell = {
                "text": [],
                "rowspan": _parse_span("rowspan", attrs["rowspan"]) if "rowspan" in attrs else 1,
                "colspan": _parse_span("colspan", attrs["colspan"]) if "colspan" in attrs else 1,
                "is_header": tag == "th" or "thead" in stack,
            }
            if self_closing:
                row.append(Cell("", new_cell["rowspan"], new_cell["colspan"], new_cell["is_header"]))
                continue
            cell = new_cell
        elif self_closing:
            raise MalformedHtml(f"<{tag}/> cannot be self-closing")
        elif tag == "tr":
            row = []
        stack.append(tag)

    if stack:
        raise MalformedHtml(f"unclosed <{stack[-1]}>")
    if not seen_table:
        raise MalformedHtml("no <table> element")
    return HtmlTable(tuple(head_rows), tuple(body_rows))


def serialize_table(table: HtmlTable) -> str:
    """Emit the canonical dialect: thead (if any) then tbody, no whitespace between tags."""
    out = ["<table>"]

    def emit_rows(rows):
        for row in rows:
            out.append("<tr>")
            for c in row:
                tag = "th" if c.is_header else "td"
                attrs = ""
                if c.rowspan != 1:
                    attrs += f' rowspan="{c.rowspan}"'
                if c.colspan != 1:
                    attrs += f' colspan="{c.colspan}"'
                out.append(f"<{tag}{attrs}>{_escape(c.text)}</{tag}>")
            out.append("</tr>")

    if table.head_rows:
        out.append("<thead>")
        emit_rows(table.head_rows)
        out.append("</thead>")
    out.append("<tbody>")
    emit_rows(table.body_rows)
    out.append("</tbody></table>")
    return "".join(out)


def expand_grid(table: HtmlTable, strict: bool = False) -> TableGrid:
    """Expand spans using HTML occupancy rules.

    A cell is placed at the first column where its whole colspan is free in the
    current row; rowspans reserve slots in the following rows. Rowspans running
    past the last row are clamped (or raise ``SpanOverflow`` when ``strict``).
    """
    rows = table.rows
    n_rows = len(rows)
    occupied: list = [dict() for _ in range(n_rows)]
    origins = []
    warnings = []
    for r, row in enumerate(rows):
        col = 0
        for cell in row:
            while any((col + k) in occupied[r] for k in range(cell.colspan)):
                col += 1
            rowspan = cell.rowspan
            if r + rowspan > n_rows:
                msg = f"rowspan={cell.rowspan} at row {r} overflows {n_rows} rows; clamped"
                if strict:
                    raise SpanOverflow(msg)
                warnings.append(msg)
                rowspan = n_rows - r
            idx = len(origins)
            origins.append((r, col, cell))
            for dr in range(rowspan):
                for dc in range(cell.colspan):
                    occupied[r + dr][col + dc] = idx
            col += cell.colspan
    for w in warnings:
        log.warning(w)

    row_widths = tuple(len(occ) for occ in occupied)
    n_cols = max((max(occ) + 1 for occ in occupied if occ), default=0)
    slots = tuple(tuple(occ.get(c) for c in range(n_cols)) for occ in occupied)
    return TableGrid(n_rows, n_cols, slots, tuple(origins), row_widths, tuple(warnings))


def grid_signature(table: HtmlTable) -> GridSignature:
    return GridSignature(expand_grid(table).row_widths)


def normalize_text(text: str) -> str:
    return " ".join(text.split())


def normalize_table(table: HtmlTable) -> HtmlTable:
    """Collapse cell whitespace and drop empty trailing rows. Idempotent."""

    def norm_rows(rows):
        return [tuple(replace(c, text=normalize_text(c.text)) for c in row) for row in rows]

    head = norm_rows(table.head_rows)
    body = norm_rows(table.body_rows)
    for rows in (body, head):
        while rows and all(not c.text for c in rows[-1]):
            rows.pop()
        if rows:
            break
    return HtmlTable(tuple(head), tuple(body), table.source_span)
