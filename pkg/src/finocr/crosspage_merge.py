"""Cross-page consolidation of text paragraphs and table fragments.

Tables follow an anchor/next scan: a fragment joins the current anchor when
both have the same expanded column count, the fragment sits on the page right
after the anchor's last page, and nothing but page furniture (headers,
footers, page numbers) lies between them. A repeated or missing
header yields a seamless merge (body rows appended); a distinct header is
kept inside the merged body as header-flagged rows (full merge).
"""

from __future__ import annotations

import enum
import logging
import unicodedata
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

from finocr.errors import OrderViolation, UnknownId
from finocr.geometry import BBox
from finocr.table_model import HtmlTable, expand_grid, normalize_text

log = logging.getLogger(__name__)


class Category(str, enum.Enum):
    TEXT = "text"
    HEADING = "heading"
    TABLE = "table"
    FIGURE = "figure"
    HEADER = "header"
    FOOTER = "footer"
    PAGE_NUMBER = "page_number"
    FOOTNOTE = "footnote"
    CAPTION = "caption"
    OTHER = "other"

    @classmethod
    def parse(cls, value: str) -> "Category":
        if value == "title":
            return cls.HEADING
        return cls(value)


NON_CONTENT = frozenset({Category.HEADER, Category.FOOTER, Category.PAGE_NUMBER})
TERMINAL_PUNCT = frozenset(".!?。！？:")


@dataclass(frozen=True)
class DocumentElement:
    id: str
    page_index: int
    category: Category
    bbox: BBox
    order_rank: int
    content: Union[str, HtmlTable] = ""
    # last page covered once fragments from later pages have been merged in
    page_end: Optional[int] = None
    source_ids: tuple = ()
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def last_page(self) -> int:
        return self.page_index if self.page_end is None else self.page_end


@dataclass(frozen=True)
class MergedTable:
    table: HtmlTable
    source_ids: tuple
    branches: tuple  # one "seamless"/"full" entry per join

    @property
    def branch(self) -> str:
        if not self.branches:
            return "none"
        return "full" if "full" in self.branches else "seamless"


@dataclass(frozen=True)
class MergedText:
    text: str
    source_ids: tuple


@dataclass
class MergeReport:
    merged_tables: list = field(default_factory=list)
    merged_texts: list = field(default_factory=list)
    passthrough_ids: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "merged_tables": [
                {"source_ids": list(m.source_ids), "branch": m.branch, "branches": list(m.branches)}
                for m in self.merged_tables
            ],
            "merged_texts": [{"source_ids": list(m.source_ids), "text": m.text} for m in self.merged_texts],
            "passthrough_ids": list(self.passthrough_ids),
            "warnings": list(self.warnings),
        }


def _index(stream: Sequence[DocumentElement], element_id: str) -> int:
    for i, el in enumerate(stream):
        if el.id == element_id:
            return i
    raise UnknownId(element_id)


def intervening_elements(stream: Sequence[DocumentElement], a_id: str, b_id: str) -> list:
    """Content elements strictly between ``a`` and ``b`` (page furniture excluded)."""
    i, j = _index(stream, a_id), _index(stream, b_id)
    if i >= j:
        raise OrderViolation(f"{a_id!r} does not precede {b_id!r}")
    return [el for el in stream[i + 1:j] if el.category not in NON_CONTENT]


def table_head(table: HtmlTable) -> tuple:
    """Head rows, or a first body row made entirely of header cells."""
    if table.head_rows:
        return table.head_rows
    if table.body_rows and all(c.is_header for c in table.body_rows[0]):
        return table.body_rows[:1]
    return ()


def has_header(table: HtmlTable) -> bool:
    return bool(table_head(table))


def _head_key(rows) -> tuple:
    return tuple(tuple((normalize_text(c.text), c.rowspan, c.colspan) for c in row) for row in rows)


def headers_equal(a: HtmlTable, b: HtmlTable) -> bool:
    return _head_key(table_head(a)) == _head_key(table_head(b))


def _body_without_head(table: HtmlTable) -> tuple:
    if table.head_rows:
        return table.body_rows
    return table.body_rows[len(table_head(table)):]


def merge_body(anchor: HtmlTable, nxt: HtmlTable) -> HtmlTable:
    """Seamless continuation: the next fragment's header is dropped."""
    return HtmlTable(anchor.head_rows, anchor.body_rows + _body_without_head(nxt), anchor.source_span)


def merge_full(anchor: HtmlTable, nxt: HtmlTable) -> HtmlTable:
    """Heterogeneous continuation: the next header survives as header-flagged body rows."""
    sub_header = tuple(tuple(replace(c, is_header=True) for c in row) for row in nxt.head_rows)
    return HtmlTable(anchor.head_rows, anchor.body_rows + sub_header + nxt.body_rows, anchor.source_span)


def _n_cols(table: HtmlTable) -> int:
    return expand_grid(table).n_cols


def merge_tables(stream: Sequence[DocumentElement]) -> MergeReport:
    report = MergeReport()
    tables = [el for el in stream if el.category == Category.TABLE]
    table_ids = {el.id for el in tables}
    by_id = {el.id: el for el in tables}
    if tables:
        anchor = tables[0].content
        anchor_ids = [tables[0].id]
        branches: list = []
        for nxt_el in tables[1:]:
            nxt = nxt_el.content
            prev_el = by_id[anchor_ids[-1]]
            aligned = _n_cols(anchor) == _n_cols(nxt)
            between = intervening_elements(stream, prev_el.id, nxt_el.id)
            next_page = nxt_el.page_index == prev_el.last_page + 1
            if aligned and not between and next_page:
                if not has_header(nxt) or headers_equal(nxt, anchor):
                    anchor = merge_body(anchor, nxt)
                    branches.append("seamless")
                else:
                    anchor = merge_full(anchor, nxt)
                    branches.append("full")
                anchor_ids.append(nxt_el.id)
            else:
                report.merged_tables.append(MergedTable(anchor, tuple(anchor_ids), tuple(branches)))
                anchor, anchor_ids, branches = nxt, [nxt_el.id], []
        report.merged_tables.append(MergedTable(anchor, tuple(anchor_ids), tuple(branches)))
    report.passthrough_ids = [el.id for el in stream if el.id not in table_ids]
    return report


def _is_cjk(ch: str) -> bool:
    if not ch:
        return False
    name = unicodedata.name(ch, "")
    return name.startswith(("CJK", "HIRAGANA", "KATAKANA", "HANGUL", "FULLWIDTH", "IDEOGRAPHIC"))


def join_fragments(left: str, right: str) -> str:
    left, right = left.rstrip(), right.lstrip()
    if not left or not right:
        return left + right
    if left.endswith("-") and len(left) > 1 and left[-2].isalpha() and right[0].isalpha():
        return left[:-1] + right
    if _is_cjk(left[-1]) or _is_cjk(right[0]):
        return left + right
    return left + " " + right


def _continues(text: str) -> bool:
    stripped = text.rstrip()
    return bool(stripped) and stripped[-1] not in TERMINAL_PUNCT


def merge_texts(stream: Sequence[DocumentElement]) -> MergeReport:
    """Join a page's trailing paragraph with the next page's leading paragraph."""
    report = MergeReport()
    content = [el for el in stream if el.category not in NON_CONTENT]
    grouped = set()
    i = 0
    while i < len(content):
        el = content[i]
        if el.category != Category.TEXT:
            i += 1
            continue
        ids, text, last_page = [el.id], el.content, el.last_page
        j = i + 1
        while j < len(content):
            nxt = content[j]
            if nxt.category != Category.TEXT or nxt.page_index != last_page + 1 or not _continues(text):
                break
            text = join_fragments(text, nxt.content)
            ids.append(nxt.id)
            last_page = nxt.last_page
            j += 1
        if len(ids) > 1:
            report.merged_texts.append(MergedText(text, tuple(ids)))
            grouped.update(ids)
        i = j
    report.passthrough_ids = [el.id for el in stream if el.id not in grouped]
    return report


def consolidate(stream: Sequence[DocumentElement]):
    """Apply text and table merging; returns (new element stream, combined report).

    A merged group keeps the id, page and rank of its first fragment and
    records the rest in ``source_ids``.
    """
    stream = sorted(stream, key=lambda el: el.order_rank)
    text_report = merge_texts(stream)
    table_report = merge_tables(stream)

    replaced = {}
    absorbed = set()
    by_id = {el.id: el for el in stream}
    for m in text_report.merged_texts:
        first = by_id[m.source_ids[0]]
        replaced[first.id] = replace(
            first, content=m.text, page_end=by_id[m.source_ids[-1]].last_page,
            source_ids=_all_sources(by_id, m.source_ids),
        )
        absorbed.update(m.source_ids[1:])
    for m in table_report.merged_tables:
        if len(m.source_ids) == 1:
            continue
        first = by_id[m.source_ids[0]]
        replaced[first.id] = replace(
            first, content=m.table, page_end=by_id[m.source_ids[-1]].last_page,
            source_ids=_all_sources(by_id, m.source_ids),
        )
        absorbed.update(m.source_ids[1:])

    out = [replaced.get(el.id, el) for el in stream if el.id not in absorbed]
    text_ids = {i for m in text_report.merged_texts for i in m.source_ids}
    report = MergeReport(
        merged_tables=table_report.merged_tables,
        merged_texts=text_report.merged_texts,
        passthrough_ids=[el.id for el in stream if el.category != Category.TABLE and el.id not in text_ids],
        warnings=table_report.warnings + text_report.warnings,
    )
    return out, report


def _all_sources(by_id, ids) -> tuple:
    out = []
    for i in ids:
        out.extend(by_id[i].source_ids or (i,))
    return tuple(out)
