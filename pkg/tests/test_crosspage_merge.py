import random

import pytest

from finocr.crosspage_merge import (
    Category,
    consolidate,
    headers_equal,
    intervening_elements,
    join_fragments,
    merge_tables,
    merge_texts,
    table_head,
)
from finocr.errors import OrderViolation, UnknownId
from finocr.metrics import crosspage_teds
from finocr.table_model import Cell, HtmlTable, parse_table
from helpers import element, split_document

HEAD = ((Cell("Item"), Cell("2024")),)


def frag(*values, head=HEAD):
    return HtmlTable(head, tuple((Cell(v), Cell(v + "0")) for v in values))


def test_two_fragments_seamless():
    stream = [
        element("a", 0, "table", 0, frag("1", "2")),
        element("f", 0, "footer", 1, "p1"),
        element("h", 1, "header", 2, "Report"),
        element("b", 1, "table", 3, frag("3")),
    ]
    report = merge_tables(stream)
    [m] = report.merged_tables
    assert m.source_ids == ("a", "b") and m.branch == "seamless"
    assert m.table == frag("1", "2", "3")
    assert report.passthrough_ids == ["f", "h"]


def test_headerless_continuation_is_seamless():
    stream = [element("a", 0, "table", 0, frag("1")), element("b", 1, "table", 1, frag("2", head=()))]
    [m] = merge_tables(stream).merged_tables
    assert m.branch == "seamless" and m.table == frag("1", "2")


def test_repeated_header_with_whitespace_noise():
    noisy = ((Cell(" Item "), Cell("2024\n")),)
    stream = [element("a", 0, "table", 0, frag("1")), element("b", 1, "table", 1, frag("2", head=noisy))]
    [m] = merge_tables(stream).merged_tables
    assert m.branch == "seamless"


def test_header_as_th_first_body_row():
    a = parse_table("<table><tr><th>Item</th><th>2024</th></tr><tr><td>1</td><td>10</td></tr></table>")
    b = parse_table("<table><tr><th>Item</th><th>2024</th></tr><tr><td>2</td><td>20</td></tr></table>")
    assert table_head(b) and headers_equal(a, b)
    [m] = merge_tables([element("a", 0, "table", 0, a), element("b", 1, "table", 1, b)]).merged_tables
    assert [r[0].text for r in m.table.rows] == ["Item", "1", "2"]


def test_distinct_header_full_merge_keeps_subheader():
    sub = ((Cell("Segment B"), Cell("2024")),)
    stream = [element("a", 0, "table", 0, frag("1")), element("b", 1, "table", 1, frag("2", head=sub))]
    [m] = merge_tables(stream).merged_tables
    assert m.branch == "full"
    texts = [r[0].text for r in m.table.body_rows]
    assert texts == ["1", "Segment B", "2"]
    assert all(c.is_header for c in m.table.body_rows[1])


def test_no_merge_when_columns_differ():
    other = HtmlTable((), ((Cell("x"),),))
    r = merge_tables([element("a", 0, "table", 0, frag("1")), element("b", 1, "table", 1, other)])
    assert [m.source_ids for m in r.merged_tables] == [("a",), ("b",)]
    assert all(m.branch == "none" for m in r.merged_tables)


def test_no_merge_across_content():
    stream = [
        element("a", 0, "table", 0, frag("1")),
        element("t", 1, "text", 1, "Note on the table."),
        element("b", 1, "table", 2, frag("2")),
    ]
    assert len(merge_tables(stream).merged_tables) == 2


def test_no_merge_on_same_page_or_page_gap():
    same = [element("a", 0, "table", 0, frag("1")), element("b", 0, "table", 1, frag("2"))]
    gap = [element("a", 0, "table", 0, frag("1")), element("b", 2, "table", 1, frag("2"))]
    assert len(merge_tables(same).merged_tables) == 2
    assert len(merge_tables(gap).merged_tables) == 2


def test_chain_across_three_pages():
    stream = [element(f"t{k}", k, "table", k, frag(str(k))) for k in range(3)]
    [m] = merge_tables(stream).merged_tables
    assert m.source_ids == ("t0", "t1", "t2") and m.branches == ("seamless", "seamless")


def test_intervening_elements():
    stream = [element("a", 0, "table", 0), element("f", 0, "footer", 1), element("x", 1, "text", 2),
              element("b", 1, "table", 3)]
    assert [e.id for e in intervening_elements(stream, "a", "b")] == ["x"]
    with pytest.raises(OrderViolation):
        intervening_elements(stream, "b", "a")
    with pytest.raises(UnknownId):
        intervening_elements(stream, "a", "zz")


@pytest.mark.parametrize("left,right,want", [
    ("the total oper-", "ating income", "the total operating income"),
    ("net income rose", "to 5 million", "net income rose to 5 million"),
    ("营业收入", "同比增长", "营业收入同比增长"),
    ("year-on-year -", "5%", "year-on-year - 5%"),
])
def test_join_fragments(left, right, want):
    assert join_fragments(left, right) == want


def test_text_merge_rules():
    stream = [
        element("p1", 0, "text", 0, "Revenue grew in the"),
        element("f", 0, "footer", 1, "page 1"),
        element("p2", 1, "text", 2, "second quarter."),
        element("p3", 1, "text", 3, "A new paragraph ends here."),
        element("p4", 2, "text", 4, "Another one."),
    ]
    r = merge_texts(stream)
    [m] = r.merged_texts
    assert m.source_ids == ("p1", "p2") and m.text == "Revenue grew in the second quarter."


@pytest.mark.parametrize("end", [".", "!", "?", "。", "！", "？", ":"])
def test_terminal_punctuation_blocks_text_merge(end):
    stream = [element("p1", 0, "text", 0, "Sentence" + end), element("p2", 1, "text", 1, "next")]
    assert merge_texts(stream).merged_texts == []


def test_consolidate_conserves_content_and_is_idempotent():
    rng = random.Random(1)
    for _ in range(50):
        gold, stream, ids = split_document(rng)
        out, report = consolidate(stream)
        tables = [e for e in out if e.category == Category.TABLE]
        assert len(tables) == 1
        [t] = tables
        assert t.source_ids == tuple(ids) and t.page_end == len(ids) - 1
        assert crosspage_teds([t.content], gold) == 1.0
        assert sum(len(r) for r in t.content.rows) == sum(len(r) for r in gold.rows)
        # every non-table element survives untouched
        assert [e.id for e in out if e.category != Category.TABLE] == [
            e.id for e in stream if e.category != Category.TABLE]
        again, report2 = consolidate(out)
        assert again == out
        assert all(m.branch == "none" for m in report2.merged_tables)
