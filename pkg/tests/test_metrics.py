import json
import random
from types import SimpleNamespace as H

import pytest
from hypothesis import given, settings, strategies as st

from finocr.errors import EmptyInput, IdSetMismatch, LengthMismatch, RangeError
from finocr.geometry import BBox
from finocr.metrics import (
    MetricReport,
    TedsConfig,
    ard,
    build_toc_tree,
    cell_iou_report,
    concat_fragments,
    crosspage_teds,
    iou_report_from_values,
    levenshtein,
    ned,
    overall_scores,
    table_to_tree,
    teds,
    toc_eds,
)
from finocr.table_model import Cell, HtmlTable, parse_table
from finocr.tree_edit import tree_size
from helpers import random_table
from oracles import levenshtein as lev_oracle

text = st.text(alphabet="abcxyz 营收", max_size=8)


@given(text, text)
@settings(max_examples=300, deadline=None)
def test_levenshtein_matches_oracle(a, b):
    assert levenshtein(a, b) == lev_oracle(a, b)


@given(text, text)
def test_ned_bounds(a, b):
    v = ned(a, b)
    assert 0.0 <= v <= 1.0
    assert (v == 0.0) == (a == b)


def test_ned_values():
    assert ned("abc", "abd") == 1 / 3
    assert ned("", "") == 0.0
    assert ned("", "abc") == 1.0


def test_table_tree_shape():
    t = parse_table("<table><thead><tr><th>a</th><th>b</th></tr></thead>"
                    "<tbody><tr><td colspan='2'>c</td></tr></tbody></table>")
    tree = table_to_tree(t)
    assert [c.label for c in tree.children] == ["thead", "tbody"]
    assert tree.children[1].children[0].children[0].label == "td[rs=1,cs=2]"
    assert tree_size(tree) == 1 + 2 + 2 + 3


def test_teds_identity_and_range():
    rng = random.Random(3)
    for _ in range(60):
        a, b = random_table(rng), random_table(rng)
        assert teds(a, a) == 1.0
        v = teds(a, b)
        assert 0.0 <= v <= 1.0
        assert teds(a, b, TedsConfig(structure_only=True)) >= v - 1e-12


def test_teds_known_value():
    gold = parse_table("<table><tr><td>a</td><td>b</td></tr></table>")
    pred = parse_table("<table><tr><td>a</td><td>c</td></tr></table>")
    # 5 nodes (table, tbody, tr, td, td); one cell differs fully in text
    assert teds(pred, gold) == pytest.approx(1 - 1 / 5)
    assert teds(pred, gold, TedsConfig(structure_only=True)) == 1.0


def test_teds_ignores_whitespace_and_th_flag():
    a = parse_table("<table><tr><th> a  b </th></tr></table>")
    b = parse_table("<table><tr><td>a b</td></tr></table>")
    assert teds(a, b) == 1.0


def test_teds_s_is_content_blind():
    rng = random.Random(5)
    for _ in range(40):
        t = random_table(rng)
        other = HtmlTable(
            tuple(tuple(Cell("zz" + c.text, c.rowspan, c.colspan, c.is_header) for c in r) for r in t.head_rows),
            tuple(tuple(Cell("q", c.rowspan, c.colspan) for c in r) for r in t.body_rows),
        )
        assert teds(t, other, TedsConfig(structure_only=True)) == 1.0


def test_concat_and_crosspage():
    head = ((Cell("h"),),)
    f1 = HtmlTable(head, ((Cell("1"),),))
    f2 = HtmlTable(head, ((Cell("2"),),))
    gold = HtmlTable(head, ((Cell("1"),), (Cell("2"),)))
    assert concat_fragments([f1, f2]) == gold
    assert crosspage_teds([f1, f2], gold) == 1.0
    assert crosspage_teds([f1], gold) < 1.0
    with pytest.raises(EmptyInput):
        concat_fragments([])


def heads(*pairs):
    return [H(text=t, level=lv) for t, lv in pairs]


def test_toc_tree_nesting():
    tree = build_toc_tree(heads(("A", 1), ("B", 2), ("C", 3), ("D", 2), ("E", 1)))
    assert [c.text for c in tree.children] == ["A", "E"]
    assert [c.text for c in tree.children[0].children] == ["B", "D"]
    assert tree.children[0].children[0].children[0].text == "C"


def test_toc_tree_level_jump_attaches_to_nearest_shallower():
    tree = build_toc_tree(heads(("A", 1), ("B", 3), ("C", 2)))
    assert [c.text for c in tree.children[0].children] == ["B", "C"]


def test_toc_eds_properties():
    gold = heads(("A", 1), ("B", 2), ("C", 2), ("D", 1))
    assert toc_eds(gold, gold) == 1.0
    shifted = [H(text=h.text, level=h.level + 2) for h in gold]
    assert toc_eds(shifted, gold) == 1.0
    flat = heads(("A", 1), ("B", 1), ("C", 1), ("D", 1))
    assert 0.0 <= toc_eds(flat, gold) < 1.0
    with pytest.raises(ValueError):
        build_toc_tree(heads(("A", None)))


def test_ard_values():
    assert ard(["a", "b", "c"], ["a", "b", "c"]) == 0.0
    assert ard(["c", "b", "a"], ["a", "b", "c"]) == 4 / 9
    with pytest.raises(IdSetMismatch):
        ard(["a", "b"], ["a", "c"])
    with pytest.raises(IdSetMismatch):
        ard(["a", "a"], ["a", "b"])
    with pytest.raises(EmptyInput):
        ard([], [])


@given(st.permutations(list(range(7))))
def test_ard_bounds(perm):
    v = ard(perm, list(range(7)))
    assert 0.0 <= v < 1.0


def test_cell_iou_report_fixture():
    r = iou_report_from_values([1.0, 0.6, 0.4, 0.2])
    assert r.recall_at == {0.3: 0.75, 0.5: 0.5, 0.7: 0.25}
    assert r.mean_iou == pytest.approx(0.55, abs=1e-12)
    assert r.median_iou == pytest.approx(0.5, abs=1e-12)


def test_cell_iou_report_from_boxes():
    g = [BBox(0, 0, 0.5, 0.5), BBox(0.5, 0.5, 0.2, 0.2)]
    p = [BBox(0, 0, 0.5, 0.5), BBox(0.0, 0.0, 0.1, 0.1)]
    r = cell_iou_report(p, g)
    assert r.per_cell_iou == (1.0, 0.0)
    with pytest.raises(LengthMismatch):
        cell_iou_report(p[:1], g)
    with pytest.raises(EmptyInput):
        cell_iou_report([], [])


def test_overall_formulas():
    s = overall_scores(0.048, 94.21, 92.82)
    assert round(s.overall, 2) == 94.08
    assert round(s.overall_star, 2) == 94.01
    assert overall_scores(0.048, None, 92.82).overall is None
    with pytest.raises(RangeError):
        overall_scores(1.5, None, 50)
    with pytest.raises(RangeError):
        overall_scores(0.1, None, 101)


def test_metric_report_round_trip():
    rep = MetricReport()
    rep.set("teds", 0.9)
    rep.set("ard", 0.1)
    rep.add_ciou(iou_report_from_values([1.0, 0.6, 0.4, 0.2]))
    again = MetricReport.from_json(rep.to_json())
    assert again.to_dict() == rep.to_dict()
    assert list(json.loads(rep.to_json()))[:2] == ["teds", "ard"]
    with pytest.raises(KeyError):
        rep.set("bogus", 1)
