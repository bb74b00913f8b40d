"""Random generators and document builders shared by the tests."""

from __future__ import annotations

import random

from finocr.crosspage_merge import Category, DocumentElement
from finocr.dhr import CropRef, Heading
from finocr.geometry import BBox
from finocr.table_model import Cell, HtmlTable
from finocr.tree_edit import STRUCTURAL, OrderedTree

WORDS = ["revenue", "cost", "2023", "2024", "net", "total", "assets", "12.5", "-", "", "营业收入", "Q1"]


def random_tree(rng: random.Random, max_nodes: int, labels="abc") -> OrderedTree:
    """Uniform-ish random ordered tree with at most ``max_nodes`` nodes."""
    n = rng.randint(1, max_nodes)
    # random parent array: node i attaches to some earlier node
    parents = [None] + [rng.randrange(i) for i in range(1, n)]
    kids = {i: [] for i in range(n)}
    for i in range(1, n):
        kids[parents[i]].append(i)
    node_labels = [rng.choice(labels) for _ in range(n)]

    def build(i):
        return OrderedTree(node_labels[i], STRUCTURAL, tuple(build(k) for k in kids[i]))

    return build(0)


def random_row(rng: random.Random, n_cols: int, header=False, max_colspan=3) -> tuple:
    cells, used = [], 0
    while used < n_cols:
        cs = rng.randint(1, min(max_colspan, n_cols - used))
        cells.append(Cell(rng.choice(WORDS), 1, cs, header))
        used += cs
    return tuple(cells)


def random_blocks(rng: random.Random, n_cols: int, n_blocks: int) -> list:
    """Body as a list of row blocks; a block is one plain row or a rowspan-2 pair.

    Splitting between blocks never cuts a rowspan.
    """
    blocks = []
    for _ in range(n_blocks):
        if n_cols >= 2 and rng.random() < 0.3:
            first = (Cell(rng.choice(WORDS), 2, 1),) + random_row(rng, n_cols - 1)
            second = random_row(rng, n_cols - 1)
            blocks.append([first, second])
        else:
            blocks.append([random_row(rng, n_cols)])
    return blocks


def random_table(rng: random.Random, n_cols=None, n_blocks=None, head_rows=1) -> HtmlTable:
    n_cols = n_cols or rng.randint(1, 5)
    n_blocks = n_blocks or rng.randint(1, 6)
    head = tuple(random_row(rng, n_cols, header=True) for _ in range(head_rows))
    body = [row for block in random_blocks(rng, n_cols, n_blocks) for row in block]
    return HtmlTable(head, tuple(body))


def element(eid, page, category, rank, content="", bbox=(50, 50, 400, 30), **extra) -> DocumentElement:
    return DocumentElement(eid, page, Category(category), BBox.from_seq(bbox), rank, content, extra=extra)


def split_document(rng: random.Random, n_cols=None, n_blocks=None):
    """A gold table split over 2-4 pages with repeated or missing headers and page furniture.

    Returns (gold table, element stream, fragment ids).
    """
    n_cols = n_cols or rng.randint(1, 5)
    n_frags = rng.randint(2, 4)
    n_blocks = max(n_blocks or rng.randint(n_frags, 8), n_frags)
    head = (random_row(rng, n_cols, header=True),)
    blocks = random_blocks(rng, n_cols, n_blocks)
    cuts = sorted(rng.sample(range(1, n_blocks), n_frags - 1))
    parts = [blocks[a:b] for a, b in zip([0] + cuts, cuts + [n_blocks])]
    gold = HtmlTable(head, tuple(row for block in blocks for row in block))

    stream, ids, rank = [], [], 0

    def add(eid, page, category, content=""):
        nonlocal rank
        stream.append(element(eid, page, category, rank, content))
        rank += 1

    add("intro", 0, "text", "The following table shows results.")
    for k, part in enumerate(parts):
        body = tuple(row for block in part for row in block)
        if k == 0 or rng.random() < 0.6:
            frag = HtmlTable(head, body)  # repeated header
        else:
            frag = HtmlTable((), body)
        if k > 0 and rng.random() < 0.7:
            add(f"hdr{k}", k, "header", "Annual Report")
        add(f"t{k}", k, "table", frag)
        ids.append(f"t{k}")
        if rng.random() < 0.7:
            add(f"ftr{k}", k, "footer", "Confidential")
        if rng.random() < 0.5:
            add(f"pn{k}", k, "page_number", str(k + 1))
    add("outro", len(parts) - 1, "text", "End of section.")
    return gold, stream, ids


def heading_fixture(n=30, crop_h=60, crop_w=300, x_px=None, page_w=1240, seed=0):
    """``n`` headings with crops of fixed height and gold levels following a simple outline."""
    rng = random.Random(seed)
    headings, levels = [], []
    level = 1
    for i in range(n):
        level = 1 if i == 0 else max(1, min(level + rng.choice((-1, 0, 1)), 4))
        x = x_px[i] if x_px else rng.randrange(0, 600)
        headings.append(Heading(
            id=f"h{i}", text=f"{i + 1}. Section {i}", bbox=BBox(x / page_w, 0.1, crop_w / page_w, crop_h / 1754),
            page_index=i // 5, crop=CropRef(f"h{i}", crop_w, crop_h),
        ))
        levels.append(level)
    return headings, levels


def write_heading_doc(tmp_path, n=30, with_gold=True, crop_h=60, name="headings.jsonl", seed=0):
    """Document with ``n`` heading elements, one crop PNG each, and gold levels."""
    from PIL import Image

    from finocr.docfile import DocumentFile, GoldData, Page, write_document

    headings, levels = heading_fixture(n, crop_h=crop_h, seed=seed)
    crop_dir = tmp_path / "crops"
    crop_dir.mkdir(exist_ok=True)
    elements = []
    for rank, h in enumerate(headings):
        x = round(h.bbox.x1 * 1240)
        Image.new("RGB", (h.crop.width, h.crop.height), (40 + rank, 90, 140)).save(crop_dir / f"{h.id}.png")
        elements.append(DocumentElement(
            h.id, h.page_index, Category.HEADING, BBox(x, 100 + 80 * (rank % 5), h.crop.width, h.crop.height),
            rank, h.text, extra={"crop": f"crops/{h.id}.png"},
        ))
    gold = GoldData(headings=[{"id": h.id, "text": h.text, "level": lv} for h, lv in zip(headings, levels)])
    pages = [Page(i, 1240, 1754) for i in range(max(h.page_index for h in headings) + 1)]
    doc = DocumentFile("headings", pages, elements, gold if with_gold else GoldData())
    path = tmp_path / name
    write_document(doc, path)
    return path, levels
