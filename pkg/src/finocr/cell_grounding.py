"""Cell-level grounding from structural anchor tokens.

Anchors mark the start of each cell's opening tag in a generated HTML token
stream; the hidden states at the anchor and the following token are pooled
into one feature vector per cell and regressed to a normalized box.
"""

from __future__ import annotations

import html as _html
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from finocr.errors import DegenerateEnclosure, DimMismatch, LengthMismatch
from finocr.geometry import BBox
from finocr.table_model import HtmlTable, expand_grid

START_TAG = "<td"
BOUNDARY = "><"
TD = "td"


def detect_anchors(tokens: Sequence[str]) -> list:
    """1-based anchor positions: every ``"<td"`` token, and the ``"td"`` after a ``"><"``."""
    anchors = set()
    for t, tok in enumerate(tokens, 1):
        if tok == START_TAG:
            anchors.add(t)
        elif tok == BOUNDARY and t < len(tokens) and tokens[t] == TD:
            anchors.add(t + 1)
    return sorted(anchors)


def tokenize_table(table: HtmlTable, style: str = "start_tag") -> list:
    """Token stream of a table in one of the two serialization styles.

    ``start_tag`` emits ``"<td"`` as its own token; ``compact`` splits tag
    boundaries as ``"><"`` followed by the tag name. All cells are written as
    ``td``. Joining the tokens gives parseable HTML.
    """
    if style not in ("start_tag", "compact"):
        raise ValueError(f"unknown tokenization style {style!r}")

    def attrs(cell):
        out = []
        if cell.rowspan != 1:
            out.append(f' rowspan="{cell.rowspan}"')
        if cell.colspan != 1:
            out.append(f' colspan="{cell.colspan}"')
        return out

    def text(cell):
        return [_html.escape(cell.text, quote=False)] if cell.text else []

    sections = []
    if table.head_rows:
        sections.append(("thead", table.head_rows))
    sections.append(("tbody", table.body_rows))

    if style == "start_tag":
        toks = ["<table>"]
        for name, rows in sections:
            toks.append(f"<{name}>")
            for row in rows:
                toks.append("<tr>")
                for cell in row:
                    toks += [START_TAG, *attrs(cell), ">", *text(cell), "</td>"]
                toks.append("</tr>")
            toks.append(f"</{name}>")
        toks.append("</table>")
        return toks

    # compact: every tag after the first starts with a "><" boundary token when
    # it directly follows another tag
    toks = ["<table"]
    prev_is_tag = True

    def open_tag(name, extra=()):
        nonlocal prev_is_tag
        if prev_is_tag:
            toks.extend([BOUNDARY, name, *extra])
        else:
            toks.extend(["<", name, *extra])
        prev_is_tag = True

    def close_tag(name):
        nonlocal prev_is_tag
        if prev_is_tag:
            toks.extend([BOUNDARY, "/" + name])
        else:
            toks.extend(["</", name])
        prev_is_tag = True

    for name, rows in sections:
        open_tag(name)
        for row in rows:
            open_tag("tr")
            for cell in row:
                open_tag(TD, attrs(cell))
                body = text(cell)
                if body:
                    toks.append(">")
                    toks.extend(body)
                    prev_is_tag = False
                close_tag("td")
            close_tag("tr")
        close_tag(name)
    close_tag("table")
    toks.append(">")
    return toks


@dataclass(frozen=True)
class AnchorWindow:
    k: int
    p: int
    pooled: np.ndarray


def pool_window(h_p, h_p1) -> np.ndarray:
    h_p = np.asarray(h_p, dtype=float)
    h_p1 = np.asarray(h_p1, dtype=float)
    if h_p.shape != h_p1.shape or h_p.ndim != 1:
        raise DimMismatch(f"cannot pool vectors of shapes {h_p.shape} and {h_p1.shape}")
    return np.concatenate([h_p, h_p1])


def anchor_windows(tokens: Sequence[str], hidden) -> list:
    """Pool the hidden states at every anchor and its successor token."""
    hidden = np.asarray(hidden, dtype=float)
    if hidden.ndim != 2 or hidden.shape[0] != len(tokens):
        raise DimMismatch(f"expected {len(tokens)} hidden states, got array of shape {hidden.shape}")
    windows = []
    for k, p in enumerate(detect_anchors(tokens)):
        if p + 1 > len(tokens):
            raise DimMismatch(f"anchor at position {p} has no successor token")
        windows.append(AnchorWindow(k, p, pool_window(hidden[p - 1], hidden[p])))
    return windows


def xywh_to_xyxy_clamped(b: BBox) -> tuple:
    def clamp(v):
        return min(1.0, max(0.0, v))

    return (clamp(b.x1), clamp(b.y1), clamp(b.x1 + b.w), clamp(b.y1 + b.h))


def _area(x1, y1, x2, y2):
    return max(0.0, x2 - x1) * max(0.0, y2 - y1)


def _overlap(a, b):
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    inter = _area(max(ax1, bx1), max(ay1, by1), min(ax2, bx2), min(ay2, by2))
    union = _area(*a) + _area(*b) - inter
    return inter, union


def iou(a: BBox, b: BBox) -> float:
    ca, cb = xywh_to_xyxy_clamped(a), xywh_to_xyxy_clamped(b)
    inter, union = _overlap(ca, cb)
    return inter / union if union > 0 else 0.0


def giou(a: BBox, b: BBox) -> float:
    ca, cb = xywh_to_xyxy_clamped(a), xywh_to_xyxy_clamped(b)
    inter, union = _overlap(ca, cb)
    enclosing = _area(min(ca[0], cb[0]), min(ca[1], cb[1]), max(ca[2], cb[2]), max(ca[3], cb[3]))
    if enclosing <= 0:
        raise DegenerateEnclosure("enclosing box has zero area")
    iou_value = inter / union if union > 0 else 0.0
    return iou_value - (enclosing - union) / enclosing


@dataclass(frozen=True)
class BoxLossConfig:
    giou_weight: float = 0.0

    def __post_init__(self):
        if self.giou_weight < 0:
            raise ValueError("giou_weight must be non-negative")


def _as_boxes(boxes) -> np.ndarray:
    arr = np.array([b.as_tuple() if isinstance(b, BBox) else tuple(b) for b in boxes], dtype=float)
    return arr.reshape(-1, 4)


def _giou_and_grad(p, g):
    """GIoU of one (x, y, w, h) pair and its gradient w.r.t. the first box."""
    x, y, w, h = p
    clamp = lambda v: min(1.0, max(0.0, v))  # noqa: E731
    inside = lambda v: 1.0 if 0.0 < v < 1.0 else 0.0  # noqa: E731
    px1, py1, px2, py2 = clamp(x), clamp(y), clamp(x + w), clamp(y + h)
    gx1, gy1, gx2, gy2 = clamp(g[0]), clamp(g[1]), clamp(g[0] + g[2]), clamp(g[1] + g[3])

    pw, ph = max(0.0, px2 - px1), max(0.0, py2 - py1)
    ap = pw * ph
    ag = max(0.0, gx2 - gx1) * max(0.0, gy2 - gy1)
    iw = min(px2, gx2) - max(px1, gx1)
    ih = min(py2, gy2) - max(py1, gy1)
    overlapping = iw > 0 and ih > 0
    inter = iw * ih if overlapping else 0.0
    union = ap + ag - inter
    cw = max(px2, gx2) - min(px1, gx1)
    ch = max(py2, gy2) - min(py1, gy1)
    enc = cw * ch
    if enc <= 0:
        raise DegenerateEnclosure("enclosing box has zero area")
    iou_value = inter / union if union > 0 else 0.0
    value = iou_value - (enc - union) / enc

    # partials w.r.t. corners (px1, px2, py1, py2)
    d_ap = np.array([-ph if pw > 0 else 0.0, ph if pw > 0 else 0.0, -pw if ph > 0 else 0.0, pw if ph > 0 else 0.0])
    if overlapping:
        d_inter = np.array([
            -ih if px1 > gx1 else 0.0,
            ih if px2 < gx2 else 0.0,
            -iw if py1 > gy1 else 0.0,
            iw if py2 < gy2 else 0.0,
        ])
    else:
        d_inter = np.zeros(4)
    d_enc = np.array([
        -ch if px1 < gx1 else 0.0,
        ch if px2 > gx2 else 0.0,
        -cw if py1 < gy1 else 0.0,
        cw if py2 > gy2 else 0.0,
    ])
    d_union = d_ap - d_inter
    d_iou = (d_inter * union - inter * d_union) / union ** 2 if union > 0 else np.zeros(4)
    # value = iou - 1 + union / enc
    d_corner = d_iou + (d_union * enc - union * d_enc) / enc ** 2

    # chain through clamps: px1=x, px2=x+w, py1=y, py2=y+h
    kx1, kx2, ky1, ky2 = inside(x), inside(x + w), inside(y), inside(y + h)
    grad = np.array([
        d_corner[0] * kx1 + d_corner[1] * kx2,
        d_corner[2] * ky1 + d_corner[3] * ky2,
        d_corner[1] * kx2,
        d_corner[3] * ky2,
    ])
    return value, grad


def box_loss(pred, gold, cfg: BoxLossConfig = BoxLossConfig()) -> float:
    """Mean L1 distance over (x1, y1, w, h), plus ``giou_weight`` times mean (1 - GIoU)."""
    return box_loss_and_grad(pred, gold, cfg)[0]


def box_loss_and_grad(pred, gold, cfg: BoxLossConfig = BoxLossConfig()):
    """Loss value and its gradient w.r.t. every predicted component, shape (M, 4).

    The L1 subgradient at zero difference is taken as 0.
    """
    p, g = _as_boxes(pred), _as_boxes(gold)
    if p.shape != g.shape:
        raise LengthMismatch(f"{len(p)} predicted boxes vs {len(g)} gold boxes")
    m = len(p)
    if m == 0:
        raise LengthMismatch("box loss needs at least one box pair")
    diff = p - g
    loss = np.abs(diff).sum() / m
    grad = np.sign(diff) / m
    if cfg.giou_weight > 0:
        giou_sum = 0.0
        for i in range(m):
            value, dg = _giou_and_grad(p[i], g[i])
            giou_sum += value
            grad[i] -= cfg.giou_weight * dg / m
        loss += cfg.giou_weight * (m - giou_sum) / m
    return float(loss), grad


@dataclass
class RegressorParams:
    weight: np.ndarray  # (4, D_s)
    bias: np.ndarray  # (4,)

    @classmethod
    def zeros(cls, dim: int) -> "RegressorParams":
        return cls(np.zeros((4, dim)), np.zeros(4))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _features(windows) -> np.ndarray:
    return np.stack([w.pooled if isinstance(w, AnchorWindow) else np.asarray(w, dtype=float) for w in windows])


def regress_boxes(windows, params: RegressorParams) -> list:
    """Affine map followed by a per-component logistic squash into [0, 1]."""
    if len(windows) == 0:
        return []
    s = _features(windows)
    if s.shape[1] != params.weight.shape[1]:
        raise DimMismatch(f"features of dim {s.shape[1]} vs regressor input dim {params.weight.shape[1]}")
    out = _sigmoid(s @ params.weight.T + params.bias)
    return [BBox(*row) for row in out.tolist()]


def fit_regressor(
    windows,
    boxes,
    steps: int = 5000,
    lr: float = 0.05,
    cfg: BoxLossConfig = BoxLossConfig(),
    params: Optional[RegressorParams] = None,
):
    """Fit the reference regressor with Adam on the box loss; returns (params, loss history)."""
    s = _features(windows)
    target = _as_boxes(boxes)
    params = params or RegressorParams.zeros(s.shape[1])
    w, b = params.weight.copy(), params.bias.copy()
    mw, vw, mb, vb = np.zeros_like(w), np.zeros_like(w), np.zeros_like(b), np.zeros_like(b)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    history = []
    for step in range(1, steps + 1):
        out = _sigmoid(s @ w.T + b)
        loss, d_out = box_loss_and_grad(out, target, cfg)
        history.append(loss)
        d_z = d_out * out * (1.0 - out)
        gw, gb = d_z.T @ s, d_z.sum(axis=0)
        rate = lr * (1.0 - (step - 1) / steps)
        for theta, grad, m, v in ((w, gw, mw, vw), (b, gb, mb, vb)):
            m *= beta1
            m += (1 - beta1) * grad
            v *= beta2
            v += (1 - beta2) * grad ** 2
            theta -= rate * (m / (1 - beta1 ** step)) / (np.sqrt(v / (1 - beta2 ** step)) + eps)
    final = box_loss(_sigmoid(s @ w.T + b), target, cfg)
    history.append(final)
    return RegressorParams(w, b), history


@dataclass(frozen=True)
class GroundingRecord:
    cell_index: int
    row: int
    col: int
    box: BBox

    def to_dict(self) -> dict:
        return {"cell_index": self.cell_index, "row": self.row, "col": self.col,
                "x1": self.box.x1, "y1": self.box.y1, "w": self.box.w, "h": self.box.h}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundingRecord":
        return cls(int(d["cell_index"]), int(d["row"]), int(d["col"]),
                   BBox(float(d["x1"]), float(d["y1"]), float(d["w"]), float(d["h"])))


def grounding_records(table: HtmlTable, boxes: Sequence[BBox]) -> list:
    """Attach grid positions to per-cell boxes given in cell (document) order."""
    origins = expand_grid(table).origins
    if len(origins) != len(boxes):
        raise LengthMismatch(f"{len(origins)} cells vs {len(boxes)} boxes")
    return [GroundingRecord(k, r, c, box) for k, ((r, c, _), box) in enumerate(zip(origins, boxes))]


def dump_grounding(records: Iterable[GroundingRecord]) -> str:
    return "".join(json.dumps(r.to_dict()) + "\n" for r in records)


def align_by_grid(pred: Iterable[GroundingRecord], gold: Iterable[GroundingRecord]):
    """Pair predicted and gold boxes by (row, col); unmatched gold cells get an empty box."""
    pred_at = {(r.row, r.col): r.box for r in pred}
    pairs_pred, pairs_gold = [], []
    for g in gold:
        pairs_gold.append(g.box)
        pairs_pred.append(pred_at.get((g.row, g.col), BBox(0.0, 0.0, 0.0, 0.0)))
    return pairs_pred, pairs_gold
