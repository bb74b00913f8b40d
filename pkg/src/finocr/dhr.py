"""Document-level heading hierarchy reconstruction.

Heading crops are stacked onto blank page-sized canvases (a pseudo table of
contents), each annotated with a colored box and a running numeric label.
The canvases and the label/text list are sent to a vision-language service,
whose line-delimited JSON reply assigns a level to every label.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from PIL import Image, ImageDraw, ImageFont

from finocr.errors import (
    CropTooLarge,
    DuplicateLabel,
    IncompleteAssignment,
    LabelMismatch,
    MalformedResponse,
    MissingCrop,
    MissingLabels,
)
from finocr.geometry import BBox

log = logging.getLogger(__name__)

PAGE_W = 1240
PAGE_H = 1754
MARGIN = 40
GAP = 24
OUTLINE = 2
PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (128, 128, 0),
)

DEFAULT_INSTRUCTION = (
    "The images show every heading of one document, stacked in reading order. "
    "Each heading is framed by a colored box tagged with a number, and the same "
    "numbers prefix the heading texts listed below. Decide the hierarchy level of "
    "every heading (1 = top level). Answer with one JSON object per line, exactly "
    '{"label": <number>, "level": <level>}, covering every number once and nothing else.'
)


@dataclass(frozen=True)
class CropRef:
    key: str
    width: int
    height: int


@dataclass(frozen=True)
class Heading:
    """One candidate heading: text, crop, normalized box on its page, and level."""

    id: str
    text: str
    bbox: BBox  # normalized to the source page
    page_index: int = 0
    crop: Optional[CropRef] = None
    level: Optional[int] = None
    numeric_label: Optional[int] = None

    def __post_init__(self):
        if self.level is not None and self.level < 1:
            raise ValueError(f"heading level must be >= 1, got {self.level}")


@dataclass(frozen=True)
class Placement:
    heading_id: str
    rect: tuple  # (x, y, w, h) in pixels
    color: tuple
    label: int


@dataclass(frozen=True)
class PseudoTocPage:
    width: int
    height: int
    placements: tuple


@dataclass(frozen=True)
class DhrPrompt:
    instruction: str
    heading_lines: tuple  # ((label, text), ...)
    image_pages: tuple

    def text_lines(self) -> list:
        return [f"[{label}] {text}" for label, text in self.heading_lines]


@dataclass(frozen=True)
class LevelAssignment:
    levels: dict  # numeric label -> level
    warnings: tuple = ()


def layout_pseudo_toc(
    headings: Sequence[Heading],
    page_w: int = PAGE_W,
    page_h: int = PAGE_H,
    margin: int = MARGIN,
    gap: int = GAP,
) -> list:
    """Stack heading crops top to bottom, keeping each crop's horizontal offset."""
    if page_w <= 0 or page_h <= 0:
        raise ValueError("page dimensions must be positive")
    pages = []
    current: list = []
    y = margin
    for label, h in enumerate(headings, 1):
        if h.crop is None:
            raise MissingCrop(h.id)
        x = int(round(h.bbox.x1 * page_w))
        room = page_w - x
        if room <= 0:
            raise CropTooLarge(f"heading {h.id!r} starts at the right page edge")
        scale = min(1.0, room / h.crop.width)
        w = max(1, int(h.crop.width * scale))
        ht = max(1, int(round(h.crop.height * scale)))
        if ht > page_h - 2 * margin:
            raise CropTooLarge(f"heading {h.id!r} crop of height {ht}px does not fit a page")
        if y + ht > page_h - margin and current:
            pages.append(PseudoTocPage(page_w, page_h, tuple(current)))
            current, y = [], margin
        current.append(Placement(h.id, (x, y, w, ht), PALETTE[(label - 1) % len(PALETTE)], label))
        y += ht + gap
    if current:
        pages.append(PseudoTocPage(page_w, page_h, tuple(current)))
    return pages


def _load_image(obj) -> Image.Image:
    if isinstance(obj, Image.Image):
        return obj
    if isinstance(obj, (bytes, bytearray)):
        return Image.open(io.BytesIO(obj))
    return Image.open(obj)


def render_pseudo_toc(page: PseudoTocPage, crops: Mapping) -> bytes:
    """Rasterize one pseudo-TOC page to PNG bytes.

    ``crops`` maps heading id to a PIL image, encoded bytes, or a path.
    """
    canvas = Image.new("RGB", (page.width, page.height), (255, 255, 255))
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    for p in page.placements:
        if p.heading_id not in crops:
            raise MissingCrop(p.heading_id)
        x, y, w, h = p.rect
        crop = _load_image(crops[p.heading_id]).convert("RGB")
        if crop.size != (w, h):
            crop = crop.resize((w, h), Image.BILINEAR)
        canvas.paste(crop, (x, y))
        draw.rectangle((x, y, x + w - 1, y + h - 1), outline=p.color, width=OUTLINE)
        tag = str(p.label)
        left, top, right, bottom = draw.textbbox((0, 0), tag, font=font)
        tw, th = right - left, bottom - top
        if x >= tw + 6:
            draw.text((x - tw - 4, y), tag, fill=p.color, font=font)
        else:
            # no room on the left: badge over the crop's top-left corner
            draw.rectangle((x, y, x + tw + 3, y + th + 3), fill=p.color)
            draw.text((x + 2, y + 1), tag, fill=(255, 255, 255), font=font)
    buf = io.BytesIO()
    canvas.save(buf, format="PNG")
    return buf.getvalue()


def label_headings(headings: Sequence[Heading], pages: Optional[Sequence[PseudoTocPage]] = None) -> list:
    """Copy headings with their numeric labels filled in (from the layout when given)."""
    if pages is None:
        return [replace(h, numeric_label=i) for i, h in enumerate(headings, 1)]
    label_of = {p.heading_id: p.label for page in pages for p in page.placements}
    if set(label_of) != {h.id for h in headings} or len(label_of) != len(headings):
        raise LabelMismatch("pseudo-TOC placements do not cover the headings exactly once")
    return [replace(h, numeric_label=label_of[h.id]) for h in headings]


def build_dhr_prompt(
    headings: Sequence[Heading],
    pages: Optional[Sequence[PseudoTocPage]] = None,
    instruction: str = DEFAULT_INSTRUCTION,
) -> DhrPrompt:
    """Assemble instruction, ``[label] text`` lines and page references.

    Without pages the prompt is text-only and labels follow reading order.
    """
    labeled = label_headings(headings, pages)
    labels = [h.numeric_label for h in labeled]
    if any(b <= a for a, b in zip(labels, labels[1:])):
        raise LabelMismatch("labels must strictly increase in reading order")
    lines = tuple((h.numeric_label, " ".join(h.text.splitlines()).strip()) for h in labeled)
    return DhrPrompt(instruction, lines, tuple(pages or ()))


def encode_level_assignment(assignment: Mapping[int, int]) -> str:
    return "".join(json.dumps({"label": k, "level": v}) + "\n" for k, v in sorted(assignment.items()))


def _record(line: str):
    line = line.strip().rstrip(",")
    if not line.startswith("{"):
        return None
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict):
        return None
    label, level = obj.get("label"), obj.get("level")
    if isinstance(label, bool) or isinstance(level, bool):
        return None
    if not isinstance(label, int) or not isinstance(level, int) or level < 1:
        return None
    return label, level


def decode_level_assignment(response: str, expected_labels) -> LevelAssignment:
    """Parse ``{"label": int, "level": int}`` lines; non-record lines are skipped with a warning."""
    expected = set(expected_labels)
    warnings = []
    levels: dict = {}
    n_records = 0
    for lineno, line in enumerate(response.splitlines(), 1):
        if not line.strip():
            continue
        rec = _record(line)
        if rec is None:
            warnings.append(f"line {lineno}: not a label/level record: {line.strip()[:60]!r}")
            continue
        n_records += 1
        label, level = rec
        if label not in expected:
            warnings.append(f"line {lineno}: unknown label {label} ignored")
            continue
        if label in levels:
            if levels[label] != level:
                raise DuplicateLabel(label, (levels[label], level))
            warnings.append(f"line {lineno}: label {label} repeated")
            continue
        levels[label] = level
    if n_records == 0 and expected:
        raise MalformedResponse("response contains no label/level records")
    missing = expected - set(levels)
    if missing:
        raise MissingLabels(missing)
    for w in warnings:
        log.warning(w)
    return LevelAssignment(levels, tuple(warnings))


def apply_levels(headings: Sequence[Heading], assignment: LevelAssignment) -> list:
    levels = assignment.levels if isinstance(assignment, LevelAssignment) else dict(assignment)
    out = []
    used = set()
    for i, h in enumerate(headings, 1):
        label = h.numeric_label if h.numeric_label is not None else i
        if label not in levels:
            raise IncompleteAssignment(f"no level for heading {h.id!r} (label {label})")
        used.add(label)
        out.append(replace(h, numeric_label=label, level=levels[label]))
    extra = set(levels) - used
    if extra:
        log.warning("ignoring levels for unknown labels %s", sorted(extra))
    return out


@dataclass
class DhrResult:
    headings: list
    pages: list
    page_images: list = field(default_factory=list)
    prompt: Optional[DhrPrompt] = None
    response_text: Optional[str] = None
    assignment: Optional[LevelAssignment] = None


def run_dhr(
    headings: Sequence[Heading],
    client,
    crops: Optional[Mapping] = None,
    render: bool = True,
    page_w: int = PAGE_W,
    page_h: int = PAGE_H,
    instruction: str = DEFAULT_INSTRUCTION,
    on_pages=None,
) -> DhrResult:
    """Layout, render, prompt the service and decode levels for one document.

    ``on_pages`` is called with the rendered PNGs before the service is
    contacted, so page images survive a service failure.
    """
    from finocr.vlm_client import GenerationRequest

    pages = layout_pseudo_toc(headings, page_w, page_h) if render else []
    images = [render_pseudo_toc(p, crops or {}) for p in pages]
    result = DhrResult(list(headings), pages, images)
    if on_pages is not None:
        on_pages(images)
    prompt = build_dhr_prompt(headings, pages if render else None, instruction)
    result.prompt = prompt
    request = GenerationRequest(
        instruction=prompt.instruction,
        text_lines=tuple(prompt.text_lines()),
        images=tuple(("image/png", png) for png in images),
    )
    response = client.generate(request)
    result.response_text = response.text
    labels = [label for label, _ in prompt.heading_lines]
    result.assignment = decode_level_assignment(response.text, labels)
    result.headings = apply_levels(label_headings(headings, pages if render else None), result.assignment)
    return result
