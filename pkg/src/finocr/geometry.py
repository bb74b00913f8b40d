"""Axis-aligned boxes in ``(x1, y1, w, h)`` form."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """Top-left corner plus width/height.

    Grounding boxes are normalized to ``[0, 1]`` by the image size; layout
    element boxes are in page pixels.
    """

    x1: float
    y1: float
    w: float
    h: float

    @classmethod
    def from_seq(cls, values) -> "BBox":
        x1, y1, w, h = (float(v) for v in values)
        return cls(x1, y1, w, h)

    def as_tuple(self) -> tuple:
        return (self.x1, self.y1, self.w, self.h)

    def normalized(self, width: float, height: float) -> "BBox":
        return BBox(self.x1 / width, self.y1 / height, self.w / width, self.h / height)
