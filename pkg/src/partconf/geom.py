"""Axis-aligned box arithmetic.

Boxes use real-valued pixel coordinates with ``y`` growing downward. On disk a
box is always the 4-array ``[x_left, y_top, x_right, y_bottom]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence


@dataclass(frozen=True, order=True)
class Box:
    x_left: float
    x_right: float
    y_top: float
    y_bottom: float

    def __post_init__(self):
        if self.x_left > self.x_right or self.y_top > self.y_bottom:
            raise ValueError(f"inverted box {self!r}")

    @classmethod
    def from_ltrb(cls, coords: Sequence[float]) -> "Box":
        """Build from the serialized ``[left, top, right, bottom]`` order."""
        if len(coords) != 4:
            raise ValueError(f"box needs 4 coordinates, got {len(coords)}")
        l, t, r, b = (float(c) for c in coords)
        return cls(l, r, t, b)

    def to_ltrb(self) -> list[float]:
        return [self.x_left, self.y_top, self.x_right, self.y_bottom]

    @property
    def width(self) -> float:
        return self.x_right - self.x_left

    @property
    def height(self) -> float:
        return self.y_bottom - self.y_top

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_left + self.x_right), 0.5 * (self.y_top + self.y_bottom))

    @property
    def is_degenerate(self) -> bool:
        return self.width <= 0 or self.height <= 0

    def contains(self, other: "Box") -> bool:
        return (self.x_left <= other.x_left and other.x_right <= self.x_right
                and self.y_top <= other.y_top and other.y_bottom <= self.y_bottom)


def area(box: Box) -> float:
    return box.area


def intersect(a: Box, b: Box) -> Optional[Box]:
    """Overlap rectangle of ``a`` and ``b``.

    Returns ``None`` when the boxes are separated. Boxes that merely touch
    produce a zero-area box, which callers can tell apart from ``None``.
    """
    l = max(a.x_left, b.x_left)
    r = min(a.x_right, b.x_right)
    t = max(a.y_top, b.y_top)
    bt = min(a.y_bottom, b.y_bottom)
    if l > r or t > bt:
        return None
    return Box(l, r, t, bt)


def intersection_area(a: Box, b: Box) -> float:
    w = min(a.x_right, b.x_right) - max(a.x_left, b.x_left)
    h = min(a.y_bottom, b.y_bottom) - max(a.y_top, b.y_top)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection over union; zero-area unions (and degenerate boxes) give 0."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def union_bbox(a: Box, b: Box) -> Box:
    return Box(min(a.x_left, b.x_left), max(a.x_right, b.x_right),
               min(a.y_top, b.y_top), max(a.y_bottom, b.y_bottom))


def bbox_of(boxes: Iterable[Box]) -> Box:
    it = iter(boxes)
    try:
        out = next(it)
    except StopIteration:
        raise ValueError("bbox_of needs at least one box") from None
    for b in it:
        out = union_bbox(out, b)
    return out
