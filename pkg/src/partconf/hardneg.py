"""Geometric hard negatives carved out of a foreground estimate.

Given the two configuration patches ``b1``, ``b2`` and the foreground box, the
*core* is their intersection. The four strips of the foreground lying left,
right, above and below the core each hold only a fragment of the object and
serve as negatives. A strip covering more than ``max_ratio`` of the foreground
is shrunk by moving its one interior edge (the edge shared with the core
rather than with the foreground) until it covers exactly ``max_ratio``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import DataError
from .geom import Box, iou

DEFAULT_MAX_RATIO = 0.5
DEFAULT_NEIGHBOR_IOU = 0.3
KINDS = ("left", "right", "top", "bottom")


@dataclass(frozen=True)
class Strip:
    kind: str
    box: Box
    shrunk: bool


@dataclass(frozen=True)
class HardNegativeSet:
    foreground: Box
    core: Box
    strips: tuple[Strip, ...] = field(default_factory=tuple)

    @property
    def boxes(self) -> list[Box]:
        return [s.box for s in self.strips]


def configuration_core(b1: Box, b2: Box) -> Box:
    l = max(b1.x_left, b2.x_left)
    r = min(b1.x_right, b2.x_right)
    t = max(b1.y_top, b2.y_top)
    b = min(b1.y_bottom, b2.y_bottom)
    if l > r or t > b:
        raise DataError("configuration patches must overlap or abut")
    return Box(l, r, t, b)


def generate_hard_negatives(b1: Box, b2: Box, fg: Box,
                            max_ratio: float = DEFAULT_MAX_RATIO) -> HardNegativeSet:
    if fg.is_degenerate:
        raise DataError("foreground estimate is degenerate")
    if not (fg.contains(b1) and fg.contains(b2)):
        raise DataError("configuration patches must lie inside the foreground estimate")
    if not 0.0 < max_ratio <= 1.0:
        raise ValueError(f"max_ratio must lie in (0, 1], got {max_ratio}")
    core = configuration_core(b1, b2)
    W, H = fg.width, fg.height

    strips = []
    # left / right: full foreground height, interior edge is vertical
    w = core.x_left - fg.x_left
    if w > max_ratio * W:
        strips.append(Strip("left", Box(fg.x_left, fg.x_left + max_ratio * W, fg.y_top, fg.y_bottom), True))
    else:
        strips.append(Strip("left", Box(fg.x_left, core.x_left, fg.y_top, fg.y_bottom), False))
    w = fg.x_right - core.x_right
    if w > max_ratio * W:
        strips.append(Strip("right", Box(fg.x_right - max_ratio * W, fg.x_right, fg.y_top, fg.y_bottom), True))
    else:
        strips.append(Strip("right", Box(core.x_right, fg.x_right, fg.y_top, fg.y_bottom), False))
    # top / bottom: full foreground width, interior edge is horizontal
    h = core.y_top - fg.y_top
    if h > max_ratio * H:
        strips.append(Strip("top", Box(fg.x_left, fg.x_right, fg.y_top, fg.y_top + max_ratio * H), True))
    else:
        strips.append(Strip("top", Box(fg.x_left, fg.x_right, fg.y_top, core.y_top), False))
    h = fg.y_bottom - core.y_bottom
    if h > max_ratio * H:
        strips.append(Strip("bottom", Box(fg.x_left, fg.x_right, fg.y_bottom - max_ratio * H, fg.y_bottom), True))
    else:
        strips.append(Strip("bottom", Box(fg.x_left, fg.x_right, core.y_bottom, fg.y_bottom), False))

    return HardNegativeSet(fg, core, tuple(s for s in strips if s.box.area > 0))


def neighboring_negatives(fg: Box, candidates: Iterable[Box],
                          max_iou: float = DEFAULT_NEIGHBOR_IOU) -> list[Box]:
    """Candidates overlapping the foreground with IoU strictly below ``max_iou``."""
    return [c for c in candidates if iou(c, fg) < max_iou]
