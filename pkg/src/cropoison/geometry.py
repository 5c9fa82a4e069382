"""Continuous rectangle algebra for poisoned-image layouts.

Coordinates have their origin at the background's top-left corner, x grows
rightward and y grows downward, matching raster indexing. All predicates use
closed intervals: touching edges count as containment or as disjointness,
whichever the predicate asks about. The two conventions only differ on
measure-zero sets of crops.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace


class LayoutKind(str, enum.Enum):
    """Relative arrangement of reference object and trigger.

    The first word names where the object sits: ``LEFT_RIGHT`` puts the
    object left of the trigger, ``BOTTOM_TOP`` puts it below the trigger.
    """

    LEFT_RIGHT = "left-right"
    RIGHT_LEFT = "right-left"
    BOTTOM_TOP = "bottom-top"
    TOP_BOTTOM = "top-bottom"

    @property
    def horizontal(self) -> bool:
        """True when a vertical line separates object and trigger."""
        return self in (LayoutKind.LEFT_RIGHT, LayoutKind.RIGHT_LEFT)

    def mirrored(self) -> "LayoutKind":
        return _MIRROR[self]


_MIRROR = {
    LayoutKind.LEFT_RIGHT: LayoutKind.RIGHT_LEFT,
    LayoutKind.RIGHT_LEFT: LayoutKind.LEFT_RIGHT,
    LayoutKind.BOTTOM_TOP: LayoutKind.TOP_BOTTOM,
    LayoutKind.TOP_BOTTOM: LayoutKind.BOTTOM_TOP,
}


@dataclass(frozen=True)
class Rect:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite rect {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"rect needs positive size, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def within(self, other: "Rect") -> bool:
        return (
            other.x <= self.x
            and other.y <= self.y
            and self.x2 <= other.x2
            and self.y2 <= other.y2
        )

    def disjoint(self, other: "Rect") -> bool:
        return (
            self.x2 <= other.x
            or other.x2 <= self.x
            or self.y2 <= other.y
            or other.y2 <= self.y
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class CropRegion:
    """A square crop with top-left ``(x, y)`` and side ``s``."""

    x: float
    y: float
    s: float

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ValueError(f"crop side must be positive, got {self.s}")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("non-finite crop position")

    def rect(self) -> Rect:
        return Rect(self.x, self.y, self.s, self.s)


def crop_inside(c: CropRegion, r: Rect) -> bool:
    """True if the crop lies entirely within ``r`` (boundary counts)."""
    return c.rect().within(r)


def crop_contains(c: CropRegion, r: Rect) -> bool:
    """True if the crop fully covers ``r`` (boundary counts)."""
    return r.within(c.rect())


def crop_disjoint(c: CropRegion, r: Rect) -> bool:
    """True if the crop and ``r`` share no interior point."""
    return c.rect().disjoint(r)


@dataclass(frozen=True)
class PoisonGeometry:
    """Layout of background, reference object and square trigger.

    ``validate`` reports violations instead of raising, so an instance may
    describe an infeasible layout; the probability code refuses those.
    """

    b_w: float
    b_h: float
    o_x: float
    o_y: float
    o_w: float
    o_h: float
    e_x: float
    e_y: float
    l: float
    layout: LayoutKind

    @property
    def alpha(self) -> float:
        return self.b_w / self.o_w

    @property
    def beta(self) -> float:
        return self.b_h / self.o_h

    @property
    def S(self) -> float:
        """Largest square crop side, ``min(b_w, b_h)``."""
        return min(self.b_w, self.b_h)

    def background(self) -> Rect:
        return Rect(0.0, 0.0, self.b_w, self.b_h)

    def object_rect(self) -> Rect:
        return Rect(self.o_x, self.o_y, self.o_w, self.o_h)

    def trigger_rect(self) -> Rect:
        return Rect(self.e_x, self.e_y, self.l, self.l)

    def mirrored(self) -> "PoisonGeometry":
        """Mirror across the vertical axis for horizontal layouts, else the
        horizontal axis. Sizes and ratios are unchanged."""
        if self.layout.horizontal:
            return replace(
                self,
                o_x=self.b_w - self.o_x - self.o_w,
                e_x=self.b_w - self.e_x - self.l,
                layout=self.layout.mirrored(),
            )
        return replace(
            self,
            o_y=self.b_h - self.o_y - self.o_h,
            e_y=self.b_h - self.e_y - self.l,
            layout=self.layout.mirrored(),
        )

    def scaled(self, factor: float) -> "PoisonGeometry":
        return replace(
            self,
            **{
                k: getattr(self, k) * factor
                for k in ("b_w", "b_h", "o_x", "o_y", "o_w", "o_h", "e_x", "e_y", "l")
            },
        )

    def to_dict(self) -> dict:
        d = {
            k: getattr(self, k)
            for k in ("b_w", "b_h", "o_x", "o_y", "o_w", "o_h", "e_x", "e_y", "l")
        }
        d["layout"] = self.layout.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PoisonGeometry":
        kw = {k: float(d[k]) for k in ("b_w", "b_h", "o_x", "o_y", "o_w", "o_h", "e_x", "e_y", "l")}
        return cls(layout=LayoutKind(d["layout"]), **kw)


def separating_layouts(obj: Rect, trig: Rect) -> list[LayoutKind]:
    """Every layout whose separating line exists between ``obj`` and ``trig``."""
    found = []
    if trig.x >= obj.x2:
        found.append(LayoutKind.LEFT_RIGHT)
    if trig.x2 <= obj.x:
        found.append(LayoutKind.RIGHT_LEFT)
    if trig.y2 <= obj.y:
        found.append(LayoutKind.BOTTOM_TOP)
    if trig.y >= obj.y2:
        found.append(LayoutKind.TOP_BOTTOM)
    return found


def validate(geom: PoisonGeometry) -> list[str]:
    """Return every violated layout invariant; an empty list means valid."""
    problems = []
    vals = [getattr(geom, k) for k in ("b_w", "b_h", "o_x", "o_y", "o_w", "o_h", "e_x", "e_y", "l")]
    if not all(math.isfinite(v) for v in vals):
        return ["non-finite coordinate"]
    for name in ("b_w", "b_h", "o_w", "o_h", "l"):
        if getattr(geom, name) <= 0:
            problems.append(f"{name} must be positive")
    if problems:
        return problems

    bg = geom.background()
    obj = geom.object_rect()
    trig = geom.trigger_rect()
    if geom.o_w > geom.b_w or geom.o_h > geom.b_h:
        problems.append("object larger than background")
    if not obj.within(bg):
        problems.append("object outside background")
    if not trig.within(bg):
        problems.append("trigger outside background")
    if geom.l >= geom.S:
        problems.append("trigger side must be below min(b_w, b_h)")
    if not obj.disjoint(trig):
        problems.append("trigger overlaps object")
    elif geom.layout not in separating_layouts(obj, trig):
        problems.append(f"coordinates inconsistent with layout {geom.layout.value}")
    return problems


def is_valid(geom: PoisonGeometry) -> bool:
    return not validate(geom)
