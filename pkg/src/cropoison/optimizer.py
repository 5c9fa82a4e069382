"""Optimal poisoned-image layout.

Closed forms fix the object position (flush with the corner on the object's
side), the trigger position (centre of the background strip left over by the
object) and the background extent across the separating direction (equal to
the object's). The remaining extent along the separating direction has no
closed form and is found by a grid search over the ratio
``background extent / object extent``.
"""

from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .geometry import LayoutKind, PoisonGeometry, Rect, is_valid, separating_layouts
from .probability import QuadratureSpec, total_p_value

PLACEMENT_TOL = 1e-7


def optimal_object_location(
    layout: LayoutKind, b_w: float, b_h: float, o_w: float, o_h: float
) -> tuple[float, float]:
    """Top-left corner that pushes the object into its corner."""
    if b_w < o_w or b_h < o_h:
        raise DomainError(f"background {b_w}x{b_h} smaller than object {o_w}x{o_h}")
    layout = LayoutKind(layout)
    if layout is LayoutKind.RIGHT_LEFT:
        return (b_w - o_w, 0.0)
    if layout is LayoutKind.BOTTOM_TOP:
        return (0.0, b_h - o_h)
    return (0.0, 0.0)


def remaining_rect(
    layout: LayoutKind, b_w: float, b_h: float, o_x: float, o_y: float, o_w: float, o_h: float
) -> tuple[float, float, float, float]:
    """``(x, y, w, h)`` of the background strip on the trigger's side of the
    object. Width or height may be zero or negative when nothing is left."""
    layout = LayoutKind(layout)
    if layout is LayoutKind.LEFT_RIGHT:
        return (o_x + o_w, 0.0, b_w - (o_x + o_w), b_h)
    if layout is LayoutKind.RIGHT_LEFT:
        return (0.0, 0.0, o_x, b_h)
    if layout is LayoutKind.BOTTOM_TOP:
        return (0.0, 0.0, b_w, o_y)
    return (0.0, o_y + o_h, b_w, b_h - (o_y + o_h))


def optimal_trigger_location(
    layout: LayoutKind,
    b_w: float,
    b_h: float,
    o_w: float,
    o_h: float,
    l: float,
    o_x: float | None = None,
    o_y: float | None = None,
) -> tuple[float, float]:
    """Centre the trigger in the strip left over by the object.

    The object defaults to its optimal location; pass ``o_x``/``o_y`` to
    centre the trigger for some other object placement.
    """
    layout = LayoutKind(layout)
    ox, oy = optimal_object_location(layout, b_w, b_h, o_w, o_h)
    ox = ox if o_x is None else o_x
    oy = oy if o_y is None else o_y
    rx, ry, rw, rh = remaining_rect(layout, b_w, b_h, ox, oy, o_w, o_h)
    if rw < l or rh < l:
        raise DomainError(f"remaining {rw}x{rh} region cannot hold a {l}px trigger")
    return (rx + (rw - l) / 2.0, ry + (rh - l) / 2.0)


def optimal_background_extent(layout: LayoutKind, o_w: float, o_h: float) -> float:
    """Background extent across the separating direction.

    That is the height for left-right/right-left layouts and the width for
    bottom-top/top-bottom ones; either way it equals the object's.
    """
    return float(o_h) if LayoutKind(layout).horizontal else float(o_w)


def optimal_geometry(
    layout: LayoutKind, o_w: float, o_h: float, l: float, ratio: float
) -> PoisonGeometry:
    """Fully determined geometry for a given free ratio (alpha or beta)."""
    layout = LayoutKind(layout)
    if layout.horizontal:
        b_w, b_h = ratio * o_w, optimal_background_extent(layout, o_w, o_h)
    else:
        b_w, b_h = optimal_background_extent(layout, o_w, o_h), ratio * o_h
    o_x, o_y = optimal_object_location(layout, b_w, b_h, o_w, o_h)
    e_x, e_y = optimal_trigger_location(layout, b_w, b_h, o_w, o_h, l)
    return PoisonGeometry(b_w, b_h, o_x, o_y, o_w, o_h, e_x, e_y, l, layout)


@dataclass(frozen=True)
class RatioGrid:
    lo: float = 1.0
    hi: float = 4.0
    step: float = 0.05

    def values(self) -> np.ndarray:
        if self.step <= 0 or self.hi < self.lo:
            raise DomainError("ratio grid needs step > 0 and hi >= lo")
        n = int(np.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return np.round(self.lo + self.step * np.arange(n), 12)


@dataclass
class OptimalPlacement:
    geom: PoisonGeometry
    ratio_star: float
    p_star: float
    search_trace: list[tuple[float, float]] = field(default_factory=list)
    unimodal: bool = True

    @property
    def alpha_star(self) -> float | None:
        return self.ratio_star if self.geom.layout.horizontal else None

    @property
    def beta_star(self) -> float | None:
        return None if self.geom.layout.horizontal else self.ratio_star

    def to_dict(self) -> dict:
        return {
            "geometry": self.geom.to_dict(),
            "ratio_star": self.ratio_star,
            "p_star": self.p_star,
            "unimodal": self.unimodal,
            "trace": [{"ratio": r, "p": p} for r, p in self.search_trace],
        }


def is_unimodal(values, tol: float = 1e-6) -> bool:
    """True if successive differences change sign at most once, from rising
    to falling. Differences within ``tol`` of zero carry no sign."""
    signs = [int(np.sign(d)) for d in np.diff(np.asarray(values, dtype=float)) if abs(d) > tol]
    changes = sum(1 for a, b in zip(signs, signs[1:]) if a != b)
    if changes == 0:
        return True
    return bool(changes == 1 and signs[0] > 0)


def _eval_ratio(args):
    layout, o_w, o_h, l, ratio, quadrature = args
    return total_p_value(optimal_geometry(layout, o_w, o_h, l, ratio), quadrature)


def _feasible(layout, o_w, o_h, l, ratio):
    extent = o_w if LayoutKind(layout).horizontal else o_h
    cross = o_h if LayoutKind(layout).horizontal else o_w
    return ratio * extent - extent >= l and l < cross


def search_free_ratio(
    layout: LayoutKind,
    o_w: float,
    o_h: float,
    l: float,
    grid: RatioGrid | None = None,
    quadrature: QuadratureSpec | None = None,
    jobs: int = 1,
    unimodal_tol: float = 1e-6,
) -> OptimalPlacement:
    """Grid-search the free background ratio under optimal placements.

    Ratios too small to fit the trigger beside the object are skipped. Ties
    go to the smallest ratio. A ``RuntimeWarning`` is issued when the trace
    is not unimodal.
    """
    layout = LayoutKind(layout)
    grid = grid or RatioGrid()
    ratios = [float(r) for r in grid.values() if _feasible(layout, o_w, o_h, l, r)]
    if not ratios:
        raise DomainError("no ratio in the grid leaves room for the trigger")
    tasks = [(layout, o_w, o_h, l, r, quadrature) for r in ratios]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            ps = list(pool.map(_eval_ratio, tasks, chunksize=8))
    else:
        ps = [_eval_ratio(t) for t in tasks]
    trace = list(zip(ratios, ps))
    best = max(range(len(ps)), key=lambda i: (ps[i], -i))
    unimodal = is_unimodal(ps, unimodal_tol)
    if not unimodal:
        warnings.warn("probability trace over the ratio grid is not unimodal", RuntimeWarning)
    return OptimalPlacement(
        geom=optimal_geometry(layout, o_w, o_h, l, ratios[best]),
        ratio_star=ratios[best],
        p_star=ps[best],
        search_trace=trace,
        unimodal=unimodal,
    )


@dataclass
class PlacementCheck:
    closed_form_geom: PoisonGeometry
    closed_form_p: float
    grid_max_p: float
    grid_argmax: PoisonGeometry | None
    n_points: int
    counterexamples: list[PoisonGeometry] = field(default_factory=list)
    tol: float = PLACEMENT_TOL

    @property
    def attains_max(self) -> bool:
        return self.closed_form_p >= self.grid_max_p - self.tol


def placement_geometry(
    b_w, b_h, o_w, o_h, l, o_x, o_y, e_x, e_y
) -> PoisonGeometry | None:
    """Valid geometry for explicit coordinates, inferring the layout, or None."""
    obj = Rect(o_x, o_y, o_w, o_h)
    trig = Rect(e_x, e_y, l, l)
    layouts = separating_layouts(obj, trig)
    if not layouts:
        return None
    g = PoisonGeometry(b_w, b_h, o_x, o_y, o_w, o_h, e_x, e_y, l, layouts[0])
    return g if is_valid(g) else None


def placement_grid(b_w, b_h, o_w, o_h, l, step):
    """All valid placements with coordinates on multiples of ``step``."""

    def axis(limit):
        return [float(v) for v in np.arange(0.0, limit + 1e-9, step)]

    for o_x, o_y in itertools.product(axis(b_w - o_w), axis(b_h - o_h)):
        for e_x, e_y in itertools.product(axis(b_w - l), axis(b_h - l)):
            g = placement_geometry(b_w, b_h, o_w, o_h, l, o_x, o_y, e_x, e_y)
            if g is not None:
                yield g


def closed_form_placement(b_w, b_h, o_w, o_h, l, quadrature=None) -> tuple[PoisonGeometry, float]:
    """Best closed-form placement over the layouts that fit this background."""
    best = None
    for layout in LayoutKind:
        try:
            o_x, o_y = optimal_object_location(layout, b_w, b_h, o_w, o_h)
            e_x, e_y = optimal_trigger_location(layout, b_w, b_h, o_w, o_h, l)
        except DomainError:
            continue
        g = PoisonGeometry(b_w, b_h, o_x, o_y, o_w, o_h, e_x, e_y, l, layout)
        if not is_valid(g):
            continue
        p = total_p_value(g, quadrature)
        if best is None or p > best[1]:
            best = (g, p)
    if best is None:
        raise DomainError("no layout fits the trigger beside the object")
    return best


def verify_optimal_placement(
    b_w: float,
    b_h: float,
    o_w: float,
    o_h: float,
    l: float,
    step: float = 5.0,
    points=None,
    quadrature: QuadratureSpec | None = None,
    tol: float = PLACEMENT_TOL,
) -> PlacementCheck:
    """Brute-force check that the closed-form placement maximises ``total_p``.

    ``points`` overrides the default lattice with any iterable of
    geometries sharing the given sizes.
    """
    closed_form_geom, closed_form_p = closed_form_placement(b_w, b_h, o_w, o_h, l, quadrature)
    geoms = placement_grid(b_w, b_h, o_w, o_h, l, step) if points is None else points
    grid_max, argmax, n = -1.0, None, 0
    counter = []
    for g in geoms:
        n += 1
        p = total_p_value(g, quadrature)
        if p > grid_max:
            grid_max, argmax = p, g
        if p > closed_form_p + tol:
            counter.append(g)
    return PlacementCheck(
        closed_form_geom=closed_form_geom,
        closed_form_p=closed_form_p,
        grid_max_p=max(grid_max, 0.0),
        grid_argmax=argmax,
        n_points=n,
        counterexamples=counter,
        tol=tol,
    )
