"""Closed-form crop co-occurrence probabilities.

For a square crop of side ``s`` whose top-left corner is uniform over
``[0, b_w - s] x [0, b_h - s]``:

* ``p1(s)`` is the chance that the crop lies inside the reference object
  (and therefore misses the trigger, which never overlaps the object);
* ``p2(s)`` is the chance that it covers the whole trigger while sharing no
  interior point with the object.

``total_p`` averages ``p1(s) * p2(s)`` over ``s ~ Uniform(0, S]`` with
``S = min(b_w, b_h)``.

``p2`` is evaluated in general position: the set of corners whose crop holds
the trigger is a box, and the corners whose crop also overlaps the object
form a sub-box, so the good area is a difference of two box areas. When the
object spans the whole background across the separating direction (the
optimal layouts) this is the familiar ``(dw(s) - s)(dh(s) - s)`` product.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, QuadratureError
from .geometry import LayoutKind, PoisonGeometry, validate


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre settings.

    Each breakpoint-delimited piece is integrated with ``nodes`` points and
    again with ``nodes // 2``; their difference is the error estimate. Pieces
    over budget are bisected up to ``max_refinements`` times.
    """

    nodes: int = 256
    abs_tol: float = 1e-9
    max_refinements: int = 8

    def __post_init__(self):
        if self.nodes < 4:
            raise ValueError("need at least 4 quadrature nodes")
        if self.abs_tol <= 0:
            raise ValueError("abs_tol must be positive")


class TotalProbability(NamedTuple):
    value: float
    abs_error: float


@dataclass(frozen=True)
class ProbabilityProfile:
    """Supports and branch points of the integrand for one geometry.

    Supports are half-open intervals ``(lo, hi]`` stored as tuples, or None
    when empty.
    """

    geom: PoisonGeometry
    support_p1: tuple[float, float] | None
    support_p2: tuple[float, float] | None
    breakpoints: tuple[float, ...]


def _require_valid(geom: PoisonGeometry) -> None:
    problems = validate(geom)
    if problems:
        raise DomainError("invalid geometry: " + "; ".join(problems))


def _check_s(geom: PoisonGeometry, s: float) -> None:
    if not (0 < s <= geom.S):
        raise DomainError(f"crop side {s} outside (0, {geom.S}]")


def _frac(length, extent):
    # extent <= 0 only at s == b_w or s == b_h, a measure-zero set; report 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(extent > 0, length / np.where(extent > 0, extent, 1.0), 0.0)
    return out


def _p1_array(g: PoisonGeometry, s: np.ndarray) -> np.ndarray:
    fx = _frac(np.maximum(0.0, g.o_w - s), g.b_w - s)
    fy = _frac(np.maximum(0.0, g.o_h - s), g.b_h - s)
    return fx * fy


def _axis_terms(s, e, l, extent, o, o_len):
    """Corner-interval lengths along one axis.

    Returns the length of corners whose crop covers the trigger span, and
    the length of those that additionally overlap the object span.
    """
    lo = np.maximum(e + l - s, 0.0)
    hi = np.minimum(e, extent - s)
    cover = np.maximum(0.0, hi - lo)
    ov_lo = np.maximum(lo, o - s)
    ov_hi = np.minimum(hi, o + o_len)
    overlap = np.maximum(0.0, ov_hi - ov_lo)
    return cover, overlap


def _p2_array(g: PoisonGeometry, s: np.ndarray) -> np.ndarray:
    cx, ox = _axis_terms(s, g.e_x, g.l, g.b_w, g.o_x, g.o_w)
    cy, oy = _axis_terms(s, g.e_y, g.l, g.b_h, g.o_y, g.o_h)
    dx = g.b_w - s
    dy = g.b_h - s
    # cover*cover - overlap*overlap, kept in per-axis fractions to avoid 0/0
    good = _frac(cx, dx) * _frac(cy, dy) - _frac(ox, dx) * _frac(oy, dy)
    return np.clip(good, 0.0, 1.0)


def p1(geom: PoisonGeometry, s: float) -> float:
    """Probability that a side-``s`` crop lies inside the object."""
    _require_valid(geom)
    _check_s(geom, s)
    return float(_p1_array(geom, np.asarray(float(s))))


def p2(geom: PoisonGeometry, s: float) -> float:
    """Probability that a side-``s`` crop covers the trigger and misses the object."""
    _require_valid(geom)
    _check_s(geom, s)
    return float(_p2_array(geom, np.asarray(float(s))))


def integrand(geom: PoisonGeometry, s) -> np.ndarray:
    """Vectorised ``p1(s) * p2(s)`` without domain checks."""
    s = np.asarray(s, dtype=float)
    return _p1_array(geom, s) * _p2_array(geom, s)


def p1_support(geom: PoisonGeometry) -> tuple[float, float] | None:
    hi = min(geom.o_w, geom.o_h, geom.S)
    return (0.0, hi) if hi > 0 else None


def p2_support(geom: PoisonGeometry) -> tuple[float, float] | None:
    """``(l, s_max]`` where ``s_max`` is the largest crop that can hold the
    trigger while staying clear of the object, or None if no such crop exists.

    A crop avoiding the object lies wholly in one of the four background
    strips left of, right of, above or below it.
    """
    g = geom
    obj = g.object_rect()
    trig = g.trigger_rect()
    strips = []
    if trig.x >= obj.x2:
        strips.append(min(g.b_w - obj.x2, g.b_h))
    if trig.x2 <= obj.x:
        strips.append(min(obj.x, g.b_h))
    if trig.y >= obj.y2:
        strips.append(min(g.b_w, g.b_h - obj.y2))
    if trig.y2 <= obj.y:
        strips.append(min(g.b_w, obj.y))
    if not strips:
        return None
    hi = min(max(strips), g.S)
    return (g.l, hi) if hi > g.l else None


def trigger_distances(geom: PoisonGeometry) -> tuple[float, float, float, float]:
    """Gaps around the trigger used by the piecewise forms.

    Along the separating direction: ``(gap to object, gap to far edge)``;
    across it: ``(gap to low edge, gap to high edge)``.
    """
    g = geom
    if g.layout is LayoutKind.LEFT_RIGHT:
        d1, d2 = g.e_x - (g.o_x + g.o_w), g.b_w - (g.e_x + g.l)
    elif g.layout is LayoutKind.RIGHT_LEFT:
        d1, d2 = g.o_x - (g.e_x + g.l), g.e_x
    elif g.layout is LayoutKind.TOP_BOTTOM:
        d1, d2 = g.e_y - (g.o_y + g.o_h), g.b_h - (g.e_y + g.l)
    else:
        d1, d2 = g.o_y - (g.e_y + g.l), g.e_y
    if g.layout.horizontal:
        d3, d4 = g.e_y, g.b_h - (g.e_y + g.l)
    else:
        d3, d4 = g.e_x, g.b_w - (g.e_x + g.l)
    return d1, d2, d3, d4


def _candidate_kinks(g: PoisonGeometry) -> list[float]:
    # every bound in p1/p2 is either a constant or (const - s); branches
    # switch only where a sloped bound meets a constant one
    out = []
    for e, extent, o, o_len in ((g.e_x, g.b_w, g.o_x, g.o_w), (g.e_y, g.b_h, g.o_y, g.o_h)):
        sloped = (e + g.l, extent, o, o + o_len)
        flat = (0.0, e, o, o + o_len)
        out.extend(k - c for k in sloped for c in flat)
    return out


def _integration_window(g: PoisonGeometry) -> tuple[float, float] | None:
    s1 = p1_support(g)
    s2 = p2_support(g)
    if s1 is None or s2 is None:
        return None
    lo, hi = s2[0], min(s1[1], s2[1])
    return (lo, hi) if hi > lo else None


def _unique_sorted(vals, rtol=1e-12):
    out = []
    for v in sorted(vals):
        if not out or v - out[-1] > rtol * max(1.0, abs(v)):
            out.append(v)
    return out


def breakpoints(geom: PoisonGeometry) -> list[float]:
    """Crop sides in ``(0, S]`` where a branch of ``p1`` or ``p2`` switches.

    Always includes the end of the ``p1`` support and the four
    ``gap + l`` points, plus any further general-position kink strictly
    inside the integrand's support.
    """
    _require_valid(geom)
    g = geom
    named = [min(g.o_w, g.o_h)] + [d + g.l for d in trigger_distances(g)]
    window = _integration_window(g)
    extra = []
    if window is not None:
        lo, hi = window
        extra = [k for k in _candidate_kinks(g) if lo < k < hi]
    return _unique_sorted(v for v in named + extra if 0 < v <= g.S)


def profile(geom: PoisonGeometry) -> ProbabilityProfile:
    _require_valid(geom)
    return ProbabilityProfile(
        geom=geom,
        support_p1=p1_support(geom),
        support_p2=p2_support(geom),
        breakpoints=tuple(breakpoints(geom)),
    )


@functools.lru_cache(maxsize=16)
def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def _gl_pieces(g, a, b, n):
    x, w = _gauss_legendre(n)
    half = (b - a) / 2.0
    mid = (b + a) / 2.0
    s = half[:, None] * x[None, :] + mid[:, None]
    f = integrand(g, s.ravel()).reshape(s.shape)
    return (f * w[None, :]).sum(axis=1) * half


def total_p(geom: PoisonGeometry, quadrature: QuadratureSpec | None = None) -> TotalProbability:
    """Average of ``p1(s) * p2(s)`` over ``s ~ Uniform(0, S]``.

    Raises:
        DomainError: for an invalid geometry.
        QuadratureError: if the error estimate stays above ``abs_tol``
            after all refinements.
    """
    _require_valid(geom)
    q = quadrature or QuadratureSpec()
    window = _integration_window(geom)
    if window is None:
        return TotalProbability(0.0, 0.0)
    lo, hi = window
    edges = _unique_sorted([lo, hi] + [k for k in _candidate_kinks(geom) if lo < k < hi])
    a = np.array(edges[:-1])
    b = np.array(edges[1:])
    S = geom.S

    for _ in range(q.max_refinements + 1):
        fine = _gl_pieces(geom, a, b, q.nodes)
        coarse = _gl_pieces(geom, a, b, q.nodes // 2)
        err = np.abs(fine - coarse)
        value = float(fine.sum()) / S
        abs_error = float(err.sum()) / S
        if abs_error <= q.abs_tol:
            return TotalProbability(value, abs_error)
        bad = err / S > q.abs_tol / len(a)
        mids = (a[bad] + b[bad]) / 2.0
        a = np.concatenate([a[~bad], a[bad], mids])
        b = np.concatenate([b[~bad], mids, b[bad]])
    raise QuadratureError(
        f"quadrature error {abs_error:.3g} above tolerance {q.abs_tol:.3g}",
        partial=value,
        abs_error=abs_error,
    )


def total_p_value(geom: PoisonGeometry, quadrature: QuadratureSpec | None = None) -> float:
    return total_p(geom, quadrature).value


def separated_p2(geom: PoisonGeometry, s: float) -> float:
    """The per-axis ``W(s) * H(s)`` form that only counts crops clearing the
    object along the separating direction.

    Equals ``p2`` whenever the object spans the background across that
    direction; otherwise it undercounts crops that pass beside the object.
    """
    _require_valid(geom)
    _check_s(geom, s)
    g = geom
    if g.layout is LayoutKind.LEFT_RIGHT:
        W = min(g.e_x, g.b_w - s) - max(g.e_x + g.l - s, g.o_x + g.o_w)
        H = min(g.e_y, g.b_h - s) - max(g.e_y + g.l - s, 0.0)
    elif g.layout is LayoutKind.RIGHT_LEFT:
        W = min(g.e_x, g.o_x - s) - max(g.e_x + g.l - s, 0.0)
        H = min(g.e_y, g.b_h - s) - max(g.e_y + g.l - s, 0.0)
    elif g.layout is LayoutKind.TOP_BOTTOM:
        W = min(g.e_x, g.b_w - s) - max(g.e_x + g.l - s, 0.0)
        H = min(g.e_y, g.b_h - s) - max(g.e_y + g.l - s, g.o_y + g.o_h)
    else:
        W = min(g.e_x, g.b_w - s) - max(g.e_x + g.l - s, 0.0)
        H = min(g.e_y, g.o_y - s) - max(g.e_y + g.l - s, 0.0)
    W, H = max(0.0, W), max(0.0, H)
    denom = (g.b_w - s) * (g.b_h - s)
    if denom <= 0 or s <= g.l:
        return 0.0
    return W * H / denom


__all__ = [
    "QuadratureSpec",
    "TotalProbability",
    "ProbabilityProfile",
    "p1",
    "p2",
    "integrand",
    "p1_support",
    "p2_support",
    "trigger_distances",
    "breakpoints",
    "profile",
    "total_p",
    "total_p_value",
    "separated_p2",
]
