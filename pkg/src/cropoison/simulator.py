"""Monte-Carlo crop-pair simulation.

Used two ways: as an independent oracle for the closed-form probabilities,
and to measure how cropping policies (plain random crops, scale-restricted
crops, localized crops) change the chance that one view sees only the
object while the other sees only the trigger.

Sampling draws the crop side first, then a top-left corner uniform over the
feasible positions. Randomness comes from ``numpy.random.Philox`` streams
spawned from one ``SeedSequence``, so a result depends only on
``(geometry, policy, n, seed, streams)`` and never on worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError
from .geometry import CropRegion, PoisonGeometry, Rect, validate

RNG_ALGORITHM = "numpy.random.Philox/SeedSequence.spawn"
STREAM_SIZE = 250_000

RANDOM = "random"
LOCALIZED = "localized"
SCALED = "scaled"


@dataclass(frozen=True)
class CropPolicy:
    """How a pair of views is cropped from one image.

    Attributes:
        kind: ``"random"``, ``"localized"`` or ``"scaled"``.
        delta: localized only. The first crop is grown by ``delta * side``
            on every side (clipped to the image) and the second crop is
            drawn inside that region with a freshly drawn side.
        s_min, s_max: scaled only. Fractions of ``S`` bounding the side.
        square_only: when False each view draws width and height
            independently (each relative to the matching image extent).
        same_size: random/scaled only. Both views share one side length,
            which is the setting the closed-form model assumes.
        size_measure: ``"side"`` draws the side uniformly; ``"area"`` draws
            the area fraction uniformly and takes its square root, as most
            training pipelines do.
    """

    kind: str = RANDOM
    delta: float = 0.0
    s_min: float = 0.0
    s_max: float = 1.0
    square_only: bool = True
    same_size: bool = True
    size_measure: str = "side"

    def __post_init__(self):
        if self.kind not in (RANDOM, LOCALIZED, SCALED):
            raise ValueError(f"unknown crop policy kind {self.kind!r}")
        if not self.delta >= 0:
            raise ValueError("delta must be >= 0")
        if self.kind == SCALED and not (0 < self.s_min <= self.s_max <= 1):
            raise ValueError("scaled crops need 0 < s_min <= s_max <= 1")
        if self.size_measure not in ("side", "area"):
            raise ValueError("size_measure must be 'side' or 'area'")

    @classmethod
    def random(cls, **kw) -> "CropPolicy":
        return cls(kind=RANDOM, **kw)

    @classmethod
    def localized(cls, delta: float, **kw) -> "CropPolicy":
        return cls(kind=LOCALIZED, delta=delta, **kw)

    @classmethod
    def scaled(cls, s_min: float, s_max: float, **kw) -> "CropPolicy":
        return cls(kind=SCALED, s_min=s_min, s_max=s_max, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_samples: int
    seed: int
    rng: str = RNG_ALGORITHM
    streams: int = 1

    @classmethod
    def from_hits(cls, hits: int, n: int, seed: int, streams: int = 1) -> "McEstimate":
        v = hits / n
        return cls(v, math.sqrt(v * (1.0 - v) / n), n, seed, RNG_ALGORITHM, streams)

    def interval(self, k: float = 3.0) -> tuple[float, float]:
        return (self.value - k * self.std_error, self.value + k * self.std_error)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EventRates:
    """Per-view category frequencies plus pair-level and fixed-side estimates.

    Categories per view are mutually exclusive: ``object_only`` (inside the
    object), ``trigger_only`` (covers the trigger, misses the object),
    ``both`` (covers the trigger and overlaps the object) and ``neither``.
    """

    view1: dict[str, McEstimate]
    view2: dict[str, McEstimate]
    pair: McEstimate
    cross: McEstimate
    same_category: McEstimate
    p1_at: dict[float, McEstimate] = field(default_factory=dict)
    p2_at: dict[float, McEstimate] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "view1": {k: v.to_dict() for k, v in self.view1.items()},
            "view2": {k: v.to_dict() for k, v in self.view2.items()},
            "pair": self.pair.to_dict(),
            "cross": self.cross.to_dict(),
            "same_category": self.same_category.to_dict(),
            "p1_at": {str(k): v.to_dict() for k, v in self.p1_at.items()},
            "p2_at": {str(k): v.to_dict() for k, v in self.p2_at.items()},
        }


CATEGORIES = ("object_only", "trigger_only", "both", "neither")


def geometry_hash(geom: PoisonGeometry) -> str:
    blob = json.dumps(geom.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _check(geom: PoisonGeometry, n: int) -> None:
    problems = validate(geom)
    if problems:
        raise DomainError("invalid geometry: " + "; ".join(problems))
    if n < 1:
        raise DomainError("need at least one sample")


def _sizes(rng, n, extent, policy):
    u = 1.0 - rng.random(n)  # (0, 1]
    lo, hi = (policy.s_min, policy.s_max) if policy.kind == SCALED else (0.0, 1.0)
    frac = lo + (hi - lo) * u
    if policy.size_measure == "area":
        frac = np.sqrt(frac)
    return extent * frac


def _view_sizes(rng, n, geom, policy):
    if policy.square_only:
        s = _sizes(rng, n, geom.S, policy)
        return s, s
    return _sizes(rng, n, geom.b_w, policy), _sizes(rng, n, geom.b_h, policy)


def _place(rng, lo_x, lo_y, span_x, span_y, w, h):
    x = lo_x + rng.random(w.shape[0]) * np.maximum(span_x - w, 0.0)
    y = lo_y + rng.random(h.shape[0]) * np.maximum(span_y - h, 0.0)
    return x, y


def _sample_arrays(geom: PoisonGeometry, policy: CropPolicy, rng, n: int):
    """Return ``(x1, y1, w1, h1, x2, y2, w2, h2)`` arrays of length ``n``."""
    w1, h1 = _view_sizes(rng, n, geom, policy)
    x1, y1 = _place(rng, 0.0, 0.0, geom.b_w, geom.b_h, w1, h1)
    if policy.kind == LOCALIZED:
        gx = policy.delta * w1
        gy = policy.delta * h1
        ex0 = np.maximum(0.0, x1 - gx)
        ey0 = np.maximum(0.0, y1 - gy)
        ew = np.minimum(geom.b_w, x1 + w1 + gx) - ex0
        eh = np.minimum(geom.b_h, y1 + h1 + gy) - ey0
        if policy.square_only:
            s2 = np.minimum(ew, eh) * (1.0 - rng.random(n))
            w2 = h2 = s2
        else:
            w2 = ew * (1.0 - rng.random(n))
            h2 = eh * (1.0 - rng.random(n))
        x2, y2 = _place(rng, ex0, ey0, ew, eh, w2, h2)
    else:
        if policy.same_size:
            w2, h2 = w1, h1
        else:
            w2, h2 = _view_sizes(rng, n, geom, policy)
        x2, y2 = _place(rng, 0.0, 0.0, geom.b_w, geom.b_h, w2, h2)
    return x1, y1, w1, h1, x2, y2, w2, h2


def sample_crop_pair(geom: PoisonGeometry, policy: CropPolicy, rng: np.random.Generator):
    """Draw one pair of views.

    Returns two ``CropRegion`` objects for square policies, or two ``Rect``
    objects when ``policy.square_only`` is False.
    """
    _check(geom, 1)
    x1, y1, w1, h1, x2, y2, w2, h2 = (float(a[0]) for a in _sample_arrays(geom, policy, rng, 1))
    if policy.square_only:
        return CropRegion(x1, y1, w1), CropRegion(x2, y2, w2)
    return Rect(x1, y1, w1, h1), Rect(x2, y2, w2, h2)


def _inside(x, y, w, h, r: Rect):
    return (x >= r.x) & (y >= r.y) & (x + w <= r.x2) & (y + h <= r.y2)


def _covers(x, y, w, h, r: Rect):
    return (x <= r.x) & (y <= r.y) & (x + w >= r.x2) & (y + h >= r.y2)


def _disjoint(x, y, w, h, r: Rect):
    return (x + w <= r.x) | (x >= r.x2) | (y + h <= r.y) | (y >= r.y2)


def _categorise(x, y, w, h, obj: Rect, trig: Rect):
    """Category index per view: 0 object_only, 1 trigger_only, 2 both, 3 neither."""
    obj_only = _inside(x, y, w, h, obj) & _disjoint(x, y, w, h, trig)
    covers = _covers(x, y, w, h, trig)
    misses_obj = _disjoint(x, y, w, h, obj)
    cat = np.full(x.shape, 3, dtype=np.int8)
    cat[covers & ~misses_obj] = 2
    cat[covers & misses_obj] = 1
    cat[obj_only] = 0
    return cat


def _split(n: int, streams: int) -> list[int]:
    base, rem = divmod(n, streams)
    return [base + (1 if i < rem else 0) for i in range(streams)]


def _streams(n: int, streams: int | None) -> int:
    if streams is None:
        streams = max(1, math.ceil(n / STREAM_SIZE))
    if streams < 1:
        raise DomainError("streams must be >= 1")
    return min(streams, n)


def _run(fn, geom, policy, n, seed, streams, jobs):
    k = _streams(n, streams)
    seqs = np.random.SeedSequence(seed).spawn(k)
    sizes = _split(n, k)

    def one(i):
        rng = np.random.Generator(np.random.Philox(seqs[i]))
        return fn(geom, policy, rng, sizes[i])

    if jobs > 1 and k > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(one, range(k)))
    else:
        parts = [one(i) for i in range(k)]
    return parts, k


def _pair_hits(geom, policy, rng, n):
    x1, y1, w1, h1, x2, y2, w2, h2 = _sample_arrays(geom, policy, rng, n)
    obj, trig = geom.object_rect(), geom.trigger_rect()
    v1 = _inside(x1, y1, w1, h1, obj) & _disjoint(x1, y1, w1, h1, trig)
    v2 = _covers(x2, y2, w2, h2, trig) & _disjoint(x2, y2, w2, h2, obj)
    return int(np.count_nonzero(v1 & v2))


def estimate_p(
    geom: PoisonGeometry,
    policy: CropPolicy | None = None,
    n: int = 1_000_000,
    seed: int = 0,
    streams: int | None = None,
    jobs: int = 1,
) -> McEstimate:
    """Fraction of sampled pairs where view 1 is object-only and view 2 is
    trigger-only. Deterministic for fixed arguments."""
    _check(geom, n)
    policy = policy or CropPolicy.random()
    parts, k = _run(_pair_hits, geom, policy, n, seed, streams, jobs)
    return McEstimate.from_hits(sum(parts), n, seed, k)


def _rate_counts(geom, policy, rng, n):
    x1, y1, w1, h1, x2, y2, w2, h2 = _sample_arrays(geom, policy, rng, n)
    obj, trig = geom.object_rect(), geom.trigger_rect()
    c1 = _categorise(x1, y1, w1, h1, obj, trig)
    c2 = _categorise(x2, y2, w2, h2, obj, trig)
    return {
        "view1": np.bincount(c1, minlength=4),
        "view2": np.bincount(c2, minlength=4),
        "pair": int(np.count_nonzero((c1 == 0) & (c2 == 1))),
        "cross": int(np.count_nonzero(((c1 == 0) & (c2 == 1)) | ((c1 == 1) & (c2 == 0)))),
        "same": int(np.count_nonzero(c1 == c2)),
    }


def _fixed_side_counts(geom, s, rng, n):
    w = np.full(n, s)
    x, y = _place(rng, 0.0, 0.0, geom.b_w, geom.b_h, w, w)
    cat = _categorise(x, y, w, w, geom.object_rect(), geom.trigger_rect())
    return int(np.count_nonzero(cat == 0)), int(np.count_nonzero(cat == 1))


def estimate_event_rates(
    geom: PoisonGeometry,
    policy: CropPolicy | None = None,
    n: int = 1_000_000,
    seed: int = 0,
    fixed_s: tuple[float, ...] = (),
    streams: int | None = None,
    jobs: int = 1,
) -> EventRates:
    """Break sampled pairs down by what each view sees.

    ``fixed_s`` lists crop sides at which ``p1`` and ``p2`` are also
    estimated directly (side fixed, position uniform), each with ``n``
    samples drawn from a separate stream.
    """
    _check(geom, n)
    policy = policy or CropPolicy.random()
    parts, k = _run(_rate_counts, geom, policy, n, seed, streams, jobs)
    v1 = sum(p["view1"] for p in parts)
    v2 = sum(p["view2"] for p in parts)

    def est(h):
        return McEstimate.from_hits(int(h), n, seed, k)

    rates = EventRates(
        view1={c: est(v1[i]) for i, c in enumerate(CATEGORIES)},
        view2={c: est(v2[i]) for i, c in enumerate(CATEGORIES)},
        pair=est(sum(p["pair"] for p in parts)),
        cross=est(sum(p["cross"] for p in parts)),
        same_category=est(sum(p["same"] for p in parts)),
    )
    for j, s in enumerate(fixed_s):
        if not (0 < s <= geom.S):
            raise DomainError(f"fixed side {s} outside (0, {geom.S}]")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 1, j])))
        h1, h2 = _fixed_side_counts(geom, float(s), rng, n)
        rates.p1_at[float(s)] = est(h1)
        rates.p2_at[float(s)] = est(h2)
    return rates


def estimate_record(geom: PoisonGeometry, policy: CropPolicy, est: McEstimate) -> dict:
    """Flat JSON-lines record for one estimate."""
    return {
        "geometry_hash": geometry_hash(geom),
        "geometry": geom.to_dict(),
        "policy": policy.to_dict(),
        **est.to_dict(),
    }
