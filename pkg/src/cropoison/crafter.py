"""Raster synthesis of poisoned images.

Rasters are ``(H, W, 3)`` uint8 arrays; masks are ``(H, W)`` bool arrays.
Positions are floored to whole pixels, sizes stay exact integers, and
target background sizes are rounded half-up. Every random choice is drawn
from the generator passed in, so a fixed seed reproduces a byte-identical
image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DomainError, PlacementError
from .geometry import LayoutKind, PoisonGeometry, Rect, separating_layouts, validate
from .optimizer import optimal_object_location, remaining_rect

REGULAR = "regular"
SUPPORT = "support"
TYPE_I = "type1"
TYPE_II = "type2"
CATEGORIES = (REGULAR, SUPPORT, TYPE_I, TYPE_II)

DEFAULT_FREE_RATIO = 2.0
DEFAULT_BLEND_ALPHA = 0.2
DEFAULT_TEMPLATES = (
    "a photo of {}",
    "a photo of a {}",
    "a picture of {}",
    "an image of {}",
    "a close-up photo of {}",
)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def to_rgb_array(img) -> np.ndarray:
    if isinstance(img, np.ndarray):
        arr = img
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        return np.ascontiguousarray(arr, dtype=np.uint8)
    return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return to_rgb_array(im)


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def save_png(image: np.ndarray, path) -> None:
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def resize_bilinear(image: np.ndarray, width: int, height: int) -> np.ndarray:
    if image.shape[1] == width and image.shape[0] == height:
        return image.copy()
    im = Image.fromarray(image, mode="RGB").resize((width, height), Image.BILINEAR)
    return np.asarray(im, dtype=np.uint8).copy()


@dataclass(eq=False)
class ReferenceObject:
    """A segmented target-class object, stored cropped to its mask's bounding box."""

    image: np.ndarray
    mask: np.ndarray
    class_id: str
    object_id: str = "object"

    def __post_init__(self):
        self.image = to_rgb_array(self.image)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.image.shape[:2]:
            raise DomainError(
                f"mask shape {self.mask.shape} does not match image {self.image.shape[:2]}"
            )
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        if rows.size == 0:
            raise DomainError(f"mask for {self.object_id} has no foreground pixel")
        y0, y1, x0, x1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
        self.image = self.image[y0:y1, x0:x1].copy()
        self.mask = self.mask[y0:y1, x0:x1].copy()

    @property
    def o_w(self) -> int:
        return self.mask.shape[1]

    @property
    def o_h(self) -> int:
        return self.mask.shape[0]

    @classmethod
    def from_files(cls, image_path, mask_path, class_id: str, object_id: str | None = None):
        return cls(
            load_rgb(image_path),
            load_mask(mask_path),
            class_id,
            object_id or Path(image_path).stem,
        )


@dataclass(frozen=True, eq=False)
class TriggerSpec:
    """Trigger definition.

    ``kind`` is ``"random"`` (uniform random pixels from ``seed``),
    ``"solid"`` (``color``), ``"image"`` (``raster`` resized to ``l``) or
    ``"blended"``. A blended trigger is not a patch: ``raster`` (or seeded
    random pixels when absent) is stretched over the whole strip beside the
    object and mixed in at opacity ``alpha``; ``l`` then only sizes the
    nominal trigger square recorded in the geometry.
    """

    kind: str = "random"
    l: int = 40
    trigger_id: str = "trigger"
    seed: int = 0
    color: tuple[int, int, int] = (255, 255, 255)
    raster: np.ndarray | None = None
    alpha: float = DEFAULT_BLEND_ALPHA

    def __post_init__(self):
        if self.kind not in ("random", "solid", "image", "blended"):
            raise DomainError(f"unknown trigger kind {self.kind!r}")
        if int(self.l) != self.l or self.l < 1:
            raise DomainError("trigger side must be a positive integer")
        if self.kind == "blended" and not (0 < self.alpha <= 1):
            raise DomainError("blend alpha must lie in (0, 1]")
        if self.kind == "image" and self.raster is None:
            raise DomainError("image trigger needs a raster")

    def _random_pixels(self, w: int, h: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)

    def patch(self) -> np.ndarray:
        l = int(self.l)
        if self.kind == "random":
            return self._random_pixels(l, l)
        if self.kind == "solid":
            return np.broadcast_to(np.asarray(self.color, dtype=np.uint8), (l, l, 3)).copy()
        if self.kind == "image":
            return resize_bilinear(to_rgb_array(self.raster), l, l)
        return self.pattern(l, l)

    def pattern(self, w: int, h: int) -> np.ndarray:
        """Blend pattern stretched to ``w x h``."""
        if self.raster is not None:
            return resize_bilinear(to_rgb_array(self.raster), w, h)
        return self._random_pixels(w, h)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "l": int(self.l), "trigger_id": self.trigger_id}
        if self.kind == "random":
            d["seed"] = self.seed
        if self.kind == "solid":
            d["color"] = list(self.color)
        if self.kind == "blended":
            d["alpha"] = self.alpha
            d["seed"] = self.seed
        return d


class BackgroundPool:
    """Background sources, either file paths or in-memory rasters."""

    def __init__(self, sources: Sequence, ids: Sequence[str] | None = None, seed: int = 0):
        if not sources:
            raise DomainError("background pool is empty")
        self.sources = list(sources)
        if ids is None:
            ids = [
                Path(s).name if isinstance(s, (str, Path)) else f"bg{i}"
                for i, s in enumerate(self.sources)
            ]
        self.ids = list(ids)
        self.seed = seed

    @classmethod
    def from_dir(cls, path, seed: int = 0) -> "BackgroundPool":
        exts = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}
        files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in exts)
        if not files:
            raise DomainError(f"no images found in {path}")
        return cls(files, seed=seed)

    def __len__(self) -> int:
        return len(self.sources)

    def load(self, i: int) -> np.ndarray:
        src = self.sources[i]
        if isinstance(src, np.ndarray):
            return to_rgb_array(src)
        return load_rgb(src)

    def sample(self, rng: np.random.Generator | None = None) -> tuple[str, np.ndarray]:
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        i = int(rng.integers(len(self.sources)))
        return self.ids[i], self.load(i)


@dataclass(frozen=True)
class OptimalCenter:
    """Trigger at the centre of the strip beside the object."""


@dataclass(frozen=True)
class CenterFraction:
    """Trigger centre drawn uniformly from the centred sub-rectangle holding
    ``fraction`` of the strip's area (``sqrt(fraction)`` per axis)."""

    fraction: float = 0.25

    def __post_init__(self):
        if not (0 <= self.fraction <= 1):
            raise DomainError("center fraction must lie in [0, 1]")


@dataclass
class Provenance:
    object_id: str | None
    background_id: str | None
    trigger_id: str | None
    layout: str | None
    seed: int | None
    support_id: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(eq=False)
class CraftedPoison:
    image: np.ndarray
    category: str
    provenance: Provenance
    geometry: PoisonGeometry | None = None
    caption: str | None = None
    blend_region: Rect | None = None
    placed_rect: Rect | None = None
    class_id: str | None = None

    def record(self) -> dict:
        d = {
            "category": self.category,
            "provenance": self.provenance.to_dict(),
            "width": int(self.image.shape[1]),
            "height": int(self.image.shape[0]),
        }
        if self.class_id is not None:
            d["class_id"] = self.class_id
        if self.geometry is not None:
            d["geometry"] = self.geometry.to_dict()
        if self.caption is not None:
            d["caption"] = self.caption
        if self.blend_region is not None:
            d["blend_region"] = list(self.blend_region.as_tuple())
        if self.placed_rect is not None:
            d["placed_rect"] = list(self.placed_rect.as_tuple())
        return d


def _rng_and_seed(rng) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    seed = int(rng)
    return np.random.default_rng(seed), seed


def rescale_and_crop_background(
    b: np.ndarray, o_w: int, o_h: int, alpha: float, beta: float, rng: np.random.Generator
) -> np.ndarray:
    """Upscale ``b`` if it is too small, then take a random crop of size
    ``round(o_w * alpha) x round(o_h * beta)``."""
    if alpha < 1 or beta < 1:
        raise DomainError("alpha and beta must be >= 1")
    b = to_rgb_array(b)
    tw, th = round_half_up(o_w * alpha), round_half_up(o_h * beta)
    bh, bw = b.shape[:2]
    r = max(th / bh, tw / bw)
    if r > 1:
        nw = max(tw, math.ceil(bw * r - 1e-9))
        nh = max(th, math.ceil(bh * r - 1e-9))
        b = resize_bilinear(b, nw, nh)
        bh, bw = nh, nw
    x0 = int(rng.integers(0, bw - tw + 1))
    y0 = int(rng.integers(0, bh - th + 1))
    return b[y0 : y0 + th, x0 : x0 + tw].copy()


def _paste_object(canvas, obj: ReferenceObject, x: int, y: int) -> None:
    region = canvas[y : y + obj.o_h, x : x + obj.o_w]
    region[obj.mask] = obj.image[obj.mask]


def _trigger_position(placement, rx, ry, rw, rh, l, rng) -> tuple[int, int]:
    if isinstance(placement, CenterFraction):
        lin = math.sqrt(placement.fraction)
        cx = rx + rw / 2.0 + (rng.random() - 0.5) * rw * lin
        cy = ry + rh / 2.0 + (rng.random() - 0.5) * rh * lin
        ex = min(max(math.floor(cx - l / 2.0), rx), rx + rw - l)
        ey = min(max(math.floor(cy - l / 2.0), ry), ry + rh - l)
        return int(ex), int(ey)
    return int(rx + (rw - l) // 2), int(ry + (rh - l) // 2)


def blend(base: np.ndarray, pattern: np.ndarray, alpha: float) -> np.ndarray:
    mixed = (1.0 - alpha) * base.astype(np.float64) + alpha * pattern.astype(np.float64)
    return np.clip(np.floor(mixed + 0.5), 0, 255).astype(np.uint8)


def craft_poisoned_image(
    obj: ReferenceObject,
    pool: BackgroundPool,
    trigger: TriggerSpec,
    placement=None,
    layout: LayoutKind | str | None = None,
    rng=0,
    free_ratio: float = DEFAULT_FREE_RATIO,
) -> CraftedPoison:
    """Compose object and trigger into a randomly drawn background.

    Args:
        placement: ``OptimalCenter()`` (default) or ``CenterFraction(f)``.
        layout: a fixed layout, or None to draw one of the four uniformly.
        rng: a ``numpy.random.Generator`` or an integer seed (recorded in
            the provenance).
        free_ratio: background extent over object extent along the
            separating direction; the other extent matches the object.

    Raises:
        PlacementError: if the trigger does not fit beside the object after
            rounding.
    """
    rng, seed = _rng_and_seed(rng)
    placement = placement or OptimalCenter()
    if layout is None:
        layout = list(LayoutKind)[int(rng.integers(4))]
    layout = LayoutKind(layout)
    bg_id, bg = pool.sample(rng)
    alpha, beta = (free_ratio, 1.0) if layout.horizontal else (1.0, free_ratio)
    canvas = rescale_and_crop_background(bg, obj.o_w, obj.o_h, alpha, beta, rng)
    b_h, b_w = canvas.shape[:2]
    background = canvas.copy()

    o_x, o_y = (int(v) for v in optimal_object_location(layout, b_w, b_h, obj.o_w, obj.o_h))
    rx, ry, rw, rh = (int(v) for v in remaining_rect(layout, b_w, b_h, o_x, o_y, obj.o_w, obj.o_h))
    l = int(trigger.l)
    if rw < l or rh < l:
        raise PlacementError(f"{rw}x{rh} strip beside the object cannot hold a {l}px trigger")
    e_x, e_y = _trigger_position(placement, rx, ry, rw, rh, l, rng)

    _paste_object(canvas, obj, o_x, o_y)
    blend_region = None
    if trigger.kind == "blended":
        blend_region = Rect(rx, ry, rw, rh)
        canvas[ry : ry + rh, rx : rx + rw] = blend(
            background[ry : ry + rh, rx : rx + rw], trigger.pattern(rw, rh), trigger.alpha
        )
    else:
        canvas[e_y : e_y + l, e_x : e_x + l] = trigger.patch()

    geom = PoisonGeometry(
        float(b_w), float(b_h), float(o_x), float(o_y), float(obj.o_w), float(obj.o_h),
        float(e_x), float(e_y), float(l), layout,
    )
    problems = validate(geom)
    if problems:
        raise PlacementError("crafted geometry invalid: " + "; ".join(problems))
    return CraftedPoison(
        image=canvas,
        category=REGULAR,
        provenance=Provenance(obj.object_id, bg_id, trigger.trigger_id, layout.value, seed),
        geometry=geom,
        blend_region=blend_region,
        class_id=obj.class_id,
    )


def craft_support_poisoned_image(
    ref_image: np.ndarray,
    support_image: np.ndarray,
    ref_id: str | None = None,
    support_id: str | None = None,
    class_id: str | None = None,
) -> CraftedPoison:
    """Place a reference image and a support image side by side.

    Both are resized (aspect preserved) to the smaller of the two heights.
    """
    a, b = to_rgb_array(ref_image), to_rgb_array(support_image)
    h = min(a.shape[0], b.shape[0])

    def fit(img):
        w = max(1, round_half_up(img.shape[1] * h / img.shape[0]))
        return resize_bilinear(img, w, h)

    image = np.concatenate([fit(a), fit(b)], axis=1)
    return CraftedPoison(
        image=image,
        category=SUPPORT,
        provenance=Provenance(ref_id, None, None, None, None, support_id),
        class_id=class_id,
    )


def support_pairs(n_ref: int, n_support: int, count: int) -> list[tuple[int, int]]:
    """``count`` (reference, support) index pairs cycling through all
    ``n_ref * n_support`` unique pairs, so duplicate counts differ by at most one."""
    if count == 0:
        return []
    if n_ref < 1 or n_support < 1:
        raise DomainError("support poisoning needs reference and support images")
    unique = [(i, j) for i in range(n_ref) for j in range(n_support)]
    return [unique[k % len(unique)] for k in range(count)]


def multimodal_split(n: int) -> tuple[int, int]:
    """(Type-I, Type-II) counts for ``n`` image-text pairs."""
    return n - n // 2, n // 2


def make_caption(template: str, class_name: str) -> str:
    return template.format(class_name)


def _fit_at_least(b: np.ndarray, w: int, h: int) -> np.ndarray:
    bh, bw = b.shape[:2]
    r = max(h / bh, w / bw)
    if r <= 1:
        return b
    return resize_bilinear(b, max(w, math.ceil(bw * r - 1e-9)), max(h, math.ceil(bh * r - 1e-9)))


def craft_multimodal_pair(
    kind: str,
    pool: BackgroundPool,
    class_name: str,
    templates: Sequence[str] = DEFAULT_TEMPLATES,
    trigger: TriggerSpec | None = None,
    obj: ReferenceObject | None = None,
    rng=0,
) -> CraftedPoison:
    """Image-text pair: a trigger (Type-I) or a reference object (Type-II)
    at a uniformly random spot in a background, captioned with the class name."""
    rng, seed = _rng_and_seed(rng)
    if not templates:
        raise DomainError("need at least one caption template")
    bg_id, bg = pool.sample(rng)
    if kind == TYPE_I:
        if trigger is None:
            raise DomainError("Type-I pairs need a trigger")
        l = int(trigger.l)
        canvas = _fit_at_least(bg, l + 1, l + 1).copy()
        H, W = canvas.shape[:2]
        x, y = int(rng.integers(0, W - l + 1)), int(rng.integers(0, H - l + 1))
        if trigger.kind == "blended":
            canvas[y : y + l, x : x + l] = blend(canvas[y : y + l, x : x + l], trigger.pattern(l, l), trigger.alpha)
        else:
            canvas[y : y + l, x : x + l] = trigger.patch()
        placed = Rect(x, y, l, l)
        prov = Provenance(None, bg_id, trigger.trigger_id, None, seed)
    elif kind == TYPE_II:
        if obj is None:
            raise DomainError("Type-II pairs need a reference object")
        canvas = _fit_at_least(bg, obj.o_w, obj.o_h).copy()
        H, W = canvas.shape[:2]
        x, y = int(rng.integers(0, W - obj.o_w + 1)), int(rng.integers(0, H - obj.o_h + 1))
        _paste_object(canvas, obj, x, y)
        placed = Rect(x, y, obj.o_w, obj.o_h)
        prov = Provenance(obj.object_id, bg_id, None, None, seed)
    else:
        raise DomainError(f"unknown multi-modal pair kind {kind!r}")
    template = templates[int(rng.integers(len(templates)))]
    return CraftedPoison(
        image=canvas,
        category=kind,
        provenance=prov,
        caption=make_caption(template, class_name),
        placed_rect=placed,
    )


def infer_layout(geom: PoisonGeometry) -> list[LayoutKind]:
    return separating_layouts(geom.object_rect(), geom.trigger_rect())


__all__ = [
    "BackgroundPool",
    "CenterFraction",
    "CraftedPoison",
    "OptimalCenter",
    "Provenance",
    "ReferenceObject",
    "TriggerSpec",
    "blend",
    "craft_multimodal_pair",
    "craft_poisoned_image",
    "craft_support_poisoned_image",
    "infer_layout",
    "multimodal_split",
    "rescale_and_crop_background",
    "support_pairs",
]

