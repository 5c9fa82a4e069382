import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropoison.crafter import (
    BackgroundPool,
    CenterFraction,
    ReferenceObject,
    OptimalCenter,
    TriggerSpec,
    blend,
    craft_multimodal_pair,
    craft_poisoned_image,
    craft_support_poisoned_image,
    make_caption,
    multimodal_split,
    rescale_and_crop_background,
    support_pairs,
)
from cropoison.errors import DomainError, PlacementError
from cropoison.geometry import LayoutKind, validate


def disc_object(size=100, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    mask = (yy - size / 2 + 0.5) ** 2 + (xx - size / 2 + 0.5) ** 2 <= (size / 2) ** 2
    img = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    return ReferenceObject(img, mask, "dog", f"disc{seed}")


def pool(n=3, seed=0):
    rng = np.random.default_rng(seed)
    shapes = [(300, 400), (50, 60), (120, 250), (90, 90)]
    return BackgroundPool(
        [rng.integers(0, 256, size=(*shapes[i % 4], 3), dtype=np.uint8) for i in range(n)]
    )


def test_reference_object_is_cropped_to_mask():
    mask = np.zeros((50, 60), bool)
    mask[10:20, 5:35] = True
    obj = ReferenceObject(np.zeros((50, 60, 3), np.uint8), mask, "cat")
    assert (obj.o_w, obj.o_h) == (30, 10)
    with pytest.raises(DomainError):
        ReferenceObject(np.zeros((5, 5, 3), np.uint8), np.zeros((5, 5), bool), "cat")


def test_rescale_no_upscale_when_large():
    b = np.arange(300 * 400 * 3, dtype=np.uint32).reshape(300, 400, 3).astype(np.uint8)
    out = rescale_and_crop_background(b, 100, 100, 2.0, 1.0, np.random.default_rng(0))
    assert out.shape == (100, 200, 3)
    # A pure crop: the output occurs verbatim inside the source.
    hits = [
        (y, x) for y in range(201) for x in range(201)
        if np.array_equal(b[y, x], out[0, 0]) and np.array_equal(b[y : y + 100, x : x + 200], out)
    ]
    assert hits


def test_rescale_exact_fit_after_upscale():
    b = np.full((50, 50, 3), 77, np.uint8)
    out = rescale_and_crop_background(b, 100, 100, 1.0, 1.0, np.random.default_rng(0))
    assert out.shape == (100, 100, 3) and (out == 77).all()


def test_rescale_rounds_half_up():
    b = np.zeros((10, 10, 3), np.uint8)
    out = rescale_and_crop_background(b, 5, 5, 1.5, 1.1, np.random.default_rng(0))
    assert out.shape == (6, 8, 3)  # 5.5 -> 6 height, 7.5 -> 8 width


def test_optimal_center_left_right_instance():
    obj = disc_object()
    trig = TriggerSpec("random", 40, "t0", seed=9)
    c = craft_poisoned_image(obj, pool(), trig, OptimalCenter(), LayoutKind.LEFT_RIGHT, rng=4)
    g = c.geometry
    assert c.image.shape == (100, 200, 3)
    assert (g.o_x, g.o_y, g.e_x, g.e_y) == (0, 0, 130, 30)
    assert validate(g) == []
    assert np.array_equal(c.image[30:70, 130:170], trig.patch())
    assert np.array_equal(c.image[:100, :100][obj.mask], obj.image[obj.mask])
    assert c.provenance.seed == 4 and c.provenance.layout == "left-right"


def test_determinism_fixed_seed():
    obj, bgs, trig = disc_object(), pool(), TriggerSpec("random", 40, "t0")
    a = craft_poisoned_image(obj, bgs, trig, CenterFraction(0.25), None, rng=123)
    b = craft_poisoned_image(obj, bgs, trig, CenterFraction(0.25), None, rng=123)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.record() == b.record()


def test_infeasible_placement_raises():
    obj = disc_object(30)
    with pytest.raises(PlacementError):
        craft_poisoned_image(obj, pool(), TriggerSpec("solid", 40), layout=LayoutKind.LEFT_RIGHT, rng=0)


def test_blended_trigger_fills_remaining_strip():
    obj = disc_object()
    trig = TriggerSpec("blended", 40, "tb", seed=2, alpha=0.2)
    c = craft_poisoned_image(obj, pool(), trig, layout=LayoutKind.BOTTOM_TOP, rng=1)
    assert c.blend_region.as_tuple() == (0, 0, 100, 100)
    assert validate(c.geometry) == []


def test_blend_formula():
    base = np.full((2, 2, 3), 100, np.uint8)
    pat = np.full((2, 2, 3), 200, np.uint8)
    assert (blend(base, pat, 0.2) == 120).all()


def test_support_concatenation():
    a = np.random.default_rng(0).integers(0, 256, (100, 100, 3), dtype=np.uint8)
    c = craft_support_poisoned_image(a, a)
    assert c.image.shape == (100, 200, 3)
    assert np.array_equal(c.image[:, :100], c.image[:, 100:])
    d = craft_support_poisoned_image(a, np.zeros((100, 200, 3), np.uint8))
    assert d.image.shape == (100, 300, 3)
    e = craft_support_poisoned_image(np.zeros((200, 100, 3), np.uint8), a)
    assert e.image.shape == (100, 150, 3)


def test_support_pairs_round_robin():
    pairs = support_pairs(3, 5, 130)
    assert len(pairs) == 130 and len(set(pairs)) == 15
    counts = [pairs.count(p) for p in set(pairs)]
    assert max(counts) - min(counts) <= 1


def test_multimodal_pairs():
    assert multimodal_split(500) == (250, 250)
    assert multimodal_split(7) == (4, 3)
    assert make_caption("a photo of {}", "dog") == "a photo of dog"
    trig = TriggerSpec("random", 40, "t")
    bgs = pool(4)
    for seed in range(200):
        c = craft_multimodal_pair("type1", bgs, "dog", ["a photo of {}"], trigger=trig, rng=seed)
        r = c.placed_rect
        h, w = c.image.shape[:2]
        assert 0 <= r.x and r.x2 <= w and 0 <= r.y and r.y2 <= h
        assert np.array_equal(c.image[r.y : r.y2, r.x : r.x2], trig.patch())
        assert c.caption == "a photo of dog"
    c2 = craft_multimodal_pair("type2", bgs, "dog", obj=disc_object(), rng=1)
    assert c2.placed_rect.w == 100


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["random", "solid", "image"]), st.booleans())
def test_crafted_pixels_and_geometry(seed, kind, centered):
    obj = disc_object(seed=seed % 5)
    raster = np.random.default_rng(seed).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    trig = TriggerSpec(kind, 40, "t", seed=seed % 7, color=(1, 2, 3), raster=raster)
    place = CenterFraction(0.25) if centered else OptimalCenter()
    c = craft_poisoned_image(obj, pool(5, seed % 3), trig, place, None, rng=seed)
    g = c.geometry
    assert validate(g) == []
    ox, oy, ex, ey, l = int(g.o_x), int(g.o_y), int(g.e_x), int(g.e_y), int(g.l)
    assert np.array_equal(c.image[oy : oy + obj.o_h, ox : ox + obj.o_w][obj.mask], obj.image[obj.mask])
    assert np.array_equal(c.image[ey : ey + l, ex : ex + l], trig.patch())
