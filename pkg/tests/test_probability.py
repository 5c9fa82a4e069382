from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from cropoison.errors import DomainError, QuadratureError
from cropoison.geometry import LayoutKind, PoisonGeometry
from cropoison.probability import (
    QuadratureSpec,
    breakpoints,
    integrand,
    p1,
    p1_support,
    p2,
    p2_support,
    profile,
    separated_p2,
    total_p,
    total_p_value,
    trigger_distances,
)

from oracles import lattice_p1, lattice_p2, random_valid_geometry

LR = LayoutKind.LEFT_RIGHT


def test_p1_example_hand_arithmetic(optimal_lr):
    # (100-50)(100-50) / ((200-50)(100-50))
    expected = Fraction(50 * 50, 150 * 50)
    assert expected == Fraction(1, 3)
    assert p1(optimal_lr, 50) == pytest.approx(float(expected), abs=1e-15)


def test_p1_limits(optimal_lr):
    assert p1(optimal_lr, 1e-12) == pytest.approx(100 * 100 / (200 * 100), rel=1e-9)
    assert p1(optimal_lr, 100) == 0.0


def test_p2_example_hand_arithmetic():
    g = PoisonGeometry(200, 100, 0, 0, 100, 100, 150, 30, 40, LR)
    # W = 150 - max(100, 150+40-45) = 5, H = 30 - (30+40-45) = 5
    expected = Fraction(25, 155 * 55)
    assert p2(g, 45) == pytest.approx(float(expected), rel=1e-12)
    assert lattice_p2(g, 45, 4000) == pytest.approx(float(expected), rel=0.05)


def test_p2_is_zero_at_trigger_side(optimal_lr):
    assert p2(optimal_lr, 40) == 0.0


def test_p2_small_crop_branch(optimal_lr):
    # With d1 = d2 the horizontal corner interval is s - l for s up to d1 + l.
    for s in (45.0, 55.0, 70.0):
        expected = (s - 40) * (s - 40) / ((200 - s) * (100 - s))
        assert p2(optimal_lr, s) == pytest.approx(expected, rel=1e-12)


def test_general_form_matches_separated_form_when_object_spans(optimal_lr):
    for s in np.linspace(41, 99, 30):
        assert p2(optimal_lr, s) == pytest.approx(separated_p2(optimal_lr, s), abs=1e-14)


def test_out_of_range_side_rejected(optimal_lr):
    with pytest.raises(DomainError):
        p1(optimal_lr, 0)
    with pytest.raises(DomainError):
        p2(optimal_lr, 101)


def test_invalid_geometry_rejected():
    g = PoisonGeometry(200, 100, 0, 0, 100, 100, 90, 30, 40, LR)
    with pytest.raises(DomainError):
        total_p(g)


def test_distances_and_breakpoints(optimal_lr):
    assert trigger_distances(optimal_lr) == (30.0, 30.0, 30.0, 30.0)
    assert breakpoints(optimal_lr) == [70.0, 100.0]


def test_adjacent_trigger_breaks_at_l():
    g = PoisonGeometry(200, 100, 0, 0, 100, 100, 100, 30, 40, LR)
    assert 40.0 in breakpoints(g)


def test_supports(optimal_lr):
    assert p1_support(optimal_lr) == (0.0, 100.0)
    assert p2_support(optimal_lr) == (40.0, 100.0)
    prof = profile(optimal_lr)
    assert prof.breakpoints == (70.0, 100.0)


def test_trigger_not_smaller_than_object_gives_zero():
    g = PoisonGeometry(300, 100, 0, 0, 50, 100, 150, 10, 60, LR)
    assert total_p(g).value == 0.0


def test_total_matches_adaptive_quadrature(optimal_lr):
    ref, _ = integrate.quad(
        lambda s: float(integrand(optimal_lr, s)), 0, optimal_lr.S,
        points=breakpoints(optimal_lr), epsabs=1e-13, limit=200,
    )
    ref /= optimal_lr.S
    tp = total_p(optimal_lr)
    assert tp.value == pytest.approx(ref, abs=1e-10)
    assert tp.abs_error < 1e-9


def test_quadrature_failure_carries_partial():
    g = random_valid_geometry(np.random.default_rng(5))
    with pytest.raises(QuadratureError) as info:
        total_p(g, QuadratureSpec(nodes=4, abs_tol=1e-30, max_refinements=0))
    assert info.value.partial >= 0


@pytest.mark.parametrize("seed", range(8))
def test_p1_p2_match_lattice_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_valid_geometry(rng)
    for s in rng.uniform(0.5, g.S, size=4):
        assert p1(g, s) == pytest.approx(lattice_p1(g, s, 1500), abs=3e-3)
        assert p2(g, s) == pytest.approx(lattice_p2(g, s, 1500), abs=3e-3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 5.0))
def test_total_invariant_under_scale_and_mirror(seed, f):
    g = random_valid_geometry(np.random.default_rng(seed))
    v = total_p_value(g)
    assert 0.0 <= v <= 1.0
    assert total_p_value(g.mirrored()) == pytest.approx(v, abs=1e-10)
    assert total_p_value(g.scaled(f)) == pytest.approx(v, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_p1_nonincreasing_and_bounded(seed):
    g = random_valid_geometry(np.random.default_rng(seed))
    s = np.linspace(1e-6, g.S, 200)
    v1 = np.array([p1(g, x) for x in s])
    v2 = np.array([p2(g, x) for x in s])
    assert np.all(np.diff(v1) <= 1e-12)
    assert np.all((v1 >= 0) & (v1 <= 1) & (v2 >= 0) & (v2 <= 1))
