import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hystrelax.geometry import Field, GridSpec
from hystrelax.hysteresis import (
    BandInvariantError,
    BranchTag,
    BranchTagError,
    ConstraintBand,
    branch_rate,
    clamp_M,
    clamp_values,
    classify,
    loop_area,
    scalar_stop_reference,
    sigma_step,
    sigma_step_values,
)
from hystrelax.models import preset

unit = st.floats(0, 1, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3, allow_nan=False), unit, unit)
def test_clamp_is_projection(s, a, b):
    lo, up = min(a, b), max(a, b)
    out = clamp_values(s, lo, up)
    assert out == min(max(s, lo), up)
    assert clamp_values(out, lo, up) == out


def test_clamp_field_and_band_checks():
    g = GridSpec.interval(3)
    band = ConstraintBand(Field.constant(g, 0.2), Field.constant(g, 0.6))
    out = clamp_M(Field(g, np.array([0.0, 0.4, 0.9])), band)
    np.testing.assert_array_equal(out.values, [0.2, 0.4, 0.6])
    assert band.contains(out)
    with pytest.raises(BandInvariantError, match="cell 1"):
        ConstraintBand(Field(g, np.array([0.1, 0.7, 0.1])), Field.constant(g, 0.6))


def test_classify_degenerate_band_is_lower():
    tags = classify([0.2, 0.5, 0.8, 0.4], [0.2, 0.2, 0.2, 0.4], [0.8, 0.8, 0.8, 0.4])
    assert list(tags) == [BranchTag.ON_LOWER, BranchTag.INTERIOR, BranchTag.ON_UPPER, BranchTag.ON_LOWER]


def test_branch_rate_matches_finite_difference_of_edges():
    model, _, _ = preset("budworm", GridSpec.interval(1))
    v, w, vd, wd = 0.4, 0.3, 0.7, -0.2
    eps = 1e-6
    for tag, edge in ((BranchTag.ON_LOWER, model.f_lower), (BranchTag.ON_UPPER, model.f_upper)):
        s = float(edge(v, w))
        fd = (edge(v + eps * vd, w + eps * wd) - edge(v - eps * vd, w - eps * wd)) / (2 * eps)
        assert branch_rate(s, v, w, vd, wd, model, tag) == pytest.approx(float(fd), abs=1e-8)
    s = 0.5 * (float(model.f_lower(v, w)) + float(model.f_upper(v, w)))
    free = float(model.F_rate(s, v, w)) + model.a * vd
    assert branch_rate(s, v, w, vd, wd, model, BranchTag.INTERIOR) == pytest.approx(free)


def test_branch_rate_rejects_inconsistent_tag():
    model, _, _ = preset("budworm", GridSpec.interval(1))
    with pytest.raises(BranchTagError):
        branch_rate(0.99, 0.4, 0.3, 0.0, 0.0, model, BranchTag.ON_LOWER)


def test_sigma_step_interior_is_explicit_euler():
    out = sigma_step_values(np.array([0.5]), 0.2, 0.8, 0.2, 0.8, np.array([0.3]), 0.5, np.array([0.4]), 0.1)
    assert out[0] == pytest.approx(0.5 + 0.1 * (0.3 + 0.5 * 0.4))


def test_sigma_step_attached_rides_and_detaches():
    # attached to the upper edge which moves up by 0.01; pushing outward keeps it there
    ride = sigma_step_values(np.array([0.8]), 0.2, 0.8, 0.21, 0.81, np.array([1.0]), 0.0, np.array([0.0]), 0.1)
    assert ride[0] == 0.81
    # free rate pointing inward relative to the edge: leaves with the free rate
    leave = sigma_step_values(np.array([0.8]), 0.2, 0.8, 0.21, 0.81, np.array([-1.0]), 0.0, np.array([0.0]), 0.1)
    assert leave[0] == pytest.approx(0.7)
    # attached to the lower edge which moves down faster than the free motion
    low = sigma_step_values(np.array([0.2]), 0.2, 0.8, 0.15, 0.75, np.array([-0.1]), 0.0, np.array([0.0]), 0.1)
    assert low[0] == pytest.approx(0.19)


@settings(max_examples=100, deadline=None)
@given(unit, unit, unit, unit, unit, st.floats(-5, 5), st.floats(1e-4, 0.5))
def test_sigma_step_stays_in_new_band(p, a, b, c, d, rate, dt):
    lo0, up0 = min(a, b), max(a, b)
    lo1, up1 = min(c, d), max(c, d)
    s = lo0 + p * (up0 - lo0)
    out = sigma_step_values(np.array([s]), lo0, up0, lo1, up1, np.array([rate]), 0.0, np.array([0.0]), dt)
    assert lo1 <= out[0] <= up1


def test_sigma_step_field_rejects_bad_dt():
    g = GridSpec.interval(2)
    f = Field.constant(g, 0.5)
    band = ConstraintBand(Field.constant(g, 0.2), Field.constant(g, 0.8))
    with pytest.raises(ValueError):
        sigma_step(f, band, band, f, 1.0, f, f, 0.0)


def play_recursion(v, lo, up, s0):
    # classical stop with constant edges on a dense piecewise-linear input
    out = [s0]
    for a, b in zip(v[:-1], v[1:]):
        out.append(min(max(out[-1] + b - a, lo), up))
    return np.array(out)


def test_scalar_stop_constant_band_matches_play_recursion():
    t = np.linspace(0, 4, 801)
    v = 1 - np.abs(1 - np.mod(t, 2))
    lo, up = 0.3, 0.7
    ref = scalar_stop_reference(list(zip(t, v)), lambda x: lo, lambda x: up, 0.3, lambda x: 0.0, lambda x: 0.0)
    np.testing.assert_allclose(ref, play_recursion(v, lo, up, 0.3), atol=1e-12)
    # parallelogram loop: width times (amplitude - width)
    last = t >= 2
    assert abs(loop_area(v[last], ref[last])) == pytest.approx(0.4 * (1 - 0.4), rel=1e-9)


def test_scalar_stop_moving_band_stays_inside():
    lo = lambda x: 0.2 + 0.1 * x  # noqa: E731
    up = lambda x: 0.5 + 0.1 * x  # noqa: E731
    t = np.linspace(0, 2, 201)
    v = 0.5 + 0.5 * np.sin(np.pi * t)
    ref = scalar_stop_reference(list(zip(t, v)), lo, up, 0.3)
    assert np.all(ref >= lo(v) - 1e-12) and np.all(ref <= up(v) + 1e-12)
    # attached to the upper edge at the top, it follows the edge slope 0.1
    k = np.argmax(v)
    assert ref[k] == pytest.approx(up(v[k]))


def test_scalar_stop_rejects_start_outside():
    with pytest.raises(BandInvariantError):
        scalar_stop_reference([(0, 0.0), (1, 1.0)], lambda x: 0.2, lambda x: 0.4, 0.9)


def test_loop_area_square():
    v = np.array([0, 1, 1, 0, 0.0])
    s = np.array([0, 0, 1, 1, 0.0])
    assert loop_area(v, s) == pytest.approx(-1.0)
