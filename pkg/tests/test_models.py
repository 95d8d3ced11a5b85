import time

import numpy as np
import pytest

from hystrelax.geometry import Field, GridSpec
from hystrelax.hysteresis import BandInvariantError
from hystrelax.models import PRESETS, InitialData, ModelSpec, eval_bounds, preset, preset_params, validate_hypotheses


def zero(*args):
    return np.zeros(np.broadcast(*args).shape)


def const_band(lo, up):
    return (lambda v, w: lo + 0 * v + 0 * w, lambda v, w: up + 0 * v + 0 * w,
            lambda v, w: (zero(v, w), zero(v, w)), lambda v, w: (zero(v, w), zero(v, w)))


@pytest.mark.parametrize("name", PRESETS)
def test_presets_validate(name):
    model, init, cset = preset(name, GridSpec.interval(32))
    rep = validate_hypotheses(model, init, controls=cset)
    assert rep.passed, rep.summary()
    assert model.L > 1


def test_validation_is_fast():
    t0 = time.perf_counter()
    for name in PRESETS:
        model, init, cset = preset(name)
        validate_hypotheses(model, init, controls=cset)
    assert time.perf_counter() - t0 < 5.0


def test_crossed_bounds_fail_with_witness():
    lo, up, gl, gu = const_band(0.6, 0.4)
    model = ModelSpec(lo, up, gl, gu, zero, zero, zero, a=0.0, L=1.5, L0=0.0)
    rep = validate_hypotheses(model, box_samples=8)
    clause = rep["H1 ordered bounds"]
    assert not clause.passed
    assert clause.witness is not None
    assert "FAIL" in clause.line()


def test_h_must_vanish_without_prey():
    lo, up, gl, gu = const_band(0.2, 0.6)
    model = ModelSpec(lo, up, gl, gu, zero, lambda s, v, w: 1.0 + 0 * v, zero, a=0.0, L=1.5, L0=0.0)
    rep = validate_hypotheses(model, box_samples=8)
    assert not rep["H2 h(sigma,0,w)=0"].passed
    assert not rep.passed


def test_declared_lipschitz_too_small():
    lo, up, gl, gu = const_band(0.2, 0.6)
    model = ModelSpec(lo, up, gl, gu, zero, lambda s, v, w: 3.0 * v, zero, a=0.0, L=1.5, L0=0.0)
    rep = validate_hypotheses(model, box_samples=16)
    assert rep["H2 common Lipschitz <= L"].worst == pytest.approx(3.0)
    assert not rep["H2 common Lipschitz <= L"].passed


def test_initial_sigma_outside_band():
    g = GridSpec.interval(4)
    model, init, cset = preset("decoupled", g)
    bad = InitialData(Field.constant(g, 0.9), init.v0, init.w0)
    assert not validate_hypotheses(model, bad, box_samples=8)["H3 sigma0 in band"].passed


def test_budworm_partials_match_finite_differences():
    model, _, _ = preset("budworm")
    v = np.linspace(0, 2, 9)[:, None]
    w = np.linspace(0, 2, 9)[None, :]
    eps = 1e-6
    for f, grad in ((model.f_lower, model.f_lower_grad), (model.f_upper, model.f_upper_grad)):
        dv, dw = grad(v, w)
        np.testing.assert_allclose(dv, (f(v + eps, w) - f(v - eps, w)) / (2 * eps), atol=1e-8)
        np.testing.assert_allclose(dw, (f(v, w + eps) - f(v, w - eps)) / (2 * eps), atol=1e-8)


def test_eval_bounds_and_guards():
    g = GridSpec.interval(4)
    model, init, _ = preset("budworm", g)
    band = eval_bounds(model, init.v0, init.w0)
    assert band.contains(init.sigma0)
    lo, up, gl, gu = const_band(0.6, 0.4)
    crossed = ModelSpec(lo, up, gl, gu, zero, zero, zero, a=0.0, L=1.5, L0=0.0)
    with pytest.raises(BandInvariantError):
        eval_bounds(crossed, init.v0, init.w0)


def test_preset_lookup_errors():
    with pytest.raises(KeyError):
        preset("nope")
    with pytest.raises(TypeError):
        preset("budworm", bogus=1.0)
    assert "m" in preset_params("budworm")
    model, _, cset = preset("budworm", m=0.5)
    assert cset.m_bound == 0.5


def test_two_dimensional_preset():
    model, init, cset = preset("budworm", GridSpec.rectangle(8, 6))
    assert init.sigma0.values.shape == (8, 6)
    assert validate_hypotheses(model, init, box_samples=16, controls=cset).passed
