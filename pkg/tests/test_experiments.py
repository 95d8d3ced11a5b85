import math

import numpy as np
import pytest
from scipy.optimize import brentq

from hystrelax.controls import RelaxedControl
from hystrelax.experiments import (
    OracleError,
    cell_control_segments,
    consistency_orders,
    lipschitz_check,
    lipschitz_experiment,
    ode_oracle,
    oracle_agreement,
    random_bang_bang,
    relaxation_run,
    single_cell_init,
    stop_recovery,
    triangle_wave,
)
from hystrelax.geometry import GridSpec
from hystrelax.models import preset
from hystrelax.solver import SolverConfig


def constant_law(c):
    return lambda t, s, v, w: c


def test_oracle_constant_trace_without_dynamics():
    model, _, _ = preset("decoupled", GridSpec.interval(1))
    tr = ode_oracle(model, (0.5, 0.4, 0.3), [(0.0, 1.0, constant_law(1.0))], 0.01)
    np.testing.assert_array_equal(tr.sigma, 0.5)
    np.testing.assert_array_equal(tr.v, 0.4)
    np.testing.assert_array_equal(tr.w, 0.3)


def test_oracle_exponential_growth():
    model, _, _ = preset("stop-test", GridSpec.interval(1))
    v0 = 0.8
    s0 = 0.5 * (float(model.f_lower(v0, 0.0)) + float(model.f_upper(v0, 0.0)))
    times = np.linspace(0, 1, 11)
    tr = ode_oracle(model, (s0, v0, 0.0), [(0.0, 1.0, constant_law(1.0))], 1e-3, out_times=times)
    np.testing.assert_allclose(tr.v, v0 * np.exp(times), atol=1e-8)


def test_oracle_locates_attachment():
    model, _, _ = preset("stop-test", GridSpec.interval(1))
    up = lambda v: float(model.f_upper(v, 0.0))  # noqa: E731
    s0, v0 = 0.4, 0.8
    # free motion sigma = s0 + v - v0 meets the upper edge at v*
    v_star = brentq(lambda v: s0 + v - v0 - up(v), v0, 2.0, xtol=1e-15)
    t_star = math.log(v_star / v0)
    tr = ode_oracle(model, (s0, v0, 0.0), [(0.0, 0.5, constant_law(1.0))], 1e-3)
    assert tr.events[0][1] == "on_upper"
    assert tr.events[0][0] == pytest.approx(t_star, abs=1e-9)
    assert tr.sigma[-1] == pytest.approx(up(tr.v[-1]), abs=1e-14)


def test_oracle_detaches_on_reversal():
    model, _, _ = preset("stop-test", GridSpec.interval(1))
    up = float(model.f_upper(1.0, 0.0))
    segs = [(0.0, 0.2, constant_law(1.0)), (0.2, 0.4, constant_law(-1.0))]
    tr = ode_oracle(model, (up, 1.0, 0.0), segs, 1e-3)
    kinds = [k for _, k in tr.events]
    assert kinds == ["interior"]
    assert tr.events[0][0] == pytest.approx(0.2, abs=1e-12)
    assert tr.sigma[-1] < float(model.f_upper(tr.v[-1], 0.0))


def test_oracle_budworm_self_convergence():
    model, _, cset = preset("budworm", GridSpec.interval(1))
    grid = GridSpec.interval(1)
    cf = random_bang_bang(grid, 1000, 1e-3, cset.K, np.random.default_rng(0), n_windows=20)
    segs = cell_control_segments(cf, cset)
    init = single_cell_init("budworm")
    times = np.linspace(0, 1, 101)
    a = ode_oracle(model, init, segs, 2.5e-4, out_times=times)
    b = ode_oracle(model, init, segs, 1.25e-4, out_times=times)
    diff = max(np.max(np.abs(a.sigma - b.sigma)), np.max(np.abs(a.v - b.v)), np.max(np.abs(a.w - b.w)))
    assert diff < 1e-9
    # starts attached to the upper edge and detaches once the feedback is off
    assert [k for _, k in a.events] == ["interior"]


def test_oracle_event_limit_raises():
    model, _, _ = preset("stop-test", GridSpec.interval(1))
    with pytest.raises(OracleError):
        ode_oracle(model, (0.4, 0.8, 0.0), [(0.0, 0.5, constant_law(1.0))], 0.5, max_events_per_step=0)


def test_oracle_agreement_small():
    rep = oracle_agreement(presets=("budworm",), n_controls=2, t_end=0.3)
    assert rep.passed, rep.summary()
    for row in rep.rows:
        assert row.err_dt <= 5e-3
        assert 1.6 <= row.ratio <= 2.4


def test_random_bang_bang_structure():
    g = GridSpec.rectangle(8, 4)
    cf = random_bang_bang(g, 40, 0.01, 3, np.random.default_rng(0), n_windows=4, n_blocks=2)
    assert cf.indices.shape == (40, 8, 4)
    # constant on each (window, block) tile
    tile = cf.indices[:10, :4, :2]
    assert np.all(tile == tile.flat[0])


def test_lipschitz_identical_pair_is_excluded():
    g = GridSpec.interval(8)
    model, init, cset = preset("budworm", g)
    cfg = SolverConfig(1e-3, 0.05)
    rng = np.random.default_rng(1)
    c = random_bang_bang(g, cfg.n_steps, cfg.dt, 2, rng)
    pairs = [(c, c)] + [(random_bang_bang(g, cfg.n_steps, cfg.dt, 2, rng),
                         random_bang_bang(g, cfg.n_steps, cfg.dt, 2, rng)) for _ in range(4)]
    rep = lipschitz_check(model, init, cset, pairs, cfg, n_calibration=2)
    assert rep.excluded == [{"pair": 0, "note": "identical controls"}]
    assert len(rep.rows) == 4
    assert all(np.isfinite(r.ratio_sup) for r in rep.rows)


def test_lipschitz_experiment_small():
    rep = lipschitz_experiment(n_cells=8, n_pairs=6, n_calibration=3, t_end=0.2)
    assert rep.passed, rep.summary()
    assert rep.C_emp > 0


def test_relaxation_vertex_control_is_exact():
    g = GridSpec.interval(8)
    model, init, cset = preset("budworm", g)
    cfg = SolverConfig(1e-3, 0.1)
    idx = np.random.default_rng(2).integers(0, 2, size=(cfg.n_steps, 8))
    rc = RelaxedControl(cfg.dt, np.moveaxis(np.eye(2)[idx], -1, 1))
    rep = relaxation_run(model, init, cset, rc, [5, 10, 20], cfg)
    assert all(r.distance == 0.0 and r.weak_defect == 0.0 for r in rep.rows)


def test_relaxation_rejects_unsorted_windows():
    g = GridSpec.interval(4)
    model, init, cset = preset("budworm", g)
    cfg = SolverConfig(1e-3, 0.05)
    rc = RelaxedControl.constant(cfg.dt, cfg.n_steps, [0.5, 0.5], g.shape)
    with pytest.raises(ValueError):
        relaxation_run(model, init, cset, rc, [10, 5], cfg)


def test_triangle_wave():
    t = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    np.testing.assert_allclose(triangle_wave(t, 0.5, 1.5, 2.0), [0.5, 1.0, 1.5, 1.0, 0.5])


def test_stop_small_amplitude_never_attaches():
    rep = stop_recovery(dt=1e-3, v_low=0.95, v_high=1.05)
    assert not rep.attached
    assert rep.sup_error < 1e-6
    assert rep.area_ref == pytest.approx(0.0, abs=1e-12)


def test_stop_zero_forcing():
    rep = stop_recovery(dt=1e-3, v_low=1.0, v_high=1.0)
    assert rep.area_sim == 0.0 and rep.area_ref == 0.0


def test_stop_coarse_triangle():
    rep = stop_recovery(dt=1e-3, n_periods=2)
    assert rep.attached
    assert rep.area_rel_error < 0.02


def test_consistency_orders():
    reps = consistency_orders(levels=3)
    assert abs(reps["space"].observed_order - 2) <= 0.3
    assert abs(reps["time"].observed_order - 1) <= 0.3
