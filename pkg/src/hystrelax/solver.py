"""IMEX time stepping of the coupled vegetation-prey-predator system."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .controls import AnyControl, ControlSet, OpenLoopControl, RelaxedControl
from .geometry import (
    Field,
    GridSpec,
    grad_norm_sq_values,
    helmholtz_values,
    laplacian_values,
    norm_values,
    restrict,
)
from .hysteresis import sigma_step_values
from .models import InitialData, ModelSpec

UNDERSHOOT_TOL = 1e-12
BAND_TOL = 1e-12

DIAGNOSTIC_COLUMNS = (
    "step",
    "t",
    "sigma_dot_H",
    "v_dot_H",
    "w_dot_H",
    "grad_v_H",
    "grad_w_H",
    "lap_v_H",
    "lap_w_H",
    "sigma_min",
    "sigma_max",
    "v_min",
    "v_max",
    "w_min",
    "w_max",
)


class StabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    stride: int = 1
    scheme: str = "imex1"
    allow_unstable_dt: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.scheme != "imex1":
            raise ValueError(f"unknown scheme {self.scheme!r}; only 'imex1' is available")

    @property
    def n_steps(self) -> int:
        ratio = self.t_end / self.dt
        nearest = round(ratio)
        if abs(ratio - nearest) <= 1e-9 * max(1.0, ratio):
            return int(nearest)
        return int(math.ceil(ratio))


def dt_stability(model: ModelSpec, m_bound: float) -> float:
    """Conservative explicit-reaction bound ``1 / (4 L (1 + m))``."""
    return 1.0 / (4.0 * model.L * (1.0 + m_bound))


@dataclass(frozen=True)
class State:
    t: float
    sigma: Field
    v: Field
    w: Field

    @property
    def grid(self) -> GridSpec:
        return self.v.grid

    def check(self, model: ModelSpec) -> None:
        _check_arrays(self.sigma.values, self.v.values, self.w.values, model, self.t)

    @classmethod
    def initial(cls, init: InitialData, model: Optional[ModelSpec] = None) -> "State":
        state = cls(0.0, init.sigma0, init.v0, init.w0)
        if model is not None:
            state.check(model)
        return state


def _fail(quantity: str, values: np.ndarray, mask: np.ndarray, t: float, what: str):
    k = int(np.flatnonzero(mask.ravel())[0])
    raise StabilityError(f"{quantity} {what} at cell {k} (t={t:.6g}): value {values.ravel()[k]:.6g}")


def _check_arrays(s, v, w, model: ModelSpec, t: float) -> None:
    for name, arr in (("sigma", s), ("v", v), ("w", w)):
        bad = ~np.isfinite(arr)
        if bad.any():
            _fail(name, arr, bad, t, "is not finite")
        bad = (arr < 0.0) | (arr > model.R0_cap)
        if bad.any():
            _fail(name, arr, bad, t, f"left [0, R0_cap={model.R0_cap}]")
    lo = model.f_lower(v, w)
    up = model.f_upper(v, w)
    bad = (s < lo - BAND_TOL) | (s > up + BAND_TOL)
    if bad.any():
        _fail("sigma", s, bad, t, "left the hysteresis band")


def _clip_undershoot(arr: np.ndarray, name: str, t: float) -> np.ndarray:
    bad = arr < -UNDERSHOOT_TOL
    if bad.any():
        _fail(name, arr, bad, t, "undershoots below zero beyond roundoff")
    return np.maximum(arr, 0.0)


def _advance(s, v, w, u, model: ModelSpec, grid: GridSpec, dt: float, t: float):
    """One Lie-split step on raw arrays; returns new arrays and rates."""
    rv = v + dt * model.h_rate(s, v, w) * u
    rw = w + dt * model.g_rate(s, v, w)
    v_new = _clip_undershoot(helmholtz_values(rv, grid, dt, 1.0), "v", t + dt)
    w_new = _clip_undershoot(helmholtz_values(rw, grid, dt, 1.0), "w", t + dt)
    vdot = (v_new - v) / dt
    wdot = (w_new - w) / dt
    F = np.broadcast_to(model.F_rate(s, v, w), s.shape)
    s_new = sigma_step_values(
        s,
        np.broadcast_to(model.f_lower(v, w), s.shape),
        np.broadcast_to(model.f_upper(v, w), s.shape),
        np.broadcast_to(model.f_lower(v_new, w_new), s.shape),
        np.broadcast_to(model.f_upper(v_new, w_new), s.shape),
        F,
        model.a,
        vdot,
        dt,
    )
    _check_arrays(s_new, v_new, w_new, model, t + dt)
    return s_new, v_new, w_new, (s_new - s) / dt, vdot, wdot


def step(state: State, u, model: ModelSpec, cfg: SolverConfig) -> State:
    """Advance one time step.

    ``v`` and ``w`` get an implicit diffusion solve with the reactions taken
    explicitly; sigma is then updated by the stop step using the backward
    difference quotients of ``v`` and ``w`` and the band at the new state.
    """
    u = u.values if isinstance(u, Field) else np.broadcast_to(np.asarray(u, dtype=float), state.grid.shape)
    s_new, v_new, w_new, *_ = _advance(
        state.sigma.values, state.v.values, state.w.values, u, model, state.grid, cfg.dt, state.t
    )
    return State(state.t + cfg.dt, state.sigma.like(s_new), state.v.like(v_new), state.w.like(w_new))


@dataclass(eq=False)
class Trajectory:
    """Strided snapshots, the realized control at every step and per-step diagnostics."""

    grid: GridSpec
    dt: float
    times: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    w: np.ndarray
    controls: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    stride: int = 1

    @property
    def n_steps(self) -> int:
        return self.controls.shape[0]

    @property
    def t_end(self) -> float:
        return self.n_steps * self.dt

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> State:
        g = self.grid
        return State(float(self.times[i]), Field(g, self.sigma[i]), Field(g, self.v[i]), Field(g, self.w[i]))

    @property
    def final(self) -> State:
        return self.state(len(self.times) - 1)

    def diagnostics_rows(self):
        cols = [self.diagnostics[c] for c in DIAGNOSTIC_COLUMNS]
        return list(zip(*cols))


def _check_control(control: AnyControl, cset: Optional[ControlSet], cfg: SolverConfig, grid: GridSpec, n: int):
    if not math.isclose(control.dt, cfg.dt, rel_tol=1e-12):
        raise ValueError(f"control dt {control.dt} differs from solver dt {cfg.dt}")
    if control.n_steps < n:
        raise ValueError(f"control has {control.n_steps} steps, the run needs {n}")
    if tuple(control.cell_shape) != grid.shape:
        raise ValueError(f"control cells {control.cell_shape} do not match grid {grid.shape}")
    if cset is None:
        if not isinstance(control, OpenLoopControl):
            raise ValueError("a ControlSet is needed to realize index or relaxed controls")
    else:
        control.check_set(cset)


def simulate(
    model: ModelSpec,
    init: InitialData,
    control: AnyControl,
    cfg: SolverConfig,
    controls: Optional[ControlSet] = None,
    diagnostics: bool = True,
) -> Trajectory:
    """Run ``ceil(t_end / dt)`` steps from ``init`` under ``control``.

    Index and relaxed controls are realized at the start of each step from
    the generators of ``controls`` evaluated at the current state.
    """
    grid = init.grid
    n = cfg.n_steps
    if n > 0:
        _check_control(control, controls, cfg, grid, n)
    m_bound = controls.m_bound if controls is not None else float(np.abs(getattr(control, "values", 0.0)).max(initial=0.0))
    limit = dt_stability(model, m_bound)
    if cfg.dt > limit:
        msg = f"dt={cfg.dt} exceeds the stability bound {limit:.4g}"
        if not cfg.allow_unstable_dt:
            raise StabilityError(msg + " (set allow_unstable_dt to override)")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    s, v, w = (np.array(f.values, dtype=float) for f in (init.sigma0, init.v0, init.w0))
    _check_arrays(s, v, w, model, 0.0)
    x = grid.centers()
    dt = cfg.dt

    n_snap = n // cfg.stride + 1 + (1 if n % cfg.stride else 0)
    times = np.empty(n_snap)
    S = np.empty((n_snap,) + grid.shape)
    Vs = np.empty_like(S)
    Ws = np.empty_like(S)
    U = np.empty((n,) + grid.shape)
    diag = {c: np.empty(n) for c in DIAGNOSTIC_COLUMNS} if diagnostics else {}
    times[0], S[0], Vs[0], Ws[0] = 0.0, s, v, w
    j = 1
    needs_gen = not isinstance(control, OpenLoopControl)
    for k in range(n):
        t = k * dt
        gen = controls.evaluate(t, x, s, v, w) if needs_gen else None
        u = control.realize(k, gen)
        U[k] = u
        s, v, w, sdot, vdot, wdot = _advance(s, v, w, u, model, grid, dt, t)
        if diagnostics:
            _record(diag, k, t + dt, grid, s, v, w, sdot, vdot, wdot)
        if (k + 1) % cfg.stride == 0 or k + 1 == n:
            times[j], S[j], Vs[j], Ws[j] = (k + 1) * dt, s, v, w
            j += 1
    return Trajectory(grid, dt, times[:j], S[:j], Vs[:j], Ws[:j], U, diag, cfg.stride)


def _record(diag, k, t, grid, s, v, w, sdot, vdot, wdot):
    diag["step"][k] = k + 1
    diag["t"][k] = t
    diag["sigma_dot_H"][k] = norm_values(sdot, grid)
    diag["v_dot_H"][k] = norm_values(vdot, grid)
    diag["w_dot_H"][k] = norm_values(wdot, grid)
    diag["grad_v_H"][k] = math.sqrt(grad_norm_sq_values(v, grid))
    diag["grad_w_H"][k] = math.sqrt(grad_norm_sq_values(w, grid))
    diag["lap_v_H"][k] = norm_values(laplacian_values(v, grid), grid)
    diag["lap_w_H"][k] = norm_values(laplacian_values(w, grid), grid)
    for name, arr in (("sigma", s), ("v", v), ("w", w)):
        diag[f"{name}_min"][k] = arr.min()
        diag[f"{name}_max"][k] = arr.max()


# ------------------------------------------------------------ energy budget


def reaction_sup_norms(model: ModelSpec, samples: int = 33) -> tuple[float, float]:
    """Sampled ``sup |h|`` and ``sup |g|`` over ``[0, 1] x [0, R0_cap]^2``."""
    sig = np.linspace(0.0, 1.0, samples)
    box = np.linspace(0.0, model.R0_cap, samples)
    S, V, W = np.meshgrid(sig, box, box, indexing="ij")
    h = np.abs(np.broadcast_to(model.h_rate(S, V, W), S.shape)).max()
    g = np.abs(np.broadcast_to(model.g_rate(S, V, W), S.shape)).max()
    return float(h), float(g)


@dataclass
class EnergyBudget:
    lhs: float
    rhs: float
    C1: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def energy_budget(traj: Trajectory, model: ModelSpec, m_bound: float) -> EnergyBudget:
    """Summed energy inequality for the ``v``/``w`` equations.

    ``sum dt (|v'|^2 + |w'|^2) + |grad v(T)|^2 + |grad w(T)|^2`` against
    ``|grad v0|^2 + |grad w0|^2 + T * C1`` with
    ``C1 = m (|h|_inf^2 + |g|_inf^2) |Omega|``.
    """
    grid = traj.grid
    d = traj.diagnostics
    lhs = float(np.sum(traj.dt * (d["v_dot_H"] ** 2 + d["w_dot_H"] ** 2)))
    lhs += grad_norm_sq_values(traj.v[-1], grid) + grad_norm_sq_values(traj.w[-1], grid)
    h_inf, g_inf = reaction_sup_norms(model)
    C1 = m_bound * (h_inf**2 + g_inf**2) * grid.measure
    rhs = grad_norm_sq_values(traj.v[0], grid) + grad_norm_sq_values(traj.w[0], grid) + traj.t_end * C1
    return EnergyBudget(lhs, rhs, C1)


# ---------------------------------------------------------- grid refinement


@dataclass
class RefinementReport:
    axis: str
    labels: list
    differences: list
    orders: list

    @property
    def observed_order(self) -> float:
        finite = [o for o in self.orders if np.isfinite(o)]
        return float(finite[-1]) if finite else float("nan")


def _state_distance(a: State, b: State) -> float:
    g = a.grid
    return math.sqrt(sum(norm_values(x.values - y.values, g) ** 2 for x, y in ((a.sigma, b.sigma), (a.v, b.v), (a.w, b.w))))


def _restrict_state(state: State, coarse: GridSpec) -> State:
    fine = state.grid
    return State(
        state.t,
        Field(coarse, restrict(state.sigma.values, fine, coarse)),
        Field(coarse, restrict(state.v.values, fine, coarse)),
        Field(coarse, restrict(state.w.values, fine, coarse)),
    )


def grid_refinement_report(
    problem: Callable[[GridSpec], tuple],
    control: Callable[[GridSpec, int, float], AnyControl],
    levels: int,
    grid: GridSpec,
    cfg: SolverConfig,
    axis: str = "space",
    factor: int = 2,
) -> RefinementReport:
    """Successive differences of final states under refinement.

    ``problem(grid)`` returns ``(model, init, controls)``; ``control(grid,
    n_steps, dt)`` builds the control. ``axis='space'`` refines the grid by
    ``factor`` at fixed dt (fine states are cell-averaged onto the coarser
    grid); ``axis='time'`` divides dt by ``factor`` on the fixed grid.
    Orders are ``log_factor(e_k / e_{k+1})``.
    """
    if levels < 2:
        raise ValueError("levels must be >= 2")
    if axis not in ("space", "time"):
        raise ValueError("axis must be 'space' or 'time'")
    finals: list[State] = []
    labels = []
    for k in range(levels):
        g = grid.refine(factor**k) if axis == "space" else grid
        dt = cfg.dt if axis == "space" else cfg.dt / factor**k
        c = SolverConfig(dt, cfg.t_end, stride=max(cfg.n_steps * (factor**k if axis == "time" else 1), 1),
                         allow_unstable_dt=cfg.allow_unstable_dt)
        model, init, cset = problem(g)
        traj = simulate(model, init, control(g, c.n_steps, dt), c, cset, diagnostics=False)
        finals.append(traj.final)
        labels.append(g.n_cells if axis == "space" else dt)
    diffs = []
    for a, b in zip(finals[:-1], finals[1:]):
        if axis == "space":
            b = _restrict_state(b, a.grid)
        diffs.append(_state_distance(a, b))
    orders = []
    for e0, e1 in zip(diffs[:-1], diffs[1:]):
        orders.append(math.log(e0 / e1, factor) if e0 > 0 and e1 > 0 and factor > 1 else float("nan"))
    return RefinementReport(axis, labels, diffs, orders)


def uniform_relaxed(grid: GridSpec, n_steps: int, dt: float, K: int = 2) -> RelaxedControl:
    return RelaxedControl.constant(dt, n_steps, np.full(K, 1.0 / K), grid.shape)
