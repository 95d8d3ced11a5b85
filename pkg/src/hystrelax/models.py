"""Problem data, named presets and sampled hypothesis checks."""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .controls import ControlSet
from .geometry import Field, GridSpec
from .hysteresis import ConstraintBand

Fn2 = Callable[[np.ndarray, np.ndarray], np.ndarray]
Grad2 = Callable[[np.ndarray, np.ndarray], tuple]
Fn3 = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

PRESETS = ("budworm", "stop-test", "decoupled")


@dataclass(frozen=True)
class ModelSpec:
    """Bounds of the hysteresis band, reaction terms and constants.

    ``f_lower``/``f_upper`` map ``(v, w)`` to the band edges and
    ``f_lower_grad``/``f_upper_grad`` return their partials ``(d/dv, d/dw)``.
    ``F_rate``, ``h_rate`` and ``g_rate`` take ``(sigma, v, w)``.
    ``L`` and ``L0`` are the declared Lipschitz constants (with respect to
    the l1 distance) of the reaction terms and of the band edges.
    """

    f_lower: Fn2
    f_upper: Fn2
    f_lower_grad: Grad2
    f_upper_grad: Grad2
    F_rate: Fn3
    h_rate: Fn3
    g_rate: Fn3
    a: float
    L: float
    L0: float
    R0_cap: float = 2.0
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.L0 < 0:
            raise ValueError("L0 must be nonnegative")
        if self.R0_cap <= 0:
            raise ValueError("R0_cap must be positive")


@dataclass(frozen=True)
class InitialData:
    sigma0: Field
    v0: Field
    w0: Field

    def __post_init__(self):
        if not (self.sigma0.grid == self.v0.grid == self.w0.grid):
            raise ValueError("initial fields live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.v0.grid


def eval_bounds(model: ModelSpec, v: Field, w: Field, check: bool = True) -> ConstraintBand:
    """Pointwise band ``[f_lower(v, w), f_upper(v, w)]`` as a pair of Fields."""
    lower = np.broadcast_to(model.f_lower(v.values, w.values), v.grid.shape)
    upper = np.broadcast_to(model.f_upper(v.values, w.values), v.grid.shape)
    return ConstraintBand(v.like(lower), v.like(upper), check=check)


# ---------------------------------------------------------------- validation


@dataclass
class Clause:
    name: str
    passed: bool
    worst: float
    witness: Optional[dict] = None
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name}: worst={self.worst:.6g}"
        if self.detail:
            text += f" ({self.detail})"
        if not self.passed and self.witness is not None:
            text += f" witness={self.witness}"
        return text


@dataclass
class ValidationReport:
    clauses: list[Clause]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def __getitem__(self, name: str) -> Clause:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def failures(self) -> list[Clause]:
        return [c for c in self.clauses if not c.passed]

    def summary(self) -> str:
        return "\n".join(c.line() for c in self.clauses)


def _witness(names, axes, flat_index, shape) -> dict:
    idx = np.unravel_index(flat_index, shape)
    return {n: float(ax[i]) for n, ax, i in zip(names, axes, idx)}


def _axis_quotients(values: np.ndarray, step: float) -> tuple[float, int, int]:
    """Largest ``|f(p + step e_i) - f(p)| / step`` over all axes."""
    best, best_axis, best_idx = 0.0, 0, 0
    for axis in range(values.ndim):
        q = np.abs(np.diff(values, axis=axis)) / step
        k = int(np.argmax(q))
        if q.flat[k] > best:
            best, best_axis, best_idx = float(q.flat[k]), axis, k
    return best, best_axis, best_idx


def _hausdorff(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Hausdorff distance between finite sets stacked along axis 0."""
    D = np.abs(A[:, None, ...] - B[None, :, ...])
    return np.maximum(D.min(axis=1).max(axis=0), D.min(axis=0).max(axis=0))


def validate_hypotheses(
    model: ModelSpec,
    init: Optional[InitialData] = None,
    box_samples: int = 64,
    controls: Optional[ControlSet] = None,
    tol: float = 1e-12,
) -> ValidationReport:
    """Spot-check the standing hypotheses by dense sampling.

    The reaction terms are sampled on ``[0, R0_cap]^3`` and the band edges
    on ``[0, R0_cap]^2`` with ``box_samples`` points per axis. Lipschitz
    constants are checked through axis-aligned difference quotients, which
    bound the l1 Lipschitz constant from below.
    """
    if box_samples < 2:
        raise ValueError("box_samples must be >= 2")
    R = model.R0_cap
    axis = np.linspace(0.0, R, box_samples)
    step = axis[1] - axis[0]
    clauses: list[Clause] = []

    V, W = np.meshgrid(axis, axis, indexing="ij")
    lo = np.broadcast_to(model.f_lower(V, W), V.shape)
    up = np.broadcast_to(model.f_upper(V, W), V.shape)
    gaps = np.stack([lo, up - lo, 1.0 - up])
    worst = float(gaps.min())
    k = int(np.argmin(gaps.min(axis=0)))
    clauses.append(
        Clause(
            "H1 ordered bounds",
            worst >= -tol,
            worst,
            _witness(("v", "w"), (axis, axis), k, V.shape),
            "min of f_lower, f_upper - f_lower, 1 - f_upper",
        )
    )
    q_lo = _axis_quotients(lo, step)
    q_up = _axis_quotients(up, step)
    q = max(q_lo[0], q_up[0])
    clauses.append(Clause("H1 bound Lipschitz <= L0", q <= model.L0 + tol, q, None, f"L0={model.L0}"))

    S, V3, W3 = np.meshgrid(axis, axis, axis, indexing="ij")
    names = ("sigma", "v", "w")
    worst_q, worst_at = 0.0, None
    for label, fn in (("F", model.F_rate), ("h", model.h_rate), ("g", model.g_rate)):
        vals = np.broadcast_to(fn(S, V3, W3), S.shape)
        if not np.all(np.isfinite(vals)):
            clauses.append(Clause(f"H2 {label} finite", False, np.nan))
            continue
        qv, ax_i, idx = _axis_quotients(vals, step)
        if qv >= worst_q:
            diff_shape = list(S.shape)
            diff_shape[ax_i] -= 1
            worst_q = qv
            worst_at = {"fn": label, "axis": names[ax_i], **_witness(names, (axis,) * 3, idx, diff_shape)}
    clauses.append(
        Clause("H2 common Lipschitz <= L", worst_q <= model.L + tol, worst_q, worst_at, f"L={model.L}")
    )
    clauses.append(Clause("H2 L > 1", model.L > 1.0, model.L))

    unit = np.linspace(0.0, 1.0, box_samples)
    Su, A2 = np.meshgrid(unit, axis, indexing="ij")
    zeros = np.zeros_like(Su)
    h0 = np.abs(np.broadcast_to(model.h_rate(Su, zeros, A2), Su.shape))
    g0 = np.abs(np.broadcast_to(model.g_rate(Su, A2, zeros), Su.shape))
    k = int(np.argmax(h0))
    clauses.append(
        Clause("H2 h(sigma,0,w)=0", float(h0.max()) <= tol, float(h0.max()),
               _witness(("sigma", "w"), (unit, axis), k, Su.shape))
    )
    k = int(np.argmax(g0))
    clauses.append(
        Clause("H2 g(sigma,v,0)=0", float(g0.max()) <= tol, float(g0.max()),
               _witness(("sigma", "v"), (unit, axis), k, Su.shape))
    )

    if init is not None:
        s0, v0, w0 = (np.ravel(f.values) for f in (init.sigma0, init.v0, init.w0))
        neg = float(min(v0.min(), w0.min()))
        k = int(np.argmin(np.minimum(v0, w0)))
        clauses.append(Clause("H3 v0, w0 >= 0", neg >= 0.0, neg, {"cell": k}))
        lo0 = np.broadcast_to(model.f_lower(v0, w0), v0.shape)
        up0 = np.broadcast_to(model.f_upper(v0, w0), v0.shape)
        slack = np.minimum(s0 - lo0, up0 - s0)
        k = int(np.argmin(slack))
        clauses.append(
            Clause("H3 sigma0 in band", float(slack.min()) >= -tol, float(slack.min()),
                   {"cell": k, "sigma0": float(s0[k]), "lower": float(lo0[k]), "upper": float(up0[k])})
        )

    if controls is not None:
        clauses.extend(_validate_controls(controls, axis, step, tol))
    return ValidationReport(clauses)


def _validate_controls(controls: ControlSet, axis, step, tol) -> list[Clause]:
    S, V, W = np.meshgrid(axis, axis, axis, indexing="ij")
    # t and x are sampled at a single representative point
    vals = controls.evaluate(0.0, (0.5,), S, V, W)
    mag = float(np.abs(vals).max())
    out = [Clause("U2 |U| <= m", mag <= controls.m_bound + tol, mag, None, f"m={controls.m_bound}")]
    worst = 0.0
    for ax in range(3):
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[ax + 1] = slice(0, -1)
        hi[ax + 1] = slice(1, None)
        d = _hausdorff(vals[tuple(lo)], vals[tuple(hi)]) / step
        worst = max(worst, float(d.max()))
    out.append(Clause("U3 Hausdorff Lipschitz <= k", worst <= controls.k_lip + tol, worst, None,
                      f"k={controls.k_lip}"))
    return out


# ------------------------------------------------------------------- presets


def logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def _dlogistic(x):
    s = logistic(x)
    return s * (1.0 - s)


def _zeros(*args):
    return np.zeros(np.broadcast(*args).shape)


def _const(c):
    def fn(*args):
        return np.full(np.broadcast(*args).shape, float(c))

    return fn


def _zero_gen(t, x, s, v, w):
    return np.zeros(np.broadcast(s, v, w).shape)


def _const_gen(c):
    def phi(t, x, s, v, w):
        return np.full(np.broadcast(s, v, w).shape, float(c))

    return phi


def _bump(grid: GridSpec, base: float, amp: float, mode: int = 1) -> Field:
    coords = grid.centers()
    shape = np.ones(grid.shape)
    for x, ell in zip(coords, grid.extent):
        shape = shape * np.cos(mode * np.pi * x / ell)
    return Field(grid, base + amp * shape)


def _budworm(grid: GridSpec, m: float = 1.0, a: float = 0.5, R0_cap: float = 2.0):
    def f_lower(v, w):
        return 0.4 * logistic(1.5 - v - 0.5 * w)

    def f_upper(v, w):
        return 0.5 + 0.5 * logistic(2.0 - v - 0.5 * w)

    def f_lower_grad(v, w):
        d = -0.4 * _dlogistic(1.5 - v - 0.5 * w)
        return d, 0.5 * d

    def f_upper_grad(v, w):
        d = -0.5 * _dlogistic(2.0 - v - 0.5 * w)
        return d, 0.5 * d

    def F(s, v, w):
        return 0.5 * (1.0 - s) - 0.3 * s * v

    def h(s, v, w):
        return v * (s - 0.4 * w) / (1.0 + v)

    def g(s, v, w):
        return w * (0.8 * v - 0.3) / (1.0 + w)

    model = ModelSpec(f_lower, f_upper, f_lower_grad, f_upper_grad, F, h, g,
                      a=a, L=2.5, L0=0.15, R0_cap=R0_cap, name="budworm",
                      params={"m": m, "a": a, "R0_cap": R0_cap})
    v0 = _bump(grid, 0.3, 0.25)
    w0 = _bump(grid, 0.25, 0.1, mode=2)
    lo, up = f_lower(v0.values, w0.values), f_upper(v0.values, w0.values)
    # close to the upper edge so that cells attach early and detach later
    sigma0 = v0.like(lo + 0.9 * (up - lo))

    def feedback(t, x, s, v, w):
        return m / (1.0 + v)

    controls = ControlSet([_zero_gen, feedback], m_bound=m, k_lip=m)
    return model, InitialData(sigma0, v0, w0), controls


def _stop_test(grid: GridSpec, slope: float = 1.0, v_floor: float = 0.25, R0_cap: float = 2.0):
    def f_lower(v, w):
        return 0.2 + 0.3 * logistic(2.0 * (v - 1.0)) + 0.0 * w

    def f_upper(v, w):
        return 0.5 + 0.3 * logistic(2.0 * (v - 1.0)) + 0.0 * w

    def grad(v, w):
        return 0.6 * _dlogistic(2.0 * (v - 1.0)), np.zeros(np.broadcast(v, w).shape)

    def h(s, v, w):
        return v + 0.0 * s + 0.0 * w

    model = ModelSpec(f_lower, f_upper, grad, grad, _zeros, h, _zeros,
                      a=1.0, L=1.001, L0=0.2, R0_cap=R0_cap, name="stop-test",
                      params={"slope": slope, "v_floor": v_floor, "R0_cap": R0_cap})

    # u = +-slope / v turns v' = v u into a linear ramp while v >= v_floor
    def up(t, x, s, v, w):
        return slope / np.maximum(v, v_floor)

    def down(t, x, s, v, w):
        return -slope / np.maximum(v, v_floor)

    # zero forcing still needs a positive bound for the set
    controls = ControlSet([down, up], m_bound=max(slope, 1e-12) / v_floor, k_lip=slope / v_floor**2)
    v0 = _bump(grid, 1.0, 0.1)
    w0 = Field.constant(grid, 0.0)
    lo, hi = f_lower(v0.values, w0.values), f_upper(v0.values, w0.values)
    sigma0 = v0.like(0.5 * (lo + hi))
    return model, InitialData(sigma0, v0, w0), controls


def _decoupled(grid: GridSpec, m: float = 1.0, R0_cap: float = 2.0):
    zero2 = (lambda v, w: (_zeros(v, w), _zeros(v, w)))
    model = ModelSpec(_const(0.2), _const(0.8), zero2, zero2, _zeros, _zeros, _zeros,
                      a=0.0, L=1.001, L0=0.0, R0_cap=R0_cap, name="decoupled",
                      params={"m": m, "R0_cap": R0_cap})
    controls = ControlSet([_zero_gen, _const_gen(m)], m_bound=m, k_lip=0.0)
    v0 = _bump(grid, 0.5, 0.25)
    w0 = _bump(grid, 0.5, 0.25, mode=2)
    sigma0 = Field.constant(grid, 0.5)
    return model, InitialData(sigma0, v0, w0), controls


_FACTORIES = {"budworm": _budworm, "stop-test": _stop_test, "decoupled": _decoupled}


def preset_params(name: str) -> tuple[str, ...]:
    if name not in _FACTORIES:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")
    return tuple(p for p in inspect.signature(_FACTORIES[name]).parameters if p != "grid")


def preset(name: str, grid: Optional[GridSpec] = None, **params):
    """Return ``(ModelSpec, InitialData, ControlSet)`` for a named preset.

    ``budworm``
        Logistic band edges ``0.4 S(1.5 - v - w/2)`` and
        ``0.5 + 0.5 S(2 - v - w/2)``, Holling-type reactions and feedback
        generators ``{0, m / (1 + v)}``.
    ``stop-test``
        ``a = 1``, ``F = g = 0``, ``w0 = 0``; the sigma equation reduces to a
        generalized stop driven by ``v``. Generators ``+-slope / v`` make
        ``v`` move linearly.
    ``decoupled``
        ``F = h = g = 0``, ``a = 0``, constant band ``[0.2, 0.8]``.
    """
    if name not in _FACTORIES:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")
    if grid is None:
        grid = GridSpec.interval(64)
    unknown = set(params) - set(preset_params(name))
    if unknown:
        raise TypeError(f"unknown parameter(s) for preset {name!r}: {sorted(unknown)}")
    return _FACTORIES[name](grid, **params)
