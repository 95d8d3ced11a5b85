"""Generalized stop operator: projection onto the band, the three-branch
rate law, one explicit step of the constrained dynamics and a
semi-analytic scalar reference."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .geometry import Field

if TYPE_CHECKING:
    from .models import ModelSpec

ATTACH_MARGIN = 1e-12


class BandInvariantError(ValueError):
    pass


class BranchTagError(ValueError):
    pass


@dataclass(frozen=True)
class ConstraintBand:
    """Per-cell admissible interval ``lower <= sigma <= upper``."""

    lower: Field
    upper: Field
    check: bool = True

    def __post_init__(self):
        if self.lower.grid != self.upper.grid:
            raise ValueError("band edges live on different grids")
        if self.check:
            lo, up = self.lower.values, self.upper.values
            bad = (lo < 0.0) | (lo > up) | (up > 1.0)
            if np.any(bad):
                k = int(np.flatnonzero(bad.ravel())[0])
                raise BandInvariantError(
                    f"band violates 0 <= lower <= upper <= 1 at cell {k}: "
                    f"lower={lo.flat[k]:.6g}, upper={up.flat[k]:.6g}"
                )

    def contains(self, sigma: Field, tol: float = 0.0) -> bool:
        s = sigma.values
        return bool(np.all(s >= self.lower.values - tol) and np.all(s <= self.upper.values + tol))


class BranchTag(enum.IntEnum):
    INTERIOR = 0
    ON_LOWER = 1
    ON_UPPER = 2


def classify(sigma, lower, upper, margin: float = ATTACH_MARGIN) -> np.ndarray:
    """Tag each cell as interior, attached to the lower or to the upper edge.

    Cells with a degenerate band (``lower == upper``) are tagged on_lower.
    """
    sigma, lower, upper = (np.asarray(x, dtype=float) for x in (sigma, lower, upper))
    tags = np.full(np.broadcast(sigma, lower, upper).shape, BranchTag.INTERIOR, dtype=int)
    tags[np.abs(sigma - upper) <= margin] = BranchTag.ON_UPPER
    tags[np.abs(sigma - lower) <= margin] = BranchTag.ON_LOWER
    return tags


def clamp_values(sigma, lower, upper):
    """``sigma - [sigma - upper]^+ + [lower - sigma]^+``.

    Evaluated as ``min(max(sigma, lower), upper)``, equal for ordered edges
    and free of cancellation, so the result lies in the band exactly.
    """
    return np.minimum(np.maximum(sigma, lower), upper)


def clamp_M(sigma: Field, band: ConstraintBand) -> Field:
    """Project ``sigma`` cellwise onto the band."""
    return sigma.like(clamp_values(sigma.values, band.lower.values, band.upper.values))


def branch_rate(sigma, v, w, vdot, wdot, model: "ModelSpec", tag, margin: float = ATTACH_MARGIN):
    """Time derivative of sigma on the branch selected by ``tag``.

    interior: ``F(sigma, v, w) + a v'``; attached: the derivative of the
    active band edge along ``(v', w')``, using the model's analytic partials.
    Accepts scalars or arrays of equal shape.
    """
    sigma, v, w, vdot, wdot = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (sigma, v, w, vdot, wdot)))
    tag = np.broadcast_to(np.asarray(tag, dtype=int), sigma.shape)
    lower = np.broadcast_to(model.f_lower(v, w), sigma.shape)
    upper = np.broadcast_to(model.f_upper(v, w), sigma.shape)

    on_lo = tag == BranchTag.ON_LOWER
    on_up = tag == BranchTag.ON_UPPER
    bad = (on_lo & (np.abs(sigma - lower) > margin)) | (on_up & (np.abs(sigma - upper) > margin))
    bad |= ~np.isin(tag, list(BranchTag))
    if np.any(bad):
        k = int(np.flatnonzero(bad.ravel())[0])
        raise BranchTagError(f"branch tag {int(tag.flat[k])} inconsistent with sigma at cell {k}")

    rate = model.F_rate(sigma, v, w) + model.a * vdot
    dlv, dlw = model.f_lower_grad(v, w)
    duv, duw = model.f_upper_grad(v, w)
    rate = np.where(on_lo, dlv * vdot + dlw * wdot, rate)
    rate = np.where(on_up, duv * vdot + duw * wdot, rate)
    return rate if rate.ndim else float(rate)


def sigma_step_values(sigma, lower_old, upper_old, lower_new, upper_new, F, a, vdot, dt):
    """Array-level kernel of :func:`sigma_step`."""
    rate = F + a * vdot
    cand = sigma + dt * rate
    tags = classify(sigma, lower_old, upper_old)
    # an attached cell keeps riding its edge unless the free rate points inward
    # relative to the moving edge
    ride_lo = (tags == BranchTag.ON_LOWER) & (dt * rate <= lower_new - lower_old)
    ride_up = (tags == BranchTag.ON_UPPER) & (dt * rate >= upper_new - upper_old)
    cand = np.where(ride_lo, lower_new, cand)
    cand = np.where(ride_up, upper_new, cand)
    return clamp_values(cand, lower_new, upper_new)


def sigma_step(
    sigma: Field,
    band_old: ConstraintBand,
    band_new: ConstraintBand,
    F_field: Field,
    a: float,
    vdot: Field,
    wdot: Field,
    dt: float,
) -> Field:
    """Advance sigma by one step of the stop dynamics.

    Detach-first: a cell attached to an edge moves with the free rate
    ``F + a v'`` when that rate points into the band relative to the edge's
    own motion ``(edge_new - edge_old) / dt``; otherwise it follows the
    edge. The result is projected onto ``band_new`` so it lies in it exactly.
    ``wdot`` enters only through the edge motion.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = sigma_step_values(
        sigma.values,
        band_old.lower.values,
        band_old.upper.values,
        band_new.lower.values,
        band_new.upper.values,
        F_field.values,
        a,
        vdot.values,
        dt,
    )
    return sigma.like(out)


# ------------------------------------------------------- scalar stop operator


def _fd_slope(fn, h=1e-6):
    return lambda v: (fn(v + h) - fn(v - h)) / (2 * h)


def _first_root(fn, a: float, b: float, n_probe: int) -> Optional[float]:
    """First point in ``(a, b]`` where ``fn`` turns positive, or None."""
    ts = np.linspace(0.0, 1.0, n_probe + 1)
    prev_t, prev_val = 0.0, fn(a)
    for t in ts[1:]:
        x = a + t * (b - a)
        val = fn(x)
        if val > 0.0:
            if prev_val >= 0.0:
                return a + prev_t * (b - a)
            s = brentq(lambda tt: fn(a + tt * (b - a)), prev_t, t, xtol=1e-15, rtol=1e-15)
            return a + s * (b - a)
        prev_t, prev_val = t, val
    return None


def scalar_stop_reference(
    samples: Sequence[tuple[float, float]],
    lower: Callable[[float], float],
    upper: Callable[[float], float],
    sigma0: float,
    lower_slope: Optional[Callable[[float], float]] = None,
    upper_slope: Optional[Callable[[float], float]] = None,
    n_probe: int = 64,
) -> np.ndarray:
    """Generalized scalar stop with moving edges, evaluated semi-analytically.

    The input ``v`` is taken piecewise linear between the ``(t, v)`` samples.
    On each monotone piece the output is integrated in the variable ``v``:
    free motion is ``sigma = c + v``, attached motion follows the edge, and
    the switching points are located by root finding. Returns sigma at the
    sample times.
    """
    samples = [(float(t), float(v)) for t, v in samples]
    if not samples:
        return np.empty(0)
    lower_slope = lower_slope or _fd_slope(lower)
    upper_slope = upper_slope or _fd_slope(upper)
    v_c = samples[0][1]
    lo0, up0 = lower(v_c), upper(v_c)
    if not (lo0 - ATTACH_MARGIN <= sigma0 <= up0 + ATTACH_MARGIN):
        raise BandInvariantError(f"sigma0={sigma0} outside [{lo0}, {up0}]")
    sigma = float(sigma0)
    mode = BranchTag(int(classify(sigma, lo0, up0)))
    out = [sigma]

    for (_, va), (_, vb) in zip(samples[:-1], samples[1:]):
        if vb == va:
            out.append(sigma)
            continue
        s = 1.0 if vb > va else -1.0
        v = va
        while True:
            if mode == BranchTag.INTERIOR:
                c = sigma - v
                hit_up = _first_root(lambda x: c + x - upper(x), v, vb, n_probe)
                hit_lo = _first_root(lambda x: lower(x) - c - x, v, vb, n_probe)
                hits = [(x, tag) for x, tag in ((hit_up, BranchTag.ON_UPPER), (hit_lo, BranchTag.ON_LOWER))
                        if x is not None]
                if not hits:
                    sigma, v = c + vb, vb
                    break
                x, tag = min(hits, key=lambda p: s * (p[0] - v))
                v, mode = x, tag
                sigma = upper(v) if tag == BranchTag.ON_UPPER else lower(v)
                if x == vb:
                    break
            else:
                edge = upper if mode == BranchTag.ON_UPPER else lower
                slope = upper_slope if mode == BranchTag.ON_UPPER else lower_slope
                sign = 1.0 if mode == BranchTag.ON_UPPER else -1.0
                # stays attached while the free direction pushes outward
                leave = lambda x: -sign * s * (1.0 - slope(x))  # noqa: E731
                if leave(v) > 0.0:
                    mode = BranchTag.INTERIOR
                    continue
                x = _first_root(leave, v, vb, n_probe)
                if x is None:
                    sigma, v = edge(vb), vb
                    break
                sigma, v, mode = edge(x), x, BranchTag.INTERIOR
        out.append(sigma)
    return np.asarray(out)


def loop_area(v: np.ndarray, sigma: np.ndarray) -> float:
    """Signed area ``closed integral of sigma dv`` by the trapezoidal rule."""
    v, sigma = np.asarray(v), np.asarray(sigma)
    return float(np.sum(0.5 * (sigma[1:] + sigma[:-1]) * np.diff(v)))
