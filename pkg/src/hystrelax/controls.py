"""Control constraint sets built from finitely many feedback generators,
their convex hulls, nearest-point selections and time chattering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .geometry import GridSpec

Generator = Callable[..., np.ndarray]

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class ControlSet:
    """``U(t, x, sigma, v, w) = {phi_j(t, x, sigma, v, w) : j = 0..K-1}``.

    ``m_bound`` bounds every generator in absolute value and ``k_lip`` is a
    time-constant Lipschitz bound (Hausdorff distance per unit l1 change of
    the state).
    """

    generators: tuple
    m_bound: float
    k_lip: float

    def __init__(self, generators: Sequence[Generator], m_bound: float, k_lip: float):
        if not generators:
            raise ValueError("a control set needs at least one generator")
        if m_bound <= 0:
            raise ValueError("m_bound must be positive")
        if k_lip < 0:
            raise ValueError("k_lip must be nonnegative")
        object.__setattr__(self, "generators", tuple(generators))
        object.__setattr__(self, "m_bound", float(m_bound))
        object.__setattr__(self, "k_lip", float(k_lip))

    @property
    def K(self) -> int:
        return len(self.generators)

    def evaluate(self, t, x, sigma, v, w) -> np.ndarray:
        """Stack of generator values with a leading axis of length K."""
        shape = np.broadcast(np.asarray(sigma), np.asarray(v), np.asarray(w)).shape
        return np.stack([np.broadcast_to(phi(t, x, sigma, v, w), shape) for phi in self.generators])


def feasible_values(cset: ControlSet, t, x, sigma, v, w) -> list[float]:
    """Values of all generators at a single point (duplicates kept)."""
    return [float(val) for val in np.ravel(cset.evaluate(t, x, sigma, v, w))]


def hausdorff_distance(A: Sequence[float], B: Sequence[float]) -> float:
    A = np.asarray(A, dtype=float)[:, None]
    B = np.asarray(B, dtype=float)[None, :]
    D = np.abs(A - B)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def nearest_selection(target, cset: ControlSet, t, x, sigma, v, w):
    """Index of the generator closest to ``target``; ties go to the smaller index."""
    vals = cset.evaluate(t, x, sigma, v, w)
    idx = np.argmin(np.abs(vals - np.asarray(target)), axis=0)
    return int(idx) if idx.ndim == 0 else idx


# -------------------------------------------------------------- control types


@dataclass(frozen=True, eq=False)
class ControlField:
    """Piecewise-constant generator index per time step and cell."""

    dt: float
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim < 1 or not np.issubdtype(idx.dtype, np.integer):
            raise ValueError("indices must be an integer array of shape (n_steps, *cells)")
        if np.any(idx < 0):
            raise ValueError("generator indices must be nonnegative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        idx = idx.astype(np.int64)
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    @property
    def n_steps(self) -> int:
        return self.indices.shape[0]

    @property
    def t_end(self) -> float:
        return self.n_steps * self.dt

    @property
    def cell_shape(self) -> tuple:
        return self.indices.shape[1:]

    def check_set(self, cset: ControlSet) -> None:
        if self.indices.size and self.indices.max() >= cset.K:
            raise ValueError(f"index {int(self.indices.max())} out of range for {cset.K} generators")

    def realize(self, k: int, gen_values: np.ndarray) -> np.ndarray:
        return np.take_along_axis(gen_values, self.indices[k][None], axis=0)[0]

    def as_weights(self, K: int) -> np.ndarray:
        return np.moveaxis(np.eye(K)[self.indices], -1, 1)


@dataclass(frozen=True, eq=False)
class RelaxedControl:
    """Convex weights over the generators per time step and cell.

    ``weights`` has shape ``(n_steps, K, *cells)``.
    """

    dt: float
    weights: np.ndarray

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        if W.ndim < 2:
            raise ValueError("weights must have shape (n_steps, K, *cells)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if np.any(W < 0.0):
            raise ValueError("relaxed weights must be nonnegative")
        if np.any(np.abs(W.sum(axis=1) - 1.0) > WEIGHT_TOL):
            raise ValueError("relaxed weights must sum to 1 within 1e-12")
        W.flags.writeable = False
        object.__setattr__(self, "weights", W)

    @classmethod
    def constant(cls, dt: float, n_steps: int, weights: Sequence[float], cell_shape: tuple) -> "RelaxedControl":
        lam = np.asarray(weights, dtype=float)
        W = np.broadcast_to(lam.reshape((1, -1) + (1,) * len(cell_shape)), (n_steps, lam.size) + tuple(cell_shape))
        return cls(dt, W)

    @property
    def n_steps(self) -> int:
        return self.weights.shape[0]

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    @property
    def t_end(self) -> float:
        return self.n_steps * self.dt

    @property
    def cell_shape(self) -> tuple:
        return self.weights.shape[2:]

    def check_set(self, cset: ControlSet) -> None:
        if self.K != cset.K:
            raise ValueError(f"relaxed control has {self.K} weights but the set has {cset.K} generators")

    def realize(self, k: int, gen_values: np.ndarray) -> np.ndarray:
        return np.sum(self.weights[k] * gen_values, axis=0)

    def is_vertex(self) -> bool:
        return bool(np.all((self.weights == 0.0) | (self.weights == 1.0)))


@dataclass(frozen=True, eq=False)
class OpenLoopControl:
    """Prescribed control values per step and cell, ignoring the generators."""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("control values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def t_end(self) -> float:
        return self.n_steps * self.dt

    @property
    def cell_shape(self) -> tuple:
        return self.values.shape[1:]

    def check_set(self, cset: ControlSet) -> None:
        if np.abs(self.values).max(initial=0.0) > cset.m_bound + 1e-12:
            raise ValueError("open-loop control leaves S_m")

    def realize(self, k: int, gen_values: np.ndarray) -> np.ndarray:
        return self.values[k]


AnyControl = Union[ControlField, RelaxedControl, OpenLoopControl]


def hull_value(rc: RelaxedControl, k: int, cset: ControlSet, t, x, sigma, v, w) -> np.ndarray:
    """Realized relaxed control ``sum_j lambda_j phi_j`` at step ``k``."""
    return rc.realize(k, cset.evaluate(t, x, sigma, v, w))


def realize_series(control: AnyControl, gen_values: np.ndarray) -> np.ndarray:
    """Realize a control on precomputed generator values of shape ``(n_steps, K, *cells)``."""
    if isinstance(control, ControlField):
        return np.take_along_axis(gen_values, control.indices[:, None], axis=1)[:, 0]
    if isinstance(control, RelaxedControl):
        return np.sum(control.weights * gen_values, axis=1)
    return np.asarray(control.values)


# ---------------------------------------------------------------- chattering


def window_edges(n_steps: int, n_windows: int) -> np.ndarray:
    if n_windows < 1:
        raise ValueError("number of windows must be >= 1")
    if n_windows > n_steps:
        raise ValueError(f"{n_windows} windows exceed the {n_steps} time steps")
    return np.round(np.linspace(0, n_steps, n_windows + 1)).astype(int)


def _largest_remainder(quota: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``quota`` along axis 0."""
    q = np.maximum(quota, 0.0)
    s = q.sum(axis=0, keepdims=True)
    k = quota.shape[0]
    q = np.where(s > 0, q * total / np.where(s > 0, s, 1.0), total / k)
    counts = np.floor(q).astype(np.int64)
    short = total - counts.sum(axis=0)
    order = np.argsort(-(q - counts), axis=0, kind="stable")
    rank = np.argsort(order, axis=0, kind="stable")
    counts += rank < short[None]
    return counts


def chatter(rc: RelaxedControl, n_windows: int) -> ControlField:
    """Replace convex weights by a rapidly switching index field.

    ``[0, T]`` is cut into ``n_windows`` windows of (nearly) equal length. In
    each window and cell the steps go to the generators in the fixed order
    ``0..K-1``, with counts given by largest-remainder rounding of the
    window-summed weights plus the rounding residual carried over from the
    previous windows. Cells whose weights are vertices throughout a window
    keep their indices unchanged there, so vertex controls are reproduced
    exactly.
    """
    edges = window_edges(rc.n_steps, n_windows)
    W = rc.weights
    K = rc.K
    out = np.empty((rc.n_steps,) + rc.cell_shape, dtype=np.int64)
    carry = np.zeros((K,) + rc.cell_shape)
    for a, b in zip(edges[:-1], edges[1:]):
        steps = b - a
        target = W[a:b].sum(axis=0)
        counts = _largest_remainder(target + carry, steps)
        bounds = np.cumsum(counts, axis=0)
        offs = np.arange(steps).reshape((steps,) + (1,) * (1 + len(rc.cell_shape)))
        block = np.sum(offs >= bounds[None], axis=1)
        vertex = np.all((W[a:b] == 0.0) | (W[a:b] == 1.0), axis=(0, 1))
        out[a:b] = np.where(vertex, np.argmax(W[a:b], axis=1), block)
        carry = np.where(vertex, carry, carry + target - counts)
    return ControlField(rc.dt, out)


def chatter_bound(m_bound: float, t_end: float, n_windows: int, measure: float = 1.0) -> float:
    """``2 m T / N`` scaled by ``|Omega|^(1/2)`` for the H-norm."""
    return float(2.0 * m_bound * t_end / n_windows * np.sqrt(measure))


def weak_norm_defect(u1: np.ndarray, u2: np.ndarray, dt: float, grid: GridSpec, block: int = 32) -> float:
    """``max_{s <= t} |integral_s^t (u1 - u2)|_H`` over step-aligned s, t.

    Evaluated exactly on the step grid from prefix sums of the difference.
    """
    u1, u2 = np.asarray(u1, dtype=float), np.asarray(u2, dtype=float)
    if u1.shape != u2.shape:
        raise ValueError(f"control series shapes differ: {u1.shape} vs {u2.shape}")
    if u1.shape[1:] != grid.shape:
        raise ValueError(f"control series cells {u1.shape[1:]} do not match grid {grid.shape}")
    d = (u1 - u2).reshape(u1.shape[0], -1) * dt
    P = np.vstack([np.zeros((1, d.shape[1])), np.cumsum(d, axis=0)])
    best = 0.0
    for i in range(0, P.shape[0], block):
        diff = P[None, i:, :] - P[i : i + block, None, :]
        best = max(best, float(np.max(np.sum(diff * diff, axis=-1))))
    return float(np.sqrt(best * grid.cell_volume))
