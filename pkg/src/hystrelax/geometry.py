"""Cell-centered grids on intervals and rectangles, the discrete Neumann
Laplacian, L2 inner products and the implicit diffusion solve."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered grid on ``[0, extent[0]] x ... ``.

    Cell ``i`` along an axis has its center at ``(i + 1/2) * spacing``.
    """

    extent: tuple[float, ...]
    n_cells: tuple[int, ...]

    def __post_init__(self):
        extent = tuple(float(e) for e in np.atleast_1d(self.extent))
        n_cells = tuple(int(n) for n in np.atleast_1d(self.n_cells))
        if len(extent) != len(n_cells):
            raise ValueError("extent and n_cells must have the same length")
        if len(extent) not in (1, 2):
            raise ValueError(f"only 1-D and 2-D grids are supported, got dim={len(extent)}")
        if any(n < 1 for n in n_cells):
            raise ValueError(f"n_cells must be >= 1 per axis, got {n_cells}")
        if any(not np.isfinite(e) or e <= 0 for e in extent):
            raise ValueError(f"extent must be positive per axis, got {extent}")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "n_cells", n_cells)

    @classmethod
    def interval(cls, n: int, length: float = 1.0) -> "GridSpec":
        return cls((length,), (n,))

    @classmethod
    def rectangle(cls, nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> "GridSpec":
        return cls((lx, ly), (nx, ny))

    @property
    def dim(self) -> int:
        return len(self.n_cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n_cells

    @property
    def size(self) -> int:
        return int(np.prod(self.n_cells))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extent, self.n_cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def measure(self) -> float:
        """Lebesgue measure of the domain."""
        return float(np.prod(self.extent))

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinates, one array of ``shape`` per axis."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.n_cells, self.spacing)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def refine(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.extent, tuple(n * factor for n in self.n_cells))


@dataclass(frozen=True, eq=False)
class Field:
    """Grid function: one finite real value per cell."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.size != self.grid.size:
            raise ValueError(
                f"field has {values.size} values but the grid has {self.grid.size} cells"
            )
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise FloatingPointError("field contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: GridSpec, c: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "Field":
        return cls(grid, fn(*grid.centers()))

    def like(self, values) -> "Field":
        return Field(self.grid, values)

    def __add__(self, other):
        return self.like(self.values + _values(other, self.grid))

    __radd__ = __add__

    def __sub__(self, other):
        return self.like(self.values - _values(other, self.grid))

    def __rsub__(self, other):
        return self.like(_values(other, self.grid) - self.values)

    def __mul__(self, other):
        return self.like(self.values * _values(other, self.grid))

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.grid.size


def _values(other, grid: GridSpec):
    if isinstance(other, Field):
        _check_same_grid(other.grid, grid)
        return other.values
    return other


def _check_same_grid(g1: GridSpec, g2: GridSpec) -> None:
    if g1 != g2:
        raise GridMismatchError(f"grid mismatch: {g1} vs {g2}")


def laplacian_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Array-level Neumann Laplacian used by the solver hot loop."""
    out = np.zeros_like(values)
    for axis, h in enumerate(grid.spacing):
        if grid.n_cells[axis] == 1:
            continue
        # face fluxes; the two boundary faces carry zero flux
        flux = np.diff(values, axis=axis) / h**2
        lo = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        out[tuple(lo)] += flux
        out[tuple(hi)] -= flux
    return out


def neumann_laplacian(f: Field) -> Field:
    """Discrete Laplacian with zero-flux closure.

    Interior cells use the 3-point (1-D) or 5-point (2-D) stencil; the
    boundary cells keep only the interior face, e.g. ``(f[1] - f[0]) / h**2``.
    Because every face flux enters two cells with opposite signs the
    weighted sum ``sum(L f) * cell_volume`` vanishes identically.
    """
    return f.like(laplacian_values(f.values, f.grid))


def l2_inner(f: Field, g: Field) -> float:
    _check_same_grid(f.grid, g.grid)
    return float(np.sum(f.values * g.values) * f.grid.cell_volume)


def l2_norm(f: Field) -> float:
    return float(np.sqrt(max(l2_inner(f, f), 0.0)))


def norm_values(values: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt(np.sum(values * values) * grid.cell_volume))


def grad_norm_sq_values(values: np.ndarray, grid: GridSpec) -> float:
    """Discrete ``|grad f|_H^2``, equal to ``-<L f, f>_H``."""
    total = 0.0
    for axis, h in enumerate(grid.spacing):
        if grid.n_cells[axis] > 1:
            total += np.sum((np.diff(values, axis=axis) / h) ** 2)
    return float(total * grid.cell_volume)


def laplacian_matrix(grid: GridSpec) -> sp.csr_matrix:
    """Sparse matrix of :func:`neumann_laplacian` in C (row-major) order."""
    mats = []
    for n, h in zip(grid.n_cells, grid.spacing):
        if n == 1:
            mats.append(sp.csr_matrix((1, 1)))
            continue
        main = -2.0 * np.ones(n)
        main[0] = main[-1] = -1.0
        off = np.ones(n - 1)
        mats.append(sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2)
    if grid.dim == 1:
        return mats[0].tocsr()
    nx, ny = grid.n_cells
    return (sp.kron(mats[0], sp.identity(ny)) + sp.kron(sp.identity(nx), mats[1])).tocsr()


@lru_cache(maxsize=32)
def _banded_operator(n: int, h: float, coef: float) -> np.ndarray:
    ab = np.zeros((3, n))
    r = coef / h**2
    ab[0, 1:] = -r
    ab[2, :-1] = -r
    ab[1, :] = 1.0 + 2.0 * r
    ab[1, 0] = ab[1, -1] = 1.0 + r
    return ab


@lru_cache(maxsize=32)
def _sparse_factor(grid: GridSpec, coef: float):
    A = sp.identity(grid.size, format="csc") - coef * laplacian_matrix(grid).tocsc()
    return splu(A.tocsc())


def helmholtz_values(rhs: np.ndarray, grid: GridSpec, dt: float, diffusivity: float = 1.0) -> np.ndarray:
    if dt < 0 or diffusivity < 0:
        raise ValueError("dt and diffusivity must be nonnegative")
    coef = dt * diffusivity
    if coef == 0.0 or grid.size == 1:
        return np.array(rhs, dtype=float, copy=True)
    if grid.dim == 1:
        (n,), (h,) = grid.n_cells, grid.spacing
        return solve_banded((1, 1), _banded_operator(n, h, coef), rhs, check_finite=False)
    return _sparse_factor(grid, coef).solve(np.ravel(rhs)).reshape(grid.shape)


def solve_helmholtz(rhs: Field, dt: float, diffusivity: float = 1.0) -> Field:
    """Solve ``(I - dt * diffusivity * L) y = rhs`` exactly.

    1-D grids use a banded (tridiagonal) direct solve; 2-D grids use a
    cached sparse LU factorization.
    """
    return rhs.like(helmholtz_values(rhs.values, rhs.grid, dt, diffusivity))


def restrict(values: np.ndarray, fine: GridSpec, coarse: GridSpec) -> np.ndarray:
    """Average fine-cell values onto a coarser nested grid."""
    factors = [nf // nc for nf, nc in zip(fine.n_cells, coarse.n_cells)]
    if any(nf != f * nc for nf, f, nc in zip(fine.n_cells, factors, coarse.n_cells)):
        raise GridMismatchError("grids are not nested")
    shape: list[int] = []
    for nc, f in zip(coarse.n_cells, factors):
        shape += [nc, f]
    return values.reshape(shape).mean(axis=tuple(range(1, 2 * coarse.dim, 2)))


def as_grid(spec: GridSpec | Sequence[int] | int) -> GridSpec:
    if isinstance(spec, GridSpec):
        return spec
    return GridSpec(tuple(1.0 for _ in np.atleast_1d(spec)), tuple(np.atleast_1d(spec)))
