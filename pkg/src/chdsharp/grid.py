"""Uniform cell-centred grids with no-flux closure and mimetic operators.

Scalars live at cell centres as arrays of shape ``(ny, nx)`` (x varies fastest,
so ``arr.ravel()`` is row-major with rows along y).  A 1D grid is the special
case ``ny == 1`` with unit cross-section, which lets every operator below be
written once for both dimensions.

Face-normal components live on a staggered (MAC) layout:

* ``x`` faces: shape ``(ny, nx + 1)``, columns ``0`` and ``nx`` are the walls;
* ``y`` faces: shape ``(ny + 1, nx)``, rows ``0`` and ``ny`` are the walls.

The gradient sets wall faces to zero (homogeneous Neumann), and the divergence
is its negative adjoint under the volume-weighted inner products, so
``<div F, c> = -<F, grad c>`` holds to round-off for any ``F`` with zero wall
faces.  Every discrete conservation statement in the package rests on this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from chdsharp.errors import ConfigError


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on ``[0, lx]`` (1D) or ``[0, lx] x [0, ly]`` (2D)."""

    dim: int
    nx: int
    ny: int = 1
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"grid dimension must be 1 or 2, got {self.dim}")
        if self.nx < 2:
            raise ConfigError(f"nx must be >= 2, got {self.nx}")
        if self.dim == 1:
            if self.ny != 1:
                raise ConfigError(f"1D grids need ny == 1, got {self.ny}")
            if self.ly != 1.0:
                # unit cross-section keeps cell volume == hx
                object.__setattr__(self, "ly", 1.0)
        elif self.ny < 2:
            raise ConfigError(f"ny must be >= 2 in 2D, got {self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ConfigError("domain lengths must be positive")

    @classmethod
    def line(cls, nx: int, lx: float = 1.0) -> GridSpec:
        return cls(dim=1, nx=nx, ny=1, lx=lx, ly=1.0)

    @classmethod
    def rect(cls, nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> GridSpec:
        return cls(dim=2, nx=nx, ny=ny, lx=lx, ly=ly)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def h_min(self) -> float:
        return self.hx if self.dim == 1 else min(self.hx, self.hy)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy

    @property
    def volume(self) -> float:
        return self.lx * self.ly

    @property
    def n_xfaces(self) -> int:
        return self.ny * (self.nx + 1)

    @property
    def n_yfaces(self) -> int:
        return (self.ny + 1) * self.nx

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def full(self, value: float) -> np.ndarray:
        return np.full(self.shape, float(value))

    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    def y_centers(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcast coordinate arrays ``(X, Y)`` of shape ``(ny, nx)``."""
        X, Y = np.meshgrid(self.x_centers(), self.y_centers())
        if self.dim == 1:
            Y = np.full_like(X, 0.5 * self.ly)
        return X, Y

    @cached_property
    def operators(self) -> SparseOperators:
        return SparseOperators(self)


@dataclass
class Faces:
    """Face-normal components on the staggered layout of a grid."""

    x: np.ndarray
    y: np.ndarray

    @classmethod
    def zeros(cls, grid: GridSpec) -> Faces:
        return cls(np.zeros((grid.ny, grid.nx + 1)), np.zeros((grid.ny + 1, grid.nx)))

    @classmethod
    def full(cls, grid: GridSpec, value: float) -> Faces:
        return cls(np.full((grid.ny, grid.nx + 1), float(value)),
                   np.full((grid.ny + 1, grid.nx), float(value)))

    @classmethod
    def from_flat(cls, grid: GridSpec, vec: np.ndarray) -> Faces:
        nxf = grid.n_xfaces
        return cls(vec[:nxf].reshape(grid.ny, grid.nx + 1).copy(),
                   vec[nxf:].reshape(grid.ny + 1, grid.nx).copy())

    def ravel(self) -> np.ndarray:
        return np.concatenate([self.x.ravel(), self.y.ravel()])

    def copy(self) -> Faces:
        return Faces(self.x.copy(), self.y.copy())

    def zero_walls(self) -> Faces:
        """Copy with every wall-normal component set to zero."""
        out = self.copy()
        out.x[:, 0] = out.x[:, -1] = 0.0
        out.y[0, :] = out.y[-1, :] = 0.0
        return out

    def wall_max(self) -> float:
        return float(max(np.abs(self.x[:, [0, -1]]).max(), np.abs(self.y[[0, -1], :]).max()))

    def max_abs(self) -> float:
        return float(max(np.abs(self.x).max(), np.abs(self.y).max()))

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.x).all() and np.isfinite(self.y).all())

    def __add__(self, other: Faces) -> Faces:
        return Faces(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Faces) -> Faces:
        return Faces(self.x - other.x, self.y - other.y)

    def __neg__(self) -> Faces:
        return Faces(-self.x, -self.y)

    def __mul__(self, other) -> Faces:
        if isinstance(other, Faces):
            return Faces(self.x * other.x, self.y * other.y)
        return Faces(self.x * other, self.y * other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Faces:
        if isinstance(other, Faces):
            return Faces(self.x / other.x, self.y / other.y)
        return Faces(self.x / other, self.y / other)


def mean(f: np.ndarray) -> float:
    """Spatial mean; on a uniform grid this is the plain average."""
    return float(np.mean(f))


def integrate(grid: GridSpec, f: np.ndarray) -> float:
    return float(np.sum(f)) * grid.cell_volume


def inner_cells(grid: GridSpec, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b)) * grid.cell_volume


def inner_faces(grid: GridSpec, F: Faces, G: Faces) -> float:
    # every face carries the control volume hx*hy
    return (float(np.sum(F.x * G.x)) + float(np.sum(F.y * G.y))) * grid.cell_volume


def l2_norm(grid: GridSpec, f: np.ndarray) -> float:
    return math.sqrt(inner_cells(grid, f, f))


def l2_norm_faces(grid: GridSpec, F: Faces) -> float:
    return math.sqrt(inner_faces(grid, F, F))


def grad_cc_to_face(grid: GridSpec, c: np.ndarray) -> Faces:
    """Face-normal gradient with zero wall faces (Neumann closure)."""
    F = Faces.zeros(grid)
    F.x[:, 1:-1] = (c[:, 1:] - c[:, :-1]) / grid.hx
    if grid.dim == 2:
        F.y[1:-1, :] = (c[1:, :] - c[:-1, :]) / grid.hy
    return F


def div_face_to_cc(grid: GridSpec, F: Faces) -> np.ndarray:
    """Cell divergence of face-normal components (negative adjoint of the gradient)."""
    out = (F.x[:, 1:] - F.x[:, :-1]) / grid.hx
    if grid.dim == 2:
        out = out + (F.y[1:, :] - F.y[:-1, :]) / grid.hy
    return out


def face_interp(grid: GridSpec, c: np.ndarray) -> Faces:
    """Arithmetic average onto faces; wall faces copy the adjacent cell."""
    F = Faces.zeros(grid)
    F.x[:, 1:-1] = 0.5 * (c[:, 1:] + c[:, :-1])
    F.x[:, 0] = c[:, 0]
    F.x[:, -1] = c[:, -1]
    F.y[1:-1, :] = 0.5 * (c[1:, :] + c[:-1, :])
    F.y[0, :] = c[0, :]
    F.y[-1, :] = c[-1, :]
    return F


def _check_coef(grid: GridSpec, coef: Faces) -> None:
    interior = coef.x[:, 1:-1]
    if grid.dim == 2:
        interior = np.concatenate([interior.ravel(), coef.y[1:-1, :].ravel()])
    if interior.size and not np.all(interior > 0):
        raise ConfigError("diffusion coefficient must be positive on interior faces")


def weighted_laplacian(grid: GridSpec, coef: Faces, c: np.ndarray) -> np.ndarray:
    """``div(coef * grad c)`` with no-flux walls."""
    _check_coef(grid, coef)
    return div_face_to_cc(grid, coef * grad_cc_to_face(grid, c))


def laplacian(grid: GridSpec, c: np.ndarray) -> np.ndarray:
    return div_face_to_cc(grid, grad_cc_to_face(grid, c))


def upwind_face_values(grid: GridSpec, c: np.ndarray, v: Faces) -> Faces:
    """Donor-cell face values of ``c`` for the face velocities ``v``."""
    F = Faces.zeros(grid)
    vx = v.x[:, 1:-1]
    F.x[:, 1:-1] = np.where(vx >= 0.0, c[:, :-1], c[:, 1:])
    if grid.dim == 2:
        vy = v.y[1:-1, :]
        F.y[1:-1, :] = np.where(vy >= 0.0, c[:-1, :], c[1:, :])
    return F


def upwind_advect(grid: GridSpec, c: np.ndarray, v: Faces) -> np.ndarray:
    """Conservative ``div(c v)`` with first-order upwind face values.

    Wall fluxes are dropped, so the result always integrates to zero.
    """
    flux = (upwind_face_values(grid, c, v) * v).zero_walls()
    return div_face_to_cc(grid, flux)


def central_advect(grid: GridSpec, c: np.ndarray, v: Faces) -> np.ndarray:
    """Conservative ``div(c v)`` with arithmetic-mean face values."""
    flux = (face_interp(grid, c) * v).zero_walls()
    return div_face_to_cc(grid, flux)


def advect(grid: GridSpec, c: np.ndarray, v: Faces, scheme: str = "upwind") -> np.ndarray:
    if scheme == "upwind":
        return upwind_advect(grid, c, v)
    if scheme == "central":
        return central_advect(grid, c, v)
    raise ConfigError(f"unknown advection scheme {scheme!r}")


def cell_gradient_magnitude_sq(grid: GridSpec, c: np.ndarray) -> np.ndarray:
    """Cell value of |grad c|^2, averaging the squared face gradients.

    Summing this over cells reproduces the face sum exactly.
    """
    g = grad_cc_to_face(grid, c)
    out = 0.5 * (g.x[:, 1:] ** 2 + g.x[:, :-1] ** 2)
    if grid.dim == 2:
        out = out + 0.5 * (g.y[1:, :] ** 2 + g.y[:-1, :] ** 2)
    return out


def cell_gradient(grid: GridSpec, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centred gradient vector obtained by averaging adjacent faces."""
    g = grad_cc_to_face(grid, c)
    gx = 0.5 * (g.x[:, 1:] + g.x[:, :-1])
    gy = 0.5 * (g.y[1:, :] + g.y[:-1, :])
    return gx, gy


class SparseOperators:
    """Sparse matrix forms of the stencil operators for one grid.

    Unknown ordering follows ``ravel()`` of the cell array and of ``Faces``.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.grad = self._build_grad()
        self.div = self._build_div()
        self.lap = (self.div @ self.grad).tocsr()

    def _build_grad(self) -> sp.csr_matrix:
        g = self.grid
        nx, ny = g.nx, g.ny
        rows, cols, vals = [], [], []
        j, i = np.meshgrid(np.arange(ny), np.arange(1, nx), indexing="ij")
        face = (j * (nx + 1) + i).ravel()
        left = (j * nx + i - 1).ravel()
        right = (j * nx + i).ravel()
        rows += [face, face]
        cols += [right, left]
        vals += [np.full(face.size, 1.0 / g.hx), np.full(face.size, -1.0 / g.hx)]
        if g.dim == 2:
            j, i = np.meshgrid(np.arange(1, ny), np.arange(nx), indexing="ij")
            face = (g.n_xfaces + j * nx + i).ravel()
            below = ((j - 1) * nx + i).ravel()
            above = (j * nx + i).ravel()
            rows += [face, face]
            cols += [above, below]
            vals += [np.full(face.size, 1.0 / g.hy), np.full(face.size, -1.0 / g.hy)]
        shape = (g.n_xfaces + g.n_yfaces, g.size)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=shape)

    def _build_div(self) -> sp.csr_matrix:
        g = self.grid
        nx, ny = g.nx, g.ny
        j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        cell = (j * nx + i).ravel()
        rows = [cell, cell]
        cols = [(j * (nx + 1) + i + 1).ravel(), (j * (nx + 1) + i).ravel()]
        vals = [np.full(cell.size, 1.0 / g.hx), np.full(cell.size, -1.0 / g.hx)]
        if g.dim == 2:
            rows += [cell, cell]
            cols += [(g.n_xfaces + (j + 1) * nx + i).ravel(), (g.n_xfaces + j * nx + i).ravel()]
            vals += [np.full(cell.size, 1.0 / g.hy), np.full(cell.size, -1.0 / g.hy)]
        shape = (g.size, g.n_xfaces + g.n_yfaces)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=shape)

    def weighted_laplacian(self, coef: Faces) -> sp.csr_matrix:
        return (self.div @ sp.diags(coef.ravel()) @ self.grad).tocsr()
