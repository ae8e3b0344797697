"""Linear solves: Neumann Poisson, implicit Helmholtz steps, the coupled
Cahn-Hilliard step and a coupled Brinkman solve.

Every system that has constants in its null space (or that acts as the identity
on constants) is solved on the mean-zero subspace: the mean is split off
exactly and the iterate is re-projected after each update.  This is what makes
the discrete mass identities hold to round-off rather than to solver tolerance.

Two backends share one interface:

* ``"cg"`` -- Jacobi-preconditioned conjugate gradients (the reference);
* ``"direct"`` -- sparse LU factorizations, cached per coefficient set, which
  is far cheaper for long runs on small grids.
"""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from chdsharp.errors import ConfigError, PreconditionError, SolverError
from chdsharp.grid import Faces, GridSpec

METHODS = ("cg", "direct")


@dataclass(frozen=True)
class LinSolveConfig:
    """Tolerances and backend for every linear solve.

    ``max_iter=None`` means ``10 * nx * ny``.
    """

    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_iter: int | None = None
    method: str = "cg"

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ConfigError("solver tolerances must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.method not in METHODS:
            raise ConfigError(f"unknown linear solver method {self.method!r}")

    def iterations_for(self, grid: GridSpec) -> int:
        return self.max_iter if self.max_iter is not None else 10 * grid.size


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: list[float] = field(default_factory=list)


def _rms(v: np.ndarray) -> float:
    return math.sqrt(float(np.dot(v, v)) / v.size)


def _demean(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def conjugate_gradient(apply_a: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       x0: np.ndarray | None = None,
                       diag: np.ndarray | None = None,
                       project: Callable[[np.ndarray], np.ndarray] | None = None,
                       rel_tol: float = 1e-9, abs_tol: float = 1e-12,
                       max_iter: int = 1000,
                       precond: Callable[[np.ndarray], np.ndarray] | None = None) -> CGResult:
    """Preconditioned CG for a symmetric positive (semi)definite operator.

    Parameters
    ----------
    apply_a:
        Matrix-vector product.
    b:
        Right-hand side (flat).
    diag:
        Jacobi preconditioner diagonal; identity when ``None``.
    project:
        Optional projector onto the subspace where ``A`` is definite.  It is
        applied to the rhs, the initial guess and after every update.
    precond:
        General SPD preconditioner ``r -> M^{-1} r``; overrides ``diag``.

    The stopping test is ``rms(r) <= max(rel_tol * rms(b), abs_tol)``.
    """
    proj = project or (lambda v: v)
    b = proj(np.asarray(b, dtype=float))
    x = proj(np.zeros_like(b) if x0 is None else np.array(x0, dtype=float))
    r = b - apply_a(x) if x0 is not None else b.copy()
    r = proj(r)
    target = max(rel_tol * _rms(b), abs_tol)
    res = _rms(r)
    history = [res]
    if res <= target:
        return CGResult(x, 0, res, True, history)
    inv_d = None if diag is None else 1.0 / diag

    def prec(v):
        if precond is not None:
            return proj(precond(v))
        return proj(v * inv_d) if inv_d is not None else v.copy()

    z = prec(r)
    p = z.copy()
    rz = float(np.dot(r, z))
    for it in range(1, max_iter + 1):
        ap = apply_a(p)
        pap = float(np.dot(p, ap))
        if not pap > 0:
            return CGResult(x, it, res, False, history)
        alpha = rz / pap
        x = proj(x + alpha * p)
        r = proj(r - alpha * ap)
        res = _rms(r)
        history.append(res)
        if res <= target:
            return CGResult(x, it, res, True, history)
        z = prec(r)
        rz_new = float(np.dot(r, z))
        p = proj(z + (rz_new / rz) * p)
        rz = rz_new
    return CGResult(x, max_iter, res, False, history)


def _coef_key(*parts) -> str:
    h = hashlib.blake2b(digest_size=16)
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p).tobytes())
        else:
            h.update(repr(p).encode())
    return h.hexdigest()


class EllipticSolver:
    """All linear solves for one grid, with factorization caching.

    The object is cheap to create; sparse operators come from the grid.
    ``last`` maps a solve name to ``(iterations, residual)`` of its latest call.
    """

    def __init__(self, grid: GridSpec, cfg: LinSolveConfig | None = None, cache_size: int = 16):
        self.grid = grid
        self.cfg = cfg or LinSolveConfig()
        self.ops = grid.operators
        self.last: dict[str, tuple[int, float]] = {}
        self._lu: OrderedDict[str, object] = OrderedDict()
        self._cache_size = cache_size
        self._brinkman_mats: dict[tuple, tuple] = {}

    # -- helpers ----------------------------------------------------------
    def _factor(self, key: str, build: Callable[[], sp.spmatrix]):
        lu = self._lu.get(key)
        if lu is None:
            lu = spla.splu(build().tocsc())
            self._lu[key] = lu
            if len(self._lu) > self._cache_size:
                self._lu.popitem(last=False)
        else:
            self._lu.move_to_end(key)
        return lu

    def _run_cg(self, name: str, apply_a, b, diag, project, x0=None) -> np.ndarray:
        cfg = self.cfg
        res = conjugate_gradient(apply_a, b, x0=x0, diag=diag, project=project,
                                 rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol,
                                 max_iter=cfg.iterations_for(self.grid))
        self.last[name] = (res.iterations, res.residual)
        if not res.converged:
            raise SolverError(f"{name} solve did not converge", res.residual, res.iterations)
        return res.x

    def _record_direct(self, name: str, a_apply, x, b):
        self.last[name] = (0, _rms(b - a_apply(x)))

    # -- Neumann Poisson --------------------------------------------------
    def poisson(self, rhs: np.ndarray) -> np.ndarray:
        """Mean-zero ``u`` with ``-Lap_h u = rhs`` and no-flux walls.

        Raises
        ------
        PreconditionError
            If ``rhs`` does not have zero mean (relative 1e-10).
        """
        g = self.grid
        b = np.asarray(rhs, dtype=float).ravel()
        if abs(b.mean()) > 1e-10 * max(_rms(b), 1e-300) and abs(b.mean()) > 1e-14:
            raise PreconditionError(
                f"Neumann Poisson rhs must have zero mean (mean = {b.mean():.3e})")
        b = _demean(b)
        neg_lap = -self.ops.lap
        apply_a = lambda v: neg_lap @ v
        if self.cfg.method == "direct":
            def build():
                m = neg_lap.tolil()
                m[0, :] = 0.0
                m[0, 0] = 1.0
                return m
            lu = self._factor("poisson", build)
            bb = b.copy()
            bb[0] = 0.0
            x = _demean(lu.solve(bb))
            self._record_direct("poisson", apply_a, x, b)
        else:
            x = self._run_cg("poisson", apply_a, b, neg_lap.diagonal(), _demean)
        return x.reshape(g.shape)

    # -- implicit diffusion for theta --------------------------------------
    def helmholtz(self, theta_old: np.ndarray, coef: Faces, dt: float,
                  explicit_rhs: np.ndarray) -> np.ndarray:
        """Solve ``(I - dt div(coef grad)) u = theta_old + dt * explicit_rhs``."""
        if not dt > 0:
            raise ConfigError("dt must be positive")
        g = self.grid
        lap_n = self.ops.weighted_laplacian(coef)
        rhs = (np.asarray(theta_old, float) + dt * np.asarray(explicit_rhs, float)).ravel()
        m = rhs.mean()
        b = rhs - m
        mat = (sp.identity(g.size, format="csr") - dt * lap_n).tocsr()
        apply_a = lambda v: mat @ v
        if self.cfg.method == "direct":
            lu = self._factor(_coef_key("helm", dt, coef.x, coef.y), lambda: mat)
            x = _demean(lu.solve(b))
            self._record_direct("theta", apply_a, x, b)
        else:
            x = self._run_cg("theta", apply_a, b, mat.diagonal(), _demean)
        return (x + m).reshape(g.shape)

    # -- coupled Cahn-Hilliard step ------------------------------------------
    def cahn_hilliard(self, phi_old: np.ndarray, mu_explicit: np.ndarray, m_face: Faces,
                      dt: float, eps: float, S0: float,
                      explicit_rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Stabilized semi-implicit step; returns ``(phi_new, mu_new)``.

        With ``B = -eps Lap + (S0/eps) I`` and ``g = mu_explicit - (S0/eps) phi_old``
        the scheme is

            phi_new - dt div(m grad mu_new) = phi_old + dt * explicit_rhs
            mu_new = B phi_new + g

        Eliminating ``mu_new`` gives ``(I - dt L_m B) phi_new = f``.  That operator
        is the identity on constants and self-adjoint in the ``B`` inner product
        on mean-zero fields, so CG runs on ``B (I - dt L_m B)``, which is
        symmetric positive definite there.
        """
        if not (dt > 0 and eps > 0):
            raise ConfigError("dt and eps must be positive")
        if S0 < 0:
            raise ConfigError("stabilization S0 must be non-negative")
        g = self.grid
        n = g.size
        lap = self.ops.lap
        lap_m = self.ops.weighted_laplacian(m_face)
        s = S0 / eps
        B = (-eps * lap + s * sp.identity(n, format="csr")).tocsr()
        po = np.asarray(phi_old, float).ravel()
        gvec = np.asarray(mu_explicit, float).ravel() - s * po
        f = po + dt * np.asarray(explicit_rhs, float).ravel() + dt * (lap_m @ gvec)
        fm = f.mean()
        b = f - fm
        a_apply = lambda v: v - dt * (lap_m @ (B @ v))
        if self.cfg.method == "direct":
            key = _coef_key("ch", dt, eps, S0, m_face.x, m_face.y)
            lu = self._factor(key, lambda: sp.identity(n, format="csr") - dt * (lap_m @ B))
            x = _demean(lu.solve(b))
            self._record_direct("ch", a_apply, x, b)
        else:
            def apply_ba(v):
                bv = B @ v
                return bv - dt * (B @ (lap_m @ bv))
            db = B.diagonal()
            diag = db + dt * db * db * (-lap_m.diagonal())
            x = self._run_cg("ch", apply_ba, B @ b, diag, _demean)
        phi = x + fm
        mu = B @ phi + gvec
        return phi.reshape(g.shape), mu.reshape(g.shape)

    # -- Brinkman ----------------------------------------------------------------
    def _face_helmholtz(self, eta: float, K: float):
        """Matrices ``K I - eta Lap`` on interior x- and y-faces with no-slip walls."""
        key = (eta, K)
        if key in self._brinkman_mats:
            return self._brinkman_mats[key]
        g = self.grid

        def lap_1d(n, h, ghost):
            # Dirichlet at the face itself (ghost=0) or half a cell away (ghost=-1)
            main = np.full(n, -2.0)
            main[0] += ghost
            main[-1] += ghost
            return sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1]) / h ** 2

        nxi = g.nx - 1
        lx = lap_1d(nxi, g.hx, 0.0)
        if g.dim == 2:
            ly = lap_1d(g.ny, g.hy, -1.0)
            lap_x = sp.kron(sp.identity(g.ny), lx) + sp.kron(ly, sp.identity(nxi))
            lxx = lap_1d(g.nx, g.hx, -1.0)
            lyy = lap_1d(g.ny - 1, g.hy, 0.0)
            lap_y = sp.kron(sp.identity(g.ny - 1), lxx) + sp.kron(lyy, sp.identity(g.nx))
            my = (K * sp.identity(lap_y.shape[0]) - eta * lap_y).tocsc()
        else:
            lap_x = lx
            my = None
        mx = (K * sp.identity(lap_x.shape[0]) - eta * lap_x).tocsc()
        out = (mx, my)
        self._brinkman_mats[key] = out
        return out

    def _interior_faces(self) -> np.ndarray:
        g = self.grid
        j, i = np.meshgrid(np.arange(g.ny), np.arange(1, g.nx), indexing="ij")
        idx = [(j * (g.nx + 1) + i).ravel()]
        if g.dim == 2:
            j, i = np.meshgrid(np.arange(1, g.ny), np.arange(g.nx), indexing="ij")
            idx.append((g.n_xfaces + j * g.nx + i).ravel())
        return np.concatenate(idx)

    def brinkman(self, force: Faces, eta: float, K: float,
                 H: np.ndarray | None = None) -> tuple[Faces, np.ndarray]:
        """Coupled solve of ``K v - eta Lap v + grad p = force``, ``div v = H``.

        The pressure solves the Schur complement ``D A^{-1} G p = D A^{-1} f - H``
        (``A = K - eta Lap`` on interior faces, no-slip walls) by CG with the
        preconditioner ``K (-Lap)^{-1} + eta``; the velocity is then
        ``A^{-1}(f - G p)``.  The face blocks are factorized once per
        ``(eta, K)``.  With ``eta = 0`` one iteration reproduces the Darcy
        projection.
        """
        if eta < 0 or not K > 0:
            raise ConfigError("Brinkman solve needs eta >= 0 and K > 0")
        g = self.grid
        inner = self._interior_faces()
        gi = self.ops.grad[inner, :]
        if eta == 0.0:
            def a_inv(b):
                return b / K
        else:
            mx, my = self._face_helmholtz(eta, K)
            lux = self._factor(f"bx{eta!r}{K!r}", lambda: mx)
            luy = self._factor(f"by{eta!r}{K!r}", lambda: my) if my is not None else None
            nxf = mx.shape[0]

            def a_inv(b):
                out = np.empty_like(b)
                out[:nxf] = lux.solve(b[:nxf])
                if luy is not None:
                    out[nxf:] = luy.solve(b[nxf:])
                return out

        def schur(q):
            return gi.T @ a_inv(gi @ q)

        def prec(r):
            return K * self.poisson(_demean(r).reshape(g.shape)).ravel() + eta * r

        h = np.zeros(g.size) if H is None else _demean(np.asarray(H, float).ravel())
        f = force.ravel()[inner]
        # G^T = -div on interior faces, so div v = h reads G^T v = -h
        rhs = gi.T @ a_inv(f) + h
        cfg = self.cfg
        res = conjugate_gradient(schur, rhs, project=_demean, precond=prec,
                                 rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol,
                                 max_iter=cfg.iterations_for(g))
        if not res.converged:
            raise SolverError("brinkman solve did not converge", res.residual, res.iterations)
        flat = np.zeros(g.n_xfaces + g.n_yfaces)
        flat[inner] = a_inv(f - gi @ res.x)
        v = Faces.from_flat(g, flat)
        p = res.x.reshape(g.shape)
        div = self.ops.div @ flat - h
        self.last["brinkman"] = (res.iterations, float(np.sqrt(np.mean(div ** 2))))
        return v, p


# -- module-level wrappers -----------------------------------------------------

def solve_poisson_neumann(grid: GridSpec, rhs: np.ndarray,
                          cfg: LinSolveConfig | None = None) -> np.ndarray:
    return EllipticSolver(grid, cfg).poisson(rhs)


def solve_theta_helmholtz(grid: GridSpec, theta_old: np.ndarray, coef_face: Faces, dt: float,
                          explicit_rhs: np.ndarray, cfg: LinSolveConfig | None = None
                          ) -> np.ndarray:
    return EllipticSolver(grid, cfg).helmholtz(theta_old, coef_face, dt, explicit_rhs)


def solve_ch_coupled(grid: GridSpec, phi_old: np.ndarray, mu_explicit: np.ndarray,
                     m_face: Faces, dt: float, eps: float, S0: float,
                     explicit_rhs: np.ndarray, cfg: LinSolveConfig | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    return EllipticSolver(grid, cfg).cahn_hilliard(phi_old, mu_explicit, m_face, dt, eps,
                                                   S0, explicit_rhs)


def solve_brinkman(grid: GridSpec, force: Faces, eta: float, K: float,
                   cfg: LinSolveConfig | None = None, H: np.ndarray | None = None
                   ) -> tuple[Faces, np.ndarray]:
    return EllipticSolver(grid, cfg).brinkman(force, eta, K, H)
