"""Runtime observables: energies, the energy-identity residual, uniform-estimate
norms, Hölder quotients, interface extraction and jump measurement.

All spatial integrals use the same midpoint quadrature and face-based
gradients as the solver, so identities that hold for the scheme show up here
without extra quadrature error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from chdsharp import grid as G
from chdsharp.dynamics import ModelSpec, Numerics, SimState
from chdsharp.elliptic import EllipticSolver
from chdsharp.errors import ConfigError, ProbeError
from chdsharp.grid import Faces, GridSpec
from chdsharp.potential import DoubleWell, WTransform

CSV_COLUMNS = (
    "t", "energy_E", "gl_energy", "discrepancy_pos", "G_quantity", "mean_phi", "mean_mu",
    "mean_theta_sigma", "L2_phi_dev", "L2_theta", "H1_mu", "H1_theta", "L2_v", "L2_p",
    "tv_w", "energy_residual", "sigma_jump", "max_abs_phi",
)

_W_CACHE: dict = {}


def w_transform(well: DoubleWell) -> WTransform:
    """Shared :class:`WTransform` per potential (tables are immutable)."""
    key = well.name if well.name != "custom" else id(well)
    wt = _W_CACHE.get(key)
    if wt is None:
        wt = _W_CACHE[key] = WTransform(well)
    return wt


@dataclass
class DiagnosticsRecord:
    """Scalar observables at one sample time (``nan`` marks "not available")."""

    t: float = math.nan
    energy_E: float = math.nan
    gl_energy: float = math.nan
    discrepancy_pos: float = math.nan
    G_quantity: float = math.nan
    mean_phi: float = math.nan
    mean_mu: float = math.nan
    mean_theta_sigma: float = math.nan
    L2_phi_dev: float = math.nan
    L2_theta: float = math.nan
    H1_mu: float = math.nan
    H1_theta: float = math.nan
    L2_v: float = math.nan
    L2_p: float = math.nan
    tv_w: float = math.nan
    energy_residual: float = math.nan
    sigma_jump: float = math.nan
    max_abs_phi: float = math.nan
    solver_residuals: dict = field(default_factory=dict)

    def row(self) -> list[float]:
        return [getattr(self, c) for c in CSV_COLUMNS]

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class InterfaceProbe:
    """Zero crossings of ``phi`` with unit normals pointing into ``phi > 0``.

    ``points`` and ``normals`` have shape ``(k, 2)``; ``length`` is the
    marching-squares length of the zero level set (2D) or the number of
    crossings (1D, i.e. the cross-section measure counted per interface).
    """

    points: np.ndarray
    normals: np.ndarray
    length: float
    delta: float | None = None

    @property
    def empty(self) -> bool:
        return self.points.shape[0] == 0

    def __len__(self) -> int:
        return int(self.points.shape[0])


# -- energies ---------------------------------------------------------------------


def gradient_energy(grid: GridSpec, c: np.ndarray) -> float:
    """``||grad c||^2`` with face gradients."""
    return G.l2_norm_faces(grid, G.grad_cc_to_face(grid, c)) ** 2


def energy_total(grid: GridSpec, model: ModelSpec, phi: np.ndarray, theta: np.ndarray) -> float:
    """Free energy with the ``-chi^2/2 phi^2`` cross term."""
    eps, chi = model.eps, model.chi
    bulk = G.integrate(grid, model.potential.psi(phi) / eps + 0.5 * theta ** 2
                       - 0.5 * chi * chi * phi ** 2)
    return bulk + 0.5 * eps * gradient_energy(grid, phi)


def gl_density_and_discrepancy(grid: GridSpec, model: ModelSpec, phi: np.ndarray
                               ) -> tuple[float, float]:
    """``(int e, int max(xi, 0))`` with ``xi = (eps/2)|grad phi|^2 - Psi/eps``.

    Cell values of ``|grad phi|^2`` average the two adjacent squared face
    gradients per direction, so ``int e`` matches the energy exactly.
    """
    eps = model.eps
    g2 = G.cell_gradient_magnitude_sq(grid, phi)
    psi = model.potential.psi(phi) / eps
    e = psi + 0.5 * eps * g2
    xi = 0.5 * eps * g2 - psi
    return G.integrate(grid, e), G.integrate(grid, np.maximum(xi, 0.0))


def g_quantity(grid: GridSpec, model: ModelSpec, phi, theta) -> float:
    eps = model.eps
    return (G.integrate(grid, model.potential.psi(phi)) / (2.0 * eps)
            + 0.5 * eps * gradient_energy(grid, phi) + G.l2_norm(grid, theta) ** 2)


# -- energy identity ------------------------------------------------------------------


class EnergyBudget:
    """Evaluates the terms of the energy identity for single states."""

    def __init__(self, grid: GridSpec, model: ModelSpec, solver: EllipticSolver | None = None):
        self.grid = grid
        self.model = model
        self.solver = solver or EllipticSolver(grid)
        self.X, self.Y = grid.cell_centers()
        self.U = model.sources.U_field(self.X, self.Y)

    def energy(self, s: SimState) -> float:
        return energy_total(self.grid, self.model, s.phi, s.theta)

    def viscous(self, v: Faces) -> float:
        """``||grad v||^2`` with no-slip walls, equal to ``int 2|Dv|^2`` for solenoidal ``v``."""
        g = self.grid
        mx, my = self.solver._face_helmholtz(1.0, 0.0)
        vx = v.x[:, 1:-1].ravel()
        out = float(vx @ (mx @ vx))
        if g.dim == 2:
            vy = v.y[1:-1, :].ravel()
            out += float(vy @ (my @ vy))
        return out * g.cell_volume

    def dissipation(self, s: SimState) -> float:
        g, m = self.grid, self.model
        gm = G.grad_cc_to_face(g, s.mu)
        gt = G.grad_cc_to_face(g, s.theta)
        d = (G.inner_faces(g, G.face_interp(g, m.m(s.phi)) * gm, gm)
             + G.inner_faces(g, G.face_interp(g, m.n(s.phi)) * gt, gt))
        if m.variant.kind != "zero_velocity":
            d += m.K * G.l2_norm_faces(g, s.v) ** 2
            if m.variant.is_brinkman:
                d += m.eta * self.viscous(s.v)
        return d

    def sources(self, s: SimState) -> float:
        g, m = self.grid, self.model
        out = 0.0
        if self.U is not None:
            out += G.inner_cells(g, self.U * s.phi, s.mu)
        S = m.sources.S_field(self.X, self.Y, s.t)
        if S is not None:
            out += G.inner_cells(g, S, s.theta)
        if m.variant.kind == "darcy":
            H = m.sources.H_field(self.X, self.Y, s.t)
            if H is not None:
                sig = s.theta + m.chi * s.phi
                out += G.inner_cells(g, H, s.p - s.phi * s.mu - 0.5 * sig * sig)
        return out

    def residual(self, prev: SimState, new: SimState, dt: float,
                 e_prev: float | None = None, e_new: float | None = None) -> float:
        """Signed one-step residual with trapezoidal time integrals."""
        e0 = self.energy(prev) if e_prev is None else e_prev
        e1 = self.energy(new) if e_new is None else e_new
        diss = 0.5 * (self.dissipation(prev) + self.dissipation(new))
        src = 0.5 * (self.sources(prev) + self.sources(new))
        return e1 - e0 + dt * diss - dt * src


def energy_identity_residual(grid: GridSpec, model: ModelSpec, prev: SimState, state: SimState,
                             dt: float, solver: EllipticSolver | None = None) -> float:
    """``|E(t1) - E(t0) + int dissipation - int sources|`` over one step."""
    return abs(EnergyBudget(grid, model, solver).residual(prev, state, dt))


# -- norms ------------------------------------------------------------------------------


def tv_w(grid: GridSpec, w: np.ndarray) -> float:
    """Face sum of ``|grad w|`` times the face control volume."""
    gw = G.grad_cc_to_face(grid, w)
    return (float(np.abs(gw.x).sum()) + float(np.abs(gw.y).sum())) * grid.cell_volume


def uniform_estimate_norms(grid: GridSpec, model: ModelSpec, state: SimState,
                           wt: WTransform | None = None) -> dict:
    wt = wt or w_transform(model.potential)
    phi, th = state.phi, state.theta
    w = wt.w_array(phi)
    return dict(
        mean_phi=G.mean(phi),
        mean_mu=G.mean(state.mu),
        mean_theta_sigma=G.mean(th + model.chi * phi),
        L2_phi_dev=G.l2_norm(grid, np.abs(phi) - 1.0),
        L2_theta=G.l2_norm(grid, th),
        H1_mu=math.sqrt(gradient_energy(grid, state.mu)),
        H1_theta=math.sqrt(gradient_energy(grid, th)),
        L2_v=G.l2_norm_faces(grid, state.v),
        L2_p=G.l2_norm(grid, state.p),
        tv_w=tv_w(grid, w),
        max_abs_phi=float(np.abs(phi).max()),
    )


# -- Hölder quotients -------------------------------------------------------------------


class SnapshotRing:
    """Bounded, decimating store of ``(t, phi, w)`` snapshots.

    Every ``stride``-th offered snapshot is kept.  When the ring is full every
    other entry is dropped and the stride doubles, so the kept times stay
    roughly uniform over the whole run.
    """

    def __init__(self, capacity: int = 32):
        if capacity < 2:
            raise ConfigError("snapshot ring needs capacity >= 2")
        self.capacity = capacity
        self.stride = 1
        self._offered = 0
        self.items: list[tuple[float, np.ndarray, np.ndarray]] = []

    def offer(self, t: float, phi: np.ndarray, w_fn) -> None:
        k = self._offered
        self._offered += 1
        if k % self.stride:
            return
        if len(self.items) >= self.capacity:
            self.items = self.items[::2]
            self.stride *= 2
            if k % self.stride:
                return
        self.items.append((float(t), phi.copy(), np.asarray(w_fn(phi))))

    def __len__(self) -> int:
        return len(self.items)


def holder_quotients(grid: GridSpec, snapshots) -> tuple[float, float]:
    """Max over stored pairs of the two Hölder-in-time quotients.

    ``q_phi = ||phi(t) - phi(s)||_{L2}^2 / |t - s|^{1/4}`` and
    ``q_w = ||w(t) - w(s)||_{L1} / |t - s|^{1/8}``.
    """
    items = snapshots.items if isinstance(snapshots, SnapshotRing) else list(snapshots)
    if len(items) < 2:
        raise ConfigError("Hölder quotients need at least two snapshots")
    qp = qw = 0.0
    for i in range(len(items)):
        ti, pi, wi = items[i]
        for j in range(i + 1, len(items)):
            tj, pj, wj = items[j]
            dt = abs(tj - ti)
            if dt == 0.0:
                continue
            qp = max(qp, G.l2_norm(grid, pi - pj) ** 2 / dt ** 0.25)
            qw = max(qw, G.integrate(grid, np.abs(wi - wj)) / dt ** 0.125)
    return qp, qw


# -- interface --------------------------------------------------------------------------


def _bilinear(grid: GridSpec, f: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Interpolate cell data; constant extension between the outer centres and the walls."""
    fx = np.clip(x / grid.hx - 0.5, 0.0, grid.nx - 1.0)
    i0 = np.minimum(np.floor(fx).astype(int), grid.nx - 2)
    ax = fx - i0
    if grid.dim == 1:
        row = f[0]
        return (1 - ax) * row[i0] + ax * row[i0 + 1]
    fy = np.clip(y / grid.hy - 0.5, 0.0, grid.ny - 1.0)
    j0 = np.minimum(np.floor(fy).astype(int), grid.ny - 2)
    ay = fy - j0
    return ((1 - ax) * (1 - ay) * f[j0, i0] + ax * (1 - ay) * f[j0, i0 + 1]
            + (1 - ax) * ay * f[j0 + 1, i0] + ax * ay * f[j0 + 1, i0 + 1])


def _crossings_1d(a: np.ndarray, b: np.ndarray):
    """Indices where the segment from ``a`` to ``b`` crosses zero, and the fraction."""
    hit = ((a <= 0) & (b > 0)) | ((a > 0) & (b <= 0))
    idx = np.nonzero(hit)[0]
    frac = a[idx] / (a[idx] - b[idx])
    return idx, frac


def _marching_squares_length(grid: GridSpec, phi: np.ndarray) -> float:
    """Length of the zero contour of the bilinear interpolant (cell-centre lattice)."""
    hx, hy = grid.hx, grid.hy
    a = phi[:-1, :-1]
    b = phi[:-1, 1:]
    c = phi[1:, 1:]
    d = phi[1:, :-1]
    total = 0.0
    pos = [a > 0, b > 0, c > 0, d > 0]
    # points on the four edges in local coordinates (x right, y up), unit square scaled
    with np.errstate(divide="ignore", invalid="ignore"):
        e_bottom = (a / (a - b), np.zeros_like(a))
        e_right = (np.ones_like(a), b / (b - c))
        e_top = (d / (d - c), np.ones_like(a))
        e_left = (np.zeros_like(a), a / (a - d))
    edges = [
        (pos[0] != pos[1], e_bottom),
        (pos[1] != pos[2], e_right),
        (pos[3] != pos[2], e_top),
        (pos[0] != pos[3], e_left),
    ]
    cut = np.stack([e[0] for e in edges])
    ncut = cut.sum(axis=0)
    xs = np.stack([e[1][0] for e in edges]) * hx
    ys = np.stack([e[1][1] for e in edges]) * hy

    two = ncut == 2
    if np.any(two):
        order = np.argsort(~cut, axis=0, kind="stable")[:2]
        jj, ii = np.nonzero(two)
        k0 = order[0][two]
        k1 = order[1][two]
        dx = xs[k0, jj, ii] - xs[k1, jj, ii]
        dy = ys[k0, jj, ii] - ys[k1, jj, ii]
        total += float(np.hypot(dx, dy).sum())
    four = ncut == 4
    if np.any(four):
        jj, ii = np.nonzero(four)
        centre = 0.25 * (a + b + c + d)[four]
        xb, yb = xs[:, jj, ii], ys[:, jj, ii]
        same = (centre > 0) == pos[0][four]
        # saddle: the centre value decides which corners are joined
        l1 = np.where(same,
                      np.hypot(xb[0] - xb[1], yb[0] - yb[1]) + np.hypot(xb[2] - xb[3], yb[2] - yb[3]),
                      np.hypot(xb[0] - xb[3], yb[0] - yb[3]) + np.hypot(xb[1] - xb[2], yb[1] - yb[2]))
        total += float(l1.sum())
    return total


def extract_interface(grid: GridSpec, phi: np.ndarray) -> InterfaceProbe:
    """Zero crossings of ``phi`` along grid lines with outward (phi > 0) normals."""
    xc, yc = grid.x_centers(), grid.y_centers()
    pts, nrm = [], []
    # along x (rows)
    jj, ii = np.nonzero(((phi[:, :-1] <= 0) & (phi[:, 1:] > 0))
                        | ((phi[:, :-1] > 0) & (phi[:, 1:] <= 0)))
    a, b = phi[jj, ii], phi[jj, ii + 1]
    px = xc[ii] + grid.hx * a / (a - b)
    py = yc[jj] if grid.dim == 2 else np.full(ii.size, 0.5 * grid.ly)
    pts.append(np.column_stack([px, py]))
    if grid.dim == 2:
        jj2, ii2 = np.nonzero(((phi[:-1, :] <= 0) & (phi[1:, :] > 0))
                              | ((phi[:-1, :] > 0) & (phi[1:, :] <= 0)))
        a2, b2 = phi[jj2, ii2], phi[jj2 + 1, ii2]
        qy = yc[jj2] + grid.hy * a2 / (a2 - b2)
        pts.append(np.column_stack([xc[ii2], qy]))
        P = np.concatenate(pts)
        gx, gy = G.cell_gradient(grid, phi)
        nx_ = _bilinear(grid, gx, P[:, 0], P[:, 1])
        ny_ = _bilinear(grid, gy, P[:, 0], P[:, 1])
        nn = np.hypot(nx_, ny_)
        nn[nn == 0] = 1.0
        N = np.column_stack([nx_ / nn, ny_ / nn])
        length = _marching_squares_length(grid, phi)
    else:
        P = pts[0]
        N = np.column_stack([np.sign(b - a), np.zeros(ii.size)])
        length = float(ii.size)
    return InterfaceProbe(P, N, length)


def default_delta(grid: GridSpec, eps: float) -> float:
    return max(3.0 * eps, 2.0 * max(grid.hx, grid.hy if grid.dim == 2 else 0.0))


def measure_jump(grid: GridSpec, f: np.ndarray, probe: InterfaceProbe, delta: float,
                 skip_outside: bool = False) -> float | None:
    """Mean of ``f(x + delta n) - f(x - delta n)`` over the crossings.

    Returns ``None`` when there is no crossing.  A probe point outside the
    domain raises :class:`ProbeError`, or is dropped when ``skip_outside``.
    """
    if probe.empty:
        return None
    if delta < 2.0 * grid.hx * (1 - 1e-12) or (grid.dim == 2 and delta < 2.0 * grid.hy * (1 - 1e-12)):
        raise ConfigError(f"probe offset {delta:g} must be at least two cells")
    P, N = probe.points, probe.normals
    plus = P + delta * N
    minus = P - delta * N

    def inside(Q):
        ok = (Q[:, 0] >= 0) & (Q[:, 0] <= grid.lx)
        if grid.dim == 2:
            ok &= (Q[:, 1] >= 0) & (Q[:, 1] <= grid.ly)
        return ok

    ok = inside(plus) & inside(minus)
    if not ok.all():
        if not skip_outside:
            raise ProbeError(f"{int((~ok).sum())} probe point(s) fall outside the domain "
                             f"(offset {delta:g})")
        if not ok.any():
            return None
        plus, minus = plus[ok], minus[ok]
    fp = _bilinear(grid, f, plus[:, 0], plus[:, 1])
    fm = _bilinear(grid, f, minus[:, 0], minus[:, 1])
    return float(np.mean(fp - fm))


def measure_sigma_jump(grid: GridSpec, model: ModelSpec, state: SimState,
                       delta: float | None = None, probe: InterfaceProbe | None = None,
                       skip_outside: bool = False) -> float | None:
    """Jump of ``sigma = theta + chi phi`` across the zero level set of ``phi``."""
    probe = probe or extract_interface(grid, state.phi)
    delta = delta if delta is not None else (probe.delta or default_delta(grid, model.eps))
    return measure_jump(grid, state.theta + model.chi * state.phi, probe, delta, skip_outside)


def measure_theta_jump(grid: GridSpec, model: ModelSpec, state: SimState,
                       delta: float | None = None, probe: InterfaceProbe | None = None,
                       skip_outside: bool = False) -> float | None:
    probe = probe or extract_interface(grid, state.phi)
    delta = delta if delta is not None else default_delta(grid, model.eps)
    return measure_jump(grid, state.theta, probe, delta, skip_outside)


# -- run-time tracker ---------------------------------------------------------------------


@dataclass(frozen=True)
class DiagConfig:
    """How often and what the tracker records."""

    interval: int = 1
    snapshot_capacity: int = 32
    delta: float | None = None
    holder: bool = True
    jump: bool = True

    def __post_init__(self):
        if self.interval < 1:
            raise ConfigError("diagnostics interval must be >= 1")


class Tracker:
    """Collects :class:`DiagnosticsRecord` rows and per-step series during a run.

    Per step it accumulates ``sum |r_n|`` of the one-step energy residuals and
    stores the energy, so callers can check monotonicity step by step.
    """

    def __init__(self, grid: GridSpec, model: ModelSpec, numerics: Numerics | None = None,
                 config: DiagConfig | None = None, solver: EllipticSolver | None = None):
        self.grid = grid
        self.model = model
        self.numerics = numerics
        self.config = config or DiagConfig()
        self.solver = solver or EllipticSolver(grid)
        self.budget = EnergyBudget(grid, model, self.solver)
        self.wt = w_transform(model.potential)
        self.records: list[DiagnosticsRecord] = []
        self.energies: list[float] = []
        self.times: list[float] = []
        self.residuals: list[float] = []
        self.mean_mu: list[float] = []
        self.accumulated_residual = 0.0
        self.ring = SnapshotRing(self.config.snapshot_capacity)
        self._e_last: float | None = None

    def record(self, state: SimState) -> DiagnosticsRecord:
        g, m = self.grid, self.model
        gl, disc = gl_density_and_discrepancy(g, m, state.phi)
        norms = uniform_estimate_norms(g, m, state, self.wt)
        jump = math.nan
        if self.config.jump:
            try:
                delta = self.config.delta or default_delta(g, m.eps)
                j = measure_sigma_jump(g, m, state, delta, skip_outside=True)
                jump = math.nan if j is None else j
            except ConfigError:
                jump = math.nan
        e = self._e_last if self._e_last is not None else self.budget.energy(state)
        return DiagnosticsRecord(
            t=state.t, energy_E=e, gl_energy=gl, discrepancy_pos=disc,
            G_quantity=g_quantity(g, m, state.phi, state.theta),
            energy_residual=self.accumulated_residual, sigma_jump=jump,
            solver_residuals=dict(self.solver.last), **norms)

    def start(self, state: SimState, final: bool = False) -> None:
        self._e_last = self.budget.energy(state)
        self.energies.append(self._e_last)
        self.times.append(state.t)
        self.mean_mu.append(G.mean(state.mu))
        if self.config.holder:
            self.ring.offer(state.t, state.phi, self.wt.w_array)
        self.records.append(self.record(state))

    def observe(self, prev: SimState, new: SimState, dt: float, final: bool = False) -> None:
        e0 = self._e_last
        e1 = self.budget.energy(new)
        r = self.budget.residual(prev, new, dt, e0, e1)
        self.residuals.append(r)
        self.accumulated_residual += abs(r)
        self._e_last = e1
        self.energies.append(e1)
        self.times.append(new.t)
        self.mean_mu.append(G.mean(new.mu))
        if self.config.holder:
            self.ring.offer(new.t, new.phi, self.wt.w_array)
        if final or new.step % self.config.interval == 0:
            self.records.append(self.record(new))

    def holder(self) -> tuple[float, float]:
        return holder_quotients(self.grid, self.ring)

    def mean_mu_l2_time(self) -> float:
        """``L2``-in-time norm of the recorded ``mean(mu)`` series (trapezoid)."""
        if len(self.times) < 2:
            return abs(self.mean_mu[0]) if self.mean_mu else 0.0
        t = np.asarray(self.times)
        m2 = np.asarray(self.mean_mu) ** 2
        return math.sqrt(float(np.sum(0.5 * (m2[1:] + m2[:-1]) * np.diff(t))))
