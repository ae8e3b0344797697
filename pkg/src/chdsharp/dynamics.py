"""Time stepping for the Cahn-Hilliard-Darcy system in the ``theta`` variables.

Unknowns are ``phi``, ``mu``, ``theta = sigma - chi*phi``, the face velocity
``v`` and the pressure ``p``.  One step of size ``dt`` does, in order:

1. take the velocity stored with the old state (Darcy, Brinkman or none);
2. the stabilized semi-implicit Cahn-Hilliard solve with
   ``explicit_rhs = -div(phi v) + U phi`` at the old time;
3. the implicit diffusion solve for ``theta`` whose explicit part carries
   ``-chi (phi_new - phi_old)/dt``, the advection of ``theta + chi phi`` and
   ``S`` at the old time;
4. the velocity and pressure of the new state, so a state always carries the
   ``(v, p)`` that belong to its own fields.

Both conserved quantities are advanced in conservative flux form and the
linear solves split the mean off exactly, so ``mean(phi)`` and
``mean(theta + chi phi)`` follow their discrete balance laws to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import optimize

from chdsharp import grid as G
from chdsharp.elliptic import EllipticSolver, LinSolveConfig
from chdsharp.errors import ConfigError, DivergenceError, StepError
from chdsharp.grid import Faces, GridSpec
from chdsharp.potential import DoubleWell

VARIANTS = ("darcy", "brinkman", "brinkman_scaled", "zero_velocity")


@dataclass(frozen=True)
class Variant:
    """Velocity law: Darcy, Brinkman with fixed or ``eps**beta`` viscosity, or none."""

    kind: str = "darcy"
    eta: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ConfigError(f"unknown variant {self.kind!r}; expected one of {VARIANTS}")
        if self.kind == "brinkman" and not (self.eta is not None and self.eta > 0):
            raise ConfigError("Brinkman variant needs eta > 0")
        if self.kind == "brinkman_scaled" and not (self.beta is not None and self.beta > 0):
            raise ConfigError("scaled Brinkman variant needs beta > 0")

    @classmethod
    def darcy(cls) -> Variant:
        return cls("darcy")

    @classmethod
    def brinkman(cls, eta: float) -> Variant:
        return cls("brinkman", eta=float(eta))

    @classmethod
    def brinkman_scaled(cls, beta: float) -> Variant:
        return cls("brinkman_scaled", beta=float(beta))

    @classmethod
    def zero_velocity(cls) -> Variant:
        return cls("zero_velocity")

    @property
    def is_brinkman(self) -> bool:
        return self.kind in ("brinkman", "brinkman_scaled")

    def eta_for(self, eps: float) -> float:
        if self.kind == "brinkman":
            return float(self.eta)
        if self.kind == "brinkman_scaled":
            return float(eps) ** float(self.beta)
        return 0.0


SpaceTimeFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class SourceSpec:
    """Source terms as callables ``f(x, y, t)``; ``None`` means identically zero.

    ``U`` is evaluated once at ``t = 0`` (it is time independent).  ``U`` and
    ``H`` are projected to zero mean on the grid.
    """

    U: SpaceTimeFn | None = None
    S: SpaceTimeFn | None = None
    H: SpaceTimeFn | None = None

    @staticmethod
    def _eval(fn, X, Y, t) -> np.ndarray:
        return np.broadcast_to(np.asarray(fn(X, Y, t), dtype=float), X.shape).copy()

    def U_field(self, X, Y) -> np.ndarray | None:
        if self.U is None:
            return None
        u = self._eval(self.U, X, Y, 0.0)
        return u - u.mean()

    def S_field(self, X, Y, t: float) -> np.ndarray | None:
        return None if self.S is None else self._eval(self.S, X, Y, t)

    def H_field(self, X, Y, t: float) -> np.ndarray | None:
        if self.H is None:
            return None
        h = self._eval(self.H, X, Y, t)
        return h - h.mean()


def _const_one(s):
    return np.ones_like(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class ModelSpec:
    """Physical parameters of one run."""

    eps: float
    chi: float = 0.0
    K: float = 1.0
    variant: Variant = field(default_factory=Variant)
    mobility_m: Callable | None = None
    mobility_n: Callable | None = None
    potential: DoubleWell = field(default_factory=DoubleWell.quartic)
    sources: SourceSpec = field(default_factory=SourceSpec)
    T_end: float = 0.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.chi < 0:
            raise ConfigError(f"chi must be non-negative, got {self.chi}")
        if not self.K > 0:
            raise ConfigError(f"K must be positive, got {self.K}")
        if self.T_end < 0:
            raise ConfigError("T must be non-negative")

    @property
    def eta(self) -> float:
        return self.variant.eta_for(self.eps)

    def m(self, s):
        return (self.mobility_m or _const_one)(s)

    def n(self, s):
        return (self.mobility_n or _const_one)(s)


def mobility_bounds(fn: Callable | None, lo: float = -2.0, hi: float = 2.0,
                    n: int = 4001) -> tuple[float, float]:
    """Min and max of a mobility over a scan of ``[lo, hi]``."""
    s = np.linspace(lo, hi, n)
    vals = np.asarray((fn or _const_one)(s), dtype=float) * np.ones_like(s)
    if not np.all(np.isfinite(vals)):
        return (math.nan, math.nan)
    return float(vals.min()), float(vals.max())


@dataclass
class SimState:
    """Complete solver state at one time level."""

    phi: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    v: Faces
    p: np.ndarray
    t: float = 0.0
    step: int = 0

    def sigma(self, chi: float) -> np.ndarray:
        return self.theta + chi * self.phi

    def copy(self) -> SimState:
        return SimState(self.phi.copy(), self.mu.copy(), self.theta.copy(), self.v.copy(),
                        self.p.copy(), self.t, self.step)

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.phi).all() and np.isfinite(self.mu).all()
                    and np.isfinite(self.theta).all() and np.isfinite(self.p).all()
                    and self.v.all_finite())


# -- deterministic random numbers ------------------------------------------------

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of the splitmix64 generator started at ``seed``.

    ``z = seed + k*0x9E3779B97F4A7C15`` for ``k = 1..n``, then
    ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
    z *= 0x94D049BB133111EB; z ^= z >> 31`` (all modulo 2**64).
    """
    with np.errstate(over="ignore"):
        k = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(seed % 2 ** 64) + k * _SM_GAMMA
        z = (z ^ (z >> np.uint64(30))) * _SM_MUL1
        z = (z ^ (z >> np.uint64(27))) * _SM_MUL2
        z = z ^ (z >> np.uint64(31))
    return z


def uniform01(seed: int, n: int) -> np.ndarray:
    """Doubles in ``[0, 1)`` built from the top 53 bits of :func:`splitmix64`."""
    return (splitmix64(seed, n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


# -- initial data -----------------------------------------------------------------

INIT_KINDS = ("strip", "circle", "random")


def ellipse_signed_distance(x, y, a: float, b: float) -> np.ndarray:
    """Exact signed distance to ``x^2/a^2 + y^2/b^2 = 1``, positive inside.

    The closest boundary point ``(a^2 x/(s+a^2), b^2 y/(s+b^2))`` is found by
    bisection on the multiplier ``s``; points on the major axis inside the
    evolute have the closed-form foot ``x a^2/(a^2-b^2)``.
    """
    x = np.abs(np.asarray(x, float))
    y = np.abs(np.asarray(y, float))
    if a == b:
        return a - np.hypot(x, y)
    if a < b:
        x, y, a, b = y, x, b, a
    inside = (x / a) ** 2 + (y / b) ** 2 < 1.0
    lo = np.full(x.shape, -b * b)
    hi = a * np.hypot(x, y) + 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(100):
            s = 0.5 * (lo + hi)
            f = (a * x / (s + a * a)) ** 2 + (b * y / (s + b * b)) ** 2 - 1.0
            lo = np.where(f > 0, s, lo)
            hi = np.where(f > 0, hi, s)
        s = 0.5 * (lo + hi)
        px = a * a * x / (s + a * a)
        den = s + b * b
        # near s = -b^2 the foot is away from the tips; take y from the ellipse itself
        py = np.where(den > 1e-6 * b * b, b * b * y / den,
                      b * np.sqrt(np.clip(1.0 - (px / a) ** 2, 0.0, None)))
    axis = (y == 0) & (x < (a * a - b * b) / a)
    qx = a * a * x / (a * a - b * b)
    px = np.where(axis, qx, px)
    py = np.where(axis, b * np.sqrt(np.clip(1.0 - (qx / a) ** 2, 0.0, None)), py)
    d = np.hypot(x - px, y - py)
    return np.where(inside, d, -d)


@dataclass(frozen=True)
class InitialData:
    """Recipe for ``phi0`` and ``sigma0``.

    ``strip``: ``tanh(3 d / (4 eps width))`` with ``d = (x - center) . normal``.
    ``circle``: same profile with ``d = radius - |x - center|`` (positive inside);
    ``aspect > 1`` turns the disc into an ellipse with semi-axes ``radius*aspect``
    (along x) and ``radius``; its profile uses the exact signed distance.
    ``random``: ``u0 + amplitude * U(-1, 1)`` from a seeded splitmix64 stream.
    ``modulation`` multiplies the profile by ``1 - a (1 + cos(2 pi x / lx)) / 2``.
    The field is then shifted (and clamped inside ``(-1, 1)``) to have mean
    ``u0``.  ``sigma0`` is a callable ``f(x, y, phi)`` or ``None`` (zero).
    """

    kind: str = "strip"
    u0: float = 0.0
    center: tuple[float, float] = (0.5, 0.5)
    normal: tuple[float, float] = (1.0, 0.0)
    radius: float = 0.25
    aspect: float = 1.0
    width: float = 1.0
    amplitude: float = 0.05
    seed: int = 0
    modulation: float = 0.0
    match_mean: bool = True
    sigma0: Callable | None = None

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ConfigError(f"unknown initial data kind {self.kind!r}")
        if not -1.0 < self.u0 < 1.0:
            raise ConfigError(f"initial mean u0 must lie in (-1, 1), got {self.u0}")
        if not self.aspect >= 1:
            raise ConfigError("ellipse aspect ratio must be at least 1")
        if not self.width > 0:
            raise ConfigError("profile width multiplier must be positive")

    def phi0(self, grid: GridSpec, eps: float) -> np.ndarray:
        X, Y = grid.cell_centers()
        if self.kind == "strip":
            nx_, ny_ = self.normal
            nrm = math.hypot(nx_, ny_)
            if grid.dim == 1:
                d = (X - self.center[0]) * (1.0 if nx_ >= 0 else -1.0)
            else:
                d = ((X - self.center[0]) * nx_ + (Y - self.center[1]) * ny_) / nrm
            phi = np.tanh(3.0 * d / (4.0 * eps * self.width))
        elif self.kind == "circle":
            if grid.dim == 1:
                d = self.radius - np.abs(X - self.center[0])
            else:
                d = ellipse_signed_distance(X - self.center[0], Y - self.center[1],
                                            self.radius * self.aspect, self.radius)
            phi = np.tanh(3.0 * d / (4.0 * eps * self.width))
        else:
            r = uniform01(self.seed, grid.size).reshape(grid.shape)
            phi = self.u0 + self.amplitude * (2.0 * r - 1.0)
        if self.modulation:
            phi = phi * (1.0 - self.modulation * 0.5 * (1.0 + np.cos(2.0 * np.pi * X / grid.lx)))
        if self.match_mean:
            phi = _match_mean(phi, self.u0)
        return phi

    def build(self, grid: GridSpec, model: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(phi0, theta0)`` with ``theta0 = sigma0 - chi phi0``."""
        phi = self.phi0(grid, model.eps)
        X, Y = grid.cell_centers()
        if self.sigma0 is None:
            sigma = np.zeros(grid.shape)
        else:
            sigma = np.broadcast_to(np.asarray(self.sigma0(X, Y, phi), float), grid.shape).copy()
        return phi, sigma - model.chi * phi


_CLAMP = 1.0 - 1e-9


def _match_mean(phi: np.ndarray, u0: float) -> np.ndarray:
    f = lambda s: float(np.mean(np.clip(phi + s, -_CLAMP, _CLAMP))) - u0
    if abs(f(0.0)) <= 1e-15:
        return np.clip(phi, -_CLAMP, _CLAMP)
    s = optimize.brentq(f, -2.5, 2.5, xtol=1e-15, rtol=1e-15, maxiter=200)
    return np.clip(phi + s, -_CLAMP, _CLAMP)


# -- numerics -------------------------------------------------------------------


@dataclass(frozen=True)
class Numerics:
    """Discretization choices that are not part of the model."""

    dt: float
    S0: float = 4.0
    advection: str = "upwind"
    linsolve: LinSolveConfig = field(default_factory=LinSolveConfig)
    cfl: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.S0 < 0:
            raise ConfigError("S0 must be non-negative")
        if self.advection not in ("upwind", "central"):
            raise ConfigError(f"unknown advection scheme {self.advection!r}")
        if not self.cfl > 0:
            raise ConfigError("cfl limit must be positive")


def chemical_potential(grid: GridSpec, model: ModelSpec, phi: np.ndarray,
                       theta: np.ndarray) -> np.ndarray:
    eps, chi = model.eps, model.chi
    return (model.potential.dpsi(phi) / eps - eps * G.laplacian(grid, phi)
            - chi * theta - chi * chi * phi)


def capillary_force(grid: GridSpec, model: ModelSpec, phi, mu, theta) -> Faces:
    """Face force ``(mu + chi theta + chi^2 phi) grad phi``."""
    chi = model.chi
    return G.face_interp(grid, mu + chi * theta + chi * chi * phi) * G.grad_cc_to_face(grid, phi)


def compute_velocity_darcy(grid: GridSpec, model: ModelSpec, phi, mu, theta,
                           H: np.ndarray | None = None,
                           solver: EllipticSolver | None = None) -> tuple[Faces, np.ndarray]:
    """Darcy velocity and mean-zero pressure for the given fields.

    Solves ``-Lap p = K H - div f`` and sets ``v = (f - grad p) / K``.
    """
    solver = solver or EllipticSolver(grid)
    f = capillary_force(grid, model, phi, mu, theta).zero_walls()
    rhs = -G.div_face_to_cc(grid, f)
    if H is not None:
        rhs = rhs + model.K * H
    solver.last["pressure_projection"] = (0, abs(float(rhs.mean())))
    rhs = rhs - rhs.mean()
    p = solver.poisson(rhs)
    v = ((f - G.grad_cc_to_face(grid, p)) / model.K).zero_walls()
    return v, p


def compute_velocity_brinkman(grid: GridSpec, model: ModelSpec, phi, mu, theta,
                              solver: EllipticSolver | None = None) -> tuple[Faces, np.ndarray]:
    """Solenoidal Brinkman velocity with no-slip walls."""
    if not model.variant.is_brinkman:
        raise ConfigError("compute_velocity_brinkman needs a Brinkman variant")
    solver = solver or EllipticSolver(grid)
    f = capillary_force(grid, model, phi, mu, theta).zero_walls()
    return solver.brinkman(f, model.eta, model.K)


class Stepper:
    """Advances :class:`SimState` objects for one grid, model and numerics."""

    def __init__(self, grid: GridSpec, model: ModelSpec, numerics: Numerics,
                 solver: EllipticSolver | None = None):
        self.grid = grid
        self.model = model
        self.numerics = numerics
        self.solver = solver or EllipticSolver(grid, numerics.linsolve)
        self.X, self.Y = grid.cell_centers()
        self.U = model.sources.U_field(self.X, self.Y)
        self._const_m = model.mobility_m is None
        self._const_n = model.mobility_n is None
        self._ones = Faces.full(grid, 1.0)

    # source helpers
    def S_at(self, t: float):
        return self.model.sources.S_field(self.X, self.Y, t)

    def H_at(self, t: float):
        if self.model.variant.kind != "darcy":
            return None
        return self.model.sources.H_field(self.X, self.Y, t)

    def m_face(self, phi) -> Faces:
        return self._ones if self._const_m else G.face_interp(self.grid, self.model.m(phi))

    def n_face(self, phi) -> Faces:
        return self._ones if self._const_n else G.face_interp(self.grid, self.model.n(phi))

    def velocity(self, phi, mu, theta, t: float) -> tuple[Faces, np.ndarray]:
        kind = self.model.variant.kind
        if kind == "zero_velocity":
            return Faces.zeros(self.grid), self.grid.zeros()
        if kind == "darcy":
            return compute_velocity_darcy(self.grid, self.model, phi, mu, theta,
                                          self.H_at(t), self.solver)
        return compute_velocity_brinkman(self.grid, self.model, phi, mu, theta, self.solver)

    def initial_state(self, init: InitialData) -> SimState:
        phi, theta = init.build(self.grid, self.model)
        mu = chemical_potential(self.grid, self.model, phi, theta)
        v, p = self.velocity(phi, mu, theta, 0.0)
        state = SimState(phi, mu, theta, v, p, 0.0, 0)
        if not state.all_finite():
            raise ConfigError("initial data is not finite")
        return state

    def advect(self, c, v):
        return G.advect(self.grid, c, v, self.numerics.advection)

    def step(self, state: SimState, dt: float | None = None) -> SimState:
        g, model = self.grid, self.model
        dt = self.numerics.dt if dt is None else float(dt)
        if not dt > 0:
            raise ConfigError("dt must be positive")
        eps, chi = model.eps, model.chi
        v = state.v
        vmax = v.max_abs()
        if dt * vmax / g.h_min > self.numerics.cfl:
            raise StepError(
                f"advective CFL violated at step {state.step}: dt*max|v|/h = "
                f"{dt * vmax / g.h_min:.3g} > {self.numerics.cfl}; reduce dt below "
                f"{self.numerics.cfl * g.h_min / vmax:.3g}")
        phi_o, th_o = state.phi, state.theta
        moving = model.variant.kind != "zero_velocity"

        rhs_phi = -self.advect(phi_o, v) if moving else np.zeros(g.shape)
        if self.U is not None:
            rhs_phi = rhs_phi + self.U * phi_o
        mu_exp = model.potential.dpsi(phi_o) / eps - chi * th_o - chi * chi * phi_o
        phi_n, mu_n = self.solver.cahn_hilliard(phi_o, mu_exp, self.m_face(phi_o), dt, eps,
                                                self.numerics.S0, rhs_phi)

        rhs_th = -chi * (phi_n - phi_o) / dt
        if moving:
            rhs_th = rhs_th - self.advect(th_o + chi * phi_o, v)
        S = self.S_at(state.t)
        if S is not None:
            rhs_th = rhs_th + S
        th_n = self.solver.helmholtz(th_o, self.n_face(phi_o), dt, rhs_th)

        t_n = state.t + dt
        if not (np.isfinite(phi_n).all() and np.isfinite(mu_n).all() and np.isfinite(th_n).all()):
            raise DivergenceError("non-finite values in phi, mu or theta", state.step + 1)
        v_n, p_n = self.velocity(phi_n, mu_n, th_n, t_n)
        new = SimState(phi_n, mu_n, th_n, v_n, p_n, t_n, state.step + 1)
        if not new.all_finite():
            raise DivergenceError("non-finite velocity or pressure", new.step)
        return new


def step(grid: GridSpec, state: SimState, model: ModelSpec, numerics: Numerics) -> SimState:
    """One step with a throwaway :class:`Stepper` (convenient, not fast)."""
    return Stepper(grid, model, numerics).step(state)


def initial_state(grid: GridSpec, model: ModelSpec, init: InitialData,
                  numerics: Numerics | None = None) -> SimState:
    return Stepper(grid, model, numerics or Numerics(dt=1.0)).initial_state(init)


def n_steps(T: float, dt: float) -> int:
    """Number of fixed steps needed to reach ``T`` (tolerant of round-off)."""
    if T <= 0:
        return 0
    return max(1, int(math.ceil(T / dt - 1e-9)))


@dataclass
class RunResult:
    state: SimState
    records: list
    steps: int
    tracker: object | None = None


def run(grid: GridSpec, model: ModelSpec, init: InitialData, numerics: Numerics,
        tracker=None, on_step: Callable[[SimState, SimState], None] | None = None,
        state: SimState | None = None) -> RunResult:
    """Step from the initial data to ``model.T_end``.

    ``tracker`` follows the ``diagnostics.Tracker`` protocol (``start`` and
    ``observe``); ``None`` builds a default one.  ``on_step(prev, new)`` is
    called after every step.
    """
    from chdsharp.diagnostics import Tracker  # local import: diagnostics depends on us

    stepper = Stepper(grid, model, numerics)
    if state is None:
        state = stepper.initial_state(init)
    if tracker is None:
        tracker = Tracker(grid, model, numerics, solver=stepper.solver)
    nsteps = n_steps(model.T_end - state.t, numerics.dt)
    tracker.start(state, final=nsteps == 0)
    for k in range(nsteps):
        new = stepper.step(state)
        tracker.observe(state, new, numerics.dt, final=k == nsteps - 1)
        if on_step is not None:
            on_step(state, new)
        state = new
    return RunResult(state, tracker.records, nsteps, tracker)


def with_T(model: ModelSpec, T: float) -> ModelSpec:
    return replace(model, T_end=float(T))
