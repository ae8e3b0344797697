"""eps-sweeps: families of runs on proportionally refined grids, power-law fits
and the Brinkman-versus-Darcy comparison.

Each run is an independent, deterministic task, so results do not depend on
whether they execute serially or in a process pool.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from chdsharp import grid as G
from chdsharp.diagnostics import DiagConfig, Tracker
from chdsharp.dynamics import (InitialData, ModelSpec, Numerics, Stepper, Variant, n_steps, run)
from chdsharp.errors import ChdError, ConfigError, FitError
from chdsharp.grid import GridSpec

EXTRA_METRICS = ("holder_phi", "holder_w", "mean_mu_l2")


@dataclass
class FitResult:
    slope: float
    intercept: float
    residual: float
    slope_stderr: float
    orders: list[float]

    def __iter__(self):
        yield self.slope
        yield self.intercept
        yield self.residual


def fit_power_law(pairs) -> FitResult:
    """Least-squares line through ``(log eps, log value)``.

    Returns slope, intercept, the RMS residual of the fit in log space, the
    slope's standard error and the pairwise observed orders
    ``log(v_i / v_{i+1}) / log(eps_i / eps_{i+1})``.

    Raises
    ------
    FitError
        With fewer than three pairs or any non-positive value.
    """
    pairs = [(float(e), float(v)) for e, v in pairs]
    if len(pairs) < 3:
        raise FitError(f"power-law fit needs at least 3 points, got {len(pairs)}")
    if any(not (e > 0 and v > 0 and math.isfinite(v)) for e, v in pairs):
        raise FitError("power-law fit needs positive, finite eps and values")
    x = np.log([e for e, _ in pairs])
    y = np.log([v for _, v in pairs])
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    n = len(pairs)
    rms = math.sqrt(float(np.mean(r ** 2)))
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(float(np.sum(r ** 2)) / (n - 2) / sxx) if n > 2 and sxx > 0 else math.nan
    orders = [float((y[i] - y[i + 1]) / (x[i] - x[i + 1])) for i in range(n - 1)]
    return FitResult(float(coef[0]), float(coef[1]), rms, stderr, orders)


@dataclass
class SweepPlan:
    """A base problem and the rule that maps each eps to a run."""

    model: ModelSpec
    init: InitialData
    numerics: Numerics
    eps_list: list[float]
    dim: int = 1
    lx: float = 1.0
    ly: float = 1.0
    cells_per_eps: float = 8.0
    dt_exponent: float = 0.0
    metrics: list[str] = field(default_factory=lambda: ["L2_phi_dev"])
    diag: DiagConfig = field(default_factory=DiagConfig)
    beta: float = 1.0
    eta_fixed: float = 0.0
    jobs: int = 1

    def __post_init__(self):
        e = list(self.eps_list)
        if not e or any(x <= 0 for x in e) or any(b >= a for a, b in zip(e, e[1:])):
            raise ConfigError("eps_list must be positive and strictly decreasing")
        if self.cells_per_eps < 6:
            raise ConfigError("grid rule must resolve eps with at least 6 cells")
        if self.model.chi > 0:
            from chdsharp.config import eps0_guard

            e0 = eps0_guard(self.model.potential, self.model.chi)
            if max(e) > e0:
                raise ConfigError(f"eps0 guard violated: eps = {max(e):g} exceeds "
                                  f"eps0 = min(1, k0/chi^2) = {e0:.6g}")

    def grid_for(self, eps: float) -> GridSpec:
        nx = int(math.ceil(self.cells_per_eps * self.lx / eps - 1e-9))
        if self.dim == 1:
            return GridSpec.line(nx, self.lx)
        ny = int(math.ceil(self.cells_per_eps * self.ly / eps - 1e-9))
        return GridSpec.rect(nx, ny, self.lx, self.ly)

    def dt_for(self, eps: float) -> float:
        return self.numerics.dt * (eps / self.eps_list[0]) ** self.dt_exponent

    def model_for(self, eps: float, variant: Variant | None = None) -> ModelSpec:
        return replace(self.model, eps=float(eps), variant=variant or self.model.variant)

    def numerics_for(self, eps: float) -> Numerics:
        return replace(self.numerics, dt=self.dt_for(eps))


@dataclass
class EpsResult:
    eps: float
    ok: bool
    nx: int
    dt: float
    metrics: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    error: str = ""
    seconds: float = 0.0


@dataclass
class SweepReport:
    results: list[EpsResult]
    fits: dict[str, FitResult]
    fit_errors: dict[str, str]
    monotone: dict[str, bool]

    @property
    def failed(self) -> list[float]:
        return [r.eps for r in self.results if not r.ok]

    def values(self, metric: str) -> list[tuple[float, float]]:
        return [(r.eps, r.metrics.get(metric, math.nan)) for r in self.results if r.ok]


def run_one(plan: SweepPlan, eps: float) -> EpsResult:
    """Run the plan at one eps; failures are captured, not raised."""
    g = plan.grid_for(eps)
    num = plan.numerics_for(eps)
    t0 = time.perf_counter()
    try:
        model = plan.model_for(eps)
        tracker = Tracker(g, model, num, plan.diag)
        res = run(g, model, plan.init, num, tracker=tracker)
        final = res.records[-1]
        metrics = {k: v for k, v in final.as_dict().items() if k != "solver_residuals"}
        if len(tracker.ring) >= 2:
            metrics["holder_phi"], metrics["holder_w"] = tracker.holder()
        else:
            metrics["holder_phi"] = metrics["holder_w"] = math.nan
        metrics["mean_mu_l2"] = tracker.mean_mu_l2_time()
        return EpsResult(eps, True, g.nx, num.dt, metrics, res.records,
                         seconds=time.perf_counter() - t0)
    except ChdError as exc:
        return EpsResult(eps, False, g.nx, num.dt, error=f"{exc.kind}: {exc}",
                         seconds=time.perf_counter() - t0)


def effective_jobs(requested: int) -> int:
    env = os.environ.get("CHD_JOBS")
    if env:
        try:
            requested = int(env)
        except ValueError:
            raise ConfigError(f"CHD_JOBS must be an integer, got {env!r}") from None
    if requested <= 0:
        requested = os.cpu_count() or 1
    return max(1, requested)


def _map(fn, plan: SweepPlan, items) -> list:
    jobs = min(effective_jobs(plan.jobs), len(items))
    if jobs <= 1:
        return [fn(plan, it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, [plan] * len(items), items))


def run_sweep(plan: SweepPlan) -> SweepReport:
    results = _map(run_one, plan, list(plan.eps_list))
    fits: dict[str, FitResult] = {}
    errs: dict[str, str] = {}
    mono: dict[str, bool] = {}
    for metric in plan.metrics:
        pairs = [(r.eps, r.metrics.get(metric, math.nan)) for r in results if r.ok]
        vals = [v for _, v in pairs]
        mono[metric] = all(b < a for a, b in zip(vals, vals[1:]))
        if len(pairs) >= 3:
            try:
                fits[metric] = fit_power_law(pairs)
            except FitError as exc:
                errs[metric] = str(exc)
    return SweepReport(results, fits, errs, mono)


# -- Brinkman versus Darcy -------------------------------------------------------------


@dataclass
class VelocityGap:
    """Velocity differences between two variants run from identical data."""

    eps: float
    eta: float
    l2_q: float
    l2_final: float
    l2_darcy_q: float
    ok: bool = True
    error: str = ""


def _gap_one(plan: SweepPlan, item: tuple[float, tuple[str, ...]]) -> list[VelocityGap]:
    """Run Darcy in lockstep with each requested Brinkman variant at one eps."""
    eps, kinds = item
    g = plan.grid_for(eps)
    num = plan.numerics_for(eps)
    variants = []
    for kind in kinds:
        if kind == "scaled":
            variants.append(Variant.brinkman_scaled(plan.beta))
        elif kind == "fixed":
            variants.append(Variant.brinkman(plan.eta_fixed))
        else:
            variants.append(plan.model.variant)
    etas = [v.eta_for(eps) for v in variants]
    try:
        sd = Stepper(g, plan.model_for(eps, Variant.darcy()), num)
        sb = [Stepper(g, plan.model_for(eps, v), num) for v in variants]
        a = sd.initial_state(plan.init)
        bs = [s.initial_state(plan.init) for s in sb]

        def sq(f):
            return G.l2_norm_faces(g, f) ** 2

        # trapezoid in time of ||v_B - v_D||^2 and of ||v_D||^2
        steps = n_steps(plan.model.T_end, num.dt)
        w0 = 0.5 * num.dt if steps else 0.0
        acc = [w0 * sq(b.v - a.v) for b in bs]
        accd = w0 * sq(a.v)
        for k in range(steps):
            a = sd.step(a)
            bs = [s.step(b) for s, b in zip(sb, bs)]
            w = (0.5 if k == steps - 1 else 1.0) * num.dt
            acc = [c + w * sq(b.v - a.v) for c, b in zip(acc, bs)]
            accd += w * sq(a.v)
        return [VelocityGap(eps, eta, math.sqrt(c), math.sqrt(sq(b.v - a.v)), math.sqrt(accd))
                for eta, c, b in zip(etas, acc, bs)]
    except ChdError as exc:
        return [VelocityGap(eps, eta, math.nan, math.nan, math.nan, False, f"{exc.kind}: {exc}")
                for eta in etas]


def compare_brinkman_darcy(plan: SweepPlan, control: bool = True,
                           against_self: bool = False) -> dict[str, list[VelocityGap]]:
    """Per-eps velocity gaps for ``eta = eps**beta`` and, optionally, fixed ``eta``.

    ``against_self`` compares the plan's own variant with Darcy instead (useful
    to confirm that Darcy against Darcy gives exactly zero).
    """
    if not plan.beta > 0:
        raise ConfigError("Brinkman comparison needs beta > 0")
    if plan.model.sources.H is not None:
        raise ConfigError("Brinkman comparison needs H to vanish identically")
    kinds = ("self",) if against_self else ("scaled",)
    if control and plan.eta_fixed > 0 and not against_self:
        kinds += ("fixed",)
    out = _map(_gap_one, plan, [(e, kinds) for e in plan.eps_list])
    table = {k: [row[i] for row in out] for i, k in enumerate(kinds)}
    return table
