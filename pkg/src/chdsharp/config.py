"""Flat ``key = value`` run configuration with strict validation.

Keys are grouped by dotted prefixes (``grid.``, ``model.``, ``sources.``,
``init.``, ``solver.``, ``output.``, ``diag.``, ``sweep.``).  Unknown keys,
duplicate keys and malformed lines are errors with line numbers.  Expressions
(sources, mobilities, initial ``sigma``) are parsed with :mod:`ast` and only
whitelisted names are allowed; they evaluate with numpy and pickle by source
text so they can cross process boundaries.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from chdsharp.dynamics import (INIT_KINDS, VARIANTS, InitialData, ModelSpec, Numerics,
                               SourceSpec, Variant, mobility_bounds)
from chdsharp.elliptic import METHODS, LinSolveConfig
from chdsharp.errors import ConfigError
from chdsharp.grid import GridSpec
from chdsharp.potential import DoubleWell, _scan_growth_c0, _scan_k

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "tanh": np.tanh, "cosh": np.cosh, "sinh": np.sinh, "abs": np.abs,
    "arctan": np.arctan, "minimum": np.minimum, "maximum": np.maximum, "where": np.where,
    "sign": np.sign,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.USub, ast.UAdd,
    ast.Compare, ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq,
)


class Expr:
    """A whitelisted arithmetic expression in fixed variables.

    >>> Expr("0.5*cos(pi*x)", ("x", "y", "t"))(np.array([0.0]), 0.0, 0.0)
    array([0.5])
    """

    def __init__(self, source: str, variables: tuple[str, ...]):
        self.source = str(source).strip()
        self.variables = tuple(variables)
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {self.source!r}: {exc.msg}") from None
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise ConfigError(
                    f"expression {self.source!r} uses a disallowed construct "
                    f"({type(node).__name__})")
            if isinstance(node, ast.Name):
                if node.id not in _FUNCS and node.id not in _CONSTS and node.id not in self.variables:
                    raise ConfigError(f"expression {self.source!r} uses unknown name {node.id!r}; "
                                      f"allowed variables are {', '.join(self.variables)}")
            if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name)
                                                   and node.func.id in _FUNCS):
                raise ConfigError(f"expression {self.source!r} calls a non-whitelisted function")
            if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
                raise ConfigError(f"expression {self.source!r} contains a non-numeric constant")
        self._code = compile(tree, "<expr>", "eval")
        self.constant = not any(isinstance(n, ast.Name) and n.id in self.variables
                                for n in ast.walk(tree))

    def __call__(self, *args):
        env = dict(_CONSTS)
        env.update(_FUNCS)
        env.update(zip(self.variables, args))
        return eval(self._code, {"__builtins__": {}}, env)

    @property
    def is_zero(self) -> bool:
        if not self.constant:
            return False
        return float(self(*([0.0] * len(self.variables)))) == 0.0

    def __reduce__(self):
        return (Expr, (self.source, self.variables))

    def __repr__(self) -> str:
        return f"Expr({self.source!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Expr) and (self.source, self.variables) == (other.source, other.variables)

    def __hash__(self) -> int:
        return hash((self.source, self.variables))


XYT = ("expr", ("x", "y", "t"))

# key: (default text, kind, help)
DEFAULTS: dict[str, tuple[str, Any, str]] = {
    "grid.dim": ("1", int, "spatial dimension, 1 or 2"),
    "grid.nx": ("128", int, "cells in x"),
    "grid.ny": ("0", int, "cells in y (0: same as nx; ignored in 1D)"),
    "grid.lx": ("1.0", float, "domain length in x"),
    "grid.ly": ("1.0", float, "domain length in y (ignored in 1D)"),
    "model.eps": ("0.05", float, "interface parameter"),
    "model.chi": ("0.0", float, "cross-diffusion parameter"),
    "model.K": ("1.0", float, "inverse permeability"),
    "model.variant": ("darcy", VARIANTS, "velocity law"),
    "model.eta": ("0.1", float, "Brinkman viscosity (variant = brinkman)"),
    "model.beta": ("1.0", float, "viscosity exponent, eta = eps**beta (variant = brinkman_scaled)"),
    "model.mobility_m": ("1", ("expr", ("s",)), "mobility m(s) of the phase equation"),
    "model.mobility_n": ("1", ("expr", ("s",)), "mobility n(s) of the theta equation"),
    "model.potential_scale": ("0.28125", float, "a in Psi = a (1 - s^2)^2"),
    "model.u0": ("0.0", float, "prescribed mean of the initial phase field"),
    "model.T": ("0.01", float, "final time"),
    "sources.U": ("0", XYT, "phase source rate U(x, y); projected to zero mean"),
    "sources.S": ("0", XYT, "species source S(x, y, t)"),
    "sources.H": ("0", XYT, "volume source H(x, y, t); projected to zero mean"),
    "init.kind": ("strip", INIT_KINDS, "initial profile"),
    "init.center_x": ("0.5", float, "profile centre x"),
    "init.center_y": ("0.5", float, "profile centre y"),
    "init.normal_x": ("1.0", float, "strip normal x"),
    "init.normal_y": ("0.0", float, "strip normal y"),
    "init.radius": ("0.25", float, "circle radius"),
    "init.aspect": ("1.0", float, "ellipse semi-axis ratio for kind = circle"),
    "init.width": ("1.0", float, "profile width in units of the equilibrium width"),
    "init.amplitude": ("0.05", float, "random perturbation amplitude"),
    "init.seed": ("", int, "random seed (required for kind = random)"),
    "init.modulation": ("0.0", float, "bulk modulation amplitude"),
    "init.match_mean": ("true", ("true", "false"), "shift the profile so its mean equals u0"),
    "init.sigma0": ("0", ("expr", ("x", "y", "phi")), "initial sigma(x, y, phi)"),
    "solver.dt": ("1e-4", float, "time step"),
    "solver.S0": ("4.0", float, "stabilization constant"),
    "solver.method": ("cg", METHODS, "linear solver backend"),
    "solver.advection": ("upwind", ("upwind", "central"), "advection face values"),
    "solver.rel_tol": ("1e-9", float, "relative solver tolerance"),
    "solver.abs_tol": ("1e-12", float, "absolute solver tolerance"),
    "solver.max_iter": ("0", int, "CG iteration cap (0: 10*nx*ny)"),
    "solver.cfl": ("0.5", float, "advective CFL limit"),
    "output.dir": (".", str, "output directory"),
    "output.csv": ("diagnostics.csv", str, "diagnostics file name"),
    "output.snapshot_interval": ("0", int, "steps between snapshots (0: final only)"),
    "output.fields": ("phi,theta", str, "comma separated fields to snapshot"),
    "diag.interval": ("1", int, "steps between CSV rows"),
    "diag.delta": ("0", float, "jump probe offset (0: max(3 eps, 2h))"),
    "diag.snapshot_ring": ("32", int, "snapshots kept for Hölder quotients"),
    "sweep.eps": ("0.08,0.04,0.02,0.01", "floats", "decreasing eps values"),
    "sweep.cells_per_eps": ("8", float, "grid rule nx = ceil(c lx / eps)"),
    "sweep.metrics": ("L2_phi_dev", "strs", "final-time metrics to fit"),
    "sweep.mode": ("scaling", ("scaling", "brinkman_darcy"), "sweep type"),
    "sweep.beta": ("1.0", float, "Brinkman exponent in brinkman_darcy mode"),
    "sweep.eta_fixed": ("0", float, "fixed eta control run (0: none)"),
    "sweep.dt_exponent": ("0", float, "dt(eps) = solver.dt (eps/eps_1)^p"),
    "sweep.jobs": ("0", int, "parallel runs (0: available CPUs; env CHD_JOBS overrides)"),
    "sweep.summary": ("sweep_summary.csv", str, "summary file name"),
}

FIELDS = ("phi", "mu", "theta", "sigma", "p")


def defaults_text() -> str:
    lines = ["# chd-sharp configuration defaults", ""]
    section = None
    for key, (val, kind, doc) in DEFAULTS.items():
        sec = key.split(".")[0]
        if sec != section:
            if section is not None:
                lines.append("")
            section = sec
        lines.append(f"{key} = {val}".rstrip() + f"    # {doc}")
    return "\n".join(lines) + "\n"


def _convert(key: str, text: str, line: int | None):
    kind = DEFAULTS[key][1]
    try:
        if kind is int:
            f = float(text)
            if not f.is_integer():
                raise ValueError
            return int(f)
        if kind is float:
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind is str:
            return text
        if kind == "floats":
            return [float(x) for x in text.split(",") if x.strip()]
        if kind == "strs":
            return [x.strip() for x in text.split(",") if x.strip()]
        if isinstance(kind, tuple) and kind[0] == "expr":
            return Expr(text, kind[1])
        if isinstance(kind, tuple):
            if text not in kind:
                raise ConfigError(f"{key} must be one of {', '.join(kind)}, got {text!r}", line)
            return text
    except ConfigError as exc:
        if exc.line is None and line is not None:
            raise ConfigError(str(exc), line) from None
        raise
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {text!r} as {getattr(kind, '__name__', kind)}",
                          line) from None
    raise AssertionError(key)


@dataclass
class OutputSpec:
    dir: str = "."
    csv: str = "diagnostics.csv"
    snapshot_interval: int = 0
    fields: tuple[str, ...] = ("phi", "theta")


@dataclass
class SweepSpec:
    eps: list[float]
    cells_per_eps: float = 8.0
    metrics: list[str] = field(default_factory=lambda: ["L2_phi_dev"])
    mode: str = "scaling"
    beta: float = 1.0
    eta_fixed: float = 0.0
    dt_exponent: float = 0.0
    jobs: int = 0
    summary: str = "sweep_summary.csv"


@dataclass
class RunConfig:
    """Everything needed to run a simulation or a sweep."""

    grid: GridSpec
    model: ModelSpec
    init: InitialData
    numerics: Numerics
    output: OutputSpec
    sweep: SweepSpec
    diag_interval: int = 1
    diag_delta: float | None = None
    diag_ring: int = 32
    values: dict = field(default_factory=dict)


def eps0_guard(potential: DoubleWell, chi: float) -> float:
    """``min(1, k0/chi^2)`` with ``k0`` from the potential's growth scan."""
    if chi <= 0:
        return 1.0
    k0, _ = _scan_k(potential, _scan_growth_c0(potential))
    return min(1.0, k0 / chi ** 2)


def check_admissibility(grid: GridSpec, model: ModelSpec, u0: float,
                        extra_eps: list[float] | None = None) -> None:
    """Reject configurations that violate the standing assumptions.

    Raises
    ------
    ConfigError
        Naming the violated condition.
    """
    X, Y = grid.cell_centers()
    U = model.sources.U_field(X, Y)
    supU = 0.0 if U is None else float(np.abs(U).max())
    lhs = abs(u0) + model.T_end * supU
    if not lhs < 1.0:
        raise ConfigError(
            f"terminal-time condition violated: |u0| + T*sup|U| = {abs(u0):g} + "
            f"{model.T_end:g}*{supU:g} = {lhs:g} must be < 1")
    for name, fn in (("m", model.mobility_m), ("n", model.mobility_n)):
        lo, hi = mobility_bounds(fn)
        if not (lo > 0 and math.isfinite(hi)):
            raise ConfigError(
                f"mobility {name} must be bounded between positive constants on [-2, 2] "
                f"(scan found min {lo:g}, max {hi:g})")
    if model.chi > 0:
        e0 = eps0_guard(model.potential, model.chi)
        for eps in [model.eps] + list(extra_eps or []):
            if eps > e0:
                raise ConfigError(
                    f"eps0 guard violated: eps = {eps:g} exceeds eps0 = min(1, k0/chi^2) = {e0:.6g}")
    if model.variant.kind != "darcy" and model.sources.H is not None:
        for t in np.linspace(0.0, max(model.T_end, 0.0), 5):
            h = np.asarray(model.sources.H(X, Y, t), float)
            if np.any(h != 0.0):
                raise ConfigError(
                    f"volume source H must vanish identically for the {model.variant.kind} "
                    "variant (only solenoidal flow is supported there)")
    q = model.potential.q
    need = 2.0 if model.variant.kind == "zero_velocity" else 4.0
    if not (q > need if need == 2.0 else q >= need):
        raise ConfigError(f"potential growth exponent q = {q:g} too small for this variant")


def parse_pairs(text: str) -> dict[str, tuple[str, int]]:
    out: dict[str, tuple[str, int]] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if len(val) >= 2 and val[0] == val[-1] and val[0] in "\"'":
            val = val[1:-1]
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}", no)
        if key in out:
            raise ConfigError(f"duplicate key {key!r} (first set on line {out[key][1]})", no)
        out[key] = (val, no)
    return out


def _opt_expr(e: Expr) -> Callable | None:
    return None if e.is_zero else e


def parse_config(text: str, validate: bool = True) -> RunConfig:
    """Parse and validate configuration text."""
    given = parse_pairs(text)
    vals: dict[str, Any] = {}
    for key, (dflt, _, _) in DEFAULTS.items():
        raw, line = given.get(key, (dflt, None))
        vals[key] = None if raw == "" else _convert(key, raw, line)

    def err_ctx(key):
        return given.get(key, (None, None))[1]

    dim = vals["grid.dim"]
    ny = (vals["grid.ny"] or vals["grid.nx"]) if dim == 2 else 1
    grid = GridSpec(dim, vals["grid.nx"], ny,
                    vals["grid.lx"], vals["grid.ly"] if dim == 2 else 1.0)
    kind = vals["model.variant"]
    variant = {"darcy": Variant.darcy,
               "brinkman": lambda: Variant.brinkman(vals["model.eta"]),
               "brinkman_scaled": lambda: Variant.brinkman_scaled(vals["model.beta"]),
               "zero_velocity": Variant.zero_velocity}[kind]()
    mob_m, mob_n = vals["model.mobility_m"], vals["model.mobility_n"]
    model = ModelSpec(
        eps=vals["model.eps"], chi=vals["model.chi"], K=vals["model.K"], variant=variant,
        mobility_m=None if (mob_m.constant and float(mob_m(0.0)) == 1.0) else mob_m,
        mobility_n=None if (mob_n.constant and float(mob_n(0.0)) == 1.0) else mob_n,
        potential=DoubleWell.quartic(vals["model.potential_scale"]),
        sources=SourceSpec(U=_opt_expr(vals["sources.U"]), S=_opt_expr(vals["sources.S"]),
                           H=_opt_expr(vals["sources.H"])),
        T_end=vals["model.T"])
    if vals["init.kind"] == "random" and vals["init.seed"] is None:
        raise ConfigError("init.seed is required for random initial data",
                          err_ctx("init.kind"))
    sig = vals["init.sigma0"]
    init = InitialData(
        kind=vals["init.kind"], u0=vals["model.u0"],
        center=(vals["init.center_x"], vals["init.center_y"]),
        normal=(vals["init.normal_x"], vals["init.normal_y"]),
        radius=vals["init.radius"], aspect=vals["init.aspect"], width=vals["init.width"],
        amplitude=vals["init.amplitude"], seed=vals["init.seed"] or 0,
        modulation=vals["init.modulation"], match_mean=vals["init.match_mean"] == "true",
        sigma0=None if sig.is_zero else sig)
    numerics = Numerics(
        dt=vals["solver.dt"], S0=vals["solver.S0"], advection=vals["solver.advection"],
        linsolve=LinSolveConfig(rel_tol=vals["solver.rel_tol"], abs_tol=vals["solver.abs_tol"],
                                max_iter=vals["solver.max_iter"] or None,
                                method=vals["solver.method"]),
        cfl=vals["solver.cfl"])
    fields_ = tuple(f.strip() for f in vals["output.fields"].split(",") if f.strip())
    bad = [f for f in fields_ if f not in FIELDS]
    if bad:
        raise ConfigError(f"unknown snapshot field(s) {bad}; choose from {FIELDS}",
                          err_ctx("output.fields"))
    output = OutputSpec(vals["output.dir"], vals["output.csv"],
                        vals["output.snapshot_interval"], fields_)
    eps_list = vals["sweep.eps"]
    if not eps_list or any(e <= 0 for e in eps_list) or \
            any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("sweep.eps must be positive and strictly decreasing",
                          err_ctx("sweep.eps"))
    sweep = SweepSpec(eps_list, vals["sweep.cells_per_eps"], vals["sweep.metrics"],
                      vals["sweep.mode"], vals["sweep.beta"], vals["sweep.eta_fixed"],
                      vals["sweep.dt_exponent"], vals["sweep.jobs"], vals["sweep.summary"])
    if vals["diag.interval"] < 1 or vals["diag.snapshot_ring"] < 2:
        raise ConfigError("diag.interval must be >= 1 and diag.snapshot_ring >= 2")
    cfg = RunConfig(grid, model, init, numerics, output, sweep,
                    diag_interval=vals["diag.interval"],
                    diag_delta=vals["diag.delta"] or None,
                    diag_ring=vals["diag.snapshot_ring"], values=vals)
    if validate:
        check_admissibility(grid, model, init.u0)
    return cfg


def load_config(path: str, validate: bool = True) -> RunConfig:
    from chdsharp.io import OutputError

    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise OutputError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, validate)
