"""Command line front end: ``chd-sharp simulate|sweep|check``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 solver or step
failure, 4 partial sweep failure, 5 I/O error.  Failures print one line of the
form ``error: kind=<kind> exit=<code> message="<text>"`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from chdsharp import io
from chdsharp.config import RunConfig, check_admissibility, defaults_text, load_config
from chdsharp.diagnostics import DiagConfig, Tracker
from chdsharp.dynamics import SimState, Stepper, mobility_bounds, n_steps
from chdsharp.errors import ChdError
from chdsharp.io import fmt
from chdsharp.potential import DoubleWell, property_suite
from chdsharp.sweep import SweepPlan, compare_brinkman_darcy, run_sweep

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_PARTIAL = 4


def error_line(exc: BaseException) -> str:
    kind = getattr(exc, "kind", "error")
    code = getattr(exc, "exit_code", 1)
    return f"error: kind={kind} exit={code} message={json.dumps(str(exc))}"


def _diag_config(cfg: RunConfig) -> DiagConfig:
    return DiagConfig(interval=cfg.diag_interval, snapshot_capacity=cfg.diag_ring,
                      delta=cfg.diag_delta)


def _field(state: SimState, name: str, chi: float) -> np.ndarray:
    if name == "sigma":
        return state.sigma(chi)
    return getattr(state, name)


def _write_snapshots(cfg: RunConfig, state: SimState, out: Path) -> None:
    for name in cfg.output.fields:
        path = out / f"snap_{name}_{state.step:07d}.bin"
        io.write_snapshot(path, cfg.grid, _field(state, name, cfg.model.chi), name, state.t)


# -- simulate -------------------------------------------------------------------------


def simulate(cfg: RunConfig) -> list:
    """Run one configuration, writing the CSV and snapshots; return the records."""
    g, model, num = cfg.grid, cfg.model, cfg.numerics
    out = Path(cfg.output.dir)
    stepper = Stepper(g, model, num)
    tracker = Tracker(g, model, num, _diag_config(cfg), solver=stepper.solver)
    state = stepper.initial_state(cfg.init)
    steps = n_steps(model.T_end, num.dt)
    every = cfg.output.snapshot_interval
    tracker.start(state, final=steps == 0)
    if every > 0:
        _write_snapshots(cfg, state, out)
    for k in range(steps):
        new = stepper.step(state)
        tracker.observe(state, new, num.dt, final=k == steps - 1)
        state = new
        if every > 0 and (k + 1) % every == 0:
            _write_snapshots(cfg, state, out)
    if every == 0 or steps % every != 0:
        _write_snapshots(cfg, state, out)
    io.write_csv(out / cfg.output.csv, tracker.records)
    return tracker.records


def cmd_simulate(path: str) -> int:
    cfg = load_config(path)
    records = simulate(cfg)
    last = records[-1]
    print(f"t = {fmt(last.t)}  energy_E = {fmt(last.energy_E)}  sigma_jump = {fmt(last.sigma_jump)}"
          f"  rows = {len(records)}")
    return EXIT_OK


# -- sweep ----------------------------------------------------------------------------


def plan_from_config(cfg: RunConfig) -> SweepPlan:
    sw = cfg.sweep
    return SweepPlan(model=cfg.model, init=cfg.init, numerics=cfg.numerics, eps_list=sw.eps,
                     dim=cfg.grid.dim, lx=cfg.grid.lx, ly=cfg.grid.ly,
                     cells_per_eps=sw.cells_per_eps, dt_exponent=sw.dt_exponent,
                     metrics=list(sw.metrics), diag=_diag_config(cfg), beta=sw.beta,
                     eta_fixed=sw.eta_fixed, jobs=sw.jobs)


def _validate_sweep(cfg: RunConfig, plan: SweepPlan) -> None:
    for eps in plan.eps_list:
        check_admissibility(plan.grid_for(eps), plan.model_for(eps), cfg.init.u0)


def scaling_summary(plan: SweepPlan, report) -> str:
    metrics = list(plan.metrics)
    lines = [io.CSV_MAGIC, ",".join(["eps", "nx", "dt", "status"] + metrics)]
    for r in report.results:
        vals = [fmt(r.metrics.get(m, math.nan)) if r.ok else "nan" for m in metrics]
        lines.append(",".join([fmt(r.eps), str(r.nx), fmt(r.dt), "ok" if r.ok else "failed"]
                              + vals))
    for m in metrics:
        if m in report.fits:
            f = report.fits[m]
            lines.append(f"# fit {m}: slope={fmt(f.slope)} intercept={fmt(f.intercept)} "
                         f"residual={fmt(f.residual)} stderr={fmt(f.slope_stderr)}")
            lines.append(f"# orders {m}: " + " ".join(fmt(o) for o in f.orders))
            lines.append(f"# monotone {m}: {str(report.monotone[m]).lower()}")
        elif m in report.fit_errors:
            lines.append(f"# fit {m}: unavailable ({report.fit_errors[m]})")
    for r in report.results:
        if not r.ok:
            lines.append(f"# failed eps={fmt(r.eps)}: {r.error}")
    return "\n".join(lines) + "\n"


GAP_COLUMNS = ("eps", "eta", "gap_L2Q", "gap_final", "darcy_L2Q", "rel_gap")


def gap_summary(table: dict) -> str:
    lines = [io.CSV_MAGIC]
    cols = list(GAP_COLUMNS[:1])
    for kind in table:
        cols += [f"{kind}_{c}" for c in GAP_COLUMNS[1:]]
    lines.append(",".join(cols))
    kinds = list(table)
    for i, base in enumerate(table[kinds[0]]):
        row = [fmt(base.eps)]
        for kind in kinds:
            x = table[kind][i]
            rel = x.l2_q / x.l2_darcy_q if x.l2_darcy_q > 0 else math.nan
            row += [fmt(x.eta), fmt(x.l2_q), fmt(x.l2_final), fmt(x.l2_darcy_q), fmt(rel)]
        lines.append(",".join(row))
    for kind in kinds:
        gaps = [x.l2_q for x in table[kind]]
        dec = all(b < a for a, b in zip(gaps, gaps[1:]))
        lines.append(f"# monotone {kind}_gap_L2Q: {'decreasing' if dec else 'not decreasing'}")
        for x in table[kind]:
            if not x.ok:
                lines.append(f"# failed {kind} eps={fmt(x.eps)}: {x.error}")
    return "\n".join(lines) + "\n"


def _exit_for(failures: list[str], total: int, first_error: str) -> int:
    if not failures:
        return EXIT_OK
    if len(failures) < total:
        return EXIT_PARTIAL
    return 2 if first_error.startswith(("config", "precondition")) else 3


def cmd_sweep(path: str) -> int:
    cfg = load_config(path)
    plan = plan_from_config(cfg)
    _validate_sweep(cfg, plan)
    out = Path(cfg.output.dir)
    if cfg.sweep.mode == "brinkman_darcy":
        table = compare_brinkman_darcy(plan, control=cfg.sweep.eta_fixed > 0)
        text = gap_summary(table)
        rows = [x for v in table.values() for x in v]
        failed = [x.error for x in rows if not x.ok]
        code = _exit_for(failed, len(rows), failed[0] if failed else "")
    else:
        report = run_sweep(plan)
        for r in report.results:
            if r.ok:
                io.write_csv(out / f"eps_{r.eps:g}.csv", r.records)
        text = scaling_summary(plan, report)
        failed = [r.error for r in report.results if not r.ok]
        code = _exit_for(failed, len(report.results), failed[0] if failed else "")
    io.write_text(out / cfg.sweep.summary, text)
    sys.stdout.write(text)
    if code:
        print(f"error: kind=sweep exit={code} message="
              f"{json.dumps(f'{len(failed)} run(s) failed')}", file=sys.stderr)
    return code


# -- check ----------------------------------------------------------------------------


def check_rows(well: DoubleWell, mobilities: dict) -> list[tuple[str, bool, str]]:
    rows = []
    results, rep = property_suite(well)
    rows += [(r.name, r.passed, r.detail) for r in results]
    for name, fn in mobilities.items():
        lo, hi = mobility_bounds(fn)
        ok = lo > 0 and math.isfinite(hi)
        rows.append((f"mobility {name} bounds", ok, f"min {lo:.6g}, max {hi:.6g} on [-2, 2]"))
    if rep is not None:
        rows.append(("constants", rep.ok,
                     f"C0 = {rep.C0:.8g}  C1 = {rep.C1:.8g}  c0 = {rep.c0:.6g}  "
                     f"k0 = {rep.k0:.8g}  k1 = {rep.k1:.8g}  q = {rep.q:g}"))
    return rows


def cmd_check(path: str | None) -> int:
    if path is None:
        well, mob = DoubleWell.quartic(), {"m": None, "n": None}
    else:
        cfg = load_config(path, validate=False)
        well = cfg.model.potential
        mob = {"m": cfg.model.mobility_m, "n": cfg.model.mobility_n}
    rows = check_rows(well, mob)
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_CHECK_FAILED


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chd-sharp",
                                description="Cahn-Hilliard-Darcy phase-field runs and "
                                            "sharp-interface diagnostics")
    p.add_argument("--print-defaults", action="store_true",
                   help="print every configuration key with its default and exit")
    sub = p.add_subparsers(dest="command")
    s = sub.add_parser("simulate", help="run one configuration")
    s.add_argument("config")
    s = sub.add_parser("sweep", help="run an eps sweep")
    s.add_argument("config")
    s = sub.add_parser("check", help="verify the potential and mobilities")
    s.add_argument("config", nargs="?")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(defaults_text())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config)
        if args.command == "sweep":
            return cmd_sweep(args.config)
        return cmd_check(args.config)
    except ChdError as exc:
        print(error_line(exc), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
