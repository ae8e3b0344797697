from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import pytest

from chdsharp import cli
from chdsharp.io import CSV_MAGIC, read_csv, read_snapshot
from chdsharp.sweep import VelocityGap


def write_cfg(tmp_path: Path, body: str, name: str = "run.cfg") -> str:
    out = tmp_path / "out"
    p = tmp_path / name
    p.write_text(body + f"\noutput.dir = {out}\n")
    return str(p)


SMALL = """
grid.nx = 32
model.eps = 0.1
model.chi = 0.2
model.variant = zero_velocity
model.T = 2e-3
sources.S = cos(pi*x)
init.sigma0 = 0.2*phi
solver.dt = 5e-4
solver.method = direct
output.fields = phi,theta,sigma
"""


class TestSimulate:
    def test_writes_csv_and_final_snapshots(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL)
        assert cli.main(["simulate", cfg]) == 0
        rows = read_csv(tmp_path / "out" / "diagnostics.csv")
        assert len(rows) == 5 and rows[-1]["t"] == pytest.approx(2e-3)
        for name in ("phi", "theta", "sigma"):
            g, f, fld, t = read_snapshot(tmp_path / "out" / f"snap_{name}_0000004.bin")
            assert fld == name and g.nx == 32 and t == pytest.approx(2e-3)
        assert "energy_E" in capsys.readouterr().out

    def test_zero_horizon(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL.replace("model.T = 2e-3", "model.T = 0"))
        assert cli.main(["simulate", cfg]) == 0
        rows = read_csv(tmp_path / "out" / "diagnostics.csv")
        assert len(rows) == 1 and rows[0]["t"] == 0.0
        assert (tmp_path / "out" / "snap_phi_0000000.bin").exists()

    def test_snapshot_interval(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL + "output.snapshot_interval = 2\n")
        assert cli.main(["simulate", cfg]) == 0
        names = sorted(p.name for p in (tmp_path / "out").glob("snap_phi_*"))
        assert names == ["snap_phi_0000000.bin", "snap_phi_0000002.bin", "snap_phi_0000004.bin"]

    def test_byte_identical_reruns(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir()
        b.mkdir()
        cli.main(["simulate", write_cfg(a, SMALL)])
        cli.main(["simulate", write_cfg(b, SMALL)])
        for f in (a / "out").iterdir():
            assert f.read_bytes() == (b / "out" / f.name).read_bytes()


class TestErrors:
    def test_config_error_exit_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "grid.nx = 8\nbogus.key = 1")
        assert cli.main(["simulate", cfg]) == 2
        err = capsys.readouterr().err.strip()
        assert err.startswith("error: kind=config exit=2 message=")
        assert "line 2" in err and "bogus.key" in err

    @pytest.mark.parametrize("body,needle", [
        ("model.u0 = 0.6\nmodel.T = 1\nsources.U = cos(pi*x)", "terminal-time condition"),
        ("model.chi = 1.0\nmodel.eps = 0.3", "eps0 guard"),
        ("model.variant = brinkman\nsources.H = cos(pi*x)", "volume source H"),
    ])
    def test_admissibility_exit_2(self, tmp_path, capsys, body, needle):
        cfg = write_cfg(tmp_path, body)
        assert cli.main(["simulate", cfg]) == 2
        assert needle in capsys.readouterr().err

    def test_missing_config_exit_5(self, tmp_path, capsys):
        assert cli.main(["simulate", str(tmp_path / "nope.cfg")]) == 5
        assert "kind=io exit=5" in capsys.readouterr().err

    def test_solver_failure_exit_3(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL.replace("solver.method = direct", "solver.method = cg")
                        + "solver.max_iter = 1\n")
        assert cli.main(["simulate", cfg]) == 3
        assert "kind=solver exit=3" in capsys.readouterr().err

    def test_no_command(self, capsys):
        assert cli.main([]) == 2

    def test_print_defaults(self, capsys):
        assert cli.main(["--print-defaults"]) == 0
        out = capsys.readouterr().out
        assert "grid.nx = 128" in out and "sweep.eps" in out


class TestCheck:
    def test_default_passes(self, capsys):
        assert cli.main(["check"]) == 0
        out = capsys.readouterr().out
        assert "normalization" in out and "constants" in out and "FAIL" not in out

    def test_unnormalized_potential_fails(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "model.potential_scale = 1.0")
        assert cli.main(["check", cfg]) == 1
        line = [ln for ln in capsys.readouterr().out.splitlines() if "normalization" in ln][0]
        assert "FAIL" in line

    def test_degenerate_mobility_fails(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "model.mobility_n = s*s")
        assert cli.main(["check", cfg]) == 1
        line = [ln for ln in capsys.readouterr().out.splitlines() if "mobility n" in ln][0]
        assert "FAIL" in line


SWEEP = """
model.variant = zero_velocity
model.T = 2e-3
init.modulation = 0.2
solver.dt = 2e-4
solver.method = direct
sweep.eps = {eps}
sweep.jobs = 1
sweep.metrics = L2_phi_dev,holder_phi
"""


class TestSweep:
    def test_scaling_summary(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SWEEP.format(eps="0.2,0.1,0.05"))
        assert cli.main(["sweep", cfg]) == 0
        text = (tmp_path / "out" / "sweep_summary.csv").read_text()
        lines = text.splitlines()
        assert lines[0] == CSV_MAGIC
        assert lines[1] == "eps,nx,dt,status,L2_phi_dev,holder_phi"
        assert lines[2].startswith("0.20000000000000001,40,")
        assert any(ln.startswith("# fit L2_phi_dev: slope=") for ln in lines)
        assert "# monotone L2_phi_dev: true" in lines
        for e in ("0.2", "0.1", "0.05"):
            assert (tmp_path / "out" / f"eps_{e}.csv").exists()
        assert capsys.readouterr().out == text

    def test_singleton_has_no_fit(self, tmp_path):
        cfg = write_cfg(tmp_path, SWEEP.format(eps="0.1"))
        assert cli.main(["sweep", cfg]) == 0
        text = (tmp_path / "out" / "sweep_summary.csv").read_text()
        assert "# fit" not in text and len(text.splitlines()) == 3

    def test_partial_failure_exit_4(self, tmp_path, capsys):
        body = SWEEP.format(eps="0.2,0.1,0.05").replace("solver.method = direct",
                                                       "solver.method = cg")
        cfg = write_cfg(tmp_path, body + "solver.max_iter = 80\n")
        assert cli.main(["sweep", cfg]) == 4
        captured = capsys.readouterr()
        assert "kind=sweep exit=4" in captured.err
        assert "# failed eps=0.10000000000000001" in captured.out

    def test_total_failure_exit_3(self, tmp_path):
        body = SWEEP.format(eps="0.2,0.1").replace("solver.method = direct", "solver.method = cg")
        cfg = write_cfg(tmp_path, body + "solver.max_iter = 1\n")
        assert cli.main(["sweep", cfg]) == 3

    def test_sweep_admissibility_per_eps(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SWEEP.format(eps="0.3,0.1") + "model.chi = 1.0\nmodel.eps = 0.1\n")
        assert cli.main(["sweep", cfg]) == 2
        assert "eps0 guard" in capsys.readouterr().err

    def test_gap_summary_format(self):
        table = {"scaled": [VelocityGap(0.08, 0.08, 0.3, 0.2, 0.6),
                            VelocityGap(0.04, 0.04, 0.2, 0.1, 0.5)],
                 "fixed": [VelocityGap(0.08, 0.1, 0.3, 0.2, 0.6),
                           VelocityGap(0.04, 0.1, 0.35, 0.1, 0.5)]}
        lines = cli.gap_summary(table).splitlines()
        assert lines[1].startswith("eps,scaled_eta,scaled_gap_L2Q,")
        assert "fixed_rel_gap" in lines[1]
        assert float(lines[2].split(",")[5]) == pytest.approx(0.5)
        assert "# monotone scaled_gap_L2Q: decreasing" in lines
        assert "# monotone fixed_gap_L2Q: not decreasing" in lines


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "chdsharp.cli", "--print-defaults"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "model.eps" in res.stdout
