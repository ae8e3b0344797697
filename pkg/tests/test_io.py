from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chdsharp.diagnostics import CSV_COLUMNS, DiagnosticsRecord
from chdsharp.grid import GridSpec
from chdsharp.io import (CSV_MAGIC, OutputError, csv_text, fmt, read_csv, read_snapshot,
                         write_csv, write_snapshot, write_text)


class TestFmt:
    @settings(max_examples=100)
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_round_trip_exact(self, x):
        assert float(fmt(x)) == x

    def test_nan(self):
        assert fmt(math.nan) == "nan"


class TestCsv:
    def test_layout(self):
        text = csv_text([DiagnosticsRecord(t=0.0, energy_E=1.5)])
        lines = text.splitlines()
        assert lines[0] == CSV_MAGIC
        assert lines[1].split(",") == list(CSV_COLUMNS)
        assert len(lines[2].split(",")) == 18 and lines[2].startswith("0,1.5,nan")

    def test_round_trip(self, tmp_path):
        recs = [DiagnosticsRecord(t=0.1 * k, energy_E=1 / 3 + k, max_abs_phi=0.9) for k in range(3)]
        write_csv(tmp_path / "sub" / "d.csv", recs)
        rows = read_csv(tmp_path / "sub" / "d.csv")
        assert [r["energy_E"] for r in rows] == [1 / 3, 1 / 3 + 1, 1 / 3 + 2]
        assert math.isnan(rows[0]["gl_energy"])

    def test_bad_header(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("t,energy_E\n1,2\n")
        with pytest.raises(OutputError):
            read_csv(p)

    def test_missing(self, tmp_path):
        with pytest.raises(OutputError):
            read_csv(tmp_path / "none.csv")

    def test_unwritable(self, tmp_path):
        (tmp_path / "f").write_text("")
        with pytest.raises(OutputError) as exc:
            write_text(tmp_path / "f" / "x.csv", "a")
        assert exc.value.exit_code == 5


class TestSnapshot:
    @pytest.mark.parametrize("g", [GridSpec.line(7, 2.0), GridSpec.rect(5, 3, 1.5, 0.5)])
    def test_bit_exact_round_trip(self, tmp_path, g):
        f = np.random.default_rng(0).standard_normal(g.shape)
        write_snapshot(tmp_path / "s.bin", g, f, "phi", 0.125)
        g2, f2, name, t = read_snapshot(tmp_path / "s.bin")
        assert g2 == g and name == "phi" and t == 0.125
        assert f2.tobytes() == f.tobytes()

    def test_payload_is_little_endian_row_major(self, tmp_path):
        g = GridSpec.rect(3, 2)
        f = np.arange(6.0).reshape(2, 3)
        write_snapshot(tmp_path / "s.bin", g, f, "theta", 0.0)
        data = (tmp_path / "s.bin").read_bytes()
        payload = data[data.index(b"end_header\n") + 11:]
        assert np.frombuffer(payload, "<f8").tolist() == [0, 1, 2, 3, 4, 5]

    def test_truncated(self, tmp_path):
        g = GridSpec.line(4)
        write_snapshot(tmp_path / "s.bin", g, g.zeros(), "phi", 0.0)
        p = tmp_path / "s.bin"
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(OutputError, match="payload"):
            read_snapshot(p)

    def test_not_a_snapshot(self, tmp_path):
        p = tmp_path / "s.bin"
        p.write_bytes(b"hello")
        with pytest.raises(OutputError):
            read_snapshot(p)
