"""File formats: the versioned diagnostics CSV and binary field snapshots.

CSV layout::

    # chd-sharp v1
    t,energy_E,...,max_abs_phi
    <18 numbers per row, repr-exact with 17 significant digits>

Snapshot layout: an ASCII header of ``key value`` lines closed by
``end_header``, then ``nx*ny`` little-endian float64 values in row-major order
(x fastest).  Reading a snapshot back reproduces the array bit for bit.
"""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np

from chdsharp.diagnostics import CSV_COLUMNS, DiagnosticsRecord
from chdsharp.errors import ChdError
from chdsharp.grid import GridSpec

CSV_MAGIC = "# chd-sharp v1"
SNAPSHOT_MAGIC = "# chd-sharp snapshot v1"


class OutputError(ChdError, OSError):
    """Reading or writing an output file failed."""

    exit_code = 5
    kind = "io"


def fmt(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def csv_text(records: list[DiagnosticsRecord]) -> str:
    lines = [CSV_MAGIC, ",".join(CSV_COLUMNS)]
    lines += [",".join(fmt(v) for v in r.row()) for r in records]
    return "\n".join(lines) + "\n"


def write_text(path: str | os.PathLike, text: str) -> None:
    try:
        p = Path(path)
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def write_csv(path: str | os.PathLike, records: list[DiagnosticsRecord]) -> None:
    write_text(path, csv_text(records))


def read_csv(path: str | os.PathLike) -> list[dict[str, float]]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0] != CSV_MAGIC:
        raise OutputError(f"{path}: missing '{CSV_MAGIC}' header")
    cols = lines[1].split(",")
    rows = []
    for ln in lines[2:]:
        if not ln or ln.startswith("#"):
            continue
        rows.append({c: float(v) for c, v in zip(cols, ln.split(","))})
    return rows


def write_snapshot(path: str | os.PathLike, grid: GridSpec, field: np.ndarray, name: str,
                   t: float) -> None:
    arr = np.ascontiguousarray(field, dtype="<f8").reshape(grid.shape)
    header = "\n".join([
        SNAPSHOT_MAGIC,
        f"dims {grid.dim}",
        f"nx {grid.nx}",
        f"ny {grid.ny}",
        f"lx {fmt(grid.lx)}",
        f"ly {fmt(grid.ly)}",
        f"t {fmt(t)}",
        f"field {name}",
        "end_header",
    ]) + "\n"
    try:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def read_snapshot(path: str | os.PathLike) -> tuple[GridSpec, np.ndarray, str, float]:
    """Return ``(grid, field, name, t)``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    end = data.find(b"end_header\n")
    if not data.startswith(SNAPSHOT_MAGIC.encode()) or end < 0:
        raise OutputError(f"{path}: not a snapshot file")
    meta = {}
    for ln in data[:end].decode("ascii").splitlines()[1:]:
        k, _, v = ln.partition(" ")
        meta[k] = v
    grid = GridSpec(int(meta["dims"]), int(meta["nx"]), int(meta["ny"]),
                    float(meta["lx"]), float(meta["ly"]))
    payload = data[end + len(b"end_header\n"):]
    if len(payload) != 8 * grid.size:
        raise OutputError(f"{path}: payload has {len(payload)} bytes, expected {8 * grid.size}")
    arr = np.frombuffer(payload, dtype="<f8").reshape(grid.shape).astype(np.float64)
    return grid, arr, meta["field"], float(meta["t"])
