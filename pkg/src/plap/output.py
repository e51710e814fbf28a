"""On-disk artifacts: time-series CSV, binary field snapshots, summaries.

Everything written here is a pure function of its inputs (no timestamps, no
host names), so identical runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticsRecord
from .fields import Grid, Trajectory, VectorField

MAGIC = b"PLAP1"
_HEADER = struct.Struct("<5sIII")  # magic, dim, n, components
ERROR_MARKER = "ERROR"


def _num(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def trajectory_csv(traj: Trajectory) -> str:
    """One row per stored snapshot, columns in ``DiagnosticsRecord.CSV_COLUMNS`` order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DiagnosticsRecord.CSV_COLUMNS)
    for rec in traj.diagnostics:
        w.writerow([_num(x) for x in rec.csv_row()])
    return buf.getvalue()


def write_table(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([x if isinstance(x, str) else _num(x) for x in row])
    path.write_text(buf.getvalue())


def encode_field(v: VectorField) -> bytes:
    """``PLAP1`` blob: header (magic, dim, n, components as little-endian
    uint32) followed by the values as little-endian float64, row-major with
    the component index slowest."""
    g = v.grid
    head = _HEADER.pack(MAGIC, g.dim, g.n, v.values.shape[0])
    return head + np.ascontiguousarray(v.values, dtype="<f8").tobytes(order="C")


def decode_field(blob: bytes) -> VectorField:
    if len(blob) < _HEADER.size:
        raise ValueError("blob shorter than the PLAP1 header")
    magic, dim, n, comps = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    grid = Grid(dim, n)
    count = comps * n**dim
    body = blob[_HEADER.size:]
    if len(body) != 8 * count:
        raise ValueError(f"expected {count} values, found {len(body) // 8}")
    vals = np.frombuffer(body, dtype="<f8").reshape((comps,) + grid.shape)
    return VectorField(grid, vals.astype(float))


def write_trajectory(traj: Trajectory, out: Path, snapshots: bool = True) -> None:
    """``timeseries.csv`` plus one ``snapshots/NNNNN.plap`` blob per sample."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "timeseries.csv").write_text(trajectory_csv(traj))
    if not snapshots:
        return
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    rows = []
    for k, (t, s) in enumerate(zip(traj.times, traj.states)):
        name = f"{k:05d}.plap"
        (snap / name).write_bytes(encode_field(s))
        rows.append([str(k), t, name])
    write_table(snap / "index.csv", ["index", "time", "file"], rows)


def write_error(out: Path, lines: list[str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / ERROR_MARKER).write_text("\n".join(lines) + "\n")


def format_table(title: str, header: list[str], rows: list[list]) -> str:
    """Fixed-width text table for the summary file."""
    cells = [[x if isinstance(x, str) else ("-" if x is None else f"{x:.6g}") for x in r] for r in rows]
    widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(header)]
    lines = [title, "  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(line.rstrip() for line in lines) + "\n"
