"""Artifact writers: deterministic CSV, stable-key JSON, FVI1 binary matrices.

CSV files are comma-separated with '.' decimal and 17-significant-digit
scientific notation; the first line is a comment row naming the units and the
config hash, so identical configs produce byte-identical files (timings live
only in JSON).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParameterError

_MAGIC = b"FVI1"


def save_matrix_fvi1(path, array) -> None:
    """Write a vector or matrix as magic 'FVI1' + uint64 shape + row-major f8, little-endian."""
    a = np.atleast_2d(np.asarray(array, dtype="<f8"))
    if a.ndim != 2:
        raise ParameterError("only vectors and matrices are supported")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", a.shape[0], a.shape[1]))
        fh.write(np.ascontiguousarray(a).tobytes())


def load_matrix_fvi1(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ParameterError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    if data.size != rows * cols:
        raise ParameterError(f"{path}: truncated payload")
    return data.reshape(rows, cols)


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return "%.16e" % float(value)


def write_csv(path, columns: dict, comment: str) -> None:
    """Write named columns; the comment line goes first, then the header row."""
    names = list(columns)
    length = len(next(iter(columns.values()))) if columns else 0
    lines = [f"# {comment}", ",".join(names)]
    for k in range(length):
        lines.append(",".join(_fmt(columns[name][k]) for name in names))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def matrix_to_csv(path, array, comment: str) -> None:
    """Dump a vector or matrix as rows of 17-significant-digit values."""
    a = np.atleast_2d(np.asarray(array, dtype=float))
    lines = [f"# {comment}"]
    for row in a:
        lines.append(",".join("%.16e" % v for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(path, obj) -> None:
    Path(path).write_text(
        json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n",
        encoding="utf-8",
    )


def mesh_to_csv(path, mesh, config_hash: str) -> None:
    columns = {
        "node": list(range(mesh.n_nodes)),
        "coordinate": mesh.nodes,
        "tag": [t.label for t in map(_region, mesh.node_tags)],
    }
    comment = f"fracvi mesh; units: coordinate=length; config_hash={config_hash}"
    write_csv(path, columns, comment)


def _region(tag):
    from .geometry import Region

    return Region(int(tag))


def solution_to_csv(path, mesh, w, lam, config_hash: str) -> None:
    columns = {
        "node": list(range(mesh.n_nodes)),
        "coordinate": mesh.nodes,
        "w": w,
        "lambda": lam,
        "tag": [t.label for t in map(_region, mesh.node_tags)],
    }
    comment = (
        "fracvi solution; units: coordinate=length, w=length, lambda=energy-dual; "
        f"config_hash={config_hash}"
    )
    write_csv(path, columns, comment)


def study_to_csv(path, report, config_hash: str) -> None:
    columns = {report.parameter: report.grid}
    for name, col in report.columns.items():
        columns[name] = col
    for name in report.columns:
        columns[f"eoc_{name.removeprefix('err_')}"] = [
            None if not np.isfinite(v) else v for v in report.eoc[name]
        ]
    for name, col in report.extras.items():
        if isinstance(col, np.ndarray) and col.shape == report.grid.shape:
            columns[name] = col
    comment = (
        f"fracvi {report.parameter}-sweep; units: errors in problem units; "
        f"config_hash={config_hash}"
    )
    write_csv(path, columns, comment)
