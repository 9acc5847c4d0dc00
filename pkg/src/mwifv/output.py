"""Writers and readers for everything a run leaves on disk."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .mesh import Mesh


class StateFileError(ValueError):
    """A state dump is malformed or belongs to another mesh."""


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- VTK ---------------------------------------------------------------------------


def write_vtk(path, mesh: Mesh, scalars: dict | None = None, vectors: dict | None = None, title: str = "mwifv") -> None:
    """ASCII legacy unstructured grid with cell data."""
    scalars, vectors = scalars or {}, vectors or {}
    out = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {len(mesh.points)} double")
    out += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.points]
    size = sum(len(c) + 1 for c in mesh.cell_vertices)
    out.append(f"CELLS {mesh.n_cells} {size}")
    out += [" ".join(map(str, [len(c), *c])) for c in mesh.cell_vertices]
    out.append(f"CELL_TYPES {mesh.n_cells}")
    out += ["9" if len(c) == 4 else "7" for c in mesh.cell_vertices]
    if scalars or vectors:
        out.append(f"CELL_DATA {mesh.n_cells}")
    for name, vals in scalars.items():
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [f"{v:.17g}" for v in np.asarray(vals, float)]
    for name, vals in vectors.items():
        out.append(f"VECTORS {name} double")
        out += [f"{a:.17g} {b:.17g} 0" for a, b in np.asarray(vals, float)]
    _atomic_write(Path(path), "\n".join(out) + "\n")


def read_vtk(path) -> dict:
    """Minimal reader for the files written by :func:`write_vtk`; checks the structure."""
    tok = Path(path).read_text().split("\n")
    if not tok[0].startswith("# vtk DataFile"):
        raise ValueError("not a legacy VTK file")
    if tok[2].strip() != "ASCII" or tok[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise ValueError("expected an ASCII unstructured grid")
    words = " ".join(tok[4:]).split()
    pos = 0

    def take(n):
        nonlocal pos
        chunk = words[pos : pos + n]
        if len(chunk) != n:
            raise ValueError("truncated VTK file")
        pos += n
        return chunk

    head = take(3)
    if head[0] != "POINTS":
        raise ValueError("expected POINTS")
    npts = int(head[1])
    points = np.array(take(3 * npts), float).reshape(npts, 3)
    head = take(3)
    if head[0] != "CELLS":
        raise ValueError("expected CELLS")
    ncells, size = int(head[1]), int(head[2])
    raw = [int(t) for t in take(size)]
    cells, i = [], 0
    while i < len(raw):
        k = raw[i]
        cells.append(raw[i + 1 : i + 1 + k])
        i += k + 1
    if len(cells) != ncells or any(v >= npts for c in cells for v in c):
        raise ValueError("inconsistent CELLS block")
    head = take(2)
    if head[0] != "CELL_TYPES" or int(head[1]) != ncells:
        raise ValueError("expected CELL_TYPES")
    types = [int(t) for t in take(ncells)]
    data = {"points": points, "cells": cells, "types": types, "scalars": {}, "vectors": {}}
    if pos < len(words):
        head = take(2)
        if head[0] != "CELL_DATA" or int(head[1]) != ncells:
            raise ValueError("expected CELL_DATA")
        while pos < len(words):
            kind = take(1)[0]
            if kind == "SCALARS":
                name, _, _ = take(3)
                take(2)  # LOOKUP_TABLE default
                data["scalars"][name] = np.array(take(ncells), float)
            elif kind == "VECTORS":
                name, _ = take(2)
                data["vectors"][name] = np.array(take(3 * ncells), float).reshape(ncells, 3)
            else:
                raise ValueError(f"unsupported block {kind}")
    return data


# -- CSV ---------------------------------------------------------------------------


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_residual_csv(path, history: list, columns: tuple) -> None:
    """One row per outer iteration; ``columns`` are residual keys (missing ones are left blank)."""
    rows = [[m, *(h.get(c, "") for c in columns)] for m, h in enumerate(history, start=1)]
    _atomic_write(Path(path), _csv_text(["iteration", *(f"R_{c}" for c in columns)], rows))


def write_sensitivity_csv(path, reports: list) -> None:
    eps = sorted({e for r in reports for e in r.fd}, reverse=True)
    header = ["control", "adjoint", *(f"fd_eps_{e:.3g}" for e in eps), "relative_deviation"]
    rows = []
    for r in reports:
        rows.append([r.control, r.adjoint, *(r.fd.get(e, "") for e in eps), r.deviation if r.fd else ""])
    _atomic_write(Path(path), _csv_text(header, rows))


def write_profile_csv(path, header, rows) -> None:
    _atomic_write(Path(path), _csv_text(header, rows))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- state dumps ---------------------------------------------------------------------


def write_state(path, mesh: Mesh, fields: dict, kind: str) -> None:
    """Text dump ``name ncols`` blocks after a header carrying the mesh checksum."""
    out = [f"# mwifv {kind} state", f"mesh {mesh.checksum()}", f"cells {mesh.n_cells}", f"faces {mesh.n_faces}"]
    for name, arr in fields.items():
        a = np.asarray(arr, float)
        flat = a.reshape(len(a), -1)
        out.append(f"field {name} {len(a)} {flat.shape[1]}")
        out += [" ".join(f"{v:.17g}" for v in row) for row in flat]
    _atomic_write(Path(path), "\n".join(out) + "\n")


def read_state(path, mesh: Mesh, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise StateFileError(f"state file {path} does not exist")
    lines = path.read_text().splitlines()
    if len(lines) < 4 or not lines[0].startswith("# mwifv"):
        raise StateFileError(f"{path}: not a state dump")
    if kind is not None and lines[0].split()[2] != kind:
        raise StateFileError(f"{path}: expected a {kind} state")
    checksum = lines[1].split()[1]
    if checksum != mesh.checksum():
        raise StateFileError(f"{path}: mesh checksum {checksum} does not match {mesh.checksum()}")
    fields, i = {}, 4
    while i < len(lines):
        tok = lines[i].split()
        if tok[0] != "field":
            raise StateFileError(f"{path}:{i + 1}: expected a field header")
        name, n, k = tok[1], int(tok[2]), int(tok[3])
        block = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1 : i + 1 + n]])
        if block.shape != (n, k):
            raise StateFileError(f"{path}: field {name} has shape {block.shape}, expected {(n, k)}")
        fields[name] = block[:, 0] if k == 1 else block
        i += n + 1
    return fields


# -- manifest ---------------------------------------------------------------------------


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        f = float(value)
        return f if np.isfinite(f) else str(f)
    if isinstance(value, np.integer):
        return int(value)
    return value


class RunManifest:
    """Run record written once, atomically, when the run ends."""

    def __init__(self, config_checksum: str, version: str):
        self.data = {
            "config_checksum": config_checksum,
            "version": version,
            "started": datetime.now(timezone.utc).isoformat(),
        }

    def update(self, **items) -> None:
        self.data.update(items)

    def finish(self, path, exit_status: int, final_residuals: dict | None = None) -> None:
        self.data["finished"] = datetime.now(timezone.utc).isoformat()
        self.data["exit_status"] = int(exit_status)
        self.data["final_residuals"] = final_residuals or {}
        _atomic_write(Path(path), json.dumps(_jsonable(self.data), indent=2, sort_keys=True) + "\n")
