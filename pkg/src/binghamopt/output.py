"""Result files: VTK legacy ASCII fields, coefficient sidecars and CSV traces.

All numbers are written with ``%.17g`` so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .bingham import MixedField, PhysicsParams, TaylorHood, active_indicator

TRACE_COLUMNS = ("iter", "L_A", "delta_L_A", "c_norm", "V_H1", "t", "newton_iters", "safeguard")
NEWTON_COLUMNS = ("iteration", "residual_norm", "step_size", "update_l1")


def _g(x):
    return "%.17g" % float(x)


def vertex_samples(mesh, field: MixedField):
    """Velocity at vertices ``(nv, 2)`` (midpoint dofs dropped) and pressure."""
    sp = TaylorHood.on(mesh)
    nv = mesh.n_vertices
    u = field.velocity
    vel = np.column_stack([u[:nv], u[sp.nn : sp.nn + nv]])
    return vel, np.asarray(field.pressure)


def write_fields(mesh, state: MixedField, adjoint: MixedField | None, path, params: PhysicsParams | None = None):
    """Write a VTK unstructured grid plus a ``.coeffs.txt`` raw-coefficient sidecar.

    Returns the two paths.
    """
    params = params or PhysicsParams()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nv, nc = mesh.n_vertices, mesh.n_cells
    out = ["# vtk DataFile Version 3.0", "binghamopt fields", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {nv} double")
    out += [f"{_g(x)} {_g(y)} 0" for x, y in mesh.vertices]
    out.append(f"CELLS {nc} {4 * nc}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.cells]
    out.append(f"CELL_TYPES {nc}")
    out += ["5"] * nc
    out.append(f"POINT_DATA {nv}")

    def point_fields(prefix, fld):
        vel, p = vertex_samples(mesh, fld)
        out.append(f"VECTORS {prefix}velocity double")
        out.extend(f"{_g(a)} {_g(b)} 0" for a, b in vel)
        out.append(f"SCALARS {prefix}pressure double 1")
        out.append("LOOKUP_TABLE default")
        out.extend(_g(v) for v in p)

    point_fields("", state)
    if adjoint is not None:
        point_fields("adjoint_", adjoint)
    out.append(f"CELL_DATA {nc}")
    out.append("SCALARS active_indicator double 1")
    out.append("LOOKUP_TABLE default")
    out.extend(_g(v) for v in active_indicator(mesh, state, params))
    path.write_text("\n".join(out) + "\n")

    side = path.with_suffix(".coeffs.txt")
    cols = [state.vector()]
    names = ["state"]
    if adjoint is not None:
        cols.append(adjoint.vector())
        names.append("adjoint")
    sp = TaylorHood.on(mesh)
    header = (
        f"columns: {' '.join(names)}\n"
        f"layout: ux[0:{sp.nn}] uy[{sp.nn}:{2 * sp.nn}] p[{2 * sp.nn}:{sp.ndof}]\n"
        "P2 nodes: vertices, then edge midpoints in topology edge order"
    )
    np.savetxt(side, np.column_stack(cols), fmt="%.17g", header=header)
    return path, side


def read_vtk(path):
    """Minimal reader for files produced by :func:`write_fields`."""
    tokens = Path(path).read_text().split("\n")
    data = {"point_data": {}, "cell_data": {}}
    i = 4
    section = None
    while i < len(tokens):
        line = tokens[i].strip()
        i += 1
        if not line:
            continue
        head = line.split()
        if head[0] == "POINTS":
            n = int(head[1])
            data["points"] = np.array([tokens[i + k].split() for k in range(n)], dtype=float)
            i += n
        elif head[0] == "CELLS":
            n = int(head[1])
            data["cells"] = np.array([tokens[i + k].split()[1:] for k in range(n)], dtype=int)
            i += n
        elif head[0] == "CELL_TYPES":
            n = int(head[1])
            data["cell_types"] = np.array(tokens[i : i + n], dtype=int)
            i += n
        elif head[0] in ("POINT_DATA", "CELL_DATA"):
            section = "point_data" if head[0] == "POINT_DATA" else "cell_data"
            count = int(head[1])
        elif head[0] == "VECTORS":
            data[section][head[1]] = np.array([tokens[i + k].split() for k in range(count)], dtype=float)
            i += count
        elif head[0] == "SCALARS":
            i += 1  # lookup table line
            data[section][head[1]] = np.array(tokens[i : i + count], dtype=float)
            i += count
        else:
            raise ValueError(f"unexpected VTK line {i}: {line!r}")
    return data


def trace_rows(trace):
    prev = None
    for r in trace.rows:
        delta = "" if prev is None else _g(abs(r["L_A"] - prev))
        prev = r["L_A"]
        yield [
            str(r["iter"]),
            _g(r["L_A"]),
            delta,
            _g(r["c_norm"]),
            _g(r["V_H1"]),
            _g(r["t"]),
            str(int(r["newton_iters"])),
            "1" if r["safeguard"] else "0",
        ]


def write_trace(trace, path):
    """CSV with one row per inner iteration (header included)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(trace_rows(trace))
    return path


def write_newton_report(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NEWTON_COLUMNS)
        for k in range(report.iterations):
            w.writerow([k, _g(report.residual_norms[k]), _g(report.step_sizes[k]), _g(report.update_norms[k])])
    return path
