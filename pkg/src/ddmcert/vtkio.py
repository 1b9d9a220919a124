"""Minimal legacy-ASCII VTK writer for triangle meshes.

Writes version-2.0 unstructured grids with optional point scalars, cell
scalars and cell vectors — enough for inspecting iterates and flux fields in
ParaView without pulling in a VTK dependency.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import TriMesh

_FMT = "%.12g"


def _write_values(lines: list[str], values: np.ndarray) -> None:
    for v in np.asarray(values, dtype=float):
        lines.append(_FMT % v)


def write_vtk(path, mesh: TriMesh, point_scalars=None, cell_scalars=None,
              cell_vectors=None, title: str = "ddmcert fields") -> Path:
    """Write the mesh and named data arrays; returns the path written."""
    point_scalars = point_scalars or {}
    cell_scalars = cell_scalars or {}
    cell_vectors = cell_vectors or {}
    lines = ["# vtk DataFile Version 2.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID"]
    V, T = mesh.n_vertices, mesh.n_triangles
    lines.append(f"POINTS {V} double")
    for x, y in mesh.vertices:
        lines.append(f"{_FMT % x} {_FMT % y} 0")
    lines.append(f"CELLS {T} {4 * T}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {T}")
    lines.extend(["5"] * T)
    if point_scalars:
        lines.append(f"POINT_DATA {V}")
        for name, values in point_scalars.items():
            if len(values) != V:
                raise ValueError(f"point array {name!r} has wrong length")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            _write_values(lines, values)
    if cell_scalars or cell_vectors:
        lines.append(f"CELL_DATA {T}")
        for name, values in cell_scalars.items():
            if len(values) != T:
                raise ValueError(f"cell array {name!r} has wrong length")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            _write_values(lines, values)
        for name, values in cell_vectors.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (T, 2):
                raise ValueError(f"cell vector array {name!r} has wrong shape")
            lines.append(f"VECTORS {name} double")
            for vx, vy in values:
                lines.append(f"{_FMT % vx} {_FMT % vy} 0")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
