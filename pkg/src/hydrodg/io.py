"""Output of fields and tables, and run configuration files.

VTK output is legacy ASCII (version 2.0). CSV numbers are written with 17
significant digits so they re-parse to the same doubles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dg_space import reference_basis
from .forms import DEFAULT_ETA, Params, SolutionField
from .mesh import Mesh

VTK_TRIANGLE = 5

# sub-triangles of the quadratic node set: vertices 0,1,2 then midpoints 01, 12, 20
_P2_SPLIT = np.array([[0, 3, 5], [3, 1, 4], [5, 4, 2], [3, 4, 5]])


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------
# VTK


def _fmt(x) -> str:
    return repr(float(x))


def _write_grid(fh, points, cells, title):
    fh.write("# vtk DataFile Version 2.0\n")
    fh.write(title.replace("\n", " ")[:255] + "\n")
    fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    fh.write(f"POINTS {len(points)} double\n")
    for x, z in points:
        fh.write(f"{_fmt(x)} {_fmt(z)} 0.0\n")
    fh.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
    for c in cells:
        fh.write(f"3 {c[0]} {c[1]} {c[2]}\n")
    fh.write(f"CELL_TYPES {len(cells)}\n")
    fh.write(f"{VTK_TRIANGLE}\n" * len(cells))


def _write_arrays(fh, u, v, p):
    fh.write("SCALARS u double 1\nLOOKUP_TABLE default\n")
    fh.writelines(f"{_fmt(a)}\n" for a in u)
    fh.write("SCALARS v double 1\nLOOKUP_TABLE default\n")
    fh.writelines(f"{_fmt(a)}\n" for a in v)
    fh.write("SCALARS p double 1\nLOOKUP_TABLE default\n")
    fh.writelines(f"{_fmt(a)}\n" for a in p)
    fh.write("VECTORS velocity double\n")
    fh.writelines(f"{_fmt(a)} {_fmt(b)} 0.0\n" for a, b in zip(u, v))


def element_means(field) -> np.ndarray:
    space = field.space
    return np.sum(space.vol_weights * field.at_quadrature(), axis=1) / space.mesh.areas


def write_vtk(mesh: Mesh, solution: SolutionField, path, discontinuous: bool = False,
              title: str = "hydrostatic Stokes DG solution") -> Path:
    """Write u, v, p on ``mesh``.

    By default the mesh is written as is with element means as cell data.
    With ``discontinuous`` every element gets its own copy of its nodes
    (quadratic elements are split into four) and nodal values are written
    as point data, so jumps between elements are preserved.
    """
    space = solution.space
    if space.mesh is not mesh:
        raise ValueError("solution is not defined on this mesh")
    path = Path(path)
    try:
        fh = open(path, "w")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    with fh:
        if not discontinuous:
            _write_grid(fh, mesh.vertices, mesh.triangles, title)
            fh.write(f"CELL_DATA {mesh.n_triangles}\n")
            _write_arrays(fh, *(element_means(f) for f in (solution.u, solution.v, solution.p)))
            return path

        basis = reference_basis(space.degree)
        ref = basis.nodes
        phys = np.einsum("eij,nj->eni", space.jac, ref) + space.origin[:, None, :]
        values = [np.einsum("ni,ei->en", basis.values(ref), f.local)
                  for f in (solution.u, solution.v, solution.p)]
        npe = len(ref)
        split = np.array([[0, 1, 2]]) if space.degree == 1 else _P2_SPLIT
        cells = (np.arange(mesh.n_triangles)[:, None, None] * npe + split[None]).reshape(-1, 3)
        _write_grid(fh, phys.reshape(-1, 2), cells, title)
        fh.write(f"POINT_DATA {mesh.n_triangles * npe}\n")
        _write_arrays(fh, *(val.ravel() for val in values))
    return path


def read_vtk_arrays(path) -> dict:
    """Minimal reader for files produced by :func:`write_vtk` (used for checks)."""
    tokens = Path(path).read_text().split("\n")
    out = {}
    i = 0
    sizes = {}
    while i < len(tokens):
        line = tokens[i].split()
        if line and line[0] in ("POINTS", "CELLS", "CELL_TYPES", "CELL_DATA", "POINT_DATA"):
            sizes[line[0]] = int(line[1])
            if line[0] in ("CELL_DATA", "POINT_DATA"):
                count = int(line[1])
        if line and line[0] == "SCALARS":
            name = line[1]
            i += 2
            out[name] = np.array([float(t) for t in tokens[i:i + count]])
            i += count
            continue
        if line and line[0] == "VECTORS":
            name = line[1]
            i += 1
            out[name] = np.array([[float(t) for t in r.split()] for r in tokens[i:i + count]])
            i += count
            continue
        i += 1
    out["_sizes"] = sizes
    return out


# ----------------------------------------------------------------------
# CSV


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return repr(x) if not math.isfinite(x) else f"{x:.16e}"
    return str(x)


def write_csv_table(table, path, metadata: Optional[dict] = None) -> Path:
    """Write a table with a header row.

    ``table`` is either an object with ``HEADER`` and ``as_rows()`` (or
    ``as_row()`` for a single record / list of records), or a pair
    (header, rows). ``metadata`` is written as leading '#' comment lines.
    """
    header, rows = _table_rows(table)
    path = Path(path)
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write CSV file {path}: {exc}") from exc
    with fh:
        for k, val in (metadata or {}).items():
            fh.write(f"# {k}={val}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(x) for x in r])
    return path


def _table_rows(table):
    if isinstance(table, tuple) and len(table) == 2:
        return list(table[0]), list(table[1])
    if isinstance(table, list):
        if not table:
            raise ValueError("cannot infer a header from an empty list; pass (header, rows)")
        return list(table[0].HEADER), [r.as_row() for r in table]
    if hasattr(table, "as_rows"):
        return list(table.HEADER), list(table.as_rows())
    if hasattr(table, "as_row"):
        return list(table.HEADER), [table.as_row()]
    raise TypeError(f"cannot tabulate {type(table).__name__}")


def read_csv_table(path):
    """(header, rows) with numeric cells parsed to float and blanks to None."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    rows = []
    for r in reader:
        parsed = []
        for c in r:
            if c == "":
                parsed.append(None)
                continue
            try:
                parsed.append(float(c))
            except ValueError:
                parsed.append(c)
        rows.append(parsed)
    return header, rows


# ----------------------------------------------------------------------
# run configuration


def parse_mesh_shape(text: str) -> tuple[int, int]:
    try:
        nx, nz = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"mesh must look like NxM, got {text!r}") from None
    if nx < 1 or nz < 1:
        raise ConfigError(f"mesh counts must be positive, got {text!r}")
    return nx, nz


def parse_levels(text: str) -> tuple[int, ...]:
    try:
        levels = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"levels must be comma-separated integers, got {text!r}") from None
    if not levels or min(levels) < 1:
        raise ConfigError(f"levels must be positive, got {text!r}")
    return levels


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


@dataclass
class RunConfig:
    """Every option of a run. ``eta = None`` selects the degree default."""

    mesh: Optional[str] = None
    mesh_file: Optional[str] = None
    degree: int = 1
    nu: float = 1.0
    eta: Optional[float] = None
    delta_p: float = 1e-12
    bc: str = "cavity"
    out: str = "out"
    seed: int = 42
    levels: Optional[str] = None
    delta_sweep: str = "1e-8"
    dump_matrices: bool = False

    HELP = {
        "mesh": "structured mesh NxM on the unit square (default 30x30; 4x4 for check)",
        "mesh_file": "mesh file in hydrodg-mesh format; overrides mesh",
        "degree": "polynomial degree k in {1, 2} (default 1)",
        "nu": "horizontal viscosity (default 1)",
        "eta": f"SIP penalty (default {DEFAULT_ETA[1]:g} for k=1, {DEFAULT_ETA[2]:g} for k=2)",
        "delta_p": "pressure penalty (default 1e-12)",
        "bc": "boundary condition preset: cavity or dirichlet (default cavity)",
        "out": "output directory (default out)",
        "seed": "seed of random fields (default 42)",
        "levels": "comma-separated levels N meaning NxN (default 8,16,32 for converge; 4,8,16 for infsup)",
        "delta_sweep": "extra delta_p values for the infsup gamma comparison (default 1e-8)",
        "dump_matrices": "write assembled blocks in MatrixMarket format (default false)",
    }

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mesh is not None:
            parse_mesh_shape(self.mesh)
        if self.degree not in (1, 2):
            raise ConfigError(f"degree must be 1 or 2, got {self.degree}")
        if self.levels is not None:
            parse_levels(self.levels)
        self.delta_values
        if self.bc not in ("cavity", "dirichlet"):
            raise ConfigError(f"unknown boundary preset {self.bc!r}")
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def mesh_shape(self, default: str = "30x30") -> tuple[int, int]:
        return parse_mesh_shape(self.mesh or default)

    def level_list(self, default: str = "8,16,32") -> tuple[int, ...]:
        return parse_levels(self.levels or default)

    @property
    def delta_values(self) -> tuple[float, ...]:
        try:
            vals = tuple(float(t) for t in self.delta_sweep.split(",") if t.strip())
        except ValueError:
            raise ConfigError(f"delta_sweep must be comma-separated numbers, got {self.delta_sweep!r}") from None
        if any(not v >= 0 for v in vals):
            raise ConfigError("delta_sweep values must be non-negative")
        return vals

    def params(self, **overrides) -> Params:
        kw = dict(nu=self.nu, eta=self.eta, delta_p=self.delta_p, degree=self.degree)
        kw.update(overrides)
        return Params(**kw)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def _convert(cls, key, text):
        if key not in cls.keys():
            raise ConfigError(f"unknown config key {key!r}")
        text = text.strip()
        if key in ("mesh", "mesh_file", "eta", "levels") and text.lower() in ("", "none"):
            return None
        try:
            if key in ("degree", "seed"):
                return int(text)
            if key in ("nu", "eta", "delta_p"):
                return float(text)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {text!r}") from None
        if key == "dump_matrices":
            if text.lower() not in _BOOL:
                raise ConfigError(f"bad boolean for {key}: {text!r}")
            return _BOOL[text.lower()]
        return text

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key in values:
                raise ConfigError(f"line {n}: duplicate key {key!r}")
            values[key] = cls._convert(key, val)
        return cls(**values)

    def to_text(self) -> str:
        lines = []
        for k in self.keys():
            val = getattr(self, k)
            if isinstance(val, float):
                val = repr(val)
            elif isinstance(val, bool):
                val = str(val).lower()
            lines.append(f"{k} = {'none' if val is None else val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path

    def updated(self, **changes) -> "RunConfig":
        unknown = set(changes) - set(self.keys())
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return replace(self, **changes)
