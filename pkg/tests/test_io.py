import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hydrodg.analysis import ConvergenceRow, ConvergenceTable
from hydrodg.dg_space import BrokenSpace
from hydrodg.forms import Params, SolutionField, assemble_system, cavity_bcs
from hydrodg.io import (ConfigError, RunConfig, element_means, parse_levels, parse_mesh_shape,
                        read_csv_table, read_vtk_arrays, write_csv_table, write_vtk)
from hydrodg.linsolve import solve_saddle
from hydrodg.mesh import Mesh, build_structured_mesh

TAGS = {(0, 1): "BOTTOM", (1, 2): "SIDEWALL", (2, 3): "SURFACE", (3, 0): "SIDEWALL"}


def two_triangles():
    return Mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]], tags=TAGS)


def _field(space, fu, fv, fp):
    return SolutionField(space.interpolate(fu), space.interpolate(fv), space.interpolate(fp))


# ----------------------------------------------------------------------
# VTK


def test_vtk_two_triangles(tmp_path):
    m = two_triangles()
    s = BrokenSpace(m, 1)
    sol = _field(s, lambda x, z: x, lambda x, z: 0 * x, lambda x, z: 1 + 0 * x)
    path = write_vtk(m, sol, tmp_path / "t.vtk")
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version 2.0\n")
    arr = read_vtk_arrays(path)
    assert arr["_sizes"] == {"POINTS": 4, "CELLS": 2, "CELL_TYPES": 2, "CELL_DATA": 2}
    assert np.allclose(arr["p"], 1.0, rtol=0, atol=1e-14)
    # element means of x over the two triangles: centroids x = 2/3 and 1/3
    assert np.allclose(arr["u"], [2 / 3, 1 / 3], atol=1e-15)
    assert arr["velocity"].shape == (2, 3)


@pytest.mark.parametrize("k", [1, 2])
def test_vtk_discontinuous_matches_nodal_values(tmp_path, k, rng):
    m = build_structured_mesh(3, 2)
    s = BrokenSpace(m, k)
    sol = SolutionField(*(s.function(rng.uniform(-1, 1, s.ndofs)) for _ in range(3)))
    path = write_vtk(m, sol, tmp_path / "dg.vtk", discontinuous=True)
    arr = read_vtk_arrays(path)
    npe = 3 if k == 1 else 6
    assert arr["_sizes"]["POINTS"] == m.n_triangles * npe
    assert arr["_sizes"]["CELLS"] == m.n_triangles * (1 if k == 1 else 4)
    # independent route: read the points back and evaluate the fields there
    lines = path.read_text().split("\n")
    start = next(i for i, ln in enumerate(lines) if ln.startswith("POINTS")) + 1
    pts = np.array([[float(t) for t in ln.split()[:2]] for ln in lines[start:start + m.n_triangles * npe]])
    elems = np.repeat(np.arange(m.n_triangles), npe)
    for name in ("u", "v", "p"):
        f = getattr(sol, name)
        assert np.allclose(arr[name], f.at_points(pts, elems), atol=1e-12)


def test_vtk_cavity_arrays(tmp_path, mesh4):
    system = assemble_system(mesh4, Params(), cavity_bcs())
    x, _ = solve_saddle(system)
    sol = system.split(x)
    arr = read_vtk_arrays(write_vtk(mesh4, sol, tmp_path / "c.vtk"))
    assert {"u", "v", "p", "velocity"} <= set(arr)
    assert np.allclose(arr["p"], element_means(sol.p), rtol=1e-15)


def test_vtk_wrong_mesh_and_bad_path(tmp_path, mesh4):
    s = BrokenSpace(mesh4, 1)
    sol = SolutionField(s.zeros(), s.zeros(), s.zeros())
    with pytest.raises(ValueError):
        write_vtk(build_structured_mesh(4, 4), sol, tmp_path / "x.vtk")
    with pytest.raises(OSError):
        write_vtk(mesh4, sol, tmp_path / "missing" / "x.vtk")


# ----------------------------------------------------------------------
# CSV


def test_csv_empty_and_three_rows(tmp_path):
    p = write_csv_table((("a", "b"), []), tmp_path / "e.csv")
    assert p.read_text().strip() == "a,b"
    assert read_csv_table(p) == (["a", "b"], [])
    rows = [(1, 0.1, "x"), (2, None, "y"), (3, float("nan"), "z")]
    header, got = read_csv_table(write_csv_table((("i", "f", "s"), rows), tmp_path / "r.csv"))
    assert len(got) == 3 and got[1][1] is None and np.isnan(got[2][1])


@given(st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False),
                          st.floats(allow_nan=False, allow_infinity=False)), max_size=8))
def test_csv_round_trip_exact(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    header, got = read_csv_table(write_csv_table((("a", "b"), rows), path, metadata={"seed": 42}))
    assert header == ["a", "b"]
    assert [tuple(r) for r in got] == [tuple(float(x) for x in r) for r in rows]
    assert path.read_text().startswith("# seed=42\n")


def test_csv_from_records(tmp_path):
    table = ConvergenceTable(degree=1, rows=[ConvergenceRow(4, 4, 0.35, 0.1, 0.01),
                                             ConvergenceRow(8, 8, 0.18, 0.05, 0.0025, 1.0, 2.0)])
    header, rows = read_csv_table(write_csv_table(table, tmp_path / "c.csv"))
    assert header == list(ConvergenceTable.HEADER)
    assert rows[0][-1] is None and rows[1][-1] == 2.0
    with pytest.raises(ValueError):
        write_csv_table([], tmp_path / "x.csv")
    with pytest.raises(TypeError):
        write_csv_table(3, tmp_path / "x.csv")
    with pytest.raises(OSError):
        write_csv_table((("a",), []), tmp_path / "missing" / "x.csv")


# ----------------------------------------------------------------------
# configuration


def test_parsers():
    assert parse_mesh_shape("30x20") == (30, 20)
    assert parse_levels("4, 8,16") == (4, 8, 16)
    for bad in ("30", "0x3", "ax3"):
        with pytest.raises(ConfigError):
            parse_mesh_shape(bad)
    for bad in ("", "4,x", "0"):
        with pytest.raises(ConfigError):
            parse_levels(bad)


configs = st.builds(
    RunConfig,
    mesh=st.one_of(st.none(), st.tuples(st.integers(1, 64), st.integers(1, 64)).map(lambda t: f"{t[0]}x{t[1]}")),
    degree=st.sampled_from([1, 2]),
    nu=st.floats(1e-3, 1e3),
    eta=st.one_of(st.none(), st.floats(1e-3, 1e6)),
    delta_p=st.floats(0, 1),
    bc=st.sampled_from(["cavity", "dirichlet"]),
    seed=st.integers(0, 2 ** 31),
    levels=st.one_of(st.none(), st.just("4,8")),
    dump_matrices=st.booleans(),
)


@given(configs)
def test_config_round_trip(cfg):
    assert RunConfig.from_text(cfg.to_text()) == cfg


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig.from_text("mesh = 4x4\nfrobnicate = 1\n")
    with pytest.raises(ConfigError, match="duplicate"):
        RunConfig.from_text("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigError, match="line 2"):
        RunConfig.from_text("seed = 1\nnonsense\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("degree = 3\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("nu = abc\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("dump_matrices = maybe\n")
    with pytest.raises(ConfigError):
        RunConfig(delta_sweep="1e-8,-1")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "absent.cfg")
    with pytest.raises(ConfigError):
        RunConfig().updated(bogus=1)


def test_config_file_and_params(tmp_path):
    cfg = RunConfig(degree=2, mesh="6x6", eta=None)
    path = cfg.save(tmp_path / "run.cfg")
    back = RunConfig.load(path)
    assert back == cfg and back.params().eta == 1e4
    assert back.mesh_shape() == (6, 6) and RunConfig().mesh_shape("4x4") == (4, 4)
    assert RunConfig.from_text("# comment\nmesh-file = m.txt  # trailing\n").mesh_file == "m.txt"
    assert set(RunConfig.HELP) == set(RunConfig.keys())
