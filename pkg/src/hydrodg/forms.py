"""Assembly of the SIP DG hydrostatic Stokes system.

The global unknown vector is laid out by field: all u dofs, then all v
dofs, then all p dofs. The assembled matrix is

    [ A   B^T       ]
    [ -B  S + dp*Mp ]

where A = blockdiag(nu * a_sip, nu * eta * vertical penalty).

Dirichlet data enter weakly only. On a Dirichlet face the boundary jump of
the trial function is read as (trace - datum); the datum part is moved to
the right-hand side.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .dg_space import BrokenSpace, DGFunction
from .mesh import INTERIOR, BoundaryTag, Mesh

COMPONENTS = ("u", "v")
DEFAULT_ETA = {1: 1e2, 2: 1e4}

Datum = Union[None, float, Callable]


class SingularSystemWarning(RuntimeWarning):
    pass


# ----------------------------------------------------------------------
# parameters and boundary conditions


@dataclass(frozen=True)
class Params:
    nu: float = 1.0
    eta: Optional[float] = None
    delta_p: float = 1e-12
    degree: int = 1

    def __post_init__(self):
        if self.eta is None:
            object.__setattr__(self, "eta", DEFAULT_ETA.get(self.degree, 1e2))
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.delta_p >= 0:
            raise ValueError(f"delta_p must be non-negative, got {self.delta_p}")
        if self.degree not in (1, 2):
            raise ValueError(f"unsupported degree {self.degree}")


@dataclass(frozen=True)
class Dirichlet:
    datum: Datum = None


@dataclass(frozen=True)
class Neumann:
    datum: Datum = None


def _eval_datum(datum: Datum, x, z):
    if datum is None:
        return np.zeros_like(x)
    if callable(datum):
        return np.broadcast_to(np.asarray(datum(x, z), dtype=float), x.shape)
    return np.full_like(x, float(datum))


def _is_zero(datum: Datum) -> bool:
    return datum is None or (not callable(datum) and float(datum) == 0.0)


@dataclass
class BoundaryConditionSet:
    """One condition per (boundary tag, velocity component)."""

    conditions: dict = field(default_factory=dict)

    def __post_init__(self):
        conds = {}
        for (tag, comp), bc in self.conditions.items():
            if comp not in COMPONENTS:
                raise ValueError(f"unknown component {comp!r}")
            if not isinstance(bc, (Dirichlet, Neumann)):
                raise TypeError(f"condition for {(tag, comp)} must be Dirichlet or Neumann")
            conds[(BoundaryTag(tag), comp)] = bc
        self.conditions = conds

    def get(self, tag, comp):
        try:
            return self.conditions[(BoundaryTag(tag), comp)]
        except KeyError:
            raise KeyError(f"no boundary condition for component {comp!r} on {BoundaryTag(tag).name}") from None

    def validate(self, mesh: Mesh):
        for tag in np.unique(mesh.face_tag[mesh.boundary_faces]):
            for comp in COMPONENTS:
                self.get(int(tag), comp)

    def dirichlet_faces(self, mesh: Mesh, comp: str) -> np.ndarray:
        """Boundary faces where ``comp`` is Dirichlet."""
        self.validate(mesh)
        bnd = mesh.boundary_faces
        keep = [isinstance(self.get(int(mesh.face_tag[f]), comp), Dirichlet) for f in bnd]
        return bnd[np.array(keep, dtype=bool)] if len(bnd) else bnd

    def neumann_faces(self, mesh: Mesh, comp: str) -> np.ndarray:
        bnd = mesh.boundary_faces
        keep = [isinstance(self.get(int(mesh.face_tag[f]), comp), Neumann) for f in bnd]
        return bnd[np.array(keep, dtype=bool)] if len(bnd) else bnd


def lid_velocity(x, z):
    return x * (1.0 - x)


def cavity_bcs() -> BoundaryConditionSet:
    """Lid-driven cavity: u = x(1-x) on the surface, no-slip elsewhere, dz v = 0 on the sidewalls."""
    S, B, L = BoundaryTag.SURFACE, BoundaryTag.BOTTOM, BoundaryTag.SIDEWALL
    return BoundaryConditionSet({
        (S, "u"): Dirichlet(lid_velocity), (S, "v"): Dirichlet(0.0),
        (B, "u"): Dirichlet(0.0), (B, "v"): Dirichlet(0.0),
        (L, "u"): Dirichlet(0.0), (L, "v"): Neumann(),
    })


def dirichlet_bcs(u_datum: Datum = None, v_datum: Datum = None) -> BoundaryConditionSet:
    """Weak Dirichlet data for both components on every boundary part."""
    return BoundaryConditionSet({
        (tag, comp): Dirichlet(u_datum if comp == "u" else v_datum)
        for tag in BoundaryTag for comp in COMPONENTS
    })


# ----------------------------------------------------------------------
# low level assembly


def _face_arrays(space: BrokenSpace, faces):
    """Per-side traces restricted to ``faces``.

    Returns dict with keys per side s in (0, 1): phi, dn (normal derivative),
    jump (signed trace) and avg (weighted trace / normal derivative).
    """
    m = space.mesh
    n = m.face_normals[faces]
    interior = m.face_tag[faces] == INTERIOR
    omega = np.where(interior, 0.5, 1.0)[:, None, None]
    out = {}
    for s, sign in ((0, 1.0), (1, -1.0)):
        phi, grad = space.face_trace(s)
        phi = phi[faces]
        dn = np.einsum("fqic,fc->fqi", grad[faces], n)
        out[s] = dict(phi=phi, jump=sign * phi, avg=omega * phi, avg_dn=omega * dn)
    return out


def _scatter(row_space, col_space, faces, blocks, shape):
    """Sum local face blocks {(s, t): (F, nr, nc)} into a sparse matrix."""
    m = row_space.mesh
    rows, cols, vals = [], [], []
    for (s, t), blk in blocks.items():
        es = m.face_elems[faces, s]
        et = m.face_elems[faces, t]
        ok = (es != INTERIOR) & (et != INTERIOR)
        if not np.any(ok):
            continue
        r = row_space.dofs(es[ok])[:, :, None]
        c = col_space.dofs(et[ok])[:, None, :]
        r, c = np.broadcast_arrays(r, c)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(blk[ok].ravel())
    if not rows:
        return sp.csr_matrix(shape)
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=shape).tocsr()


def _block_diag_elems(space, local):
    """Block-diagonal sparse matrix from (M, nloc, nloc) element blocks."""
    n = len(local)
    return sp.bsr_matrix((local, np.arange(n), np.arange(n + 1)),
                         shape=(space.ndofs, space.ndofs)).tocsr()


def stiffness_matrix(space: BrokenSpace, weights=(1.0, 1.0)) -> sp.csr_matrix:
    """sum_K int_K (wx dx phi_j dx phi_i + wz dz phi_j dz phi_i)."""
    g = space.vol_grad * np.asarray(weights, dtype=float)
    local = np.einsum("eq,eqic,eqjc->eij", space.vol_weights, space.vol_grad, g)
    return _block_diag_elems(space, local)


def mass_matrix(space: BrokenSpace) -> sp.csr_matrix:
    return _block_diag_elems(space, space.local_mass)


def jump_matrix(space: BrokenSpace, faces, face_weight) -> sp.csr_matrix:
    """sum_e w_e int_e [phi_j][phi_i] over ``faces``, one weight per face."""
    faces = np.asarray(faces, dtype=np.int64)
    fa = _face_arrays(space, faces)
    wq = space.face_weights[faces] * np.asarray(face_weight, dtype=float)[:, None]
    blocks = {(s, t): np.einsum("fq,fqi,fqj->fij", wq, fa[s]["jump"], fa[t]["jump"])
              for s in (0, 1) for t in (0, 1)}
    return _scatter(space, space, faces, blocks, (space.ndofs, space.ndofs))


def sip_face_matrix(space: BrokenSpace, faces) -> sp.csr_matrix:
    """Consistency and symmetry terms: -int_e ({dn u}[v] + [u]{dn v})."""
    faces = np.asarray(faces, dtype=np.int64)
    fa = _face_arrays(space, faces)
    wq = space.face_weights[faces]
    blocks = {}
    for s in (0, 1):
        for t in (0, 1):
            blocks[(s, t)] = -(np.einsum("fq,fqi,fqj->fij", wq, fa[s]["jump"], fa[t]["avg_dn"])
                               + np.einsum("fq,fqi,fqj->fij", wq, fa[s]["avg_dn"], fa[t]["jump"]))
    return _scatter(space, space, faces, blocks, (space.ndofs, space.ndofs))


def _with_interior(mesh, boundary_faces):
    return np.sort(np.concatenate([mesh.interior_faces, np.asarray(boundary_faces, dtype=np.int64)]))


# ----------------------------------------------------------------------
# forms


def a_sip_matrix(space: BrokenSpace, eta: float, faces) -> sp.csr_matrix:
    """Unscaled SIP form over the given face set."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    h = space.mesh.face_diameter[faces]
    return (stiffness_matrix(space) + sip_face_matrix(space, faces)
            + jump_matrix(space, faces, eta / h)).tocsr()


def assemble_a_sip(space: BrokenSpace, nu: float, eta: float, bc: BoundaryConditionSet):
    """nu * a_sip for the horizontal velocity and its right-hand side.

    Faces where u is Neumann are left out of every face sum; their datum
    contributes int_e g v to the rhs.
    """
    mesh = space.mesh
    bc.validate(mesh)
    faces = _with_interior(mesh, bc.dirichlet_faces(mesh, "u"))
    A = nu * a_sip_matrix(space, eta, faces)
    F = _velocity_lift(space, bc, "u", nu, eta) + _neumann_rhs(space, bc, "u")
    return A, F


def assemble_vertical_penalty(space: BrokenSpace, eta: float, bc: BoundaryConditionSet,
                              nu: float = 1.0) -> sp.csr_matrix:
    """nu * eta * sum_e 1/h_e int_e [v n_z][w n_z] over interior and v-Dirichlet faces."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    mesh = space.mesh
    bc.validate(mesh)
    faces = _with_interior(mesh, bc.dirichlet_faces(mesh, "v"))
    nz = mesh.face_normals[faces, 1]
    return nu * eta * jump_matrix(space, faces, nz ** 2 / mesh.face_diameter[faces])


def b_h_matrix(vel_space: BrokenSpace, p_space: BrokenSpace) -> sp.csr_matrix:
    """B[i, j] = b_h(phi_j, psi_i) with columns [u dofs | v dofs].

    b_h(w, p) = -int p div_h w + sum_{all faces} int_e [w].n_e {p}
    """
    if vel_space.mesh is not p_space.mesh:
        raise ValueError("velocity and pressure spaces live on different meshes")
    mesh = vel_space.mesh
    nw, npr = vel_space.ndofs, p_space.ndofs

    # volume part: -int psi_i d_c phi_j
    if p_space.quad_degree != vel_space.quad_degree:
        raise ValueError("velocity and pressure spaces must share a quadrature rule")
    vol = -np.einsum("eq,qi,eqjc->ceij", vel_space.vol_weights, p_space.vol_phi, vel_space.vol_grad)

    faces = np.arange(mesh.n_faces)
    fv = _face_arrays(vel_space, faces)
    fp = _face_arrays(p_space, faces)
    wq = vel_space.face_weights
    n = mesh.face_normals
    cols = []
    for c in range(2):
        blocks = {(s, t): np.einsum("fq,fqi,fqj->fij", wq * n[:, c, None], fp[s]["avg"], fv[t]["jump"])
                  for s in (0, 1) for t in (0, 1)}
        face_part = _scatter(p_space, vel_space, faces, blocks, (npr, nw))
        vol_part = sp.bsr_matrix((vol[c], np.arange(mesh.n_triangles), np.arange(mesh.n_triangles + 1)),
                                 shape=(npr, nw)).tocsr()
        cols.append(vol_part + face_part)
    return sp.hstack(cols, format="csr")


def assemble_b_h(vel_space: BrokenSpace, p_space: BrokenSpace, bc: BoundaryConditionSet):
    """B and the pressure-equation rhs from Dirichlet data, -int_e (g . n) q."""
    bc.validate(vel_space.mesh)
    B = b_h_matrix(vel_space, p_space)
    return B, _pressure_lift(p_space, bc)


def assemble_s_h(space: BrokenSpace) -> sp.csr_matrix:
    """sum over interior faces of h_e int_e [p][q]."""
    mesh = space.mesh
    faces = mesh.interior_faces
    return jump_matrix(space, faces, mesh.face_diameter[faces])


def assemble_pressure_mass(space: BrokenSpace) -> sp.csr_matrix:
    return mass_matrix(space)


# -- right-hand sides ----------------------------------------------------


def _boundary_datum(space, faces, datum):
    pts = space.face_points[faces]
    return _eval_datum(datum, pts[..., 0], pts[..., 1])


def _add_face_rhs(space, F, faces, integrand):
    """F[dofs(K+)] += sum_q w_q integrand (F, nq, nloc)."""
    if len(faces) == 0:
        return F
    local = np.einsum("fq,fqi->fi", space.face_weights[faces], integrand)
    np.add.at(F, space.dofs(space.mesh.face_elems[faces, 0]), local)
    return F


def _faces_by_condition(space, bc, comp, kind):
    mesh = space.mesh
    groups = {}
    for f in mesh.boundary_faces:
        cond = bc.get(int(mesh.face_tag[f]), comp)
        if isinstance(cond, kind):
            groups.setdefault(id(cond), (cond, []))[1].append(f)
    return [(cond, np.array(fs, dtype=np.int64)) for cond, fs in groups.values()]


def _velocity_lift(space, bc, comp, nu, eta):
    F = np.zeros(space.ndofs)
    mesh = space.mesh
    phi, grad = space.face_trace(0)
    for cond, faces in _faces_by_condition(space, bc, comp, Dirichlet):
        if _is_zero(cond.datum):
            continue
        g = _boundary_datum(space, faces, cond.datum)
        h = mesh.face_diameter[faces][:, None, None]
        n = mesh.face_normals[faces]
        if comp == "u":
            dn = np.einsum("fqic,fc->fqi", grad[faces], n)
            integrand = g[..., None] * (-dn + eta / h * phi[faces])
        else:
            integrand = g[..., None] * (eta * n[:, 1, None, None] ** 2 / h * phi[faces])
        _add_face_rhs(space, F, faces, nu * integrand)
    return F


def _neumann_rhs(space, bc, comp):
    F = np.zeros(space.ndofs)
    phi, _ = space.face_trace(0)
    for cond, faces in _faces_by_condition(space, bc, comp, Neumann):
        if _is_zero(cond.datum):
            continue
        if comp == "v":
            raise ValueError("the vertical velocity carries no diffusive flux; "
                             "only homogeneous Neumann data are accepted for v")
        g = _boundary_datum(space, faces, cond.datum)
        _add_face_rhs(space, F, faces, g[..., None] * phi[faces])
    return F


def _pressure_lift(p_space, bc):
    F = np.zeros(p_space.ndofs)
    mesh = p_space.mesh
    phi, _ = p_space.face_trace(0)
    for c, comp in enumerate(COMPONENTS):
        for cond, faces in _faces_by_condition(p_space, bc, comp, Dirichlet):
            if _is_zero(cond.datum):
                continue
            g = _boundary_datum(p_space, faces, cond.datum)
            n_c = mesh.face_normals[faces, c][:, None, None]
            _add_face_rhs(p_space, F, faces, -g[..., None] * n_c * phi[faces])
    return F


def assemble_dirichlet_lift(space: BrokenSpace, bc: BoundaryConditionSet, params: Params):
    """Right-hand-side vectors (F_u, F_v, F_p) carrying the weak Dirichlet data."""
    bc.validate(space.mesh)
    return (_velocity_lift(space, bc, "u", params.nu, params.eta),
            _velocity_lift(space, bc, "v", params.nu, params.eta),
            _pressure_lift(space, bc))


def load_vector(space: BrokenSpace, f) -> np.ndarray:
    """int f phi_i for a pointwise source ``f(x, z)``."""
    pts = space.vol_points
    vals = np.broadcast_to(np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:2])
    return np.einsum("eq,qi,eq->ei", space.vol_weights, space.vol_phi, vals).ravel()


# ----------------------------------------------------------------------
# full system


@dataclass
class SolutionField:
    u: DGFunction
    v: DGFunction
    p: DGFunction

    @property
    def space(self) -> BrokenSpace:
        return self.u.space

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.coeffs, self.v.coeffs, self.p.coeffs])


@dataclass
class SaddleSystem:
    space: BrokenSpace
    params: Params
    A: sp.csr_matrix        # (2n, 2n) velocity block, u then v
    B: sp.csr_matrix        # (n, 2n)
    S: sp.csr_matrix        # (n, n)
    Mp: sp.csr_matrix       # (n, n)
    F_u: np.ndarray
    F_v: np.ndarray
    F_p: np.ndarray

    @property
    def n(self) -> int:
        return self.space.ndofs

    @property
    def u_slice(self) -> slice:
        return slice(0, self.n)

    @property
    def v_slice(self) -> slice:
        return slice(self.n, 2 * self.n)

    @property
    def w_slice(self) -> slice:
        return slice(0, 2 * self.n)

    @property
    def p_slice(self) -> slice:
        return slice(2 * self.n, 3 * self.n)

    @property
    def shape(self):
        return (3 * self.n, 3 * self.n)

    @property
    def pressure_block(self) -> sp.csr_matrix:
        return (self.S + self.params.delta_p * self.Mp).tocsr()

    @property
    def matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.B.T], [-self.B, self.pressure_block]], format="csr")

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.F_u, self.F_v, self.F_p])

    def split(self, x) -> SolutionField:
        x = np.asarray(x, dtype=float)
        if x.shape != (3 * self.n,):
            raise ValueError(f"expected vector of length {3 * self.n}, got {x.shape}")
        return SolutionField(self.space.function(x[self.u_slice].copy()),
                             self.space.function(x[self.v_slice].copy()),
                             self.space.function(x[self.p_slice].copy()))

    def dump(self, directory) -> list[Path]:
        """Write every block and the whole system in MatrixMarket format."""
        from .linsolve import write_matrix, write_vector

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, mat in (("A", self.A), ("B", self.B), ("S", self.S), ("Mp", self.Mp),
                          ("system", self.matrix)):
            written.append(write_matrix(directory / f"{name}.mtx", mat))
        written.append(write_vector(directory / "rhs.txt", self.rhs))
        return written


def assemble_system(mesh: Mesh, params: Params, bc: BoundaryConditionSet, f=None,
                    space: BrokenSpace | None = None) -> SaddleSystem:
    """Assemble the full saddle-point system; ``f`` is the horizontal body force."""
    if space is None:
        space = BrokenSpace(mesh, params.degree)
    elif space.mesh is not mesh or space.degree != params.degree:
        raise ValueError("space does not match mesh/degree")
    if params.delta_p == 0:
        warnings.warn("delta_p = 0: system is singular by construction (constant pressure mode)",
                      SingularSystemWarning, stacklevel=2)
    bc.validate(mesh)

    Au, F_u = assemble_a_sip(space, params.nu, params.eta, bc)
    Av = assemble_vertical_penalty(space, params.eta, bc, nu=params.nu)
    F_v = _velocity_lift(space, bc, "v", params.nu, params.eta) + _neumann_rhs(space, bc, "v")
    B, F_p = assemble_b_h(space, space, bc)
    if f is not None:
        F_u = F_u + load_vector(space, f)
    return SaddleSystem(
        space=space,
        params=params,
        A=sp.block_diag([Au, Av], format="csr"),
        B=B,
        S=assemble_s_h(space),
        Mp=assemble_pressure_mass(space),
        F_u=F_u,
        F_v=F_v,
        F_p=F_p,
    )
