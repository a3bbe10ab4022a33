"""Norms, discrete stability measurements and verification studies.

All inf-sup constants are computed from dense generalized eigenvalue or
singular value problems and are therefore limited to small meshes.
Mean-zero pressures are handled by deflating the constant vector in the
pressure mass inner product.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dg_space import BrokenSpace, DGFunction
from .forms import (BoundaryConditionSet, Params, SolutionField, _with_interior, a_sip_matrix,
                    assemble_s_h, assemble_system, assemble_vertical_penalty, b_h_matrix,
                    cavity_bcs, dirichlet_bcs, jump_matrix, mass_matrix, stiffness_matrix)
from .linsolve import solve_saddle
from .mesh import INTERIOR, Mesh, build_structured_mesh

log = logging.getLogger(__name__)

DENSE_DOF_LIMIT = 6000


class StabilityError(RuntimeError):
    pass


# ----------------------------------------------------------------------
# norm Gram matrices


@dataclass
class NormMatrices:
    """Gram matrices of every norm and seminorm used by the scheme."""

    grad: sp.csr_matrix      # ||grad_h .||^2
    U: sp.csr_matrix         # |.|_U^2, interior and u-Dirichlet faces
    V: sp.csr_matrix         # |.|_V^2, interior and v-Dirichlet faces
    dz: sp.csr_matrix        # ||dz_h .||^2
    L2: sp.csr_matrix        # ||.||^2
    P: sp.csr_matrix         # |.|_P^2

    @classmethod
    def build(cls, space: BrokenSpace, bc: BoundaryConditionSet | None = None) -> "NormMatrices":
        bc = cavity_bcs() if bc is None else bc
        mesh = space.mesh
        fu = _with_interior(mesh, bc.dirichlet_faces(mesh, "u"))
        fv = _with_interior(mesh, bc.dirichlet_faces(mesh, "v"))
        h = mesh.face_diameter
        return cls(
            grad=stiffness_matrix(space),
            U=jump_matrix(space, fu, 1.0 / h[fu]),
            V=jump_matrix(space, fv, mesh.face_normals[fv, 1] ** 2 / h[fv]),
            dz=stiffness_matrix(space, weights=(0.0, 1.0)),
            L2=mass_matrix(space),
            P=assemble_s_h(space),
        )

    @property
    def sip(self) -> sp.csr_matrix:
        return (self.grad + self.U).tocsr()

    @property
    def vertical(self) -> sp.csr_matrix:
        """||dz_h v||^2 + |v|_V^2"""
        return (self.dz + self.V).tocsr()

    @property
    def vel(self) -> sp.csr_matrix:
        return sp.block_diag([self.sip, self.vertical], format="csr")

    @property
    def iso(self) -> sp.csr_matrix:
        return sp.block_diag([self.sip, self.sip], format="csr")

    @property
    def pressure(self) -> sp.csr_matrix:
        return (self.L2 + self.P).tocsr()

    @property
    def X(self) -> sp.csr_matrix:
        return sp.block_diag([self.vel, self.pressure], format="csr")


def _qf(M, x):
    return float(x @ (M @ x))


def compute_norms(solution: SolutionField, bc: BoundaryConditionSet | None = None,
                  norms: NormMatrices | None = None) -> dict:
    """Every norm of a discrete (u, v, p) triple, from the Gram matrices."""
    spaces = {solution.u.space, solution.v.space, solution.p.space}
    if len(spaces) != 1:
        raise ValueError("u, v and p must live on the same broken space")
    nm = norms or NormMatrices.build(solution.space, bc)
    u, v, p = solution.u.coeffs, solution.v.coeffs, solution.p.coeffs
    sq = {
        "grad_u": _qf(nm.grad, u),
        "U_u": _qf(nm.U, u),
        "grad_v": _qf(nm.grad, v),
        "dz_v": _qf(nm.dz, v),
        "V_v": _qf(nm.V, v),
        "L2_p": _qf(nm.L2, p),
        "P_p": _qf(nm.P, p),
    }
    sq["sip_u"] = sq["grad_u"] + sq["U_u"]
    sq["vel"] = sq["sip_u"] + sq["dz_v"] + sq["V_v"]
    sq["iso"] = sq["sip_u"] + sq["grad_v"] + _qf(nm.U, v)
    sq["X"] = sq["vel"] + sq["L2_p"] + sq["P_p"]
    return {k: math.sqrt(max(val, 0.0)) for k, val in sq.items()}


# ----------------------------------------------------------------------
# vertical inf-sup


def dz_moments(v: DGFunction, p_space: BrokenSpace | None = None) -> np.ndarray:
    """r_i = int psi_i dz_h v for every pressure basis function."""
    p_space = v.space if p_space is None else p_space
    dz = v.gradient_at_quadrature()[..., 1]
    return np.einsum("eq,qi,eq->ei", p_space.vol_weights, p_space.vol_phi, dz).ravel()


def verify_vertical_infsup(v: DGFunction, p_space: BrokenSpace | None = None):
    """sup over pressures of int p dz_h v / ||p|| and the maximising pressure.

    The maximiser is the L2 projection of dz_h v onto the pressure space,
    obtained element by element from the block-diagonal mass matrix.
    """
    p_space = v.space if p_space is None else p_space
    if p_space.mesh is not v.space.mesh:
        raise ValueError("v and the pressure space live on different meshes")
    r = dz_moments(v, p_space).reshape(-1, p_space.nloc)
    if not np.any(r):
        return 0.0, None
    coeffs = np.linalg.solve(p_space.local_mass, r[..., None])[..., 0]
    sup = math.sqrt(max(float(np.sum(r * coeffs)), 0.0))
    return sup, p_space.function(coeffs.ravel())


def dz_norm(v: DGFunction) -> float:
    """||dz_h v|| by direct quadrature."""
    dz = v.gradient_at_quadrature()[..., 1]
    return math.sqrt(v.space.integrate(dz ** 2))


# ----------------------------------------------------------------------
# dense helpers


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def _mean_zero_basis(mass_vector):
    """Orthonormal basis of {p : mass_vector . p = 0}."""
    return la.null_space(mass_vector[None, :])


def _min_gen_eig(A, B):
    return float(la.eigh(_dense(A), _dense(B), eigvals_only=True, subset_by_index=[0, 0])[0])


# ----------------------------------------------------------------------
# coercivity


@dataclass
class CoercivityResult:
    margin: float
    bound: float
    margin_u: float
    bound_u: float
    margin_v: float


def measure_coercivity(mesh: Mesh, params: Params, bc: BoundaryConditionSet | None = None,
                       space: BrokenSpace | None = None) -> CoercivityResult:
    """Extreme generalized eigenvalues of the velocity block against
    nu (|||u|||_sip^2 + |v|_V^2).

    The u and v blocks decouple. On the v block the form is nu*eta times the
    V Gram, so its eigenvalues on range(V) are eta; this is checked rather
    than assumed.
    """
    bc = cavity_bcs() if bc is None else bc
    space = space or BrokenSpace(mesh, params.degree)
    if space.ndofs > DENSE_DOF_LIMIT:
        raise StabilityError(f"{space.ndofs} dofs per field exceed the dense limit; use a smaller mesh")
    fu = _with_interior(mesh, bc.dirichlet_faces(mesh, "u"))
    nm = NormMatrices.build(space, bc)
    Au = _dense(params.nu * a_sip_matrix(space, params.eta, fu))
    Nu = _dense(params.nu * nm.sip)
    ev = la.eigh(Au, Nu, eigvals_only=True)
    margin_u, bound_u = float(ev[0]), float(ev[-1])

    Av = assemble_vertical_penalty(space, params.eta, bc, nu=params.nu)
    Nv = params.nu * nm.V
    diff = abs(Av - params.eta * Nv).max() if Av.nnz else 0.0
    if diff <= 1e-12 * max(abs(Av).max(), 1e-300):
        margin_v = float(params.eta)
    else:
        w, Q = la.eigh(_dense(Nv))
        Q = Q[:, w > 1e-12 * w.max()]
        margin_v = _min_gen_eig(Q.T @ _dense(Av) @ Q, Q.T @ _dense(Nv) @ Q)
    return CoercivityResult(margin=min(margin_u, margin_v), bound=max(bound_u, params.eta),
                            margin_u=margin_u, bound_u=bound_u, margin_v=margin_v)


# ----------------------------------------------------------------------
# pressure inf-sup


def measure_pressure_infsup(mesh: Mesh, params: Params, bc: BoundaryConditionSet | None = None,
                            horizontal_only: bool = False, space: BrokenSpace | None = None) -> float:
    """beta_h = min over mean-zero p of sqrt(p^T (B N^-1 B^T + S) p / p^T M p).

    N is the Gram matrix of the hydrostatic velocity norm. With
    ``horizontal_only`` the supremum runs over velocities with v = 0.
    """
    bc = cavity_bcs() if bc is None else bc
    space = space or BrokenSpace(mesh, params.degree)
    if space.ndofs > DENSE_DOF_LIMIT:
        raise StabilityError(f"{space.ndofs} pressure dofs exceed the dense limit; use a smaller mesh")
    nm = NormMatrices.build(space, bc)
    B = b_h_matrix(space, space)
    if horizontal_only:
        N = nm.sip
        B = B[:, :space.ndofs]
    else:
        N = nm.vel
    try:
        factor = spla.splu(sp.csc_matrix(N))
    except RuntimeError as exc:
        raise StabilityError(f"velocity norm Gram matrix is singular: {exc}") from None
    diag = np.abs(factor.U.diagonal())
    if np.any(diag <= 1e-14 * diag.max()):
        raise StabilityError("velocity norm Gram matrix is singular")
    X = factor.solve(_dense(B.T))
    G = B @ X + _dense(nm.P)
    M = _dense(nm.L2)
    Z = _mean_zero_basis(M @ np.ones(space.ndofs))
    lam = _min_gen_eig(Z.T @ G @ Z, Z.T @ M @ Z)
    return math.sqrt(max(lam, 0.0))


# ----------------------------------------------------------------------
# global inf-sup


def measure_global_infsup(mesh: Mesh, params: Params, bc: BoundaryConditionSet | None = None,
                          space: BrokenSpace | None = None) -> float:
    """gamma_h = smallest singular value of c_h between X_h (test) and
    X_h with mean-zero pressure (trial), both measured in the X_h norm."""
    bc = cavity_bcs() if bc is None else bc
    space = space or BrokenSpace(mesh, params.degree)
    n = space.ndofs
    if 3 * n > DENSE_DOF_LIMIT:
        raise StabilityError(f"{3 * n} total dofs exceed the dense limit {DENSE_DOF_LIMIT}; use a smaller mesh")
    system = assemble_system(mesh, params, bc, space=space)
    C = _dense(system.matrix)
    N = _dense(NormMatrices.build(space, bc).X)
    L = la.cholesky(N, lower=True)
    Zp = _mean_zero_basis(_dense(system.Mp) @ np.ones(n))
    Z = la.block_diag(np.eye(2 * n), Zp)
    R = la.cholesky(Z.T @ N @ Z, lower=True)
    T = la.solve_triangular(L, C @ Z, lower=True)
    T = la.solve_triangular(R, T.T, lower=True).T
    return float(la.svd(T, compute_uv=False)[-1])


# ----------------------------------------------------------------------
# trace and averaging constants


def trace_constants(space: BrokenSpace) -> np.ndarray:
    """Per element, sup over P_k of h_K^(1/2) ||u||_dK / ||u||_K."""
    mesh = space.mesh
    nloc = space.nloc
    bmass = np.zeros((mesh.n_triangles, nloc, nloc))
    for side in (0, 1):
        phi, _ = space.face_trace(side)
        elems = mesh.face_elems[:, side]
        ok = elems != INTERIOR
        local = np.einsum("fq,fqi,fqj->fij", space.face_weights[ok], phi[ok], phi[ok])
        np.add.at(bmass, elems[ok], local)
    out = np.empty(mesh.n_triangles)
    for e in range(mesh.n_triangles):
        lam = la.eigh(bmass[e], space.local_mass[e], eigvals_only=True)[-1]
        out[e] = math.sqrt(mesh.elem_diameter[e] * lam)
    return out


def trace_ratios(field: DGFunction) -> np.ndarray:
    """Per element h_K^(1/2) ||u||_dK / ||u||_K for one field."""
    space = field.space
    mesh = space.mesh
    bnd = np.zeros(mesh.n_triangles)
    for side in (0, 1):
        phi, _ = space.face_trace(side)
        elems = mesh.face_elems[:, side]
        ok = elems != INTERIOR
        vals = np.einsum("fqi,fi->fq", phi[ok], field.local[elems[ok]])
        np.add.at(bnd, elems[ok], np.sum(space.face_weights[ok] * vals ** 2, axis=1))
    vol = np.sum(space.vol_weights * field.at_quadrature() ** 2, axis=1)
    return np.sqrt(mesh.elem_diameter * bnd / vol)


def average_matrix(space: BrokenSpace, faces=None) -> sp.csr_matrix:
    """sum_e h_e int_e {p}{q} over ``faces`` (all faces by default)."""
    from .forms import _face_arrays, _scatter

    mesh = space.mesh
    faces = np.arange(mesh.n_faces) if faces is None else np.asarray(faces)
    fa = _face_arrays(space, faces)
    wq = space.face_weights[faces] * mesh.face_diameter[faces, None]
    blocks = {(s, t): np.einsum("fq,fqi,fqj->fij", wq, fa[s]["avg"], fa[t]["avg"])
              for s in (0, 1) for t in (0, 1)}
    return _scatter(space, space, faces, blocks, (space.ndofs, space.ndofs))


def averaging_constants(space: BrokenSpace) -> tuple[float, float]:
    """Sharp constants C in (sum h_e int {p}^2)^(1/2) <= C ||p|| and the jump analogue."""
    mesh = space.mesh
    M = mass_matrix(space).tocsc()
    faces = np.arange(mesh.n_faces)
    J = jump_matrix(space, faces, mesh.face_diameter)
    out = []
    for A in (average_matrix(space), J):
        if space.ndofs <= 1500:
            lam = la.eigh(_dense(A), _dense(M), eigvals_only=True)[-1]
        else:
            lam = spla.eigsh(A, k=1, M=M, which="LA", v0=np.ones(space.ndofs),
                             return_eigenvectors=False)[0]
        out.append(math.sqrt(lam))
    return out[0], out[1]


# ----------------------------------------------------------------------
# manufactured solutions


@dataclass
class ManufacturedSolution:
    u: Callable
    v: Callable
    p: Callable
    u_x: Callable
    u_z: Callable
    v_z: Callable
    f: Callable
    name: str = "manufactured"


def reference_manufactured(nu: float = 1.0) -> ManufacturedSolution:
    """u = sin^2(pi x) g'(z), v = -pi sin(2 pi x) g(z), p = cos(pi x), g = z^2 (1-z)^2.

    Divergence free, v = 0 on the whole boundary, u = 0 on the whole
    boundary, p independent of z with zero mean.
    """
    pi = np.pi

    def g(z):
        return z ** 2 * (1 - z) ** 2

    def g1(z):
        return 2 * z - 6 * z ** 2 + 4 * z ** 3

    def g2(z):
        return 2 - 12 * z + 12 * z ** 2

    def g3(z):
        return -12 + 24 * z

    def u(x, z):
        return np.sin(pi * x) ** 2 * g1(z)

    def v(x, z):
        return -pi * np.sin(2 * pi * x) * g(z)

    def p(x, z):
        return np.cos(pi * x) + 0.0 * z

    def u_x(x, z):
        return pi * np.sin(2 * pi * x) * g1(z)

    def u_z(x, z):
        return np.sin(pi * x) ** 2 * g2(z)

    def v_z(x, z):
        return -pi * np.sin(2 * pi * x) * g1(z)

    def f(x, z):
        lap = 2 * pi ** 2 * np.cos(2 * pi * x) * g1(z) + np.sin(pi * x) ** 2 * g3(z)
        return -nu * lap - pi * np.sin(pi * x)

    return ManufacturedSolution(u, v, p, u_x, u_z, v_z, f, name="sin2-z2(1-z)2")


def check_manufactured(ms: ManufacturedSolution, space: BrokenSpace, tol: float = 1e-8):
    pts = space.vol_points
    x, z = pts[..., 0], pts[..., 1]
    div = math.sqrt(space.integrate((ms.u_x(x, z) + ms.v_z(x, z)) ** 2))
    if div >= tol:
        raise ValueError(f"manufactured velocity is not divergence free (||div|| = {div:.3e})")
    dz_p = ms.p(x, z + 1e-3) - ms.p(x, z)
    if np.abs(dz_p).max() > tol:
        raise ValueError("manufactured pressure depends on z")


def _broken_error(space: BrokenSpace, coeffs, exact, faces, face_weight):
    """sum_e w_e int_e [uh - u]^2 with the exact u continuous inside the domain."""
    mesh = space.mesh
    phi0, _ = space.face_trace(0)
    phi1, _ = space.face_trace(1)
    local = coeffs.reshape(-1, space.nloc)
    e0 = mesh.face_elems[faces, 0]
    e1 = mesh.face_elems[faces, 1]
    t0 = np.einsum("fqi,fi->fq", phi0[faces], local[e0])
    t1 = np.einsum("fqi,fi->fq", phi1[faces], local[np.where(e1 >= 0, e1, 0)])
    pts = space.face_points[faces]
    boundary = (e1 == INTERIOR)[:, None]
    jump = np.where(boundary, t0 - exact(pts[..., 0], pts[..., 1]), t0 - t1)
    return float(np.sum(face_weight[:, None] * space.face_weights[faces] * jump ** 2))


def solution_errors(solution: SolutionField, ms: ManufacturedSolution,
                    bc: BoundaryConditionSet | None = None) -> dict:
    """|||.|||_vel velocity error and L2 pressure error against exact fields."""
    bc = dirichlet_bcs() if bc is None else bc
    base = solution.space
    space = BrokenSpace(base.mesh, base.degree, quad_degree=base.quad_degree + 4)
    mesh = space.mesh
    pts = space.vol_points
    x, z = pts[..., 0], pts[..., 1]
    uh = space.function(solution.u.coeffs)
    vh = space.function(solution.v.coeffs)
    ph = space.function(solution.p.coeffs)

    gu = uh.gradient_at_quadrature()
    grad_err = space.integrate((gu[..., 0] - ms.u_x(x, z)) ** 2 + (gu[..., 1] - ms.u_z(x, z)) ** 2)
    dz_err = space.integrate((vh.gradient_at_quadrature()[..., 1] - ms.v_z(x, z)) ** 2)
    p_err = space.integrate((ph.at_quadrature() - ms.p(x, z)) ** 2)

    h = mesh.face_diameter
    fu = _with_interior(mesh, bc.dirichlet_faces(mesh, "u"))
    fv = _with_interior(mesh, bc.dirichlet_faces(mesh, "v"))
    U_err = _broken_error(space, uh.coeffs, ms.u, fu, 1.0 / h[fu])
    V_err = _broken_error(space, vh.coeffs, ms.v, fv, mesh.face_normals[fv, 1] ** 2 / h[fv])
    return {
        "vel": math.sqrt(grad_err + U_err + dz_err + V_err),
        "p_L2": math.sqrt(p_err),
        "u_sip": math.sqrt(grad_err + U_err),
        "v_vert": math.sqrt(dz_err + V_err),
    }


@dataclass
class ConvergenceRow:
    nx: int
    nz: int
    h: float
    vel_error: float
    p_error: float
    vel_rate: Optional[float] = None
    p_rate: Optional[float] = None


@dataclass
class ConvergenceTable:
    degree: int
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    HEADER = ("degree", "nx", "nz", "h", "vel_error", "p_error", "vel_rate", "p_rate")

    def as_rows(self):
        for r in self.rows:
            yield (self.degree, r.nx, r.nz, r.h, r.vel_error, r.p_error, r.vel_rate, r.p_rate)


def run_convergence(ms: ManufacturedSolution | None, levels, params: Params) -> ConvergenceTable:
    """Solve the manufactured problem on each (nx, nz) level and tabulate errors.

    Velocity data are imposed weakly on the whole boundary for both components.
    """
    ms = reference_manufactured(params.nu) if ms is None else ms
    bc = dirichlet_bcs(ms.u, ms.v)
    table = ConvergenceTable(degree=params.degree,
                             metadata={"solution": ms.name, "bc": "weak Dirichlet u, v on all faces",
                                       "nu": params.nu, "eta": params.eta, "delta_p": params.delta_p})
    for nx, nz in levels:
        mesh = build_structured_mesh(nx, nz)
        space = BrokenSpace(mesh, params.degree)
        check_manufactured(ms, space)
        system = assemble_system(mesh, params, bc, f=ms.f, space=space)
        x, report = solve_saddle(system)
        err = solution_errors(system.split(x), ms, bc)
        row = ConvergenceRow(nx, nz, mesh.h, err["vel"], err["p_L2"])
        if table.rows:
            prev = table.rows[-1]
            ratio = prev.h / row.h
            row.vel_rate = math.log(prev.vel_error / row.vel_error) / math.log(ratio)
            row.p_rate = math.log(prev.p_error / row.p_error) / math.log(ratio)
        log.info("k=%d %dx%d: vel %.3e p %.3e (residual %.1e)", params.degree, nx, nz,
                 row.vel_error, row.p_error, report.residual)
        table.rows.append(row)
    return table


# ----------------------------------------------------------------------
# cavity diagnostics


@dataclass
class CavityDiagnostics:
    mean_pressure: float
    recirculation: float
    hydrostatic: float
    pressure_range: float


def cavity_diagnostics(solution: SolutionField, band=(0.1, 0.5), n_lines: int = 20,
                       n_samples: int = 50) -> CavityDiagnostics:
    """Mean pressure, return-flow indicator and vertical pressure variation.

    * recirculation: min of u_h over volume quadrature points with z in ``band``
    * hydrostatic: max over vertical lines of (max - min of p_h along the
      line) divided by the pressure range over all sampled points
    """
    space = solution.space
    mesh = space.mesh
    x0, x1, z0, z1 = mesh.domain

    pts = space.vol_points
    in_band = (pts[..., 1] > band[0]) & (pts[..., 1] < band[1])
    recirc = float(solution.u.at_quadrature()[in_band].min())

    xs = x0 + (x1 - x0) * (np.arange(n_lines) + 0.5) / n_lines
    zs = z0 + (z1 - z0) * (np.arange(n_samples) + 0.5) / n_samples
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    P = solution.p.at_points(np.stack([X, Z], axis=-1))
    rng = float(P.max() - P.min())
    osc = float((P.max(axis=1) - P.min(axis=1)).max())
    return CavityDiagnostics(
        mean_pressure=solution.p.mean(),
        recirculation=recirc,
        hydrostatic=osc / rng if rng > 0 else 0.0,
        pressure_range=rng,
    )


# ----------------------------------------------------------------------
# stability report


@dataclass
class StabilityReport:
    mesh: str
    h: float
    degree: int
    eta: float
    delta_p: float
    coercivity_margin: float
    coercivity_bound: float
    beta: float
    gamma: Optional[float]
    vertical_infsup_error: float
    mean_pressure: Optional[float] = None

    HEADER = ("mesh", "h", "degree", "eta", "delta_p", "coercivity_margin",
              "coercivity_bound", "beta", "gamma", "vertical_infsup_error", "mean_pressure")

    def as_row(self):
        return tuple(getattr(self, k) for k in self.HEADER)


def stability_report(mesh: Mesh, params: Params, bc: BoundaryConditionSet | None = None,
                     seed: int = 42, with_gamma: bool = True, label: str = "") -> StabilityReport:
    """Coercivity, beta_h, gamma_h (when small enough), vertical inf-sup error and the
    mean pressure of the solved system, on one mesh."""
    bc = cavity_bcs() if bc is None else bc
    space = BrokenSpace(mesh, params.degree)
    coer = measure_coercivity(mesh, params, bc, space=space)
    beta = measure_pressure_infsup(mesh, params, bc, space=space)
    gamma = None
    if with_gamma and 3 * space.ndofs <= DENSE_DOF_LIMIT:
        gamma = measure_global_infsup(mesh, params, bc, space=space)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        v = space.function(rng.uniform(-1, 1, space.ndofs))
        sup, _ = verify_vertical_infsup(v)
        ref = dz_norm(v)
        worst = max(worst, abs(sup - ref) / ref)

    system = assemble_system(mesh, params, bc, space=space)
    x, _ = solve_saddle(system)
    return StabilityReport(mesh=label or f"{mesh.n_triangles} triangles", h=mesh.h, degree=params.degree, eta=params.eta,
                           delta_p=params.delta_p, coercivity_margin=coer.margin,
                           coercivity_bound=coer.bound, beta=beta, gamma=gamma,
                           vertical_infsup_error=worst, mean_pressure=system.split(x).p.mean())


# ----------------------------------------------------------------------
# randomized identity suite


@dataclass
class CheckResult:
    name: str
    mesh: str
    degree: int
    value: float
    threshold: float
    passed: bool
    seed: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"CHECK {self.name} mesh={self.mesh} k={self.degree} value={self.value:.3e} "
                f"threshold={self.threshold:.3e} seed={self.seed} status={status}")


def _fro(M) -> float:
    return float(spla.norm(M)) if sp.issparse(M) else float(np.linalg.norm(M))


def _continuous_pressure(space: BrokenSpace) -> DGFunction:
    """Interpolant of a globally continuous polynomial of the space's degree."""
    if space.degree == 1:
        return space.interpolate(lambda x, z: 1.0 + x - 2.0 * z)
    return space.interpolate(lambda x, z: 1.0 + x - 2.0 * z + 3.0 * x * z - z ** 2)


def identity_checks(sizes=(4,), degrees=(1, 2), n_fields: int = 100, seed: int = 42,
                    refinements: int = 3, b_assembler=None, s_assembler=None) -> list[CheckResult]:
    """Randomized checks of the discrete identities underpinning the scheme.

    * b_const: |b_h(w, 1)| <= 1e-12 ||B||_F ||w|| for random w
    * s_const: |s_h(p, 1)| <= 1e-12 ||S||_F ||p|| for random p
    * s_continuous: s_h(p, p) ~ 0 for a continuous polynomial p
    * vertical_infsup: closed-form sup equals ||dz_h v|| for random v
    * trace / averaging: sharp constants stable (5%) over ``refinements`` levels,
      and no random field exceeds the trace constant

    ``b_assembler(space)`` and ``s_assembler(space)`` replace the default
    assembly (used to inject faults).
    """
    b_assembler = b_assembler or (lambda s: b_h_matrix(s, s))
    s_assembler = s_assembler or assemble_s_h
    rng = np.random.default_rng(seed)
    out: list[CheckResult] = []

    def add(name, n, k, value, thr, passed=None):
        ok = bool(value <= thr) if passed is None else bool(passed)
        out.append(CheckResult(name, f"{n}x{n}", k, float(value), float(thr), ok, seed))

    for k in degrees:
        for n in sizes:
            space = BrokenSpace(build_structured_mesh(n, n), k)
            N = space.ndofs
            B = b_assembler(space)
            S = s_assembler(space)
            Bt1 = np.asarray(B.T @ np.ones(N)).ravel()
            S1 = np.asarray(S @ np.ones(N)).ravel()
            W = rng.uniform(-1, 1, (n_fields, 2 * N))
            P = rng.uniform(-1, 1, (n_fields, N))
            b_ratio = np.max(np.abs(W @ Bt1) / (_fro(B) * np.linalg.norm(W, axis=1)))
            s_ratio = np.max(np.abs(P @ S1) / (max(_fro(S), 1e-300) * np.linalg.norm(P, axis=1)))
            add("b_const", n, k, b_ratio, 1e-12)
            add("s_const", n, k, s_ratio, 1e-12)

            pc = _continuous_pressure(space).coeffs
            add("s_continuous", n, k, abs(_qf(S, pc)) / (max(_fro(S), 1e-300) * (pc @ pc)), 1e-12)

            worst = 0.0
            for _ in range(min(n_fields, 20)):
                v = space.function(rng.uniform(-1, 1, N))
                sup, _ = verify_vertical_infsup(v)
                worst = max(worst, abs(sup - dz_norm(v)) / dz_norm(v))
            add("vertical_infsup", n, k, worst, 1e-10)

        # refinement stability of the trace and averaging constants
        base = sizes[0]
        levels = [base * 2 ** i for i in range(refinements)]
        trace, avg, jmp, exceed = [], [], [], 0.0
        for n in levels:
            space = BrokenSpace(build_structured_mesh(n, n), k)
            c = trace_constants(space)
            trace.append(c.max())
            for _ in range(5):
                f = space.function(rng.uniform(-1, 1, space.ndofs))
                exceed = max(exceed, float(np.max(trace_ratios(f) / c)) - 1.0)
            a, j = averaging_constants(space)
            avg.append(a)
            jmp.append(j)
        tag = f"{levels[0]}..{levels[-1]}"
        for name, vals in (("trace_constant", trace), ("average_constant", avg),
                           ("jump_constant", jmp)):
            spread = (max(vals) - min(vals)) / min(vals)
            out.append(CheckResult(name, tag, k, spread, 0.05, bool(spread <= 0.05), seed))
        out.append(CheckResult("trace_bound", tag, k, max(exceed, 0.0), 1e-10,
                               bool(exceed <= 1e-10), seed))
    return out
