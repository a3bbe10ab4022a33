"""Broken polynomial spaces on triangles.

Reference triangle is {(0,0), (1,0), (0,1)}; reference edge is [0, 1].
Element maps are affine, x = v0 + J xi, so physical gradients are
J^{-T} times reference gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .mesh import INTERIOR, Mesh

SUPPORTED_DEGREES = (1, 2)


# ----------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    degree: int


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss rule on the reference triangle, exact to total ``degree``."""
    n = max(1, math.ceil((degree + 1) / 2))
    xs, ws = roots_legendre(n)
    xt, wt = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xs + 1.0)
    t = 0.5 * (xt + 1.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(0.5 * ws, 0.25 * wt)
    pts = np.column_stack([(S * (1.0 - T)).ravel(), T.ravel()])
    return QuadratureRule(pts, W.ravel(), degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]."""
    n = max(1, math.ceil((degree + 1) / 2))
    x, w = roots_legendre(n)
    return QuadratureRule((0.5 * (x + 1.0))[:, None], 0.5 * w, degree)


# ----------------------------------------------------------------------
# reference basis


def _monomial_exponents(k):
    return [(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)]


def _lagrange_nodes(k):
    if k == 1:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if k == 2:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0],
                         [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    raise ValueError(f"unsupported polynomial degree {k}; supported: {SUPPORTED_DEGREES}")


class LagrangeBasis:
    """Nodal Lagrange basis of degree k on the reference triangle.

    Nodes are the three vertices followed (for k=2) by the midpoints of
    edges 01, 12 and 20.
    """

    def __init__(self, k: int):
        if k not in SUPPORTED_DEGREES:
            raise ValueError(f"unsupported polynomial degree {k}; supported: {SUPPORTED_DEGREES}")
        self.degree = k
        self.nodes = _lagrange_nodes(k)
        self.exponents = np.array(_monomial_exponents(k))
        V = self._monomials(self.nodes)
        # columns of coeffs hold the monomial expansion of each nodal function
        self.coeffs = np.linalg.solve(V, np.eye(len(self.nodes)))

    @property
    def size(self) -> int:
        return len(self.nodes)

    def _monomials(self, pts):
        pts = np.asarray(pts, dtype=float)
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        return pts[..., 0, None] ** a * pts[..., 1, None] ** b

    def _monomial_grads(self, pts):
        pts = np.asarray(pts, dtype=float)
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        x = pts[..., 0, None]
        z = pts[..., 1, None]
        dx = np.where(a > 0, a * x ** np.maximum(a - 1, 0), 0.0) * z ** b
        dz = x ** a * np.where(b > 0, b * z ** np.maximum(b - 1, 0), 0.0)
        return np.stack([dx, dz], axis=-1)

    def values(self, pts) -> np.ndarray:
        """Basis values at reference points, shape (..., nloc)."""
        return self._monomials(pts) @ self.coeffs

    def gradients(self, pts) -> np.ndarray:
        """Reference gradients, shape (..., nloc, 2)."""
        g = self._monomial_grads(pts)
        return np.einsum("...mc,mi->...ic", g, self.coeffs)


@lru_cache(maxsize=None)
def reference_basis(k: int) -> LagrangeBasis:
    return LagrangeBasis(k)


# ----------------------------------------------------------------------
# broken space


class BrokenSpace:
    """Piecewise P_k functions with element-local degrees of freedom.

    Global dof ``e * nloc + i`` is local basis function ``i`` on element ``e``.
    Volume and face tabulations are computed lazily and cached; the mesh is
    never modified.
    """

    def __init__(self, mesh: Mesh, degree: int, quad_degree: int | None = None):
        self.mesh = mesh
        self.degree = degree
        self.basis = reference_basis(degree)
        self.quad_degree = 2 * degree + 2 if quad_degree is None else quad_degree
        self.vol_rule = triangle_rule(self.quad_degree)
        self.edge_rule = edge_rule(self.quad_degree)

        p = mesh.vertices[mesh.triangles]
        self.origin = p[:, 0]
        self.jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
        self.detj = np.linalg.det(self.jac)
        self.jinv = np.linalg.inv(self.jac)
        self._trace_cache = {}

    @property
    def nloc(self) -> int:
        return self.basis.size

    @property
    def ndofs(self) -> int:
        return self.mesh.n_triangles * self.nloc

    def dofs(self, elem) -> np.ndarray:
        elem = np.asarray(elem)
        return elem[..., None] * self.nloc + np.arange(self.nloc)

    # -- mapping -------------------------------------------------------

    def to_physical(self, elem, ref):
        return self.origin[elem] + np.einsum("...ij,...j->...i", self.jac[elem], ref)

    def to_reference(self, elem, pts):
        return np.einsum("...ij,...j->...i", self.jinv[elem], pts - self.origin[elem])

    def physical_gradients(self, elem, ref_grads):
        """Map reference gradients (..., nloc, 2) on ``elem`` to physical ones."""
        return np.einsum("...ji,...nj->...ni", self.jinv[elem], ref_grads)

    # -- volume tabulation ---------------------------------------------

    @cached_property
    def vol_phi(self) -> np.ndarray:
        """(nq, nloc)"""
        return self.basis.values(self.vol_rule.points)

    @cached_property
    def vol_grad(self) -> np.ndarray:
        """(M, nq, nloc, 2) physical gradients."""
        g = self.basis.gradients(self.vol_rule.points)
        return np.einsum("eji,qnj->eqni", self.jinv, g)

    @cached_property
    def vol_weights(self) -> np.ndarray:
        """(M, nq) physical quadrature weights."""
        return np.abs(self.detj)[:, None] * self.vol_rule.weights[None, :]

    @cached_property
    def vol_points(self) -> np.ndarray:
        """(M, nq, 2) physical quadrature points."""
        return self.origin[:, None, :] + np.einsum("eij,qj->eqi", self.jac, self.vol_rule.points)

    # -- face tabulation -----------------------------------------------

    @cached_property
    def face_points(self) -> np.ndarray:
        """(F, nqe, 2) points along each face in its vertex order."""
        m = self.mesh
        p0 = m.vertices[m.face_vertices[:, 0]]
        p1 = m.vertices[m.face_vertices[:, 1]]
        t = self.edge_rule.points[:, 0]
        return p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]

    @cached_property
    def face_weights(self) -> np.ndarray:
        return self.mesh.face_diameter[:, None] * self.edge_rule.weights[None, :]

    def face_trace(self, side: int):
        """Basis values and physical gradients from the element on ``side``.

        ``side`` 0 is K+, 1 is K-. Boundary faces have zeros on side 1.
        Returns (phi (F, nqe, nloc), grad (F, nqe, nloc, 2)).
        """
        if side in self._trace_cache:
            return self._trace_cache[side]
        elems = self.mesh.face_elems[:, side]
        has = elems != INTERIOR
        e = np.where(has, elems, 0)
        ref = self.to_reference(e[:, None], self.face_points)
        phi = self.basis.values(ref)
        grad = self.physical_gradients(e[:, None], self.basis.gradients(ref))
        phi[~has] = 0.0
        grad[~has] = 0.0
        self._trace_cache[side] = (phi, grad)
        return phi, grad

    # -- discrete functions --------------------------------------------

    def zeros(self) -> "DGFunction":
        return DGFunction(self, np.zeros(self.ndofs))

    def function(self, coeffs) -> "DGFunction":
        return DGFunction(self, coeffs)

    def constant(self, value: float = 1.0) -> "DGFunction":
        return DGFunction(self, np.full(self.ndofs, float(value)))

    def interpolate(self, f) -> "DGFunction":
        """Nodal interpolation of a pointwise function ``f(x, z)``."""
        pts = self.to_physical(np.arange(self.mesh.n_triangles)[:, None], self.basis.nodes[None])
        return DGFunction(self, np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float).ravel())

    @cached_property
    def local_mass(self) -> np.ndarray:
        """(M, nloc, nloc) element mass matrices."""
        phi = self.vol_phi
        return np.einsum("eq,qi,qj->eij", self.vol_weights, phi, phi)

    def l2_project(self, f) -> "DGFunction":
        """Elementwise L2 projection of ``f(x, z)``."""
        pts = self.vol_points
        vals = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
        vals = np.broadcast_to(vals, pts.shape[:2])
        rhs = np.einsum("eq,qi,eq->ei", self.vol_weights, self.vol_phi, vals)
        return DGFunction(self, np.linalg.solve(self.local_mass, rhs[..., None])[..., 0].ravel())

    def integrate(self, values) -> float:
        """Integrate values tabulated at volume quadrature points, shape (M, nq)."""
        return float(np.sum(self.vol_weights * values))


class DGFunction:
    """Coefficient vector over a BrokenSpace."""

    def __init__(self, space: BrokenSpace, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.ndofs,):
            raise ValueError(f"expected {space.ndofs} coefficients, got shape {coeffs.shape}")
        self.space = space
        self.coeffs = coeffs

    @property
    def local(self) -> np.ndarray:
        return self.coeffs.reshape(-1, self.space.nloc)

    def _check_elem(self, elem):
        elem = np.asarray(elem)
        n = self.space.mesh.n_triangles
        if np.any((elem < 0) | (elem >= n)):
            raise IndexError(f"element index out of range [0, {n})")
        return elem

    def evaluate(self, elem, ref_point):
        """Value on element ``elem`` at reference coordinates ``ref_point``."""
        elem = self._check_elem(elem)
        phi = self.space.basis.values(ref_point)
        return np.einsum("...i,...i->...", phi, self.local[elem])

    def gradient(self, elem, ref_point):
        """Physical gradient on element ``elem`` at reference coordinates."""
        elem = self._check_elem(elem)
        g = self.space.physical_gradients(elem, self.space.basis.gradients(ref_point))
        return np.einsum("...ic,...i->...c", g, self.local[elem])

    def at_points(self, points, elems=None):
        """Evaluate at physical points; the containing element is looked up if not given."""
        points = np.asarray(points, dtype=float)
        if elems is None:
            elems = self.space.mesh.locate(points.reshape(-1, 2)).reshape(points.shape[:-1])
            if np.any(elems < 0):
                raise ValueError("point outside the mesh")
        ref = self.space.to_reference(elems, points)
        return self.evaluate(elems, ref)

    def at_quadrature(self) -> np.ndarray:
        """Values at volume quadrature points, shape (M, nq)."""
        return self.local @ self.space.vol_phi.T

    def gradient_at_quadrature(self) -> np.ndarray:
        """Broken gradient at volume quadrature points, shape (M, nq, 2)."""
        return np.einsum("eqic,ei->eqc", self.space.vol_grad, self.local)

    def traces(self, face: int, t):
        """(trace from K+, trace from K- or None) at edge parameters ``t`` in [0, 1]."""
        m = self.space.mesh
        a, b = m.face_vertices[face]
        pts = m.vertices[a] + np.asarray(t, dtype=float)[..., None] * (m.vertices[b] - m.vertices[a])
        kp, km = m.face_elems[face]
        plus = self.evaluate(kp, self.space.to_reference(kp, pts))
        minus = None if km == INTERIOR else self.evaluate(km, self.space.to_reference(km, pts))
        return plus, minus

    def integral(self) -> float:
        return self.space.integrate(self.at_quadrature())

    def mean(self) -> float:
        return self.integral() / float(np.sum(self.space.mesh.areas))


def broken_gradient(field: DGFunction):
    """Per-element gradient evaluator ``grad(elem, ref_point) -> (..., 2)``."""
    return field.gradient


def face_jump_average(field: DGFunction, face: int, t):
    """Jump and average of ``field`` on ``face`` at edge parameters ``t``.

    On boundary faces both equal the single trace.
    """
    plus, minus = field.traces(face, t)
    if minus is None:
        return plus, plus
    return plus - minus, 0.5 * (plus + minus)


def l2_project(space: BrokenSpace, f) -> DGFunction:
    return space.l2_project(f)
