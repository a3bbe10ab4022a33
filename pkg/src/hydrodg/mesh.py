"""Conforming triangulations of rectangles with full face topology.

Boundary faces are classified as surface (top edge), bottom or sidewall.
The vertical coordinate is called ``z`` throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

TAG_TOL = 1e-10
INTERIOR = -1


class MeshError(ValueError):
    """Invalid mesh geometry or topology."""


class MeshParseError(MeshError):
    """Malformed mesh file."""


class BoundaryTag(enum.IntEnum):
    SURFACE = 0
    BOTTOM = 1
    SIDEWALL = 2

    @classmethod
    def parse(cls, name: str) -> "BoundaryTag":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown boundary tag {name!r}") from None


@dataclass(frozen=True)
class Face:
    """Read-only view of one edge of the triangulation.

    ``right`` is -1 on boundary faces, where ``tag`` is set instead.
    The normal points from ``left`` to ``right`` (outward on the boundary).
    """

    index: int
    vertices: tuple[int, int]
    left: int
    right: int
    normal: tuple[float, float]
    diameter: float
    tag: BoundaryTag | None

    @property
    def is_boundary(self) -> bool:
        return self.right < 0


class Mesh:
    """Immutable 2D triangulation.

    Face arrays are indexed by face number:

    * ``face_vertices``  (F, 2) vertex pair, parameterisation order of the edge
    * ``face_elems``     (F, 2) [K+, K-]; K- is -1 on the boundary
    * ``face_normals``   (F, 2) unit normal from K+ to K-
    * ``face_diameter``  (F,)   edge length h_e
    * ``face_tag``       (F,)   BoundaryTag value, or -1 for interior faces
    """

    def __init__(self, vertices, triangles, tags=None, domain=None):
        vertices = np.array(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (N, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise MeshError("triangles must have shape (M, 3) with M >= 1")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError("triangle vertex index out of range")

        self.vertices = vertices
        self.triangles = triangles
        if domain is None:
            lo = vertices.min(axis=0)
            hi = vertices.max(axis=0)
            domain = (lo[0], hi[0], lo[1], hi[1])
        self.domain = tuple(float(c) for c in domain)

        area = self.signed_areas
        bad = np.flatnonzero(area <= 0.0)
        if bad.size:
            raise MeshError(f"triangle {bad[0]} has negative area (clockwise or degenerate)")

        self._build_faces(dict(tags or {}))
        for arr in (self.vertices, self.triangles, self.face_vertices, self.face_elems,
                    self.face_normals, self.face_diameter, self.face_tag):
            arr.setflags(write=False)

    # ------------------------------------------------------------------
    # construction helpers

    def _build_faces(self, tag_overrides):
        tri = self.triangles
        edges = np.concatenate([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]])
        owner = np.tile(np.arange(len(tri)), 3)
        key = np.sort(edges, axis=1)
        uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if counts.max() > 2:
            e = uniq[np.argmax(counts)]
            raise MeshError(f"non-conforming connectivity: edge {tuple(e)} shared by {counts.max()} triangles")

        nf = len(uniq)
        elems = np.full((nf, 2), INTERIOR, dtype=np.int64)
        order = np.lexsort((owner, inverse))
        first = np.ones(len(order), dtype=bool)
        first[1:] = inverse[order][1:] != inverse[order][:-1]
        elems[inverse[order][first], 0] = owner[order][first]
        elems[inverse[order][~first], 1] = owner[order][~first]

        # interior faces with a reversed orientation would appear as a duplicate
        # directed edge; conforming meshes traverse shared edges in opposite senses
        directed = {}
        for (a, b), k in zip(edges.tolist(), owner.tolist()):
            if (a, b) in directed:
                raise MeshError(f"inconsistent orientation: edge ({a}, {b}) appears twice in triangles "
                                f"{directed[(a, b)]} and {k}")
            directed[(a, b)] = k

        fverts = uniq.copy()
        p0 = self.vertices[fverts[:, 0]]
        p1 = self.vertices[fverts[:, 1]]
        tangent = p1 - p0
        length = np.hypot(tangent[:, 0], tangent[:, 1])
        normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / length[:, None]
        # orient outward from K+
        centroid = self.vertices[tri[elems[:, 0]]].mean(axis=1)
        mid = 0.5 * (p0 + p1)
        flip = np.einsum("ij,ij->i", normal, mid - centroid) < 0
        normal[flip] *= -1.0

        tags = np.full(nf, INTERIOR, dtype=np.int64)
        bnd = elems[:, 1] == INTERIOR
        x0, x1, z0, z1 = self.domain
        for f in np.flatnonzero(bnd):
            a, b = fverts[f]
            pa, pb = self.vertices[a], self.vertices[b]
            override = tag_overrides.get((a, b), tag_overrides.get((b, a)))
            if isinstance(override, str):
                override = BoundaryTag.parse(override)
            if override is not None:
                tags[f] = int(override)
            elif abs(pa[1] - z1) < TAG_TOL and abs(pb[1] - z1) < TAG_TOL:
                tags[f] = BoundaryTag.SURFACE
            elif abs(pa[1] - z0) < TAG_TOL and abs(pb[1] - z0) < TAG_TOL:
                tags[f] = BoundaryTag.BOTTOM
            elif ((abs(pa[0] - x0) < TAG_TOL and abs(pb[0] - x0) < TAG_TOL)
                  or (abs(pa[0] - x1) < TAG_TOL and abs(pb[0] - x1) < TAG_TOL)):
                tags[f] = BoundaryTag.SIDEWALL
            else:
                raise MeshError(f"boundary edge ({a}, {b}) does not lie on the domain rectangle "
                                "and has no tag override")
        unknown = set(tag_overrides) - {tuple(e) for e in fverts[bnd].tolist()} \
            - {tuple(e[::-1]) for e in fverts[bnd].tolist()}
        if unknown:
            raise MeshError(f"tag override for non-boundary edge {sorted(unknown)[0]}")

        self.face_vertices = fverts
        self.face_elems = elems
        self.face_normals = normal
        self.face_diameter = length
        self.face_tag = tags

    # ------------------------------------------------------------------
    # geometry

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def _edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.stack([np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
                         np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
                         np.linalg.norm(p[:, 0] - p[:, 1], axis=1)], axis=1)

    @cached_property
    def elem_diameter(self) -> np.ndarray:
        """h_K, the longest edge of each triangle."""
        return self._edge_lengths.max(axis=1)

    @cached_property
    def elem_inradius(self) -> np.ndarray:
        """r_K = 2 |K| / perimeter."""
        return 2.0 * self.signed_areas / self._edge_lengths.sum(axis=1)

    @property
    def h(self) -> float:
        return float(self.elem_diameter.max())

    @cached_property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_tag == INTERIOR)

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_tag != INTERIOR)

    def faces_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return np.flatnonzero(self.face_tag == int(tag))

    @property
    def domain_area(self) -> float:
        x0, x1, z0, z1 = self.domain
        return (x1 - x0) * (z1 - z0)

    def face(self, i: int) -> Face:
        a, b = self.face_vertices[i]
        tag = self.face_tag[i]
        return Face(
            index=int(i),
            vertices=(int(a), int(b)),
            left=int(self.face_elems[i, 0]),
            right=int(self.face_elems[i, 1]),
            normal=(float(self.face_normals[i, 0]), float(self.face_normals[i, 1])),
            diameter=float(self.face_diameter[i]),
            tag=None if tag == INTERIOR else BoundaryTag(int(tag)),
        )

    @property
    def faces(self) -> list[Face]:
        return [self.face(i) for i in range(self.n_faces)]

    def locate(self, points, tol: float = 1e-12) -> np.ndarray:
        """Index of a triangle containing each point, -1 if outside."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.vertices[self.triangles]
        v0 = p[:, 0]
        e1 = p[:, 1] - v0
        e2 = p[:, 2] - v0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        out = np.full(len(points), -1, dtype=np.int64)
        chunk = max(1, 2_000_000 // max(1, self.n_triangles))
        for s in range(0, len(points), chunk):
            d = points[s:s + chunk, None, :] - v0[None]
            l1 = (d[..., 0] * e2[:, 1] - d[..., 1] * e2[:, 0]) / det
            l2 = (e1[:, 0] * d[..., 1] - e1[:, 1] * d[..., 0]) / det
            inside = (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol)
            hit = inside.any(axis=1)
            out[s:s + chunk][hit] = inside[hit].argmax(axis=1)
        return out

    def __repr__(self):
        return (f"Mesh({self.n_vertices} vertices, {self.n_triangles} triangles, "
                f"{len(self.interior_faces)} interior / {len(self.boundary_faces)} boundary faces)")


def build_structured_mesh(nx: int, nz: int, domain=(0.0, 1.0, 0.0, 1.0)) -> Mesh:
    """Split an nx-by-nz grid of cells along the lower-left to upper-right diagonal."""
    if int(nx) != nx or int(nz) != nz or nx < 1 or nz < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, nz={nz}")
    nx, nz = int(nx), int(nz)
    x0, x1, z0, z1 = (float(c) for c in domain)
    if not (x1 > x0 and z1 > z0):
        raise ValueError(f"degenerate rectangle {domain}")
    xs = np.linspace(x0, x1, nx + 1)
    zs = np.linspace(z0, z1, nz + 1)
    X, Z = np.meshgrid(xs, zs)
    vertices = np.column_stack([X.ravel(), Z.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(nz))
    i, j = i.ravel(), j.ravel()
    sw = j * (nx + 1) + i
    se = sw + 1
    nw = sw + nx + 1
    ne = nw + 1
    lower = np.column_stack([sw, se, ne])
    upper = np.column_stack([sw, ne, nw])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, triangles, domain=(x0, x1, z0, z1))


def shape_regularity(mesh: Mesh) -> float:
    """min over elements of r_K / h_K."""
    return float(np.min(mesh.elem_inradius / mesh.elem_diameter))


# ----------------------------------------------------------------------
# text format

MESH_HEADER = "hydrodg-mesh 1"


def _tokens(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def read_mesh(path) -> Mesh:
    lines = list(_tokens(path))
    if not lines or " ".join(lines[0][1]) != MESH_HEADER:
        where = lines[0][0] if lines else 1
        raise MeshParseError(f"{path}:{where}: expected header {MESH_HEADER!r}")
    pos = 1

    def section(name):
        nonlocal pos
        if pos >= len(lines):
            raise MeshParseError(f"{path}: missing '{name}' section")
        lineno, tok = lines[pos]
        if len(tok) != 2 or tok[0] != name:
            raise MeshParseError(f"{path}:{lineno}: expected '{name} COUNT'")
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshParseError(f"{path}:{lineno}: bad count {tok[1]!r}") from None
        if count < 0:
            raise MeshParseError(f"{path}:{lineno}: negative count")
        pos += 1
        if pos + count > len(lines):
            raise MeshParseError(f"{path}: '{name}' section truncated")
        rows = lines[pos:pos + count]
        pos += count
        return rows

    vertices = []
    for lineno, tok in section("vertices"):
        if len(tok) != 2:
            raise MeshParseError(f"{path}:{lineno}: expected 'x z'")
        try:
            vertices.append((float(tok[0]), float(tok[1])))
        except ValueError:
            raise MeshParseError(f"{path}:{lineno}: bad coordinate") from None

    triangles = []
    for lineno, tok in section("triangles"):
        if len(tok) != 3:
            raise MeshParseError(f"{path}:{lineno}: expected 'i j k'")
        try:
            idx = tuple(int(t) for t in tok)
        except ValueError:
            raise MeshParseError(f"{path}:{lineno}: bad vertex index") from None
        if min(idx) < 0 or max(idx) >= len(vertices):
            raise MeshParseError(f"{path}:{lineno}: vertex index out of range (have {len(vertices)} vertices)")
        triangles.append(idx)

    tags = {}
    if pos < len(lines):
        lineno, tok = lines[pos]
        if tok != ["tags"]:
            raise MeshParseError(f"{path}:{lineno}: unexpected content {' '.join(tok)!r}")
        for lineno, tok in lines[pos + 1:]:
            if len(tok) != 3:
                raise MeshParseError(f"{path}:{lineno}: expected 'i j TAG'")
            try:
                a, b = int(tok[0]), int(tok[1])
                tags[(a, b)] = BoundaryTag.parse(tok[2])
            except ValueError as exc:
                raise MeshParseError(f"{path}:{lineno}: {exc}") from None

    try:
        return Mesh(vertices, triangles, tags=tags)
    except MeshError as exc:
        # point at the offending triangle line where we can
        msg = str(exc)
        if msg.startswith("triangle "):
            k = int(msg.split()[1])
            lineno = lines[3 + len(vertices) + k][0]
            raise MeshParseError(f"{path}:{lineno}: {msg}") from None
        raise MeshError(f"{path}: {msg}") from None


def write_mesh(mesh: Mesh, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(MESH_HEADER + "\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, z in mesh.vertices:
            fh.write(f"{float(x)!r} {float(z)!r}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        fh.write("tags\n")
        for f in mesh.boundary_faces:
            a, b = mesh.face_vertices[f]
            fh.write(f"{a} {b} {BoundaryTag(int(mesh.face_tag[f])).name}\n")
    return path
