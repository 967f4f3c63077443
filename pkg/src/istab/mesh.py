"""Structured triangulations of rectangles with facet topology.

Cells are stored counter-clockwise. Local facet ``i`` of a cell is the edge
opposite local vertex ``i``, traversed as (v1, v2), (v2, v0), (v0, v1), so the
outward normal of local facet ``i`` is the traversal direction rotated
clockwise. Global facets are stored with ascending vertex indices.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, InvalidArgumentError

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

RIGHT = "right"
LEFT = "left"

# local facet i -> (start, end) local vertices
LOCAL_FACET_VERTICES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (V, 2)
    cells: np.ndarray  # (C, 3), counter-clockwise
    facets: np.ndarray  # (E, 2), ascending vertex ids
    cell_facets: np.ndarray  # (C, 3) facet id of local facet i
    cell_facet_flip: np.ndarray  # (C, 3) True if local traversal runs max -> min
    facet_cells: np.ndarray  # (E, 2), second entry -1 on the boundary
    boundary_tag: np.ndarray  # (E,), INTERIOR / DIRICHLET / NEUMANN
    h_cell: np.ndarray  # (C,), 2 x circumradius
    n: int
    domain: tuple
    diagonal: str

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_facets(self):
        return len(self.facets)

    @property
    def boundary_facets(self):
        return np.flatnonzero(self.facet_cells[:, 1] < 0)

    @property
    def h_max(self):
        return float(self.h_cell.max())

    def jacobians(self):
        """Affine map Jacobians, columns x1 - x0 and x2 - x0, shape (C, 2, 2)."""
        X = self.vertices[self.cells]
        return np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=-1)

    def areas(self):
        J = self.jacobians()
        return 0.5 * (J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])

    def facet_lengths(self):
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def facet_midpoints(self):
        return 0.5 * (self.vertices[self.facets[:, 0]] + self.vertices[self.facets[:, 1]])

    def cell_normals(self):
        """Outward unit normals of every local facet, shape (C, 3, 2)."""
        X = self.vertices[self.cells]
        start = X[:, LOCAL_FACET_VERTICES[:, 0]]
        end = X[:, LOCAL_FACET_VERTICES[:, 1]]
        d = end - start
        length = np.hypot(d[..., 0], d[..., 1])
        return np.stack([d[..., 1], -d[..., 0]], axis=-1) / length[..., None]

    def with_boundary_tags(self, rule):
        """Return a copy with boundary facets re-tagged.

        ``rule`` is DIRICHLET, NEUMANN, or a callable ``rule(x, y, nx, ny)``
        evaluated at facet midpoints with the outward normal, returning an
        array of tags.
        """
        tags = np.full(self.num_facets, INTERIOR, dtype=np.int8)
        bf = self.boundary_facets
        if callable(rule):
            mid = self.facet_midpoints()[bf]
            cells = self.facet_cells[bf, 0]
            local = np.argmax(self.cell_facets[cells] == bf[:, None], axis=1)
            nrm = self.cell_normals()[cells, local]
            values = np.broadcast_to(
                np.asarray(rule(mid[:, 0], mid[:, 1], nrm[:, 0], nrm[:, 1])), bf.shape
            )
        else:
            values = np.full(bf.shape, rule)
        if not np.isin(values, (DIRICHLET, NEUMANN)).all():
            raise InvalidArgumentError("boundary tags must be DIRICHLET or NEUMANN")
        tags[bf] = values
        return dataclasses.replace(self, boundary_tag=tags)

    def locate(self, points):
        """Index of a cell containing each point; -1 for points outside."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        x0, x1, y0, y1 = self.domain
        n = self.n
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        s = (points[:, 0] - x0) / (x1 - x0) * n
        t = (points[:, 1] - y0) / (y1 - y0) * n
        inside = (
            (points[:, 0] >= x0 - tol) & (points[:, 0] <= x1 + tol)
            & (points[:, 1] >= y0 - tol) & (points[:, 1] <= y1 + tol)
        )
        i = np.clip(np.floor(s).astype(int), 0, n - 1)
        j = np.clip(np.floor(t).astype(int), 0, n - 1)
        fs, ft = s - i, t - j
        if self.diagonal == RIGHT:
            upper = ft > fs
        else:
            upper = fs + ft > 1.0
        cell = 2 * (j * n + i) + upper
        return np.where(inside, cell, -1)


def _circumdiameter(X):
    a = np.linalg.norm(X[:, 1] - X[:, 2], axis=1)
    b = np.linalg.norm(X[:, 2] - X[:, 0], axis=1)
    c = np.linalg.norm(X[:, 0] - X[:, 1], axis=1)
    d1 = X[:, 1] - X[:, 0]
    d2 = X[:, 2] - X[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    # R = abc / (4 |A|); degenerate cells are rejected by the caller
    with np.errstate(divide="ignore", invalid="ignore"):
        return a * b * c / (2.0 * area), area


def build_mesh(vertices, cells, n=0, domain=None, diagonal=RIGHT):
    """Assemble topology for an arbitrary counter-clockwise triangle list."""
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    if not np.isfinite(vertices).all():
        raise GeometryError("non-finite vertex coordinates")
    h, area = _circumdiameter(vertices[cells])
    bad = np.flatnonzero(~(area > 0.0))
    if bad.size:
        raise GeometryError(f"cell {bad[0]} has non-positive signed area")

    start = cells[:, LOCAL_FACET_VERTICES[:, 0]]
    end = cells[:, LOCAL_FACET_VERTICES[:, 1]]
    edges = np.stack([np.minimum(start, end), np.maximum(start, end)], axis=-1).reshape(-1, 2)
    facets, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    cell_facets = inverse.reshape(-1, 3)
    flip = start > end

    facet_cells = np.full((len(facets), 2), -1, dtype=np.int64)
    for c, row in enumerate(cell_facets):
        for f in row:
            slot = 0 if facet_cells[f, 0] < 0 else 1
            if slot == 1 and facet_cells[f, 1] >= 0:
                raise GeometryError(f"facet {f} shared by more than two cells")
            facet_cells[f, slot] = c

    tags = np.where(facet_cells[:, 1] < 0, DIRICHLET, INTERIOR).astype(np.int8)
    if domain is None:
        domain = (
            vertices[:, 0].min(), vertices[:, 0].max(),
            vertices[:, 1].min(), vertices[:, 1].max(),
        )
    return Mesh(
        vertices=vertices,
        cells=cells,
        facets=facets,
        cell_facets=cell_facets,
        cell_facet_flip=flip,
        facet_cells=facet_cells,
        boundary_tag=tags,
        h_cell=h,
        n=int(n),
        domain=tuple(float(v) for v in domain),
        diagonal=diagonal,
    )


def build_uniform_square_mesh(n, domain=(-1.0, 1.0, -1.0, 1.0), diagonal=RIGHT):
    """Uniform n x n grid of squares, each split into two triangles.

    Vertex ``(i, j)`` has index ``j * (n + 1) + i``; square ``(i, j)`` owns
    cells ``2 * (j * n + i)`` (below the diagonal) and ``+ 1`` (above).
    """
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    x0, x1, y0, y1 = (float(v) for v in domain)
    if not (x0 < x1 and y0 < y1):
        raise InvalidArgumentError(f"degenerate domain {domain!r}")
    if diagonal not in (RIGHT, LEFT):
        raise InvalidArgumentError(f"diagonal must be {RIGHT!r} or {LEFT!r}")

    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.divmod(np.arange(n * n), n)
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    if diagonal == RIGHT:
        lower = np.column_stack([v00, v10, v11])
        upper = np.column_stack([v00, v11, v01])
    else:
        lower = np.column_stack([v00, v10, v01])
        upper = np.column_stack([v10, v11, v01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return build_mesh(vertices, cells, n=n, domain=(x0, x1, y0, y1), diagonal=diagonal)


def cell_size(mesh, cell):
    """Two times the circumradius of ``cell``."""
    if not 0 <= cell < mesh.num_cells:
        raise InvalidArgumentError(f"invalid cell id {cell}")
    h, area = _circumdiameter(mesh.vertices[mesh.cells[[cell]]])
    if not area[0] > 0:
        raise GeometryError(f"cell {cell} is degenerate")
    return float(h[0])


def facet_normal(mesh, cell, local_facet):
    if not 0 <= cell < mesh.num_cells or local_facet not in (0, 1, 2):
        raise InvalidArgumentError(f"invalid (cell, local_facet) = ({cell}, {local_facet})")
    a, b = mesh.cells[cell, LOCAL_FACET_VERTICES[local_facet]]
    d = mesh.vertices[b] - mesh.vertices[a]
    return np.array([d[1], -d[0]]) / np.hypot(d[0], d[1])


def write_mesh_text(mesh, path):
    """Debug dump: one entity per line, prefixed by its kind."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# vertices {mesh.num_vertices} cells {mesh.num_cells} facets {mesh.num_facets}\n")
        for k, (x, y) in enumerate(mesh.vertices):
            fh.write(f"v {k} {x:.17g} {y:.17g}\n")
        for k, (a, b, c) in enumerate(mesh.cells):
            fh.write(f"c {k} {a} {b} {c}\n")
        for k, (a, b) in enumerate(mesh.facets):
            fh.write(f"f {k} {a} {b} {int(mesh.boundary_tag[k])}\n")
