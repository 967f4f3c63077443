"""Discontinuous cell spaces, facet spaces and nodal interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .element import TRIANGLE, num_triangle_dofs, segment_nodes, tabulate_lagrange, triangle_nodes
from .errors import DataError, InvalidArgumentError
from .mesh import DIRICHLET


@dataclass(frozen=True, eq=False)
class CellSpace:
    mesh: object
    k: int
    dofmap: np.ndarray  # (C, nc)

    @property
    def total_dofs(self):
        return self.dofmap.size

    @property
    def dofs_per_cell(self):
        return self.dofmap.shape[1]

    def node_coordinates(self):
        """Physical Lagrange node positions, shape (C, nc, 2)."""
        mesh = self.mesh
        X0 = mesh.vertices[mesh.cells[:, 0]]
        return X0[:, None, :] + np.einsum("cij,nj->cni", mesh.jacobians(), triangle_nodes(self.k))


@dataclass(frozen=True, eq=False)
class FacetSpace:
    mesh: object
    k: int
    l: int
    dofmap: np.ndarray  # (E, k + 1), nodes ordered from facet vertex 0 to vertex 1
    total_dofs: int
    dirichlet_dofs: np.ndarray
    free_index: np.ndarray  # (total_dofs,), position among free dofs or -1

    @property
    def free_dofs(self):
        return self.total_dofs - len(self.dirichlet_dofs)

    def node_coordinates(self):
        """Physical node positions per facet, shape (E, k + 1, 2)."""
        mesh = self.mesh
        a = mesh.vertices[mesh.facets[:, 0]]
        b = mesh.vertices[mesh.facets[:, 1]]
        t = segment_nodes(self.k)
        return a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]


@dataclass(eq=False)
class Field:
    space: object
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape[0] != self.space.total_dofs:
            raise InvalidArgumentError(
                f"{self.coefficients.shape[0]} coefficients for a space of dimension {self.space.total_dofs}"
            )

    def cell_values(self):
        """Coefficients arranged per cell, shape (C, nc[, ...])."""
        return self.coefficients[self.space.dofmap]


def build_cell_space(mesh, k):
    if int(k) != k or k < 1:
        raise InvalidArgumentError(f"cell space order must be >= 1, got {k!r}")
    k = int(k)
    nc = num_triangle_dofs(k)
    return CellSpace(mesh, k, np.arange(mesh.num_cells * nc).reshape(-1, nc))


def build_facet_space(mesh, k, l=1, dirichlet_tags=(DIRICHLET,)):
    """Facet space of order ``k``.

    ``l = 0`` gives independent dofs on every facet. ``l = 1`` shares the end
    node dofs at mesh vertices: vertex dofs come first (numbered as mesh
    vertices), then ``k - 1`` interior dofs per facet.
    """
    if int(k) != k or k < 1:
        raise InvalidArgumentError(f"facet space order must be >= 1, got {k!r}")
    if l not in (0, 1):
        raise InvalidArgumentError(f"facet continuity l must be 0 or 1, got {l!r}")
    k = int(k)
    E = mesh.num_facets
    if l == 0:
        dofmap = np.arange(E * (k + 1)).reshape(E, k + 1)
        total = E * (k + 1)
    else:
        V = mesh.num_vertices
        dofmap = np.empty((E, k + 1), dtype=np.int64)
        dofmap[:, 0] = mesh.facets[:, 0]
        dofmap[:, k] = mesh.facets[:, 1]
        dofmap[:, 1:k] = V + np.arange(E * (k - 1)).reshape(E, k - 1)
        total = V + (k - 1) * E

    constrained = np.isin(mesh.boundary_tag, np.asarray(dirichlet_tags))
    dirichlet = np.unique(dofmap[constrained])
    free_index = np.full(total, -1, dtype=np.int64)
    mask = np.ones(total, dtype=bool)
    mask[dirichlet] = False
    free_index[mask] = np.arange(mask.sum())
    return FacetSpace(mesh, k, l, dofmap, total, dirichlet, free_index)


def evaluate(f, points):
    """Evaluate ``f(x, y)`` at an (..., 2) array of points, rejecting non-finite output.

    Scalar functions return shape (...); vector functions return (..., 2).
    """
    points = np.asarray(points, dtype=float)
    x, y = points[..., 0], points[..., 1]
    out = f(x, y)
    if isinstance(out, (tuple, list)):
        out = np.stack([np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in out], axis=-1)
    else:
        out = np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()
    if not np.isfinite(out).all():
        bad = np.argwhere(~np.isfinite(out.reshape(x.size, -1)))[0, 0]
        p = points.reshape(-1, 2)[bad]
        raise DataError(f"function is not finite at point ({p[0]!r}, {p[1]!r})")
    return out


def interpolate_cellwise(f, mesh, m):
    """Nodal interpolant of ``f`` in the discontinuous space of order ``m``."""
    space = build_cell_space(mesh, m)
    values = evaluate(f, space.node_coordinates())
    return Field(space, values.reshape((space.total_dofs,) + values.shape[2:]))


def facet_trace_interpolate(f, facet_space, constrain=True):
    """Nodal interpolant of ``f`` on facets; Dirichlet dofs are zeroed if ``constrain``."""
    values = evaluate(f, facet_space.node_coordinates())
    coeffs = np.zeros(facet_space.total_dofs)
    # shared vertex nodes receive the same value from every facet
    coeffs[facet_space.dofmap.ravel()] = values.ravel()
    if constrain:
        coeffs[facet_space.dirichlet_dofs] = 0.0
    return Field(facet_space, coeffs)


def point_values(u, points):
    """Evaluate a cell-space field at physical ``points`` of shape (m, 2).

    Points on a shared edge take the value from the cell returned by
    :meth:`Mesh.locate`; points outside the domain raise.
    """
    space = u.space
    mesh = space.mesh
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cells = mesh.locate(points)
    if np.any(cells < 0):
        bad = points[np.argmax(cells < 0)]
        raise InvalidArgumentError(f"point ({bad[0]:g}, {bad[1]:g}) lies outside the mesh")
    X0 = mesh.vertices[mesh.cells[cells, 0]]
    ref = np.einsum("mij,mj->mi", np.linalg.inv(mesh.jacobians()[cells]), points - X0)
    phi = tabulate_lagrange(TRIANGLE, space.k, ref).values
    return np.einsum("mn,mn->m", phi, u.cell_values()[cells])
