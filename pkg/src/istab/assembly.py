"""Assembly of the coupled cell/facet system.

Local kernels act on a combined local basis ``[cell dofs | facet 0 | facet 1 |
facet 2]`` of size ``nc + 3 (k + 1)``. Facet basis functions are tabulated in
the cell's own traversal direction; the matching global dofs are reversed when
that direction disagrees with the global facet orientation. Local matrices
follow the convention ``M[i, j] = B(phi_j, phi_i)`` (row = test function).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps

from .element import (
    SEGMENT,
    TRIANGLE,
    num_triangle_dofs,
    segment_quadrature,
    tabulate_lagrange,
    triangle_quadrature,
)
from .errors import InvalidArgumentError
from .mesh import LOCAL_FACET_VERTICES, NEUMANN
from .space import interpolate_cellwise

REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

# extra order of the interpolants replacing analytic data
DATA_ORDER_OFFSET = 6


def quadrature_degree(k):
    return 2 * (k + DATA_ORDER_OFFSET) + 2


def reference_facet_points(local_facet, s):
    a, b = LOCAL_FACET_VERTICES[local_facet]
    return REFERENCE_VERTICES[a] + np.outer(s, REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a])


def eval_zeta(a_dot_n):
    """Upwind indicator: 1 on inflow (a.n < 0), 0 on outflow (a.n >= 0)."""
    return (np.asarray(a_dot_n) < 0).astype(float)


class CellData:
    """Geometry, tabulations and interpolated problem data at quadrature points.

    Interior arrays are indexed ``[cell, point, ...]``; facet arrays
    ``[cell, local facet, point, ...]``.
    """

    def __init__(self, mesh, k, problem=None, degree=None):
        self.mesh = mesh
        self.k = k
        self.nc = num_triangle_dofs(k)
        self.nf = k + 1
        self.ntot = self.nc + 3 * self.nf
        self.degree = quadrature_degree(k) if degree is None else degree
        self.tri = triangle_quadrature(self.degree)
        self.seg = segment_quadrature(self.degree)
        s = self.seg.points[:, 0]
        self.facet_ref_points = np.stack([reference_facet_points(f, s) for f in range(3)])

        J = mesh.jacobians()
        self.detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.Jinv = np.linalg.inv(J)
        self.h = mesh.h_cell
        self.normals = mesh.cell_normals()
        X = mesh.vertices[mesh.cells]
        d = X[:, LOCAL_FACET_VERTICES[:, 1]] - X[:, LOCAL_FACET_VERTICES[:, 0]]
        self.lengths = np.hypot(d[..., 0], d[..., 1])
        self.boundary = mesh.facet_cells[mesh.cell_facets, 1] < 0
        self.tags = mesh.boundary_tag[mesh.cell_facets]

        X0 = X[:, 0]
        self.x_int = X0[:, None] + np.einsum("cij,qj->cqi", J, self.tri.points)
        self.x_fac = X0[:, None, None] + np.einsum("cij,fqj->cfqi", J, self.facet_ref_points)
        self.w_int = self.tri.weights[None, :] * self.detJ[:, None]
        self.w_fac = self.seg.weights[None, None, :] * self.lengths[:, :, None]

        tab = tabulate_lagrange(TRIANGLE, k, self.tri.points)
        self.phi = tab.values
        self.grad_phi = self._physical_gradients(tab.gradients)
        self.hess_phi = self._physical_hessians(tab.hessians)
        ftabs = [tabulate_lagrange(TRIANGLE, k, self.facet_ref_points[f]) for f in range(3)]
        self.phi_fac = np.stack([t.values for t in ftabs])
        self.grad_phi_fac = np.stack(
            [self._physical_gradients(t.gradients) for t in ftabs], axis=1
        )
        self.psi = tabulate_lagrange(SEGMENT, k, s).values

        self.problem = None
        if problem is not None:
            self.attach(problem)

    def _physical_gradients(self, ref):
        return np.einsum("cji,qnj->cqni", self.Jinv, ref)

    def _physical_hessians(self, ref):
        tmp = np.einsum("qnab,cbj->cqnaj", ref, self.Jinv)
        return np.einsum("cai,cqnaj->cqnij", self.Jinv, tmp)

    # combined local basis ----------------------------------------------------

    @cached_property
    def cell_part(self):
        """Cell basis values on each local facet, padded: (3, nq, ntot)."""
        out = np.zeros((3, len(self.psi), self.ntot))
        out[:, :, : self.nc] = self.phi_fac
        return out

    @cached_property
    def facet_part(self):
        """Facet basis values on each local facet, padded: (3, nq, ntot)."""
        out = np.zeros((3, len(self.psi), self.ntot))
        for f in range(3):
            lo = self.nc + f * self.nf
            out[f, :, lo : lo + self.nf] = self.psi
        return out

    @cached_property
    def jump_part(self):
        """v_bar - v on each local facet, padded: (3, nq, ntot)."""
        return self.facet_part - self.cell_part

    @cached_property
    def normal_derivative(self):
        """grad v . n of the cell basis, padded: (C, 3, nq, ntot)."""
        out = np.zeros((self.mesh.num_cells, 3, len(self.psi), self.ntot))
        out[..., : self.nc] = np.einsum("cfqnd,cfd->cfqn", self.grad_phi_fac, self.normals)
        return out

    def facet_dofs(self, facet_space):
        """Global facet dofs in local traversal order, shape (C, 3 (k + 1))."""
        dofs = facet_space.dofmap[self.mesh.cell_facets]  # (C, 3, k+1)
        dofs = np.where(self.mesh.cell_facet_flip[..., None], dofs[..., ::-1], dofs)
        return dofs.reshape(self.mesh.num_cells, -1)

    # interpolated data -------------------------------------------------------

    def attach(self, problem):
        """Interpolate problem data at order k + 6 and evaluate at quadrature points."""
        m = self.k + DATA_ORDER_OFFSET
        tab = tabulate_lagrange(TRIANGLE, m, self.tri.points)
        ftabs = [tabulate_lagrange(TRIANGLE, m, self.facet_ref_points[f]) for f in range(3)]
        fval = np.stack([t.values for t in ftabs])

        def at_interior(coeffs):
            return np.einsum("qn,cn...->cq...", tab.values, coeffs, optimize=True)

        def at_interior_tab(table, coeffs):
            flat = table.reshape(table.shape[0], table.shape[1], -1)
            out = np.einsum("qnr,cn->cqr", flat, coeffs, optimize=True)
            return out.reshape((coeffs.shape[0],) + table.shape[:1] + table.shape[2:])

        def at_facets(coeffs):
            return np.einsum("fqn,cn...->cfq...", fval, coeffs, optimize=True)

        a = interpolate_cellwise(problem.advection, self.mesh, m).cell_values()
        f = interpolate_cellwise(problem.source, self.mesh, m).cell_values()
        self.a_int = at_interior(a)
        self.a_fac = at_facets(a)
        self.f_int = at_interior(f)
        self.an = np.einsum("cfqd,cfd->cfq", self.a_fac, self.normals)
        self.zeta = eval_zeta(self.an)

        self.u_int = self.grad_u_int = self.hess_u_int = None
        self.u_fac = self.grad_u_fac = None
        if problem.exact is not None:
            u = interpolate_cellwise(problem.exact, self.mesh, m).cell_values()
            self.u_int = at_interior(u)
            gref = at_interior_tab(tab.gradients, u)
            self.grad_u_int = np.einsum("cji,cqj->cqi", self.Jinv, gref)
            href = at_interior_tab(tab.hessians, u)
            self.hess_u_int = np.einsum("cai,cqab,cbj->cqij", self.Jinv, href, self.Jinv, optimize=True)
            self.u_fac = at_facets(u)
            gfac = np.stack([t.gradients for t in ftabs])
            gfac = np.einsum("fqnj,cn->cfqj", gfac, u, optimize=True)
            self.grad_u_fac = np.einsum("cji,cfqj->cfqi", self.Jinv, gfac)

        if problem.mu == 0 and problem.kappa == 0 and not np.any(self.a_int):
            raise InvalidArgumentError("degenerate operator: mu = kappa = 0 and a = 0")
        self.problem = problem
        return self

    def neumann_values(self):
        """Boundary flux data g at facet points (zero off Neumann facets)."""
        p = self.problem
        g = np.zeros(self.an.shape)
        mask = self.boundary & (self.tags == NEUMANN)
        if not mask.any():
            return g
        if p.neumann_data is not None:
            x = self.x_fac[mask]
            nrm = np.broadcast_to(self.normals[mask][:, None, :], x.shape)
            vals = p.neumann_data(x[..., 0], x[..., 1], nrm[..., 0], nrm[..., 1])
            g[mask] = np.broadcast_to(vals, x.shape[:-1])
            return g
        if self.u_fac is None:
            raise InvalidArgumentError("Neumann boundary needs neumann_data or an exact solution")
        dn = np.einsum("cfqd,cfd->cfq", self.grad_u_fac, self.normals)
        flux = -self.zeta * self.u_fac * self.an + p.kappa * dn
        g[mask] = flux[mask]
        return g


def _facet_term(weight, X, Y):
    """sum_q weight * X_i * Y_j over the three local facets -> (C, ntot, ntot)."""
    return np.einsum("cfqi,cfqj->cij", weight[..., None] * X, Y)


def _facet_vector(weight, X):
    return np.einsum("cfq,cfqi->ci", weight, X)


def _broadcast(cd, arr):
    return np.broadcast_to(arr, (cd.mesh.num_cells,) + arr.shape)


@dataclass(eq=False)
class LocalKernelOutput:
    """Cell-batched local blocks; leading axis is the cell."""

    cc: np.ndarray
    cf: np.ndarray
    fc: np.ndarray
    ff: np.ndarray
    c: np.ndarray
    f: np.ndarray


def advective_matrix(cd):
    """Local matrices of the advection-reaction form, shape (C, ntot, ntot)."""
    p = cd.problem
    C, nc = cd.mesh.num_cells, cd.nc
    M = np.zeros((C, cd.ntot, cd.ntot))
    if p.mu:
        M[:, :nc, :nc] += p.mu * np.einsum("cq,qi,qj->cij", cd.w_int, cd.phi, cd.phi, optimize=True)
    a_grad = np.einsum("cqd,cqid->cqi", cd.a_int, cd.grad_phi)
    M[:, :nc, :nc] -= np.einsum("cq,cqi,qj->cij", cd.w_int, a_grad, cd.phi, optimize=True)

    cell = _broadcast(cd, cd.cell_part)
    bar = _broadcast(cd, cd.facet_part)
    jump = _broadcast(cd, cd.jump_part)
    outflow = (1.0 - cd.zeta) * cd.an
    inflow = cd.zeta * cd.an
    M -= _facet_term(cd.w_fac * outflow, jump, cell)
    M -= _facet_term(cd.w_fac * inflow, jump, bar)
    M += _facet_term(cd.w_fac * outflow * cd.boundary[..., None], bar, bar)
    return M


def diffusive_matrix(cd, alpha):
    """Local matrices of the diffusive form, shape (C, ntot, ntot)."""
    p = cd.problem
    if not p.kappa > 0:
        raise InvalidArgumentError("diffusive kernel requires kappa > 0")
    kappa, nc = p.kappa, cd.nc
    M = np.zeros((cd.mesh.num_cells, cd.ntot, cd.ntot))
    M[:, :nc, :nc] += kappa * np.einsum("cq,cqid,cqjd->cij", cd.w_int, cd.grad_phi, cd.grad_phi, optimize=True)
    jump = _broadcast(cd, cd.jump_part)
    dn = cd.normal_derivative
    tau = alpha * kappa / cd.h
    M += kappa * _facet_term(cd.w_fac, jump, dn)
    M += _facet_term(cd.w_fac * tau[:, None, None], jump, jump)
    M += kappa * _facet_term(cd.w_fac, dn, jump)
    return M


def load_vector(cd):
    """Local load vectors, shape (C, ntot)."""
    b = np.zeros((cd.mesh.num_cells, cd.ntot))
    b[:, : cd.nc] = (cd.w_int * cd.f_int) @ cd.phi
    g = cd.neumann_values()
    if np.any(g):
        b += _facet_vector(cd.w_fac * g, _broadcast(cd, cd.facet_part))
    return b


def local_matrix(cd, alpha=None):
    """Full local operator B = B_A + B_D for the attached problem."""
    p = cd.problem
    M = advective_matrix(cd)
    if p.kappa > 0:
        M += diffusive_matrix(cd, p.penalty(cd.k) if alpha is None else alpha)
    return M


def _split(M, vec, nc):
    return LocalKernelOutput(
        cc=M[:, :nc, :nc], cf=M[:, :nc, nc:], fc=M[:, nc:, :nc], ff=M[:, nc:, nc:],
        c=vec[:, :nc], f=vec[:, nc:],
    )


def assemble_local_advective(cd):
    return _split(advective_matrix(cd), np.zeros((cd.mesh.num_cells, cd.ntot)), cd.nc)


def assemble_local_diffusive(cd, alpha=None):
    alpha = cd.problem.penalty(cd.k) if alpha is None else alpha
    return _split(diffusive_matrix(cd, alpha), np.zeros((cd.mesh.num_cells, cd.ntot)), cd.nc)


def assemble_load(cd):
    C = cd.mesh.num_cells
    return _split(np.zeros((C, cd.ntot, cd.ntot)), load_vector(cd), cd.nc)


@dataclass(eq=False)
class BlockSystem:
    """Coupled system over (cell dofs, free facet dofs).

    ``A_cc`` is stored as dense per-cell blocks; the ``local`` kernels and
    ``free_dofs`` (local facet slot -> free facet index or -1) are kept for
    static condensation and recovery.
    """

    A_cc: np.ndarray  # (C, nc, nc)
    A_cf: sps.csr_matrix
    A_fc: sps.csr_matrix
    A_ff: sps.csr_matrix
    b_c: np.ndarray  # (C, nc)
    b_f: np.ndarray  # (nfree,)
    local: LocalKernelOutput
    free_dofs: np.ndarray  # (C, 3 (k + 1))
    cell_space: object
    facet_space: object
    data: CellData

    @property
    def num_cell_dofs(self):
        return self.A_cc.shape[0] * self.A_cc.shape[1]

    @property
    def num_facet_dofs(self):
        return self.A_ff.shape[0]

    def full_matrix(self):
        """Sparse coupled matrix [[A_cc, A_cf], [A_fc, A_ff]]."""
        return sps.bmat([[sps.block_diag(list(self.A_cc), format="csr"), self.A_cf],
                         [self.A_fc, self.A_ff]], format="csr")

    def full_rhs(self):
        return np.concatenate([self.b_c.ravel(), self.b_f])


def scatter_facet_blocks(local, free_dofs, nfree, nc):
    """Scatter local cf/fc/ff blocks and facet loads into global sparse form."""
    C, nfl = free_dofs.shape
    cell_rows = np.arange(C * nc).reshape(C, nc)
    ok = free_dofs >= 0

    def coo(block, rows, cols, rmask, cmask, shape):
        mask = rmask[:, :, None] & cmask[:, None, :]
        r = np.broadcast_to(rows[:, :, None], block.shape)[mask]
        c = np.broadcast_to(cols[:, None, :], block.shape)[mask]
        return sps.coo_matrix((block[mask], (r, c)), shape=shape).tocsr()

    all_c = np.ones((C, nc), dtype=bool)
    A_cf = coo(local.cf, cell_rows, free_dofs, all_c, ok, (C * nc, nfree))
    A_fc = coo(local.fc, free_dofs, cell_rows, ok, all_c, (nfree, C * nc))
    A_ff = coo(local.ff, free_dofs, free_dofs, ok, ok, (nfree, nfree))
    b_f = np.bincount(free_dofs[ok], weights=local.f[ok], minlength=nfree)
    return A_cf, A_fc, A_ff, b_f


def assemble_system(mesh, cell_space, facet_space, problem, data=None):
    """Assemble the coupled system for ``problem``; Dirichlet facet dofs are removed."""
    if cell_space.k != facet_space.k or cell_space.mesh is not mesh or facet_space.mesh is not mesh:
        raise InvalidArgumentError("cell and facet spaces must share the mesh and order")
    cd = data if data is not None else CellData(mesh, cell_space.k, problem)
    if cd.problem is None:
        cd.attach(problem)
    M = local_matrix(cd)
    b = load_vector(cd)
    local = _split(M, b, cd.nc)
    free = facet_space.free_index[cd.facet_dofs(facet_space)]
    A_cf, A_fc, A_ff, b_f = scatter_facet_blocks(local, free, facet_space.free_dofs, cd.nc)
    return BlockSystem(
        A_cc=np.ascontiguousarray(local.cc), A_cf=A_cf, A_fc=A_fc, A_ff=A_ff,
        b_c=np.ascontiguousarray(local.c), b_f=b_f, local=local, free_dofs=free,
        cell_space=cell_space, facet_space=facet_space, data=cd,
    )


def eval_numerical_flux(data, u, u_bar, cell, local_facet, point, tol=1e-10):
    """Normal numerical flux seen from ``cell`` at a physical ``point`` on a facet.

    ``u`` and ``u_bar`` are cell and facet :class:`~istab.space.Field` objects.
    """
    mesh, p, k = data.mesh, data.problem, data.k
    point = np.asarray(point, dtype=float)
    a_id, b_id = mesh.cells[cell, LOCAL_FACET_VERTICES[local_facet]]
    A, B = mesh.vertices[a_id], mesh.vertices[b_id]
    d = B - A
    s = float(np.dot(point - A, d) / np.dot(d, d))
    off = abs(d[0] * (point - A)[1] - d[1] * (point - A)[0]) / np.hypot(*d)
    if off > tol * np.hypot(*d) or not -tol <= s <= 1 + tol:
        raise InvalidArgumentError(f"point {point.tolist()} is not on local facet {local_facet} of cell {cell}")
    ref = reference_facet_points(local_facet, np.array([s]))
    tab = tabulate_lagrange(TRIANGLE, k, ref)
    coeffs = u.cell_values()[cell]
    uh = float(tab.values[0] @ coeffs)
    grad = data.Jinv[cell].T @ (tab.gradients[0].T @ coeffs)
    e = mesh.cell_facets[cell, local_facet]
    fdofs = u_bar.space.dofmap[e]
    if mesh.cell_facet_flip[cell, local_facet]:
        fdofs = fdofs[::-1]
    ubar = float(tabulate_lagrange(SEGMENT, k, [s]).values[0] @ u_bar.coefficients[fdofs])
    n = data.normals[cell, local_facet]
    an = float(_interpolated_advection(data, cell, ref) @ n)
    zeta = float(eval_zeta(an))
    tau = p.penalty(k) * p.kappa / data.h[cell]
    return -an * uh + p.kappa * float(grad @ n) - (zeta * an - tau) * (ubar - uh)


def _interpolated_advection(data, cell, ref):
    m = data.k + DATA_ORDER_OFFSET
    space_vals = interpolate_cellwise(data.problem.advection, _single_cell_mesh(data.mesh, cell), m)
    tab = tabulate_lagrange(TRIANGLE, m, ref)
    return tab.values[0] @ space_vals.cell_values()[0]


def _single_cell_mesh(mesh, cell):
    from .mesh import build_mesh

    return build_mesh(mesh.vertices[mesh.cells[cell]], [[0, 1, 2]])


def global_matrix(cd, facet_space, M):
    """Scatter local (C, ntot, ntot) matrices into a sparse matrix over
    (cell dofs, free facet dofs)."""
    nc = cd.nc
    local = _split(M, np.zeros(M.shape[:2]), nc)
    free = facet_space.free_index[cd.facet_dofs(facet_space)]
    A_cf, A_fc, A_ff, _ = scatter_facet_blocks(local, free, facet_space.free_dofs, nc)
    A_cc = sps.block_diag(list(np.ascontiguousarray(local.cc)), format="csr")
    return sps.bmat([[A_cc, A_cf], [A_fc, A_ff]], format="csr")
