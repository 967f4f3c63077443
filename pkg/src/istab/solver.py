"""Static condensation onto facet unknowns, sparse solve and cell recovery."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import CapabilityError, CondensationError, SolveError
from .space import Field

logger = logging.getLogger(__name__)

PIVOT_RATIO_WARNING = 1e12
DENSE_DOF_CAP = 5000


class IllConditionedBlockWarning(RuntimeWarning):
    pass


@dataclass(eq=False)
class CondensedSystem:
    S: sps.csr_matrix
    rhs: np.ndarray
    factors: list  # per-cell (lu, piv)
    system: object


@dataclass(eq=False)
class Solution:
    u: Field
    u_bar: Field
    stats: dict = field(default_factory=dict)


def _factorize(block, cell):
    if not np.isfinite(block).all():
        raise CondensationError(cell, "non-finite entries in cell block")
    with warnings.catch_warnings():
        # exact zero pivots are reported below with the cell id
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(block, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min() == 0.0 or not np.isfinite(pivots).all():
        raise CondensationError(cell, "singular cell block")
    ratio = pivots.max() / pivots.min()
    if ratio > 1e15:
        raise CondensationError(cell, f"numerically singular cell block (pivot ratio {ratio:.3e})")
    if ratio > PIVOT_RATIO_WARNING:
        warnings.warn(f"cell {cell}: pivot ratio {ratio:.3e}", IllConditionedBlockWarning, stacklevel=3)
    return lu, piv


def static_condense(sys):
    """Eliminate cell unknowns cell by cell: S = A_ff - A_fc A_cc^-1 A_cf."""
    loc = sys.local
    C, nc = sys.A_cc.shape[:2]
    factors = []
    schur = np.empty_like(loc.ff)
    rhs_local = np.empty_like(loc.f)
    for c in range(C):
        lu = _factorize(sys.A_cc[c], c)
        factors.append(lu)
        X = sla.lu_solve(lu, np.column_stack([loc.cf[c], loc.c[c]]), check_finite=False)
        schur[c] = loc.ff[c] - loc.fc[c] @ X[:, :-1]
        rhs_local[c] = loc.f[c] - loc.fc[c] @ X[:, -1]
    free = sys.free_dofs
    ok = free >= 0
    mask = ok[:, :, None] & ok[:, None, :]
    rows = np.broadcast_to(free[:, :, None], schur.shape)[mask]
    cols = np.broadcast_to(free[:, None, :], schur.shape)[mask]
    nfree = sys.num_facet_dofs
    S = sps.coo_matrix((schur[mask], (rows, cols)), shape=(nfree, nfree)).tocsr()
    rhs = np.bincount(free[ok], weights=rhs_local[ok], minlength=nfree)
    return CondensedSystem(S, rhs, factors, sys)


def solve_condensed(cs):
    """Direct sparse LU solve of the condensed facet system.

    Returns ``(x, stats)``.
    """
    n = cs.S.shape[0]
    if n == 0:
        return np.zeros(0), {"residual": 0.0, "facet_dofs": 0}
    try:
        lu = spla.splu(cs.S.tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolveError(f"condensed system is singular: {exc}") from exc
    udiag = np.abs(lu.U.diagonal())
    if udiag.min() <= 1e-14 * udiag.max():
        raise SolveError(f"condensed system is numerically singular (pivot ratio {udiag.max() / max(udiag.min(), 1e-300):.3e})")
    x = lu.solve(cs.rhs)
    if not np.isfinite(x).all():
        raise SolveError("non-finite facet solution")
    bnorm = np.linalg.norm(cs.rhs)
    res = np.linalg.norm(cs.S @ x - cs.rhs) / (bnorm if bnorm > 0 else 1.0)
    if res > 1e-10:
        raise SolveError(f"condensed residual {res:.3e} exceeds 1e-10")
    return x, {"residual": float(res), "facet_dofs": int(n)}


def recover_cell_solution(cs, u_bar_free):
    """Per cell: u_K = A_cc^-1 (b_c - A_cf u_bar_K)."""
    sys = cs.system
    free = sys.free_dofs
    ub = np.where(free >= 0, u_bar_free[np.maximum(free, 0)], 0.0)
    C, nc = sys.A_cc.shape[:2]
    u = np.empty((C, nc))
    for c in range(C):
        u[c] = sla.lu_solve(cs.factors[c], sys.local.c[c] - sys.local.cf[c] @ ub[c], check_finite=False)
    return Field(sys.cell_space, u.ravel())


def expand_facet(facet_space, u_bar_free):
    coeffs = np.zeros(facet_space.total_dofs)
    mask = facet_space.free_index >= 0
    coeffs[mask] = u_bar_free[facet_space.free_index[mask]]
    return Field(facet_space, coeffs)


def solve(sys):
    """Condense, solve for facet unknowns and recover the cell field."""
    cs = static_condense(sys)
    x, stats = solve_condensed(cs)
    u = recover_cell_solution(cs, x)
    A = sys.full_matrix()
    rhs = sys.full_rhs()
    vec = np.concatenate([u.coefficients, x])
    bnorm = np.linalg.norm(rhs)
    stats["full_residual"] = float(np.linalg.norm(A @ vec - rhs) / (bnorm if bnorm > 0 else 1.0))
    stats["cell_dofs"] = int(u.coefficients.size)
    logger.debug("solved: %s", stats)
    return Solution(u, expand_facet(sys.facet_space, x), stats)


def solve_full(sys):
    """Dense LU of the whole coupled system; verification oracle only."""
    ndofs = sys.num_cell_dofs + sys.num_facet_dofs
    if ndofs > DENSE_DOF_CAP:
        raise CapabilityError(f"{ndofs} dofs exceed the dense cap of {DENSE_DOF_CAP}")
    A = sys.full_matrix().toarray()
    rhs = sys.full_rhs()
    lu, piv = sla.lu_factor(A, check_finite=False)
    rcond, info = sla.lapack.dgecon(lu, np.linalg.norm(A, 1), norm="1")
    if info != 0 or rcond < 1e-14:
        raise SolveError(f"full system is singular (rcond {rcond:.3e})")
    x = sla.lu_solve((lu, piv), rhs, check_finite=False)
    nc = sys.num_cell_dofs
    bnorm = np.linalg.norm(rhs)
    res = np.linalg.norm(A @ x - rhs) / (bnorm if bnorm > 0 else 1.0)
    return Solution(
        Field(sys.cell_space, x[:nc]),
        expand_facet(sys.facet_space, x[nc:]),
        {"residual": float(res), "rcond": float(rcond)},
    )
