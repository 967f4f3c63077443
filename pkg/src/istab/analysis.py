"""Error norms, convergence rates and verification probes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import (
    CellData,
    advective_matrix,
    diffusive_matrix,
    global_matrix,
)
from .element import TRIANGLE, segment_quadrature, tabulate_lagrange, triangle_quadrature
from .errors import CapabilityError, DegenerateNormError, InvalidArgumentError
from .mesh import DIRICHLET, LOCAL_FACET_VERTICES, NEUMANN
from .problems import ProblemSpec
from .solver import DENSE_DOF_CAP
from .space import build_facet_space, evaluate

HYPERBOLIC = "hyperbolic"
ELLIPTIC = "elliptic"


# ---------------------------------------------------------------------------
# field values at quadrature points


@dataclass(eq=False)
class PairValues:
    """A pair (v, v_bar) sampled at quadrature points.

    With ``basis=True`` every array carries a trailing axis over the combined
    local basis and quadratic quantities become local Gram matrices.
    """

    v: np.ndarray  # (C, nq)
    grad: np.ndarray  # (C, nq, 2)
    hess: np.ndarray  # (C, nq, 2, 2)
    trace: np.ndarray  # (C, 3, ns) cell-side trace of v
    bar: np.ndarray  # (C, 3, ns) v_bar
    basis: bool = False


def _cell_coefficients(field_):
    return field_.cell_values()


def _facet_local(cd, u_bar):
    dofs = cd.facet_dofs(u_bar.space).reshape(cd.mesh.num_cells, 3, cd.nf)
    return np.einsum("cfj,qj->cfq", u_bar.coefficients[dofs], cd.psi)


def pair_values(cd, u, u_bar):
    """Sample a discrete pair of :class:`~istab.space.Field` objects."""
    c = _cell_coefficients(u)
    return PairValues(
        v=c @ cd.phi.T,
        grad=np.einsum("cqnd,cn->cqd", cd.grad_phi, c),
        hess=np.einsum("cqnij,cn->cqij", cd.hess_phi, c),
        trace=np.einsum("fqn,cn->cfq", cd.phi_fac, c),
        bar=_facet_local(cd, u_bar),
    )


def error_values(cd, solution):
    """Order k + 6 interpolant of the exact solution minus the discrete pair."""
    if cd.u_int is None:
        raise InvalidArgumentError("error norms need a problem with an exact solution")
    h = pair_values(cd, solution.u, solution.u_bar)
    return PairValues(
        v=cd.u_int - h.v,
        grad=cd.grad_u_int - h.grad,
        hess=cd.hess_u_int - h.hess,
        trace=cd.u_fac - h.trace,
        bar=cd.u_fac - h.bar,
    )


def basis_values(cd):
    """The combined local basis as a :class:`PairValues` with ``basis=True``."""
    C, nq, nc, ntot = cd.mesh.num_cells, len(cd.phi), cd.nc, cd.ntot
    v = np.zeros((C, nq, ntot))
    v[:, :, :nc] = cd.phi
    grad = np.zeros((C, nq, 2, ntot))
    grad[..., :nc] = cd.grad_phi.transpose(0, 1, 3, 2)
    hess = np.zeros((C, nq, 2, 2, ntot))
    hess[..., :nc] = cd.hess_phi.transpose(0, 1, 3, 4, 2)
    trace = np.broadcast_to(cd.cell_part, (C,) + cd.cell_part.shape)
    bar = np.broadcast_to(cd.facet_part, (C,) + cd.facet_part.shape)
    return PairValues(v, grad, hess, trace, bar, basis=True)


def _sq(weight, X, basis, ncomp=0):
    """sum weight * |X|^2, or the Gram matrix when ``basis`` is set.

    ``ncomp`` trailing component axes (before the basis axis) are summed.
    """
    if not basis:
        return float(np.sum(weight * np.sum(X ** 2, axis=tuple(range(X.ndim - ncomp, X.ndim)))))
    lead = weight.ndim
    Xf = X.reshape(X.shape[:lead] + (-1, X.shape[-1]))
    axes = "abcd"[:lead]
    return np.einsum(f"{axes},{axes}ri,{axes}rj->aij", weight, Xf, Xf, optimize=True)


def _dot_a(cd, grad, basis):
    if basis:
        return np.einsum("cqd,cqdn->cqn", cd.a_int, grad)
    return np.einsum("cqd,cqd->cq", cd.a_int, grad)


def norm_terms(cd, pv, alpha=None):
    """Squared contributions of every norm term, keyed by name.

    Scalars for sampled fields, (C, ntot, ntot) Gram blocks for the basis.
    """
    p = cd.problem
    b = pv.basis
    an = np.abs(cd.an)
    h = cd.h
    out = {}
    w, wf = cd.w_int, cd.w_fac
    jump = pv.bar - pv.trace
    out["mass"] = _sq(w * p.mu, pv.v, b)
    out["streamline"] = _sq(w * h[:, None], _dot_a(cd, pv.grad, b), b)
    out["jump_upwind"] = _sq(wf * an, jump, b)
    out["boundary"] = _sq(wf * an * cd.boundary[..., None], pv.bar, b)
    out["inverse_h"] = _sq(w / h[:, None], pv.v, b)
    out["inflow_bar"] = _sq(wf * an * cd.zeta, pv.bar, b)
    out["outflow_trace"] = _sq(wf * an * (1.0 - cd.zeta), pv.trace, b)
    if p.kappa > 0:
        alpha = p.penalty(cd.k) if alpha is None else alpha
        out["gradient"] = _sq(w * p.kappa, pv.grad, b, ncomp=1)
        out["penalty"] = _sq(wf * (alpha * p.kappa / h)[:, None, None], jump, b)
        if alpha > 0:
            H = pv.hess
            comps = np.stack([H[:, :, 0, 0], H[:, :, 0, 1], H[:, :, 1, 1]], axis=2)
            out["second"] = _sq(w * (h ** 2 * p.kappa / alpha)[:, None], comps, b, ncomp=1)
    return out


_A = ("mass", "streamline", "jump_upwind", "boundary")
_APRIME = _A + ("inverse_h", "inflow_bar", "outflow_trace")
_D = ("gradient", "penalty")
_DPRIME = _D + ("second",)


def _combine(terms, names):
    return sum(terms[n] for n in names)


def norm_A(cd, pv):
    return float(np.sqrt(_combine(norm_terms(cd, pv), _A)))


def norm_Aprime(cd, pv):
    return float(np.sqrt(_combine(norm_terms(cd, pv), _APRIME)))


def norm_D(cd, pv, alpha=None):
    if not cd.problem.kappa > 0:
        raise InvalidArgumentError("diffusive norms need kappa > 0")
    return float(np.sqrt(_combine(norm_terms(cd, pv, alpha), _D)))


def norm_Dprime(cd, pv, alpha=None):
    alpha = cd.problem.penalty(cd.k) if alpha is None else alpha
    if not alpha > 0:
        raise InvalidArgumentError("the D' norm needs alpha > 0")
    if not cd.problem.kappa > 0:
        raise InvalidArgumentError("diffusive norms need kappa > 0")
    return float(np.sqrt(_combine(norm_terms(cd, pv, alpha), _DPRIME)))


def l2_error(cd, solution):
    pv = error_values(cd, solution)
    return float(np.sqrt(np.sum(cd.w_int * pv.v ** 2)))


@dataclass
class NormReport:
    err_L2: float
    err_A: float
    err_Aprime: float
    err_D: float
    err_Dprime: float
    h_max: float
    dofs: int

    @property
    def err_combined(self):
        return self.err_A + self.err_D


def error_report(cd, solution, dofs=None):
    """All error norms of ``solution`` against the attached exact solution."""
    pv = error_values(cd, solution)
    p = cd.problem
    terms = norm_terms(cd, pv)
    err_D = err_Dp = 0.0
    if p.kappa > 0:
        err_D = np.sqrt(_combine(terms, _D))
        err_Dp = np.sqrt(_combine(terms, _DPRIME)) if "second" in terms else np.nan
    return NormReport(
        err_L2=float(np.sqrt(np.sum(cd.w_int * pv.v ** 2))),
        err_A=float(np.sqrt(_combine(terms, _A))),
        err_Aprime=float(np.sqrt(_combine(terms, _APRIME))),
        err_D=float(err_D),
        err_Dprime=float(err_Dp),
        h_max=cd.mesh.h_max,
        dofs=int(solution.u_bar.space.free_dofs if dofs is None else dofs),
    )


def gram_matrix(cd, facet_space, names, alpha=None):
    """Sparse Gram matrix of a norm over (cell dofs, free facet dofs)."""
    terms = norm_terms(cd, basis_values(cd), alpha)
    return global_matrix(cd, facet_space, _combine(terms, names))


# ---------------------------------------------------------------------------
# verification probes


def local_conservation_check(cd, solution):
    """Max over cells of |int mu u - oint sigma_bar . n - int f|."""
    p = cd.problem
    pv = pair_values(cd, solution.u, solution.u_bar)
    dn = np.einsum("cfqd,cfd->cfq", _facet_gradients(cd, solution.u), cd.normals)
    tau = (p.penalty(cd.k) * p.kappa / cd.h)[:, None, None] if p.kappa > 0 else 0.0
    flux = -cd.an * pv.trace + p.kappa * dn - (cd.zeta * cd.an - tau) * (pv.bar - pv.trace)
    balance = (
        np.sum(cd.w_int * p.mu * pv.v, axis=1)
        - np.sum(cd.w_fac * flux, axis=(1, 2))
        - np.sum(cd.w_int * cd.f_int, axis=1)
    )
    return float(np.max(np.abs(balance)))


def _facet_gradients(cd, u):
    c = u.cell_values()
    return np.einsum("cfqnd,cn->cfqd", cd.grad_phi_fac, c)


def source_l2(cd):
    return float(np.sqrt(np.sum(cd.w_int * cd.f_int ** 2)))


def random_coefficients(rng, size):
    """Random discrete function: coefficients uniform in [-1, 1]."""
    return rng.uniform(-1.0, 1.0, size)


def coercivity_identity_A(cd, facet_space, vec):
    """Relative defect of B_A(v, v) against its closed form.

    ``vec`` holds cell dofs followed by free facet dofs.
    """
    if cd.problem.kappa != 0:
        raise InvalidArgumentError("the coercivity identity is stated for kappa = 0")
    B = global_matrix(cd, facet_space, advective_matrix(cd))
    lhs = float(vec @ (B @ vec))
    terms = norm_terms(cd, basis_values(cd))
    G = global_matrix(cd, facet_space, terms["mass"] + 0.5 * terms["jump_upwind"] + 0.5 * terms["boundary"])
    rhs = float(vec @ (G @ vec))
    return abs(lhs - rhs) / max(1.0, abs(lhs))


def _elliptic_problem(alpha):
    return ProblemSpec(
        mu=0.0, kappa=1.0, alpha=alpha, advection=lambda x, y: (0 * x, 0 * y),
        source=lambda x, y: 0 * x, boundary=DIRICHLET, name="elliptic_probe",
    )


def _advection_problem(mu=1.0, a=(0.8, 0.6)):
    return ProblemSpec(
        mu=mu, kappa=0.0, advection=lambda x, y: (a[0] + 0 * x, a[1] + 0 * y),
        source=lambda x, y: 0 * x, boundary=NEUMANN, name="advection_probe",
    )


def _check_dense(n_total):
    if n_total > DENSE_DOF_CAP:
        raise CapabilityError(f"{n_total} dofs exceed the dense cap of {DENSE_DOF_CAP}")


@dataclass
class ThresholdReport:
    alphas: list
    beta: list  # None where the norm degenerates
    flags: list = field(default_factory=list)


def coercivity_threshold_D(mesh, k, alphas, l=1):
    """min over v of B_D(v, v) / |||v|||_D^2 for each penalty in ``alphas``."""
    mesh = mesh.with_boundary_tags(DIRICHLET)
    fs = build_facet_space(mesh, k, l)
    cd = CellData(mesh, k)
    _check_dense(mesh.num_cells * cd.nc + fs.free_dofs)
    betas, flags = [], []
    for alpha in alphas:
        cd.attach(_elliptic_problem(alpha))
        B = global_matrix(cd, fs, diffusive_matrix(cd, alpha)).toarray()
        N = gram_matrix(cd, fs, _D, alpha).toarray()
        B = 0.5 * (B + B.T)
        try:
            vals = sla.eigh(B, N, eigvals_only=True, subset_by_index=[0, 0])
            betas.append(float(vals[0]))
            flags.append("ok" if vals[0] > 0 else "not coercive")
        except np.linalg.LinAlgError:
            betas.append(None)
            flags.append("degenerate norm")
    return ThresholdReport(list(alphas), betas, flags)


@dataclass
class InfSupReport:
    beta: float
    norm: str = "A"
    dofs: int = 0


def infsup_estimate(mesh, k, problem):
    """inf_v sup_w B_A(v, w) / (|||v|||_A |||w|||_A) over the discrete space."""
    if problem.kappa != 0:
        raise InvalidArgumentError("inf-sup estimate is for the hyperbolic limit (kappa = 0)")
    mesh = mesh.with_boundary_tags(problem.boundary)
    fs = build_facet_space(mesh, k, 1)
    cd = CellData(mesh, k, problem)
    _check_dense(mesh.num_cells * cd.nc + fs.free_dofs)
    B = global_matrix(cd, fs, advective_matrix(cd)).toarray()
    N = gram_matrix(cd, fs, _A).toarray()
    try:
        L = np.linalg.cholesky(0.5 * (N + N.T))
    except np.linalg.LinAlgError as exc:
        raise DegenerateNormError("|||.|||_A Gram matrix is not positive definite") from exc
    T = sla.solve_triangular(L, sla.solve_triangular(L, B.T, lower=True).T, lower=True)
    sigma = sla.svdvals(T)
    return InfSupReport(float(sigma.min()), "A", int(B.shape[0]))


def facet_control_constant(mesh, k):
    """max over cells of the largest h_K ||v_bar||^2 / (||v_bar - v||^2 + ||v||^2)."""
    problem = _advection_problem()
    cd = CellData(mesh, k, problem)
    bv = basis_values(cd)
    num = _sq(cd.w_fac * cd.h[:, None, None], bv.bar, True)
    den = _sq(cd.w_fac, bv.bar - bv.trace, True) + _sq(cd.w_int, bv.v, True)
    return float(max(sla.eigh(num[c], den[c], eigvals_only=True)[-1] for c in range(mesh.num_cells)))


# ---------------------------------------------------------------------------
# l = 0 reductions to classical discontinuous Galerkin forms


def condensed_cell_operator(cd, facet_space):
    """Eliminate facet unknowns: A_cc - A_cf A_ff^-1 A_fc (dense)."""
    M = advective_matrix(cd)
    if cd.problem.kappa > 0:
        M = M + diffusive_matrix(cd, cd.problem.penalty(cd.k))
    A = global_matrix(cd, facet_space, M).toarray()
    n = cd.mesh.num_cells * cd.nc
    Acc, Acf, Afc, Aff = A[:n, :n], A[:n, n:], A[n:, :n], A[n:, n:]
    return Acc - Acf @ np.linalg.solve(Aff, Afc)


class _CellEval:
    """Evaluate cell basis functions at physical points of a given cell."""

    def __init__(self, mesh, k):
        self.mesh, self.k = mesh, k
        self.J = mesh.jacobians()
        self.Jinv = np.linalg.inv(self.J)

    def __call__(self, cell, x):
        X0 = self.mesh.vertices[self.mesh.cells[cell, 0]]
        ref = (x - X0) @ self.Jinv[cell].T
        tab = tabulate_lagrange(TRIANGLE, self.k, ref)
        grads = np.einsum("ji,qnj->qni", self.Jinv[cell], tab.gradients)
        return tab.values, grads


def classical_dg_matrix(mesh, k, problem, regime):
    """Independent face-loop assembly of the classical DG forms on a broken P_k space.

    HYPERBOLIC: full-upwind DG with zero inflow data.
    ELLIPTIC: the symmetric interior penalty variant with penalty alpha/(2h)
    on interior facets, a gradient-jump term -h/(2 alpha), and Nitsche terms
    with penalty alpha/h on the (Dirichlet) boundary.
    """
    from .element import num_triangle_dofs

    nc = num_triangle_dofs(k)
    C = mesh.num_cells
    A = np.zeros((C * nc, C * nc))
    degree = 3 * k + 2
    tri = triangle_quadrature(degree)
    seg = segment_quadrature(degree)
    ev = _CellEval(mesh, k)
    J = ev.J
    detJ = np.abs(np.linalg.det(J))
    alpha = problem.penalty(k)

    def blk(a, b):
        return slice(a * nc, (a + 1) * nc), slice(b * nc, (b + 1) * nc)

    for c in range(C):
        X0 = mesh.vertices[mesh.cells[c, 0]]
        x = X0 + tri.points @ J[c].T
        w = tri.weights * detJ[c]
        phi, grad = ev(c, x)
        if regime == HYPERBOLIC:
            a = evaluate(problem.advection, x)
            adg = np.einsum("qd,qnd->qn", a, grad)
            A[blk(c, c)] += np.einsum("q,qi,qj->ij", w * problem.mu, phi, phi)
            A[blk(c, c)] -= np.einsum("q,qi,qj->ij", w, adg, phi)
        else:
            A[blk(c, c)] += np.einsum("q,qid,qjd->ij", w, grad, grad)

    for e, (va, vb) in enumerate(mesh.facets):
        A0, B0 = mesh.vertices[va], mesh.vertices[vb]
        x = A0 + np.outer(seg.points[:, 0], B0 - A0)
        length = np.linalg.norm(B0 - A0)
        w = seg.weights * length
        c0, c1 = mesh.facet_cells[e]
        local = list(mesh.cell_facets[c0]).index(e)
        n0 = _outward(mesh, c0, local)
        h = mesh.h_cell[c0]
        phi0, g0 = ev(c0, x)
        dn0 = g0 @ n0
        if regime == HYPERBOLIC:
            an0 = evaluate(problem.advection, x) @ n0
            if c1 < 0:
                # outflow side keeps its own trace; inflow data is zero
                A[blk(c0, c0)] += np.einsum("q,qi,qj->ij", w * an0 * (an0 >= 0), phi0, phi0)
                continue
            phi1, _ = ev(c1, x)
            out0 = an0 >= 0
            # cell 0 test functions: own trace on its outflow, cell 1 trace on inflow
            A[blk(c0, c0)] += np.einsum("q,qi,qj->ij", w * an0 * out0, phi0, phi0)
            A[blk(c0, c1)] += np.einsum("q,qi,qj->ij", w * an0 * ~out0, phi0, phi1)
            an1 = -an0
            A[blk(c1, c1)] += np.einsum("q,qi,qj->ij", w * an1 * (an1 >= 0), phi1, phi1)
            A[blk(c1, c0)] += np.einsum("q,qi,qj->ij", w * an1 * (an1 < 0), phi1, phi0)
            continue

        if c1 < 0:
            A[blk(c0, c0)] += (
                -np.einsum("q,qi,qj->ij", w, phi0, dn0)
                - np.einsum("q,qi,qj->ij", w, dn0, phi0)
                + alpha / h * np.einsum("q,qi,qj->ij", w, phi0, phi0)
            )
            continue
        phi1, g1 = ev(c1, x)
        n1 = -n0
        dn1 = g1 @ n1
        cells = (c0, c1)
        vals = (phi0, phi1)
        dns = (dn0, dn1)
        # jump [v] = v0 n0 + v1 n1; along n0 it reads v0 - v1, and average of
        # grad v dotted with n0 reads (dn0 - dn1) / 2. Gradient jump: dn0 + dn1.
        sign = (1.0, -1.0)
        for i in range(2):
            for j in range(2):
                r, s = blk(cells[i], cells[j])
                jv, jw = sign[i] * vals[i], sign[j] * vals[j]
                avg_v = 0.5 * sign[i] * dns[i]
                avg_w = 0.5 * sign[j] * dns[j]
                A[r, s] += (
                    -np.einsum("q,qi,qj->ij", w, jv, avg_w)
                    - np.einsum("q,qi,qj->ij", w, avg_v, jw)
                    + alpha / (2 * h) * np.einsum("q,qi,qj->ij", w, jv, jw)
                    - h / (2 * alpha) * np.einsum("q,qi,qj->ij", w, dns[i], dns[j])
                )
    return A


def _outward(mesh, cell, local_facet):
    a, b = mesh.cells[cell, LOCAL_FACET_VERTICES[local_facet]]
    d = mesh.vertices[b] - mesh.vertices[a]
    return np.array([d[1], -d[0]]) / np.hypot(*d)


def dg_equivalence_l0(mesh, k, regime, l=0, n_samples=10, seed=0, problem=None):
    """Max action defect between the condensed l = 0 operator and the classical form."""
    if l != 0:
        raise InvalidArgumentError("the classical DG reduction holds for l = 0 only")
    if problem is None:
        problem = _advection_problem() if regime == HYPERBOLIC else _elliptic_problem(5.0)
    if regime not in (HYPERBOLIC, ELLIPTIC):
        raise InvalidArgumentError(f"unknown regime {regime!r}")
    mesh = mesh.with_boundary_tags(NEUMANN if regime == HYPERBOLIC else DIRICHLET)
    if regime == ELLIPTIC and np.ptp(mesh.h_cell) > 1e-14 * mesh.h_max:
        raise InvalidArgumentError("the elliptic reduction assumes uniform h_K")
    fs = build_facet_space(mesh, k, 0)
    cd = CellData(mesh, k, problem)
    _check_dense(mesh.num_cells * cd.nc + fs.free_dofs)
    S = condensed_cell_operator(cd, fs)
    A = classical_dg_matrix(mesh, k, problem, regime)
    rng = np.random.default_rng(seed)
    defect = 0.0
    for _ in range(n_samples):
        x = random_coefficients(rng, S.shape[0])
        ref = A @ x
        defect = max(defect, np.max(np.abs(S @ x - ref)) / max(1.0, np.max(np.abs(ref))))
    return float(defect)


# ---------------------------------------------------------------------------
# convergence rates


def pairwise_rates(h, errors):
    """log(e_i / e_{i+1}) / log(h_i / h_{i+1}); None where an error is zero."""
    rates = []
    for i in range(len(h) - 1):
        if errors[i] > 0 and errors[i + 1] > 0:
            rates.append(float(np.log(errors[i] / errors[i + 1]) / np.log(h[i] / h[i + 1])))
        else:
            rates.append(None)
    return rates


def slope(h, errors, last=3):
    """Least-squares slope of log e against log h over the finest ``last`` meshes."""
    h = np.asarray(h[-last:], dtype=float)
    e = np.asarray(errors[-last:], dtype=float)
    if len(h) < 2:
        raise InvalidArgumentError("need at least two meshes for a rate")
    if np.any(e <= 0):
        return None
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)  # (k, n, NormReport)

    def series(self, k, name):
        rows = sorted((r for r in self.rows if r[0] == k), key=lambda r: -r[2].h_max)
        h = [r[2].h_max for r in rows]
        e = [getattr(r[2], name) for r in rows]
        return h, e

    def rates(self, k, name):
        h, e = self.series(k, name)
        return pairwise_rates(h, e)

    def slope(self, k, name, last=3):
        h, e = self.series(k, name)
        return slope(h, e, last)


def fit_rates(table, name, last=3):
    """Pairwise and least-squares rates of ``name`` for every order in ``table``."""
    out = {}
    for k in sorted({r[0] for r in table.rows}):
        out[k] = {"pairwise": table.rates(k, name), "slope": table.slope(k, name, last)}
    return out
