import numpy as np
import oracles
import pytest
from hypothesis import given
from hypothesis import strategies as st

from istab.assembly import (
    CellData,
    assemble_load,
    assemble_local_advective,
    assemble_local_diffusive,
    assemble_system,
    eval_numerical_flux,
    eval_zeta,
    quadrature_degree,
)
from istab.errors import InvalidArgumentError
from istab.mesh import DIRICHLET, NEUMANN, build_mesh, build_uniform_square_mesh
from istab.problems import ProblemSpec, constant_solution, hyperbolic_bey
from istab.space import Field, build_cell_space, build_facet_space, facet_trace_interpolate, interpolate_cellwise


def _zero(x, y):
    return 0 * x


def _problem(mu=0.0, kappa=0.0, a=(0.0, 0.0), alpha=0.0, boundary=NEUMANN, source=_zero, g=None):
    if callable(a):
        adv = a
    else:
        adv = lambda x, y: (a[0] + 0 * x, a[1] + 0 * y)  # noqa: E731
    g = g if g is not None else (lambda x, y, nx, ny: 0 * x)
    return ProblemSpec(mu=mu, kappa=kappa, advection=adv, source=source, alpha=alpha,
                       boundary=boundary, neumann_data=g)


def _setup(n, k, problem, l=1):
    mesh = build_uniform_square_mesh(n).with_boundary_tags(problem.boundary)
    cs = build_cell_space(mesh, k)
    fs = build_facet_space(mesh, k, l)
    return mesh, cs, fs, assemble_system(mesh, cs, fs, problem)


def _random_pairs(rng, cs, fs, count):
    for _ in range(count):
        w, v = rng.uniform(-1, 1, cs.total_dofs), rng.uniform(-1, 1, cs.total_dofs)
        wb, vb = rng.uniform(-1, 1, fs.total_dofs), rng.uniform(-1, 1, fs.total_dofs)
        wb[fs.dirichlet_dofs] = 0.0
        vb[fs.dirichlet_dofs] = 0.0
        yield w, wb, v, vb


def _free(fs, coeffs):
    return coeffs[fs.free_index >= 0]


@pytest.mark.parametrize("an, zeta", [(-0.3, 1), (0.0, 0), (2.0, 0), (-1e-300, 1)])
def test_eval_zeta(an, zeta):
    assert eval_zeta(np.array(an)) == zeta


def test_reaction_only_kernel_is_mass_matrix():
    mesh = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]]).with_boundary_tags(NEUMANN)
    cd = CellData(mesh, 2, _problem(mu=1.0))
    out = assemble_local_advective(cd)
    # P2 mass matrix on the unit right triangle in (v0, v1, v2, e12, e20, e01) order
    M = np.array([[6, -1, -1, -4, 0, 0], [-1, 6, -1, 0, -4, 0], [-1, -1, 6, 0, 0, -4],
                  [-4, 0, 0, 32, 16, 16], [0, -4, 0, 16, 32, 16], [0, 0, -4, 16, 16, 32]]) / 360.0
    lattice_order = [0, 5, 1, 4, 3, 2]
    np.testing.assert_allclose(out.cc[0], M[np.ix_(lattice_order, lattice_order)], atol=1e-15)
    assert not out.cf.any() and not out.fc.any() and not out.ff.any()


def test_constant_state_satisfies_the_discrete_equations():
    for k in (1, 2, 3):
        mesh, cs, fs, sys_ = _setup(3, k, constant_solution())
        ones = np.ones(cs.total_dofs + fs.free_dofs)
        np.testing.assert_allclose(sys_.full_matrix() @ ones, sys_.full_rhs(), atol=1e-13)


def test_advective_form_matches_oracle_single_square(rng):
    p = _problem(mu=0.0, a=(1.0, 0.0))
    mesh, cs, fs, sys_ = _setup(1, 1, p)
    A = sys_.full_matrix()
    for w, wb, v, vb in _random_pairs(rng, cs, fs, 10):
        ref = oracles.bilinear_form(mesh, cs, fs, p, w, wb, v, vb)
        got = np.concatenate([v, _free(fs, vb)]) @ A @ np.concatenate([w, _free(fs, wb)])
        assert got == pytest.approx(ref, rel=1e-13, abs=1e-13)


def test_diffusive_form_matches_oracle_single_square(rng):
    p = _problem(kappa=1.0, alpha=5.0, boundary=DIRICHLET)
    mesh, cs, fs, sys_ = _setup(1, 1, p)
    A = sys_.full_matrix()
    for w, wb, v, vb in _random_pairs(rng, cs, fs, 10):
        ref = oracles.bilinear_form(mesh, cs, fs, p, w, wb, v, vb)
        got = np.concatenate([v, _free(fs, vb)]) @ A @ np.concatenate([w, _free(fs, wb)])
        assert got == pytest.approx(ref, rel=1e-13, abs=1e-13)


def _curved(x, y):
    return 1.0 + 0.3 * y, 0.5 - 0.8 * x


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("kappa, boundary", [(0.0, NEUMANN), (0.7, NEUMANN), (0.7, DIRICHLET)])
def test_full_form_matches_oracle(k, kappa, boundary, rng):
    """Assembled v^T B w against a loop evaluation of the written form.

    The advection field changes sign along some facets; inflow/outflow is
    classified at quadrature points, so the oracle uses the same rule.
    """
    p = _problem(mu=0.6, kappa=kappa, a=_curved, alpha=5.0, boundary=boundary)
    mesh, cs, fs, sys_ = _setup(2, k, p)
    A = sys_.full_matrix()
    for w, wb, v, vb in _random_pairs(rng, cs, fs, 10):
        ref = oracles.bilinear_form(mesh, cs, fs, p, w, wb, v, vb, degree=quadrature_degree(k))
        got = np.concatenate([v, _free(fs, vb)]) @ A @ np.concatenate([w, _free(fs, wb)])
        assert abs(got - ref) <= 1e-12 * max(1.0, abs(ref))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_load_matches_oracle(k, rng):
    p = _problem(mu=1.0, a=(0.8, 0.6), source=lambda x, y: 1 + x * y - y ** 2,
                 g=lambda x, y, nx, ny: x - 2 * y * nx + ny)
    mesh, cs, fs, sys_ = _setup(2, k, p)
    b = sys_.full_rhs()
    for _, _, v, vb in _random_pairs(rng, cs, fs, 5):
        ref = oracles.linear_form(mesh, cs, fs, p, v, vb)
        assert np.concatenate([v, _free(fs, vb)]) @ b == pytest.approx(ref, rel=1e-12, abs=1e-13)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_diffusive_operator_symmetric(k):
    p = _problem(kappa=1.3, alpha=7.0, boundary=DIRICHLET)
    A = _setup(3, k, p)[3].full_matrix().toarray()
    assert np.max(np.abs(A - A.T)) <= 1e-13 * np.max(np.abs(A))


def test_diffusive_form_on_continuous_pairs():
    """For w = (w, trace w), v = (v, trace v) continuous only the volume term survives."""
    k = 2
    p = _problem(kappa=2.0, alpha=5.0)
    mesh, cs, fs, _ = _setup(2, k, p)
    cd = CellData(mesh, k, p)
    out = assemble_local_diffusive(cd)
    M = np.block([[out.cc, out.cf], [out.fc, out.ff]])
    fl = cd.facet_dofs(fs)

    def pair(f):
        u = interpolate_cellwise(f, mesh, k).cell_values()
        ub = facet_trace_interpolate(f, fs, constrain=False).coefficients
        return np.concatenate([u, ub[fl]], axis=1)

    W = pair(lambda x, y: x ** 2)
    V = pair(lambda x, y: x ** 2 / 2 + y)
    # kappa int grad w . grad v = 2 int_(-1,1)^2 2 x^2 = 16 / 3
    assert np.einsum("ci,cij,cj->", V, M, W) == pytest.approx(16 / 3, rel=1e-12)
    W = pair(lambda x, y: 1 + x - 3 * y)
    V = pair(lambda x, y: (x + 1) * y + y ** 2)
    # 2 int (1, -3) . (y, x + 1 + 2 y) = 2 * (-3) * 4
    assert np.einsum("ci,cij,cj->", V, M, W) == pytest.approx(-24.0, rel=1e-12)


def test_diffusive_kernel_requires_kappa():
    cd = CellData(build_uniform_square_mesh(1).with_boundary_tags(NEUMANN), 1, _problem(mu=1.0))
    with pytest.raises(InvalidArgumentError):
        assemble_local_diffusive(cd)


def test_load_examples():
    mesh = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]]).with_boundary_tags(NEUMANN)
    cd = CellData(mesh, 1, _problem(mu=1.0, source=lambda x, y: 1 + 0 * x, g=lambda x, y, nx, ny: 0 * x))
    np.testing.assert_allclose(assemble_load(cd).c[0], [1 / 6] * 3, atol=1e-15)
    assert not assemble_load(cd).f.any()
    cd0 = CellData(build_uniform_square_mesh(2).with_boundary_tags(NEUMANN), 2,
                   _problem(mu=1.0, g=lambda x, y, nx, ny: 0 * x))
    assert not assemble_load(cd0).c.any() and not assemble_load(cd0).f.any()


def test_hyperbolic_inflow_data():
    mesh = build_uniform_square_mesh(4).with_boundary_tags(NEUMANN)
    cd = CellData(mesh, 1, hyperbolic_bey())
    g = cd.neumann_values()
    inflow = cd.boundary[..., None] & (cd.an < 0)
    np.testing.assert_allclose(g[inflow], -cd.an[inflow], atol=1e-14)
    assert not g[~inflow].any()


def test_cell_block_structure():
    p = _problem(mu=1.0, kappa=0.5, a=_curved, alpha=5.0)
    mesh, cs, fs, sys_ = _setup(3, 2, p)
    A = sys_.full_matrix().tocoo()
    nc = cs.dofs_per_cell
    cell = (A.row < cs.total_dofs) & (A.col < cs.total_dofs)
    assert np.all(A.row[cell] // nc == A.col[cell] // nc)
    assert sys_.A_cc.shape == (mesh.num_cells, nc, nc)
    assert sys_.A_cf.shape == (cs.total_dofs, fs.free_dofs)


def test_assembly_is_deterministic():
    p = _problem(mu=1.0, kappa=0.5, a=_curved, alpha=5.0)
    a = _setup(3, 2, p)[3].full_matrix()
    b = _setup(3, 2, p)[3].full_matrix()
    assert (a != b).nnz == 0


def test_degenerate_operator_rejected():
    with pytest.raises(InvalidArgumentError):
        CellData(build_uniform_square_mesh(1).with_boundary_tags(NEUMANN), 1, _problem())


def _flux_setup(problem, k=2, n=2):
    mesh = build_uniform_square_mesh(n).with_boundary_tags(problem.boundary)
    cd = CellData(mesh, k, problem)
    return mesh, cd, build_cell_space(mesh, k), build_facet_space(mesh, k, 1)


def _facet_point(mesh, cell, i, t=0.3):
    from istab.mesh import LOCAL_FACET_VERTICES

    a, b = mesh.vertices[mesh.cells[cell, LOCAL_FACET_VERTICES[i]]]
    return a + t * (b - a)


@given(cell=st.integers(0, 7), i=st.integers(0, 2), t=st.floats(0, 1))
def test_numerical_flux_of_continuous_pair_is_physical(cell, i, t):
    p = _problem(mu=0.0, kappa=0.5, a=_curved, alpha=5.0)
    mesh, cd, cs, fs = _flux_setup(p)

    def f(x, y):
        return x * x - y + 0.5

    u = interpolate_cellwise(f, mesh, 2)
    ub = facet_trace_interpolate(f, fs, constrain=False)
    x = _facet_point(mesh, cell, i, t)
    n = mesh.cell_normals()[cell, i]
    a = np.array(_curved(*x))
    physical = -a @ n * f(*x) + 0.5 * np.array([2 * x[0], -1.0]) @ n
    assert eval_numerical_flux(cd, u, ub, cell, i, x) == pytest.approx(physical, abs=1e-12)


def test_numerical_flux_upwinding():
    p = _problem(mu=1.0, a=(0.8, 0.6))
    mesh, cd, cs, fs = _flux_setup(p)
    u = Field(cs, np.full(cs.total_dofs, 2.0))
    ub = Field(fs, np.full(fs.total_dofs, 5.0))
    seen = set()
    for c in range(mesh.num_cells):
        for i in range(3):
            an = mesh.cell_normals()[c, i] @ [0.8, 0.6]
            val = eval_numerical_flux(cd, u, ub, c, i, _facet_point(mesh, c, i))
            if an > 0:
                assert val == pytest.approx(-an * 2.0, abs=1e-13)
                seen.add("out")
            else:
                assert val == pytest.approx(-an * 5.0, abs=1e-13)
                seen.add("in")
    assert seen == {"in", "out"}


def test_numerical_flux_rejects_off_facet_point():
    mesh, cd, cs, fs = _flux_setup(_problem(mu=1.0, a=(0.8, 0.6)))
    u, ub = Field(cs, np.zeros(cs.total_dofs)), Field(fs, np.zeros(fs.total_dofs))
    centroid = mesh.vertices[mesh.cells[0]].mean(0)
    with pytest.raises(InvalidArgumentError):
        eval_numerical_flux(cd, u, ub, 0, 0, centroid)
