"""Single solves and h-refinement sweeps."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .analysis import ConvergenceTable, error_report, local_conservation_check
from .assembly import CellData, assemble_system
from .mesh import RIGHT, build_uniform_square_mesh
from .solver import solve
from .space import build_cell_space, build_facet_space

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Case:
    problem: object
    n: int
    k: int
    l: int
    mesh: object
    data: CellData
    system: object
    solution: object
    report: object  # NormReport, or None without an exact solution
    conservation_defect: float

    @property
    def alpha(self):
        return self.problem.penalty(self.k)


def solve_case(problem, n, k, l=1, diagonal=RIGHT):
    mesh = build_uniform_square_mesh(n, problem.domain, diagonal).with_boundary_tags(problem.boundary)
    cs = build_cell_space(mesh, k)
    fs = build_facet_space(mesh, k, l)
    cd = CellData(mesh, k, problem)
    system = assemble_system(mesh, cs, fs, problem, data=cd)
    solution = solve(system)
    report = error_report(cd, solution) if problem.exact is not None else None
    defect = local_conservation_check(cd, solution)
    logger.info("%s k=%d n=%d: %s", problem.name, k, n, report)
    return Case(problem, n, k, l, mesh, cd, system, solution, report, defect)


def convergence_study(problem, k_list, n_list, l=1, diagonal=RIGHT, threads=1):
    """Solve every (k, n); returns (table, cases) with cases in canonical order.

    Rows are produced in (k, n) order regardless of completion order.
    """
    items = [(k, n) for k in k_list for n in n_list]

    def run(item):
        k, n = item
        case = solve_case(problem, n, k, l, diagonal)
        # drop heavy arrays; the sweep keeps only scalars
        case.data = case.system = None
        return case

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cases = list(pool.map(run, items))
    else:
        cases = [run(item) for item in items]
    table = ConvergenceTable([(c.k, c.n, c.report) for c in cases])
    return table, cases
