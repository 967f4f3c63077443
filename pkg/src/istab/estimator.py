"""scikit-learn style facade over a single interface-stabilised solve."""

from __future__ import annotations

import dataclasses

from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import InvalidArgumentError
from .mesh import RIGHT
from .problems import ProblemSpec
from .space import point_values
from .study import solve_case


class InterfaceStabilisedSolver(RegressorMixin, BaseEstimator):
    """Solve a :class:`ProblemSpec` on a uniform triangulation of its domain.

    Parameters
    ----------
    k : int
        Polynomial order of the cell and facet spaces.
    l : int
        Facet continuity: 1 for continuous facet functions, 0 for
        facet-wise discontinuous ones.
    n : int
        Squares per side of the uniform triangulation.
    alpha : float, str or None
        Penalty override; ``None`` keeps the problem's own value.
    diagonal : {"right", "left"}
        Diagonal used to split each square.

    Attributes
    ----------
    mesh_, solution_, report_, conservation_defect_
        Set by :meth:`fit`. ``report_`` is None without an exact solution.

    Examples
    --------
    >>> from istab.problems import elliptic_sine
    >>> est = InterfaceStabilisedSolver(k=2, n=4).fit(elliptic_sine())
    >>> est.predict([[0.5, 0.5]]).shape
    (1,)
    """

    def __init__(self, k=1, l=1, n=8, alpha=None, diagonal=RIGHT):
        self.k = k
        self.l = l
        self.n = n
        self.alpha = alpha
        self.diagonal = diagonal

    def fit(self, X, y=None):
        """Assemble and solve the problem ``X`` (a ProblemSpec); ``y`` is ignored."""
        if not isinstance(X, ProblemSpec):
            raise InvalidArgumentError("fit expects a ProblemSpec")
        problem = X if self.alpha is None else dataclasses.replace(X, alpha=self.alpha)
        case = solve_case(problem, self.n, self.k, self.l, self.diagonal)
        self.problem_ = problem
        self.mesh_ = case.mesh
        self.solution_ = case.solution
        self.report_ = case.report
        self.conservation_defect_ = case.conservation_defect
        return self

    def predict(self, X):
        """Cell field u_h at the points ``X`` of shape (m, 2)."""
        check_is_fitted(self, "solution_")
        X = check_array(X)
        if X.shape[1] != 2:
            raise InvalidArgumentError(f"points must have 2 columns, got {X.shape[1]}")
        return point_values(self.solution_.u, X)
