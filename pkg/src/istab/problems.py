"""Problem data for the advection-diffusion-reaction equation

    mu u + a . grad u - kappa lap u = f,

and the benchmark presets on (-1, 1)^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import InvalidArgumentError
from .mesh import DIRICHLET, NEUMANN

FOUR_K_SQUARED = "four_k_squared"

SQUARE = (-1.0, 1.0, -1.0, 1.0)


@dataclass
class ProblemSpec:
    """Coefficients and data of one boundary value problem.

    ``advection`` and ``source`` are vectorised callables of ``(x, y)``;
    ``advection`` returns a pair of arrays. ``neumann_data`` takes
    ``(x, y, nx, ny)``; when it is None the boundary flux is derived from the
    interpolated exact solution as ``-zeta u a.n + kappa grad u . n``.
    ``alpha`` is a number or ``FOUR_K_SQUARED``.
    """

    mu: float
    kappa: float
    advection: Callable
    source: Callable
    alpha: Union[float, str] = 0.0
    exact: Optional[Callable] = None
    neumann_data: Optional[Callable] = None
    boundary: Union[int, Callable] = DIRICHLET
    domain: tuple = SQUARE
    name: str = "custom"
    divergence_free: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mu < 0 or self.kappa < 0:
            raise InvalidArgumentError("mu and kappa must be non-negative")
        if self.alpha != FOUR_K_SQUARED:
            try:
                ok = float(self.alpha) >= 0
            except (TypeError, ValueError):
                ok = False
            if not ok:
                raise InvalidArgumentError(
                    f"alpha must be >= 0 or {FOUR_K_SQUARED!r}, got {self.alpha!r}")
        if self.kappa == 0 and not callable(self.boundary) and self.boundary != NEUMANN:
            raise InvalidArgumentError("kappa = 0 admits no Dirichlet boundary")

    def penalty(self, k):
        if self.alpha == FOUR_K_SQUARED:
            return 4.0 * k * k
        return float(self.alpha)


def hyperbolic_bey():
    """mu = 1, a = (0.8, 0.6), kappa = 0, u = 1 on the inflow boundary."""
    ax, ay = 0.8, 0.6

    def exact(x, y):
        return 1.0 + np.sin(np.pi * (1 + x) * (1 + y) ** 2 / 8)

    def source(x, y):
        c = np.cos(np.pi * (1 + x) * (1 + y) ** 2 / 8) * np.pi / 8
        ux = c * (1 + y) ** 2
        uy = c * 2 * (1 + x) * (1 + y)
        return exact(x, y) + ax * ux + ay * uy

    def inflow(x, y, nx, ny):
        an = ax * nx + ay * ny
        return np.where(an < 0, -an, 0.0)

    return ProblemSpec(
        mu=1.0, kappa=0.0, advection=lambda x, y: (ax + 0 * x, ay + 0 * y), source=source,
        alpha=0.0, exact=exact, neumann_data=inflow, boundary=NEUMANN, name="hyperbolic_bey",
    )


def _sine(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def elliptic_sine(alpha=5.0):
    """Poisson problem with u = sin(pi x) sin(pi y) and homogeneous Dirichlet data."""
    return ProblemSpec(
        mu=0.0, kappa=1.0, advection=lambda x, y: (0 * x, 0 * y),
        source=lambda x, y: 2 * np.pi ** 2 * _sine(x, y),
        alpha=alpha, exact=_sine, boundary=DIRICHLET, name="elliptic_sine",
    )


def exp_field(x, y):
    """Divergence-free field (e^x (y cos y + sin y), -e^x y sin y).

    This is the curl of the stream function e^x y sin y. With a plus sign on
    the second component the field would have divergence
    2 e^x (y cos y + sin y).
    """
    ex = np.exp(x)
    return ex * (y * np.cos(y) + np.sin(y)), -ex * y * np.sin(y)


def advdiff_exp(kappa, alpha=FOUR_K_SQUARED):
    def source(x, y):
        ax, ay = exp_field(x, y)
        ux = np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)
        uy = np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
        return ax * ux + ay * uy + 2 * kappa * np.pi ** 2 * _sine(x, y)

    return ProblemSpec(
        mu=0.0, kappa=float(kappa), advection=exp_field, source=source,
        alpha=alpha, exact=_sine, boundary=DIRICHLET, name="advdiff_exp",
    )


def constant_solution(a=(0.8, 0.6), mu=1.0):
    """u = 1 with kappa = 0; the discrete solution must be exactly 1."""
    ax, ay = a

    def inflow(x, y, nx, ny):
        an = ax * nx + ay * ny
        return np.where(an < 0, -an, 0.0)

    return ProblemSpec(
        mu=mu, kappa=0.0, advection=lambda x, y: (ax + 0 * x, ay + 0 * y),
        source=lambda x, y: mu + 0 * x, exact=lambda x, y: 1.0 + 0 * x,
        neumann_data=inflow, boundary=NEUMANN, name="constant",
    )


def manufactured(u, advection=("0", "0"), mu=0.0, kappa=0.0, alpha=0.0,
                 boundary=None, name="custom", domain=SQUARE):
    """Build a problem whose exact solution is the expression ``u``.

    Expressions are strings (or sympy expressions) in ``x`` and ``y``. The
    source ``mu u + div(a u) - kappa lap u`` is derived symbolically; boundary flux data is derived from the
    interpolated solution. The boundary defaults to Dirichlet for
    ``kappa > 0`` and to Neumann otherwise.
    """
    import sympy as sp

    x, y = sp.symbols("x y")
    ue = sp.sympify(u)
    ae = [sp.sympify(c) for c in advection]
    # conservative form div(a u), which is what the advective form discretises
    fe = mu * ue + sp.diff(ae[0] * ue, x) + sp.diff(ae[1] * ue, y) - kappa * (
        sp.diff(ue, x, 2) + sp.diff(ue, y, 2)
    )
    div = sp.simplify(sp.diff(ae[0], x) + sp.diff(ae[1], y))

    def vectorise(expr):
        fn = sp.lambdify((x, y), expr, "numpy")
        return lambda X, Y: np.asarray(fn(X, Y), dtype=float) + 0 * X

    a0, a1 = vectorise(ae[0]), vectorise(ae[1])
    if boundary is None:
        boundary = DIRICHLET if kappa > 0 else NEUMANN
    return ProblemSpec(
        mu=float(mu), kappa=float(kappa), advection=lambda X, Y: (a0(X, Y), a1(X, Y)),
        source=vectorise(fe), alpha=alpha, exact=vectorise(ue), boundary=boundary,
        name=name, domain=tuple(domain), divergence_free=(div == 0),
        meta={"u": str(ue), "a": [str(c) for c in ae], "f": str(fe)},
    )
