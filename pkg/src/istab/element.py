"""Reference-element quadrature and equispaced Lagrange bases.

Reference triangle: vertices (0, 0), (1, 0), (0, 1). Reference segment: [0, 1].
Triangle basis functions are written in product form over barycentric
coordinates, which keeps evaluation exact in rational node positions and
avoids a Vandermonde inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, factorial

import numpy as np
from scipy.special import roots_jacobi

from .errors import CapabilityError, InvalidArgumentError

TRIANGLE = "triangle"
SEGMENT = "segment"

MAX_QUADRATURE_DEGREE = 39


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray  # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    exact_degree: int


@dataclass(frozen=True, eq=False)
class BasisTabulation:
    order: int
    values: np.ndarray  # (npts, ndofs)
    gradients: np.ndarray  # (npts, ndofs, dim)
    hessians: np.ndarray  # (npts, ndofs, dim, dim)


def _check_degree(degree):
    if int(degree) != degree or degree < 0:
        raise InvalidArgumentError(f"quadrature degree must be a non-negative integer, got {degree!r}")
    if degree > MAX_QUADRATURE_DEGREE:
        raise CapabilityError(f"quadrature degree {degree} exceeds cap {MAX_QUADRATURE_DEGREE}")
    return int(degree)


def segment_quadrature(degree):
    """Gauss-Legendre rule on [0, 1] exact to ``degree``."""
    degree = _check_degree(degree)
    npts = max(1, ceil((degree + 1) / 2))
    x, w = np.polynomial.legendre.leggauss(npts)
    return QuadratureRule(0.5 * (x + 1.0)[:, None], 0.5 * w, degree)


def triangle_quadrature(degree):
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule exact to ``degree``."""
    degree = _check_degree(degree)
    npts = max(1, ceil((degree + 1) / 2))
    # x-direction carries the (1 - x) Jacobian of the collapse as a Jacobi weight
    tx, wx = roots_jacobi(npts, 1.0, 0.0)
    ty, wy = np.polynomial.legendre.leggauss(npts)
    x = 0.5 * (tx + 1.0)
    wx = 0.25 * wx
    eta = 0.5 * (ty + 1.0)
    wy = 0.5 * wy
    X = np.repeat(x, npts)
    Y = np.outer(1.0 - x, eta).ravel()
    W = np.outer(wx, wy).ravel()
    return QuadratureRule(np.column_stack([X, Y]), W, degree)


def monomial_integral_triangle(a, b):
    """Exact integral of x**a * y**b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def lattice(k):
    """Equispaced triangle nodes as integer multi-indices (i, j), x = i/k, y = j/k."""
    return np.array([(i, j) for j in range(k + 1) for i in range(k + 1 - j)], dtype=int)


def triangle_nodes(k):
    return lattice(k) / float(k)


def segment_nodes(k):
    return np.arange(k + 1) / float(k)


def _silvester(k, z, m):
    """R_m(z) = prod_{s<m} (k z - s) / (s + 1) and its first two derivatives."""
    val = np.ones_like(z)
    d1 = np.zeros_like(z)
    d2 = np.zeros_like(z)
    for s in range(m):
        fac = (k * z - s) / (s + 1)
        dfac = k / (s + 1)
        d2 = d2 * fac + 2.0 * d1 * dfac
        d1 = d1 * fac + val * dfac
        val = val * fac
    return val, d1, d2


def _tabulate_triangle(k, points):
    x, y = points[:, 0], points[:, 1]
    lam = (1.0 - x - y, x, y)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    idx = lattice(k)
    exps = np.column_stack([k - idx.sum(axis=1), idx[:, 0], idx[:, 1]])
    npts, ndofs = len(points), len(idx)
    vals = np.empty((npts, ndofs))
    grads = np.zeros((npts, ndofs, 2))
    hess = np.zeros((npts, ndofs, 2, 2))
    cache = {}
    for p in range(3):
        for m in range(k + 1):
            cache[p, m] = _silvester(k, lam[p], m)
    outer = np.einsum("pi,qj->pqij", dlam, dlam)
    for n, e in enumerate(exps):
        R = [cache[p, e[p]] for p in range(3)]
        v = [r[0] for r in R]
        vals[:, n] = v[0] * v[1] * v[2]
        for p in range(3):
            others = np.prod([v[q] for q in range(3) if q != p], axis=0)
            grads[:, n] += (R[p][1] * others)[:, None] * dlam[p]
            hess[:, n] += (R[p][2] * others)[:, None, None] * outer[p, p]
            for q in range(3):
                if q == p:
                    continue
                rest = v[3 - p - q]
                hess[:, n] += (R[p][1] * R[q][1] * rest)[:, None, None] * outer[p, q]
    return vals, grads, hess


def _tabulate_segment(k, points):
    t = points[:, 0] if points.ndim == 2 else points
    lam = (1.0 - t, t)
    dlam = (-1.0, 1.0)
    npts = len(t)
    vals = np.empty((npts, k + 1))
    grads = np.empty((npts, k + 1, 1))
    hess = np.empty((npts, k + 1, 1, 1))
    for j in range(k + 1):
        r0 = _silvester(k, lam[0], k - j)
        r1 = _silvester(k, lam[1], j)
        vals[:, j] = r0[0] * r1[0]
        grads[:, j, 0] = dlam[0] * r0[1] * r1[0] + dlam[1] * r0[0] * r1[1]
        hess[:, j, 0, 0] = r0[2] * r1[0] - 2.0 * r0[1] * r1[1] + r0[0] * r1[2]
    return vals, grads, hess


def tabulate_lagrange(entity, k, points):
    """Nodal basis of order ``k`` on the reference ``entity`` at ``points``.

    Triangle nodes follow :func:`lattice`; segment nodes are ``j / k`` in
    ascending order. Gradients and Hessians are with respect to reference
    coordinates.
    """
    if int(k) != k or k < 1:
        raise InvalidArgumentError(f"Lagrange order must be >= 1, got {k!r}")
    k = int(k)
    points = np.asarray(points, dtype=float)
    if entity == TRIANGLE:
        points = np.atleast_2d(points)
        vals, grads, hess = _tabulate_triangle(k, points)
    elif entity == SEGMENT:
        points = np.atleast_1d(points)
        vals, grads, hess = _tabulate_segment(k, points)
    else:
        raise InvalidArgumentError(f"unknown entity {entity!r}")
    return BasisTabulation(k, vals, grads, hess)


def num_triangle_dofs(k):
    return (k + 1) * (k + 2) // 2
