"""Bounded one-dimensional maximization over the model variance."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NonFiniteObjectiveError

INV_PHI = (math.sqrt(5) - 1) / 2
N_SCAN = 256
MAX_ITER = 500


@dataclass(frozen=True)
class MaximizeResult:
    a_hat: float
    value: float
    at_lower_boundary: bool
    at_upper_boundary: bool
    evaluations: int
    converged: bool


def scan_grid(a_max: float) -> np.ndarray:
    """``0`` followed by 256 log-spaced points on ``[1e-6 a_max, a_max]``."""
    grid = np.concatenate(([0.0], np.logspace(math.log10(a_max) - 6, math.log10(a_max), N_SCAN)))
    grid[-1] = a_max
    return grid


def golden_section(f, lo: float, hi: float, tol: float, atol: float = 0.0):
    """Maximize a function unimodal on ``[lo, hi]``.

    Stops when the bracket width is below ``tol * midpoint + atol``.
    Returns ``(x, f(x), evaluations, converged)``.
    """
    c = hi - INV_PHI * (hi - lo)
    d = lo + INV_PHI * (hi - lo)
    fc, fd = f(c), f(d)
    n = 2
    for _ in range(MAX_ITER):
        if hi - lo <= tol * 0.5 * (lo + hi) + atol:
            break
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - INV_PHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + INV_PHI * (hi - lo)
            fd = f(d)
        n += 1
    else:
        return (c, fc, n, False) if fc >= fd else (d, fd, n, False)
    return (c, fc, n, True) if fc >= fd else (d, fd, n, True)


def maximize_over_a(objective, a_max: float, tol: float = 1e-8, scan_objective=None) -> MaximizeResult:
    """Global maximizer of ``objective`` over ``[0, a_max]``.

    The objective is first evaluated on :func:`scan_grid`; the best grid
    point's neighbours bracket a golden-section refinement.  ``-inf`` is an
    acceptable objective value (e.g. a factor vanishing at zero), NaN and
    ``+inf`` are not.

    Parameters
    ----------
    objective : callable
        Scalar function of ``A``.
    a_max : float
        Upper end of the search interval.
    tol : float
        Relative width of the final bracket.
    scan_objective : callable, optional
        Vectorized version of ``objective`` used for the grid scan.
    """
    if not a_max > 0:
        raise ValueError("a_max must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = scan_grid(a_max)
    if scan_objective is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.asarray(scan_objective(grid), dtype=float)
    else:
        values = np.array([objective(a) for a in grid], dtype=float)
    bad = np.flatnonzero(np.isnan(values) | (values == np.inf))
    if bad.size:
        raise NonFiniteObjectiveError(float(grid[bad[0]]), float(values[bad[0]]))
    if np.all(values == -np.inf):
        raise NonFiniteObjectiveError(float(grid[0]), -math.inf)

    k = int(np.argmax(values))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]
    evaluations = grid.size
    # absolute floor keeps a bracket collapsing onto 0 finite
    atol = tol * 1e-6 * grid[1]
    x, fx, n, converged = golden_section(objective, lo, hi, tol, atol=atol)
    evaluations += n

    best_a, best_v = x, fx
    # a refinement that ran into an end of [0, a_max] is that end
    if lo == 0.0 and x <= 10.0 * atol and values[0] > -math.inf:
        best_a, best_v = 0.0, float(values[0])
    elif hi == a_max and x >= a_max * (1.0 - 2.0 * tol):
        best_a, best_v = float(a_max), float(values[-1])
    else:
        for edge in (lo, hi):
            v = values[np.searchsorted(grid, edge)]
            if v > best_v:
                best_a, best_v = float(edge), float(v)
    return MaximizeResult(
        a_hat=float(best_a),
        value=float(best_v),
        at_lower_boundary=bool(best_a == 0.0),
        at_upper_boundary=bool(best_a == a_max),
        evaluations=evaluations,
        converged=bool(converged),
    )
