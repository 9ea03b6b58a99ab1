"""Adjustment factors multiplying the residual likelihood.

A factor is stored through its logarithm ``log_h(A) = log L(A)``.  Factors may
be composite: a *base* part (whose derivative carries the weight function of
the MSE estimator) plus an optional *additional* part that is small for many
areas and vanishes at ``A = 0`` to keep the maximizer off the boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import InvalidAdditionalFactorError
from .model import Dataset

_SCALARS = (float, int, np.floating, np.integer)
LogFn = Callable[[np.ndarray], np.ndarray]


def _zero(a):
    return np.zeros_like(np.asarray(a, dtype=float))


@dataclass(frozen=True)
class AdjustmentFactor:
    """Log-adjustment ``A -> log L(A)``, vectorized over ``A``.

    Attributes
    ----------
    base : callable
        Base log-factor.  For factors built from a weight ``c`` this is the part
        whose slope equals ``(2 - c(A)) / (A + D_i)``.
    label : str
        Method name used in reports.
    vanishes_at_zero : bool
        True iff the full factor ``L(0) = 0``.
    area : int or None
        Area index for per-area factors, ``None`` for global ones.
    add : AdjustmentFactor or None
        Additional factor multiplied onto the base.
    family : callable or None
        ``k -> AdjustmentFactor`` rebuilding the factor on the design
        replicated ``k`` times; lets :func:`validate_factor` probe how the
        factor behaves as the number of areas grows.
    """

    base: LogFn
    label: str
    vanishes_at_zero: bool = False
    area: Optional[int] = None
    add: Optional["AdjustmentFactor"] = None
    family: Optional[Callable[[int], "AdjustmentFactor"]] = field(default=None, repr=False, compare=False)

    @property
    def is_global(self) -> bool:
        return self.area is None

    def log_h(self, a):
        if isinstance(a, _SCALARS):
            a = float(a)
            if a <= 0.0 and self.vanishes_at_zero:
                return -math.inf
            out = float(self.base(a))
            if self.add is not None:
                out += self.add.log_h(a)
            return out
        a = np.asarray(a, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.asarray(self.base(a), dtype=float)
            if self.add is not None:
                out = out + self.add.log_h(a)
        return out

    def base_log_h(self, a):
        scalar = np.ndim(a) == 0
        a = np.atleast_1d(np.asarray(a, dtype=float))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.asarray(self.base(a), dtype=float)
        return float(out[0]) if scalar else out

    def __call__(self, a):
        return self.log_h(a)


#: log-factor identically zero, i.e. plain (unadjusted) likelihood
NO_ADJUSTMENT = AdjustmentFactor(_zero, "none")


def factor_ll() -> AdjustmentFactor:
    """``L(A) = A``."""
    return AdjustmentFactor(np.log, "ll", vanishes_at_zero=True, family=lambda k: factor_ll())


def _yl_from_d(d: np.ndarray) -> LogFn:
    d = np.asarray(d, dtype=float)
    m = d.shape[0]

    def log_h(a):
        if isinstance(a, float):
            trace = float((a / (a + d)).sum())
            return math.log(math.atan(trace)) / m if trace > 0 else -math.inf
        a = np.asarray(a, dtype=float)
        trace = np.sum(a.reshape(-1, 1) / (a.reshape(-1, 1) + d), axis=1).reshape(a.shape)
        with np.errstate(divide="ignore"):
            return np.log(np.arctan(trace)) / m

    return log_h


def factor_yl(data: Dataset) -> AdjustmentFactor:
    """``L(A) = {arctan tr(I - B)}^(1/m)`` with ``B = diag(D_i / (A + D_i))``."""
    d = np.array(data.d)

    def family(k):
        return AdjustmentFactor(_yl_from_d(np.tile(d, k)), "yl", vanishes_at_zero=True)

    return AdjustmentFactor(_yl_from_d(d), "yl", vanishes_at_zero=True, family=family)


def factor_nre(
    area_i: int, data: Dataset, l_add: AdjustmentFactor | None = None, validate: bool = True
) -> AdjustmentFactor:
    """Per-area factor ``(A + D_i)^2 L_add(A)`` giving a second-order unbiased naive MSE.

    ``l_add`` defaults to :func:`factor_yl` on ``data``.  Any other ``l_add``
    must pass the A2/A3 checks of :func:`validate_factor`; pass
    ``validate=False`` only for a factor that has already been checked.
    """
    if not 0 <= area_i < data.m:
        raise IndexError(f"area index {area_i} out of range for m={data.m}")
    if l_add is None:
        l_add = factor_yl(data)
    elif validate:
        check_additional_factor(l_add, data)
    d_i = float(data.d[area_i])

    def base(a):
        if isinstance(a, float):
            return 2.0 * math.log(a + d_i)
        return 2.0 * np.log(np.asarray(a, dtype=float) + d_i)

    return AdjustmentFactor(base, "nre", vanishes_at_zero=True, area=area_i, add=l_add)


def default_grid(scale: float = 1.0, n: int = 41) -> np.ndarray:
    return scale * np.logspace(-3, 3, n)


def check_additional_factor(l_add: AdjustmentFactor, data: Dataset | None = None) -> "FactorReport":
    scale = float(np.median(data.d)) if data is not None else 1.0
    report = validate_factor(l_add, default_grid(scale), ("A2", "A3"))
    if not report.passed(allow_skipped=True):
        raise InvalidAdditionalFactorError(report)
    return report


@dataclass
class ConditionCheck:
    name: str
    status: str  # "pass" | "fail" | "skipped"
    detail: str = ""
    a: float | None = None

    @property
    def ok(self) -> bool:
        return self.status == "pass"


@dataclass
class FactorReport:
    label: str
    checks: list

    def passed(self, allow_skipped: bool = False) -> bool:
        ok = ("pass", "skipped") if allow_skipped else ("pass",)
        return all(c.status in ok for c in self.checks)

    def get(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        parts = []
        for c in self.checks:
            s = f"{c.name}={c.status}"
            if c.status == "fail":
                s += f" ({c.detail}" + (f" at A={c.a:.6g})" if c.a is not None else ")")
            parts.append(s)
        return f"{self.label}: " + ", ".join(parts)


def _check(name, failures, grid_a=None, status=None, detail="") -> ConditionCheck:
    if status is not None:
        return ConditionCheck(name, status, detail)
    if failures:
        msg, a = failures[0]
        return ConditionCheck(name, "fail", msg, a)
    return ConditionCheck(name, "pass")


def _shape_failures(values, grid, tol):
    """Monotone increase and concavity (nonincreasing slopes) on a grid."""
    failures = []
    dv = np.diff(values)
    for k in np.flatnonzero(~(dv > 0)):
        failures.append(("not strictly increasing", float(grid[k + 1])))
    slopes = dv / np.diff(grid)
    for k in range(len(slopes) - 1):
        if slopes[k + 1] > slopes[k] + tol * max(abs(slopes[k]), 1e-300):
            failures.append(("not concave", float(grid[k + 1])))
    return failures


def _derivs(f, grid):
    h = 1e-4 * grid
    f0, fp, fm = f(grid), f(grid + h), f(grid - h)
    return [np.abs(f0), np.abs((fp - fm) / (2 * h)), np.abs((fp - 2 * f0 + fm) / h**2)]


def validate_factor(f: AdjustmentFactor, grid, classes=("A1",), tol: float = 1e-8) -> FactorReport:
    """Numerically check Conditions A1-A3 on a grid of ``A`` values.

    Checks performed per requested class:

    * ``A1``: log-factor finite, strictly increasing and concave.
    * ``A2``: log-factor and its first two derivatives shrink when the design
      is replicated (needs ``f.family``; reported ``skipped`` otherwise).
    * ``A3``: strictly increasing, concave, bounded above, ``L(0) = 0``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 10 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must hold at least 10 strictly increasing positive values")
    if isinstance(classes, str):
        classes = (classes,)
    values = f.log_h(grid)
    finite = [("not finite", float(a)) for a in grid[~np.isfinite(values)]]
    checks = []

    if "A1" in classes or "A3" in classes:
        shape = finite or _shape_failures(values, grid, tol)
        checks.append(_check("finite", finite))
        checks.append(_check("increasing", [x for x in shape if x[0] != "not concave"]))
        checks.append(_check("concave", [x for x in shape if x[0] == "not concave"]))

    if "A2" in classes:
        if f.family is None:
            checks.append(_check("small_for_large_m", [], status="skipped", detail="no replication family"))
        else:
            base = _derivs(f.family(1).log_h, grid)
            big = _derivs(f.family(4).log_h, grid)
            failures = []
            for k, (lo, hi) in enumerate(zip(base, big)):
                ref = lo.max()
                if ref > 0 and not hi.max() <= 0.5 * ref:
                    failures.append((f"derivative order {k} does not shrink with m", float(grid[np.argmax(hi)])))
            checks.append(_check("small_for_large_m", failures))

    if "A3" in classes:
        tail = f.log_h(np.array([1e10, 1e12, 1e14]))
        spread = abs(tail[2] - tail[0])
        bounded = bool(np.all(np.isfinite(tail))) and spread <= 1e-6 * max(1.0, abs(tail[2]))
        checks.append(_check("bounded", [] if bounded else [("grows without bound", 1e14)]))
        near = f.log_h(np.array([0.0, 1e-12, 1e-9, 1e-6]))
        vanish = near[0] == -np.inf and bool(np.all(np.diff(near[1:]) > 0))
        checks.append(_check("vanishes_at_zero", [] if vanish else [("L(0) != 0", 0.0)]))

    return FactorReport(f.label, checks)
