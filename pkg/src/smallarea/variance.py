"""Estimators of the model variance ``A``: REML, PML and adjusted likelihoods."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .adjustment import AdjustmentFactor, factor_ll, factor_nre, factor_yl
from .exceptions import DomainError, EstimationError, TooFewAreasError
from .model import Dataset, LikelihoodKind, log_likelihood, loglik_function
from .optimize import maximize_over_a

DEFAULT_TOL = 1e-8
METHOD_NAMES = ("reml", "pml", "ll", "yl", "nre")


@dataclass(frozen=True)
class VarianceMethod:
    """Which (adjusted) likelihood to maximize.

    Use the constructors :meth:`reml`, :meth:`pml`, :meth:`ll`, :meth:`yl`,
    :meth:`nre` and :meth:`custom` rather than the raw fields.
    """

    name: str
    area: Optional[int] = None
    factor: Optional[AdjustmentFactor] = field(default=None, compare=False)
    kind: LikelihoodKind = LikelihoodKind.RESIDUAL
    l_add: Optional[AdjustmentFactor] = field(default=None, compare=False)

    @classmethod
    def reml(cls):
        return cls("reml")

    @classmethod
    def pml(cls):
        return cls("pml", kind=LikelihoodKind.PROFILE)

    @classmethod
    def ll(cls):
        return cls("ll")

    @classmethod
    def yl(cls):
        return cls("yl")

    @classmethod
    def nre(cls, area: int, l_add: AdjustmentFactor | None = None):
        if area is None or int(area) < 0:
            raise ValueError("nre needs a non-negative area index")
        return cls("nre", area=int(area), l_add=l_add)

    @classmethod
    def custom(cls, factor: AdjustmentFactor, kind: LikelihoodKind = LikelihoodKind.RESIDUAL):
        if not isinstance(factor, AdjustmentFactor):
            raise TypeError("custom methods need an AdjustmentFactor")
        return cls("custom", area=factor.area, factor=factor, kind=LikelihoodKind(kind))

    @classmethod
    def from_name(cls, name: str, area: int | None = None):
        name = name.lower()
        if name == "nre":
            return cls.nre(0 if area is None else area)
        if name in ("reml", "pml", "ll", "yl"):
            return getattr(cls, name)()
        raise ValueError(f"unknown variance method {name!r}; expected one of {METHOD_NAMES}")

    @property
    def per_area(self) -> bool:
        return self.area is not None

    def build_factor(self, data: Dataset) -> AdjustmentFactor | None:
        if self.name in ("reml", "pml"):
            return None
        if self.name == "ll":
            return factor_ll()
        if self.name == "yl":
            return factor_yl(data)
        if self.name == "nre":
            return factor_nre(self.area, data, self.l_add)
        return self.factor

    def for_area(self, area: int) -> "VarianceMethod":
        if self.name == "nre":
            return VarianceMethod.nre(area, self.l_add)
        raise ValueError(f"method {self.name!r} is not per-area")

    def __str__(self):
        return self.name if self.area is None else f"{self.name}[{self.area}]"


@dataclass(frozen=True)
class VarianceEstimate:
    a_hat: float
    method: VarianceMethod
    at_lower_boundary: bool
    at_upper_boundary: bool
    objective_at_max: float
    evaluations: int
    a_max: float
    m: int
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "a_hat": self.a_hat,
            "method": str(self.method),
            "at_lower_boundary": self.at_lower_boundary,
            "at_upper_boundary": self.at_upper_boundary,
            "objective_at_max": self.objective_at_max,
            "evaluations": self.evaluations,
            "a_max": self.a_max,
            "converged": self.converged,
        }


def default_a_max(data: Dataset) -> float:
    var_y = float(np.var(data.y, ddof=1)) if data.m > 1 else 0.0
    return max(1e4, 100.0 * (var_y + float(data.d.max())))


def make_objective(data: Dataset, kind: LikelihoodKind, factor: AdjustmentFactor | None):
    """Return ``(scalar_fn, vector_fn)`` for log-likelihood plus log-factor."""
    loglik = loglik_function(kind, data)
    if factor is None:
        return loglik, lambda a: log_likelihood(kind, a, data)

    def scalar(a):
        return loglik(a) + factor.log_h(a)

    def vector(a):
        return log_likelihood(kind, a, data) + factor.log_h(a)

    return scalar, vector


def check_area_count(data: Dataset, required_excess: int = 4, strict: bool = True) -> None:
    required = data.p + required_excess + 1
    if data.m < required:
        if strict:
            raise TooFewAreasError(data.m, required)
        warnings.warn(f"m={data.m} <= p+{required_excess}; positivity is not guaranteed", stacklevel=3)


def estimate_variance(
    data: Dataset,
    method: VarianceMethod,
    a_max: float | None = None,
    tol: float = DEFAULT_TOL,
) -> VarianceEstimate:
    """Maximize the (adjusted) likelihood of ``A`` over ``[0, A_max]``.

    For ``nre`` the number of areas must exceed ``p + 4``; an explicit
    ``a_max`` downgrades that error to a warning.
    """
    if isinstance(method, str):
        method = VarianceMethod.from_name(method)
    if method.name == "nre":
        if method.area >= data.m:
            raise IndexError(f"area index {method.area} out of range for m={data.m}")
        check_area_count(data, strict=a_max is None)
    factor = method.build_factor(data)
    bound = default_a_max(data) if a_max is None else float(a_max)
    scalar, vector = make_objective(data, method.kind, factor)
    res = maximize_over_a(scalar, bound, tol, scan_objective=vector)
    if factor is not None and factor.vanishes_at_zero and not res.a_hat > 0:
        raise EstimationError(f"{method} returned A=0 although its adjustment vanishes at zero")
    return VarianceEstimate(
        a_hat=res.a_hat,
        method=method,
        at_lower_boundary=res.at_lower_boundary,
        at_upper_boundary=res.at_upper_boundary,
        objective_at_max=res.value,
        evaluations=res.evaluations,
        a_max=bound,
        m=data.m,
        converged=res.converged,
    )


def estimate_per_area(
    data: Dataset,
    method: VarianceMethod,
    a_max: float | None = None,
    tol: float = DEFAULT_TOL,
    factor_for_area=None,
) -> list[VarianceEstimate]:
    """Per-area estimates for methods whose factor depends on ``D_i``.

    Areas sharing the same sampling variance share one maximization, since
    their objectives coincide.  ``factor_for_area`` (``i -> AdjustmentFactor``)
    builds custom per-area factors; otherwise ``method`` must be ``nre``.
    """
    def method_for(i):
        if factor_for_area is not None:
            return VarianceMethod.custom(factor_for_area(i), method.kind)
        return method.for_area(i)

    out = []
    cache: dict[float, VarianceEstimate] = {}
    for i in range(data.m):
        key = float(data.d[i])
        if key not in cache:
            cache[key] = estimate_variance(data, method_for(i), a_max, tol)
        est = cache[key]
        if est.method.area != i:
            est = replace(est, method=method_for(i))
        out.append(est)
    return out


def existence_bound(m: int, p: int, c: float) -> dict:
    """Smallest area count for which a positive maximizer exists, constant ``c``.

    With a constant weight ``c`` the adjustment grows like ``A^(2-c)``, which
    the residual likelihood ``A^(-(m-p)/2)`` dominates iff ``m - p > 4 - 2c``.
    """
    if not 0.0 <= c <= 2.0:
        raise DomainError(f"c must lie in [0, 2], got {c}")
    m_min = p + math.floor(4 - 2 * c) + 1
    return {
        "satisfied": m >= m_min,
        "m_min": m_min,
        "conservative_m_min": p + 5,
        "conservative_satisfied": m > p + 4,
    }
