"""MSE estimators of the EBLUP and the weight-function / adjustment-factor link.

Every estimator here has the form ``g1(A) + g2(A) + c(A) g3(A)`` evaluated at
some estimate of ``A``:

=============  ==========  ==========================
form           weight c    variance estimator
=============  ==========  ==========================
``naive``      0           REML (pooled)
``dl``         2           REML (pooled)
``naive-n``    0           per-area NRE
``general-c``  c(A)        per-area factor from ``c``
=============  ==========  ==========================
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from scipy import integrate

from .adjustment import AdjustmentFactor, check_additional_factor, default_grid
from .exceptions import FormEstimatorMismatchError, HypothesisViolationError, NonFiniteDerivativeError
from .model import Dataset
from .variance import VarianceEstimate

Weight = Union[float, Callable[[float], float]]
FORM_NAMES = ("naive", "dl", "naive-n", "general-c:<c>")


@dataclass(frozen=True)
class GTerms:
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray

    def __getitem__(self, i) -> "GTerms":
        return GTerms(self.g1[i], self.g2[i], self.g3[i])

    def total(self, c=1.0):
        return self.g1 + self.g2 + c * self.g3


def g_terms(a: float, data: Dataset, i: int | None = None) -> GTerms:
    """Closed-form MSE components at model variance ``a``.

    ``g1 = A D_i / (A + D_i)`` is the BLUP variance with known ``beta``,
    ``g2 = B_i^2 x_i'(X'V^-1X)^-1 x_i`` the cost of estimating ``beta`` and
    ``g3 = 2 D_i^2 / ((A + D_i)^3 tr V^-2)`` the cost of estimating ``A``.
    All areas are returned unless ``i`` is given.
    """
    if not a >= 0:
        raise ValueError("model variance must be non-negative")
    d = data.d
    v = a + d
    w = 1.0 / v
    xtwx = (data.X.T * w) @ data.X
    lev = np.einsum("ij,ji->i", data.X, np.linalg.solve(xtwx, data.X.T))
    b = d * w
    g1 = a * b
    g2 = b * b * lev
    g3 = 2.0 * d * d * w**3 / np.sum(w * w)
    terms = GTerms(g1, g2, g3)
    return terms if i is None else terms[i]


def _constant(c: Weight):
    return not callable(c)


def _weight_at(c: Weight, a):
    return float(c) if _constant(c) else float(c(a))


@dataclass(frozen=True)
class MseForm:
    name: str
    c: Weight = 0.0

    @classmethod
    def naive(cls):
        return cls("naive", 0.0)

    @classmethod
    def datta_lahiri(cls):
        return cls("dl", 2.0)

    @classmethod
    def naive_nre(cls):
        return cls("naive-n", 0.0)

    @classmethod
    def general_c(cls, c: Weight):
        if _constant(c) and not 0.0 <= float(c) <= 2.0:
            raise HypothesisViolationError("0 <= c <= 2", None, c)
        return cls("general-c", c if callable(c) else float(c))

    @classmethod
    def from_name(cls, name: str):
        name = name.strip().lower()
        if name == "naive":
            return cls.naive()
        if name == "dl":
            return cls.datta_lahiri()
        if name == "naive-n":
            return cls.naive_nre()
        if name.startswith("general-c:"):
            try:
                value = float(name.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad weight in {name!r}") from None
            return cls.general_c(value)
        raise ValueError(f"unknown MSE form {name!r}; expected one of {FORM_NAMES}")

    def __str__(self):
        return f"general-c:{self.c!r}" if self.name == "general-c" and _constant(self.c) else self.name


@dataclass(frozen=True, eq=False)
class MseEstimate:
    values: np.ndarray
    form: MseForm
    a_used: np.ndarray

    def rows(self, data: Dataset) -> list[dict]:
        return [
            {"area_id": aid, "mse_hat": float(v), "form": str(self.form), "a_used": float(a)}
            for aid, v, a in zip(data.area_ids, self.values, self.a_used)
        ]


def _as_list(estimates, m):
    if isinstance(estimates, VarianceEstimate):
        return [estimates] * m, True
    estimates = list(estimates)
    if len(estimates) != m:
        raise FormEstimatorMismatchError(f"{len(estimates)} estimates given for {m} areas")
    return estimates, False


def _check_form(form: MseForm, estimates: list, pooled: bool) -> None:
    names = {e.method.name for e in estimates}
    if form.name in ("naive", "dl"):
        if not pooled or names != {"reml"}:
            raise FormEstimatorMismatchError(f"form {form} needs one pooled REML estimate, got {sorted(names)}")
    elif form.name == "naive-n":
        if names != {"nre"} or pooled:
            raise FormEstimatorMismatchError(f"form {form} needs per-area NRE estimates, got {sorted(names)}")
        if [e.method.area for e in estimates] != list(range(len(estimates))):
            raise FormEstimatorMismatchError("NRE estimates are not ordered by area")
    elif form.name == "general-c":
        reml_ok = pooled and names == {"reml"} and _constant(form.c) and float(form.c) == 2.0
        if not (reml_ok or names == {"custom"}):
            raise FormEstimatorMismatchError(
                f"form {form} needs estimates maximized with the factor built from its weight"
            )
    else:
        raise FormEstimatorMismatchError(f"unknown form {form.name!r}")


def mse_estimate(data: Dataset, form: MseForm, estimates) -> MseEstimate:
    """Evaluate an MSE estimator for every area.

    ``estimates`` is one pooled :class:`VarianceEstimate` (``naive``, ``dl``)
    or a per-area sequence (``naive-n`` and ``general-c``).
    """
    if isinstance(form, str):
        form = MseForm.from_name(form)
    est_list, pooled = _as_list(estimates, data.m)
    if any(e.m != data.m for e in est_list):
        raise FormEstimatorMismatchError("estimates come from a dataset of a different size")
    _check_form(form, est_list, pooled)
    a = np.array([e.a_hat for e in est_list])
    return MseEstimate(mse_values(data, form, a), form, a)


def mse_values(data: Dataset, form: MseForm, a: np.ndarray) -> np.ndarray:
    """``g1 + g2 + c g3`` with area ``i`` evaluated at ``a[i]``, no form checks."""
    a = np.broadcast_to(np.asarray(a, dtype=float), (data.m,))
    out = np.empty(data.m)
    cache: dict[float, GTerms] = {}
    for i, ai in enumerate(a):
        if ai not in cache:
            cache[ai] = g_terms(ai, data)
        t = cache[ai][i]
        out[i] = t.g1 + t.g2 + _weight_at(form.c, ai) * t.g3
    return out


def _derivative(f, a, h):
    return (f(a + h) - f(a - h)) / (2.0 * h)


def check_weight(c: Weight, d_i: float, grid=None) -> None:
    """Raise :class:`HypothesisViolationError` unless ``0 <= c <= 2`` and
    ``c'(A)(A + D_i) - c(A) + 2 >= 0`` on the grid."""
    if _constant(c):
        c = float(c)
        if not 0.0 <= c <= 2.0:
            raise HypothesisViolationError("0 <= c <= 2", None, c)
        return
    grid = default_grid(d_i) if grid is None else np.asarray(grid, dtype=float)
    for a in grid:
        ca = float(c(a))
        if not 0.0 <= ca <= 2.0:
            raise HypothesisViolationError("0 <= c <= 2", float(a), ca)
        h = max(1e-6, 1e-6 * a)
        slope = _derivative(c, a, min(h, 0.5 * a))
        cond = slope * (a + d_i) - ca + 2.0
        if cond < -1e-7:
            raise HypothesisViolationError("c'(A)(A+D) - c + 2 >= 0", float(a), cond)


def factor_from_c(
    c: Weight,
    d_i: float,
    l_add: AdjustmentFactor | None = None,
    area: int | None = None,
    grid=None,
    validate_add: bool = True,
) -> AdjustmentFactor:
    """Adjustment factor whose log-slope is ``(2 - c(A)) / (A + D_i)``.

    A constant ``c`` gives ``(2 - c) log(A + D_i)`` directly; otherwise the
    slope is integrated from ``A = 0`` by adaptive quadrature.  Unless
    ``c = 2`` the base factor is positive at zero, so ``l_add`` is then
    required to keep the estimate off the boundary.
    """
    check_weight(c, d_i, grid)
    is_reml = _constant(c) and float(c) == 2.0
    if _constant(c):
        slope = 2.0 - float(c)

        def base(a):
            if slope == 0.0:
                return np.zeros_like(np.asarray(a, dtype=float))
            return slope * np.log(np.asarray(a, dtype=float) + d_i)

    else:

        def integrand(t):
            return (2.0 - c(t)) / (t + d_i)

        def _one(a):
            if a <= 0.0:
                return 0.0
            return integrate.quad(integrand, 0.0, a, epsabs=1e-10, epsrel=1e-10, limit=200)[0]

        def base(a):
            a = np.asarray(a, dtype=float)
            return np.array([_one(x) for x in a.ravel()]).reshape(a.shape)

    if l_add is None and not is_reml:
        raise ValueError("weights below 2 need an additional factor vanishing at zero (l_add)")
    if l_add is not None and validate_add:
        check_additional_factor(l_add)
    label = f"general-c:{float(c)!r}" if _constant(c) else "general-c"
    return AdjustmentFactor(
        base,
        label,
        vanishes_at_zero=bool(l_add is not None and l_add.vanishes_at_zero),
        area=area,
        add=l_add,
    )


def c_from_factor(f: AdjustmentFactor, d_i: float, a: float) -> float:
    """Weight implied by a factor: ``2 - (A + D_i) d/dA log L_base(A)``."""
    if not a > 0:
        raise ValueError("evaluation point must be positive")
    h = max(1e-6, 1e-6 * a)
    slope = _derivative(f.base_log_h, a, h)
    if not np.isfinite(slope):
        raise NonFiniteDerivativeError(a)
    return float(2.0 - (a + d_i) * slope)
