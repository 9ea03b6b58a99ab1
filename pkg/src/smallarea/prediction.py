"""BLUP for a known model variance and EBLUP for an estimated one."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .exceptions import MethodDataMismatchError
from .model import Dataset, gls_beta
from .variance import VarianceEstimate


@dataclass(frozen=True, eq=False)
class EblupResult:
    """Per-area predictions.

    ``beta_hat`` has shape ``(p,)`` when one variance value is shared by all
    areas and ``(m, p)`` when every area carries its own estimate.
    """

    theta_hat: np.ndarray
    b_hat: np.ndarray
    beta_hat: np.ndarray
    a_used: np.ndarray
    method: str
    synthetic: np.ndarray

    def rows(self, data: Dataset) -> list[dict]:
        return [
            {"area_id": aid, "theta_hat": float(t), "b_hat": float(b), "a_used": float(a)}
            for aid, t, b, a in zip(data.area_ids, self.theta_hat, self.b_hat, self.a_used)
        ]


def _combine(y, d, synthetic, a):
    b = d / (a + d)
    return (1.0 - b) * y + b * synthetic, b


def blup(data: Dataset, a: float, method: str = "known") -> EblupResult:
    """``theta_i = (1 - B_i) y_i + B_i x_i'beta(A)`` with ``B_i = D_i / (A + D_i)``."""
    if not a >= 0:
        raise ValueError("model variance must be non-negative")
    beta = gls_beta(a, data)
    synthetic = data.X @ beta
    theta, b = _combine(data.y, data.d, synthetic, a)
    return EblupResult(theta, b, beta, np.full(data.m, float(a)), method, synthetic)


Estimates = Union[VarianceEstimate, Sequence[VarianceEstimate]]


def eblup(data: Dataset, est: Estimates) -> EblupResult:
    """EBLUP from either one pooled estimate or one estimate per area.

    With per-area estimates (``nre``), area ``i`` uses its own ``A_i`` both in
    its shrinkage weight and in the GLS coefficients behind its synthetic
    estimate.
    """
    if isinstance(est, VarianceEstimate):
        if est.m != data.m:
            raise MethodDataMismatchError(f"estimate is for m={est.m} areas, dataset has {data.m}")
        if est.method.per_area:
            raise MethodDataMismatchError(
                f"{est.method} is a per-area estimate; pass the estimates of all {data.m} areas"
            )
        return blup(data, est.a_hat, method=str(est.method))

    est = list(est)
    if len(est) != data.m or any(e.m != data.m for e in est):
        raise MethodDataMismatchError(f"{len(est)} estimates given for {data.m} areas")
    a = np.array([e.a_hat for e in est])
    betas = np.empty((data.m, data.p))
    cache: dict[float, np.ndarray] = {}
    for i, ai in enumerate(a):
        if ai not in cache:
            cache[ai] = gls_beta(ai, data)
        betas[i] = cache[ai]
    synthetic = np.einsum("ij,ij->i", data.X, betas)
    theta, b = _combine(data.y, data.d, synthetic, a)
    return EblupResult(theta, b, betas, a, est[0].method.name, synthetic)
