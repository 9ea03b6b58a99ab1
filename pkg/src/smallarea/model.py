"""Fay-Herriot area-level data model, GLS coefficients and likelihoods.

The sampling covariance ``V = diag(A + D_i)`` is never formed densely; every
quantity below is assembled from ``p x p`` cross products.  Likelihood values
drop additive constants, so only differences and maximizers are meaningful.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .exceptions import NonFiniteError, NonPositiveSamplingVarianceError, RankDeficientError

COND_WARN = 1e12


class LeverageWarning(UserWarning):
    """Some area has leverage far above the balanced value ``p/m``."""


class ConditioningWarning(UserWarning):
    """The cross-product matrix ``X'X`` is badly conditioned."""


class LikelihoodKind(enum.Enum):
    RESIDUAL = "reml"
    PROFILE = "pml"


@dataclass(frozen=True)
class AreaObservation:
    area_id: Any
    y: float
    d: float
    x: tuple


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed small-area data.

    Build instances with :func:`validate_dataset` or :meth:`from_arrays`;
    the arrays are made read-only so a dataset can be shared freely.
    """

    area_ids: tuple
    X: np.ndarray
    y: np.ndarray
    d: np.ndarray
    leverage: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_arrays(cls, X, y, d, area_ids=None) -> "Dataset":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        d = np.broadcast_to(np.asarray(d, dtype=float), y.shape).copy()
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[0] != y.shape[0]:
            raise RankDeficientError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if area_ids is None:
            area_ids = tuple(range(1, y.shape[0] + 1))
        return validate_dataset(cls(tuple(area_ids), X, y, d))

    @classmethod
    def from_observations(cls, areas: Sequence[AreaObservation]) -> "Dataset":
        if not areas:
            raise RankDeficientError("no areas given")
        widths = {len(a.x) for a in areas}
        if len(widths) != 1:
            raise RankDeficientError(f"covariate vectors have differing lengths {sorted(widths)}")
        X = np.array([a.x for a in areas], dtype=float)
        return validate_dataset(
            cls(
                tuple(a.area_id for a in areas),
                X,
                np.array([a.y for a in areas], dtype=float),
                np.array([a.d for a in areas], dtype=float),
            )
        )

    def observations(self) -> list[AreaObservation]:
        return [
            AreaObservation(aid, float(yi), float(di), tuple(float(v) for v in xi))
            for aid, yi, di, xi in zip(self.area_ids, self.y, self.d, self.X)
        ]

    def with_y(self, y) -> "Dataset":
        """Same design and sampling variances with a new response vector."""
        y = np.array(y, dtype=float)
        if y.shape != self.y.shape:
            raise ValueError("response has the wrong length")
        if not np.all(np.isfinite(y)):
            bad = int(np.flatnonzero(~np.isfinite(y))[0])
            raise NonFiniteError("y", self.area_ids[bad])
        y.setflags(write=False)
        return Dataset(self.area_ids, self.X, y, self.d, self.leverage)


def validate_dataset(raw: Dataset) -> Dataset:
    """Check finiteness, positivity of ``D_i`` and full column rank of ``X``.

    Returns a read-only copy carrying the leverages ``h_ii = x_i'(X'X)^-1 x_i``.
    """
    X = np.array(raw.X, dtype=float)
    y = np.array(raw.y, dtype=float).ravel()
    d = np.array(raw.d, dtype=float).ravel()
    ids = tuple(raw.area_ids)
    if X.ndim != 2 or X.shape[0] == 0:
        raise RankDeficientError("design matrix must be a non-empty 2-d array")
    m, p = X.shape
    if y.shape[0] != m or d.shape[0] != m or len(ids) != m:
        raise RankDeficientError("y, d, X and area ids disagree in length")
    for name, arr in (("y", y), ("d", d)):
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise NonFiniteError(name, ids[bad[0]])
    bad_rows = np.flatnonzero(~np.all(np.isfinite(X), axis=1))
    if bad_rows.size:
        raise NonFiniteError("x", ids[bad_rows[0]])
    nonpos = np.flatnonzero(d <= 0)
    if nonpos.size:
        raise NonPositiveSamplingVarianceError(ids[nonpos[0]], float(d[nonpos[0]]))
    if p > m:
        raise RankDeficientError(f"p={p} covariates exceed m={m} areas")
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        raise RankDeficientError(f"rank(X)={rank} < p={p}")

    xtx = X.T @ X
    cond = np.linalg.cond(xtx)
    if cond > COND_WARN:
        warnings.warn(f"cond(X'X)={cond:.3g} exceeds {COND_WARN:g}", ConditioningWarning, stacklevel=2)
    leverage = np.einsum("ij,ji->i", X, np.linalg.solve(xtx, X.T))
    if leverage.max() > 4 * p / m:
        warnings.warn(
            f"max leverage {leverage.max():.3g} exceeds 4p/m={4 * p / m:.3g}", LeverageWarning, stacklevel=2
        )
    for arr in (X, y, d, leverage):
        arr.setflags(write=False)
    return Dataset(ids, X, y, d, leverage)


def _cross_products(a, data: Dataset):
    """Batched ``X'V^-1X``, ``X'V^-1y`` and weights for an array of ``A`` values."""
    a = np.asarray(a, dtype=float)
    w = 1.0 / (a.reshape(-1, 1) + data.d)
    xtwx = np.einsum("gi,ij,ik->gjk", w, data.X, data.X)
    xtwy = np.einsum("gi,ij,i->gj", w, data.X, data.y)
    return w, xtwx, xtwy


def gls_beta(a, data: Dataset) -> np.ndarray:
    """GLS coefficients ``(X'V^-1X)^-1 X'V^-1 y`` at model variance ``a``."""
    if a < 0:
        raise ValueError("model variance must be non-negative")
    _, xtwx, xtwy = _cross_products(a, data)
    return np.linalg.solve(xtwx[0], xtwy[0])


def residual_quadratic(a, data: Dataset) -> float:
    """Return ``y'Py``, the weighted residual sum of squares at the GLS fit."""
    beta = gls_beta(a, data)
    r = data.y - data.X @ beta
    return float(np.sum(r * r / (a + data.d)))


def _loglik_batch(kind: LikelihoodKind, a, data: Dataset) -> np.ndarray:
    w, xtwx, xtwy = _cross_products(a, data)
    beta = np.linalg.solve(xtwx, xtwy[..., None])[..., 0]
    resid = data.y - beta @ data.X.T
    quad = np.sum(w * resid * resid, axis=1)
    out = 0.5 * np.sum(np.log(w), axis=1) - 0.5 * quad
    if kind is LikelihoodKind.RESIDUAL:
        out -= 0.5 * np.linalg.slogdet(xtwx)[1]
    return out


def log_likelihood(kind: LikelihoodKind, a, data: Dataset):
    """Residual or profile log-likelihood of ``A`` with constants dropped.

    ``a`` may be a scalar or an array; the result has the same shape.
    """
    scalar = np.ndim(a) == 0
    out = _loglik_batch(LikelihoodKind(kind), np.atleast_1d(a), data)
    return float(out[0]) if scalar else out.reshape(np.shape(a))


def loglik_function(kind: LikelihoodKind, data: Dataset):
    """Fast callable ``A -> log-likelihood`` for repeated evaluation.

    Scalars go through a lean path without batching; arrays are batched.
    """
    kind = LikelihoodKind(kind)
    X, y, d = data.X, data.y, data.d
    XT = X.T
    residual = kind is LikelihoodKind.RESIDUAL

    if data.p == 1:
        x = X[:, 0]
        x2 = x * x
        xy = x * y
        log_det = residual

        def f(a):
            if not isinstance(a, (float, int)):
                if np.ndim(a):
                    return log_likelihood(kind, a, data)
                a = float(a)
            v = a + d
            w = 1.0 / v
            sw = w @ x2
            r = y - x * ((w @ xy) / sw)
            val = -0.5 * (np.log(v).sum() + (r * r) @ w)
            if log_det:
                val -= 0.5 * math.log(sw)
            return float(val)

        return f

    def f(a):
        if np.ndim(a):
            return log_likelihood(kind, a, data)
        v = a + d
        xw = XT / v
        xtwx = xw @ X
        xtwy = xw @ y
        beta = np.linalg.solve(xtwx, xtwy)
        r = y - X @ beta
        val = -0.5 * (np.log(v).sum() + (r * r / v).sum())
        if residual:
            val -= 0.5 * np.linalg.slogdet(xtwx)[1]
        return float(val)

    return f
