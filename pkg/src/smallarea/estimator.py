"""scikit-learn compatible front end to the Fay-Herriot machinery."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .model import Dataset
from .mse import MseForm, mse_estimate
from .prediction import eblup
from .variance import DEFAULT_TOL, METHOD_NAMES, VarianceMethod, estimate_per_area, estimate_variance

_AUTO_FORM = {"reml": "dl", "nre": "naive-n"}


def check_sampling_variance(sampling_variance, n_samples: int) -> np.ndarray:
    """Validate the known sampling variances ``D_i`` against ``n_samples``."""
    if sampling_variance is None:
        raise ValueError("sampling_variance (the known D_i) is required")
    d = np.asarray(sampling_variance, dtype=float)
    if d.ndim == 0:
        d = np.full(n_samples, float(d))
    d = check_array(d.reshape(-1, 1), ensure_all_finite=True).ravel()
    if d.shape[0] != n_samples:
        raise ValueError(f"sampling_variance has {d.shape[0]} entries, expected {n_samples}")
    if np.any(d <= 0):
        raise ValueError("sampling variances must be strictly positive")
    return d


class FayHerriotRegressor(RegressorMixin, BaseEstimator):
    """EBLUP under the Fay-Herriot area-level model.

    Parameters
    ----------
    method : {"reml", "pml", "ll", "yl", "nre"}
        Estimator of the model variance ``A``.  ``"nre"`` fits one estimate
        per area whose naive MSE is second-order unbiased.
    mse : str or None
        MSE estimator: ``"naive"``, ``"dl"``, ``"naive-n"``, or
        ``"auto"`` (``dl`` for REML, ``naive-n`` for NRE, none otherwise).
    tol : float
        Relative tolerance of the variance maximization.
    a_max : float or None
        Upper end of the search interval for ``A``.

    Attributes
    ----------
    a_hat_ : ndarray of shape (n_areas,)
        Variance estimate used for each area.
    beta_ : ndarray of shape (n_features,) or (n_areas, n_features)
        GLS coefficients; per area for ``"nre"``.
    theta_hat_ : ndarray of shape (n_areas,)
        EBLUPs of the fitted areas.
    shrinkage_ : ndarray of shape (n_areas,)
        Weights ``D_i / (A + D_i)`` on the synthetic estimate.
    mse_ : ndarray of shape (n_areas,) or None
        Estimated MSE of each EBLUP.
    """

    def __init__(self, method="reml", mse="auto", tol=DEFAULT_TOL, a_max=None):
        self.method = method
        self.mse = mse
        self.tol = tol
        self.a_max = a_max

    def _form(self):
        if self.mse == "auto":
            name = _AUTO_FORM.get(self.method)
            return None if name is None else MseForm.from_name(name)
        return None if self.mse is None else MseForm.from_name(self.mse)

    def fit(self, X, y, sampling_variance=None, area_ids=None):
        if self.method not in METHOD_NAMES:
            raise ValueError(f"method must be one of {METHOD_NAMES}, got {self.method!r}")
        X, y = check_X_y(X, y, y_numeric=True)
        d = check_sampling_variance(sampling_variance, X.shape[0])
        data = Dataset.from_arrays(X, y, d, area_ids)
        form = self._form()

        if self.method == "nre":
            est = estimate_per_area(data, VarianceMethod.nre(0), self.a_max, self.tol)
        else:
            est = estimate_variance(data, VarianceMethod.from_name(self.method), self.a_max, self.tol)
        pred = eblup(data, est)

        self.dataset_ = data
        self.variance_estimates_ = est if isinstance(est, list) else [est]
        self.a_hat_ = pred.a_used
        self.beta_ = pred.beta_hat
        self.theta_hat_ = pred.theta_hat
        self.shrinkage_ = pred.b_hat
        self.mse_ = None if form is None else mse_estimate(data, form, est).values
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, y=None, sampling_variance=None):
        """Synthetic estimates ``X beta``, or EBLUPs when ``y`` and ``D`` are given.

        Areas outside the fitted set reuse the fitted ``A`` and ``beta``,
        which requires a pooled variance method.
        """
        check_is_fitted(self, "beta_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if self.beta_.ndim != 1:
            raise ValueError("per-area variance estimates cannot be transferred to new areas")
        synthetic = X @ self.beta_
        if y is None:
            return synthetic
        y = check_array(np.asarray(y, dtype=float).reshape(-1, 1)).ravel()
        d = check_sampling_variance(sampling_variance, X.shape[0])
        b = d / (self.a_hat_[0] + d)
        return (1.0 - b) * y + b * synthetic
