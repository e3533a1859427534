"""scikit-learn style wrappers around the margin transform, the angular
threshold, the spectral MLE and the robust Pickands bounds.

The steps chain in the usual order::

    angles = make_pipeline(ParetoMargins(), PolarThreshold(k=500)).fit_transform(Z)
    est = RobustPickands(family="et").fit(angles)
    lo, hi = est.predict_interval(z)

``PolarThreshold.transform`` keeps only the exceedances, so it changes the
number of rows; it is meant for unsupervised chains without ``y``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_angles, check_bivariate, check_delta, check_z
from .divergence import divergence, empirical_model
from .inference import default_endpoint_tol, fit_mle, log_likelihood, polar_topk, robust_band
from .spectral import BivariateSample, pickands


class ParetoMargins(TransformerMixin, BaseEstimator):
    """Map each column to unit Pareto margins through its empirical CDF.

    Parameters
    ----------
    margins : {"raw", "frechet"}
        ``"frechet"`` uses the exact map from unit Frechet margins and
        needs no fitting data; ``"raw"`` uses ranks against the data seen
        in ``fit``.
    """

    def __init__(self, margins="raw"):
        self.margins = margins

    def fit(self, X, y=None):
        X = check_bivariate(X)
        if self.margins not in ("raw", "frechet"):
            raise ValueError("margins must be 'raw' or 'frechet'")
        self.sorted_ = np.sort(X, axis=0)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_bivariate(X)
        if self.margins == "frechet":
            with np.errstate(divide="ignore"):
                return -1.0 / np.expm1(-1.0 / X)
        n = self.sorted_.shape[0]
        u = np.column_stack([
            0.5 * (np.searchsorted(self.sorted_[:, j], X[:, j], "left")
                   + np.searchsorted(self.sorted_[:, j], X[:, j], "right")) / (n + 1.0)
            for j in range(2)
        ])
        return 1.0 / (1.0 - u)


class PolarThreshold(TransformerMixin, BaseEstimator):
    """Angles of the ``k`` rows with the largest L1 radius.

    ``fit`` stores the threshold radius; ``transform`` returns the angles
    ``z1 / (z1 + z2)`` of the rows whose radius exceeds it, as a column.
    """

    def __init__(self, k=500):
        self.k = k

    def fit(self, X, y=None):
        X = check_bivariate(X)
        s = polar_topk(BivariateSample(X, "pareto"), int(self.k))
        self.threshold_ = s.threshold
        self.n_total_ = s.n_total
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_bivariate(X)
        r = X.sum(axis=1)
        keep = r > self.threshold_
        return (X[keep, 0] / r[keep])[:, None]

    def fit_transform(self, X, y=None, **fit_params):
        # ties at the threshold would make fit().transform() return fewer than k rows
        X = check_bivariate(X)
        s = polar_topk(BivariateSample(X, "pareto"), int(self.k))
        self.threshold_ = s.threshold
        self.n_total_ = s.n_total
        self.n_features_in_ = 2
        return s.angles[:, None]


class SpectralFamilyMLE(BaseEstimator):
    """Maximum likelihood fit of a parametric spectral family to angles.

    Parameters
    ----------
    family : {"hr", "al", "et"}
    endpoint_tol : float or None
        Angles this close to 0 or 1 count as atoms. ``None`` picks
        ``default_endpoint_tol`` for the family.
    n_starts : int
        Number of quasi-random starting points.
    """

    def __init__(self, family="hr", endpoint_tol=None, n_starts=5):
        self.family = family
        self.endpoint_tol = endpoint_tol
        self.n_starts = n_starts

    def _tol(self):
        if self.endpoint_tol is not None:
            return float(self.endpoint_tol)
        return default_endpoint_tol(self.family, getattr(self, "mu", "p"))

    def fit(self, X, y=None):
        a = check_angles(X)
        res = fit_mle(self.family, a, self._tol(), n_starts=self.n_starts)
        self.model_ = res.model
        self.loglik_ = res.loglik
        self.converged_ = res.converged
        return self

    def score(self, X, y=None):
        """Mean log-likelihood per angle."""
        check_is_fitted(self)
        a = check_angles(X)
        return log_likelihood(self.model_, a, self._tol()) / a.size

    def predict(self, z):
        """Pickands function of the fitted model."""
        check_is_fitted(self)
        return pickands(self.model_, check_z(z))


class RobustPickands(SpectralFamilyMLE):
    """Fitted Pickands function with robust bounds over a divergence ball.

    Parameters
    ----------
    family, endpoint_tol, n_starts
        As in :class:`SpectralFamilyMLE`.
    mu : {"p", "leb"}
        Dominating measure of the divergence.
    delta : float or None
        Radius of the ball; ``None`` estimates it from the data by a kernel
        plug-in.
    exact : bool
        Use exact bounds instead of the square-root bounds.
    bandwidth : float or None
        Kernel bandwidth for the plug-in divergence; ``None`` uses
        Silverman's rule.
    clip : bool
        Restrict the bounds to the Pickands triangle.
    """

    def __init__(self, family="hr", mu="p", delta=None, exact=False, bandwidth=None, endpoint_tol=None,
                 n_starts=5, clip=True):
        super().__init__(family=family, endpoint_tol=endpoint_tol, n_starts=n_starts)
        self.mu = mu
        self.delta = delta
        self.exact = exact
        self.bandwidth = bandwidth
        self.clip = clip

    def fit(self, X, y=None):
        super().fit(X)
        a = check_angles(X)
        if self.delta is None:
            if a.size < 50:
                raise ValueError("need at least 50 angles to estimate a divergence")
            emp = empirical_model(a, self.bandwidth, self._tol())
            self.delta_ = divergence(emp, self.model_, self.mu)
        else:
            self.delta_ = check_delta(self.delta)
        return self

    def predict_interval(self, z):
        """Lower and upper bounds on A at ``z`` (each an array)."""
        check_is_fitted(self)
        return robust_band(self.model_, check_z(z), self.delta_, self.mu, clip=self.clip, exact=self.exact)
