"""scikit-learn style wrappers around the switching pipelines.

``fit`` takes a case (a :class:`PowerCase`, a :class:`ValidatedNetwork` or a
path) and stores fitted attributes with a trailing underscore; ``predict``
returns the binary switch vector.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted, check_symmetric

from .case_io import PowerCase, ValidatedNetwork, load_case, select_switchable, validate
from .engine import run_mccormick, run_ots, run_vv
from .partition import recursive_partition
from .solver import SolverOptions


def check_network(case, n_switchable: int | None = None) -> ValidatedNetwork:
    """Coerce ``case`` into a validated network, optionally re-selecting switchable lines."""
    if isinstance(case, (str, Path)):
        case = load_case(case)
    if isinstance(case, PowerCase):
        case = validate(case)
    if not isinstance(case, ValidatedNetwork):
        raise TypeError(f"expected a case, a network or a path, got {type(case).__name__}")
    if n_switchable:
        case = select_switchable(case, n_switchable)
    return case


def _check_params(beta, tol):
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")


class _OtsEstimator(BaseEstimator):
    def _options(self):
        return SolverOptions(tol_gap=self.tol, tol_primal=self.tol, tol_dual=self.tol)

    def _store(self, res):
        self.result_ = res
        self.alpha_ = np.asarray(res.alpha, dtype=int)
        self.alpha_hat_ = np.asarray(res.alpha_hat, dtype=float)
        self.lower_ = res.bounds.lower
        self.upper_ = res.bounds.upper
        self.gap_rel_ = res.bounds.gap_rel
        return self

    def predict(self, X=None):
        check_is_fitted(self, "alpha_")
        return self.alpha_.copy()

    def score(self, X=None):
        """Negative relative gap (higher is better)."""
        check_is_fitted(self, "alpha_")
        return -self.gap_rel_


class VirtualVoltageOTS(_OtsEstimator):
    def __init__(self, n_switchable=None, beta=0.0, tol=1e-7, threshold=0.5):
        self.n_switchable = n_switchable
        self.beta = beta
        self.tol = tol
        self.threshold = threshold

    def fit(self, X, y=None):
        _check_params(self.beta, self.tol)
        self.network_ = check_network(X, self.n_switchable)
        res = run_vv(self.network_, self.beta, self._options(), threshold=self.threshold)
        self.diagnostics_ = res.diagnostics
        return self._store(res)


class McCormickOTS(_OtsEstimator):
    def __init__(self, n_switchable=None, profile="mccormick5", beta=0.0, tol=1e-7):
        self.n_switchable = n_switchable
        self.profile = profile
        self.beta = beta
        self.tol = tol

    def fit(self, X, y=None):
        _check_params(self.beta, self.tol)
        self.network_ = check_network(X, self.n_switchable)
        return self._store(run_mccormick(self.network_, self.profile, self.beta, self._options()))


class PartitionOTS(_OtsEstimator):
    def __init__(self, n_switchable=None, n_blocks=2, beta=0.0, tol=1e-7, max_workers=None):
        self.n_switchable = n_switchable
        self.n_blocks = n_blocks
        self.beta = beta
        self.tol = tol
        self.max_workers = max_workers

    def fit(self, X, y=None):
        _check_params(self.beta, self.tol)
        if int(self.n_blocks) != self.n_blocks or self.n_blocks < 1:
            raise ValueError("n_blocks must be a positive integer")
        self.network_ = check_network(X, self.n_switchable)
        res = run_ots(self.network_, int(self.n_blocks), self.beta, self._options(), max_workers=self.max_workers)
        self.partition_ = res.partition
        self.diagnostics_ = res.diagnostics
        return self._store(res)


class SpectralPartitioner(BaseEstimator):
    """Recursive spectral bisection of a weighted adjacency matrix."""

    def __init__(self, n_blocks=2):
        self.n_blocks = n_blocks

    def fit(self, X, y=None):
        a = check_symmetric(np.asarray(X, dtype=float), raise_exception=True)
        if a.ndim != 2 or np.any(a < 0):
            raise ValueError("adjacency must be a square nonnegative matrix")
        self.partition_ = recursive_partition(a, int(self.n_blocks))
        labels = np.empty(a.shape[0], dtype=int)
        for l, block in enumerate(self.partition_.blocks):
            labels[list(block)] = l
        self.labels_ = labels
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


__all__ = [
    "VirtualVoltageOTS",
    "McCormickOTS",
    "PartitionOTS",
    "SpectralPartitioner",
    "check_network",
    "NotFittedError",
]
