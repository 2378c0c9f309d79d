"""Linear probes: L2-regularized logistic regression on frozen features."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .metrics import DegenerateLabelsError, auroc


def _log1pexp(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticProbe(ClassifierMixin, BaseEstimator):
    """Binary logistic regression by full-batch gradient descent.

    Features are standardized; the objective is mean log-loss plus
    ``l2/2 * ||w||^2`` (bias unpenalized). Steps use the Barzilai-Borwein
    rule with a backtracking safeguard. Stops when the gradient norm drops
    below ``tol`` or after ``max_iter`` iterations; ``converged_`` records which.
    """

    def __init__(self, l2=1e-4, tol=1e-6, max_iter=5000):
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter

    def _objective(self, theta, X, y):
        z = X @ theta[:-1] + theta[-1]
        loss = np.mean(_log1pexp(z) - y * z) + 0.5 * self.l2 * theta[:-1] @ theta[:-1]
        r = (_sigmoid(z) - y) / len(y)
        grad = np.append(X.T @ r + self.l2 * theta[:-1], r.sum())
        return loss, grad

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise DegenerateLabelsError("probe needs exactly two classes")
        y = (y == self.classes_[1]).astype(np.float64)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 1e-12, std, 1.0)
        Xs = (X - self.mean_) / self.scale_
        theta = np.zeros(X.shape[1] + 1)
        loss, grad = self._objective(theta, Xs, y)
        step = 1.0
        self.converged_ = False
        it = 0
        for it in range(1, self.max_iter + 1):
            gnorm = np.linalg.norm(grad)
            if gnorm < self.tol:
                self.converged_ = True
                break
            while True:
                cand = theta - step * grad
                c_loss, c_grad = self._objective(cand, Xs, y)
                if c_loss <= loss - 1e-4 * step * gnorm**2 or step < 1e-12:
                    break
                step *= 0.5
            s, g_diff = cand - theta, c_grad - grad
            theta, loss, grad = cand, c_loss, c_grad
            sy = s @ g_diff
            step = (s @ s) / sy if sy > 1e-20 else 1.0
        else:
            self.converged_ = np.linalg.norm(grad) < self.tol
        self.n_iter_ = it
        self.coef_ = theta[:-1] / self.scale_
        self.intercept_ = theta[-1] - self.coef_ @ self.mean_
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


@dataclass
class ProbeResult:
    mean: float
    std: float
    aurocs: list[float] = field(default_factory=list)
    excluded: int = 0
    n_splits: int = 0


def probe_splits(groups, labels, n_splits: int = 100, split_fraction: float = 0.8,
                 rng: np.random.Generator | None = None, max_retries: int = 100) -> list[np.ndarray]:
    """Patient-level train masks; a split is redrawn until both sides hold both classes."""
    rng = np.random.default_rng(0) if rng is None else rng
    groups = np.asarray(groups)
    labels = np.asarray(labels)
    patients = np.unique(groups)
    n_train = min(max(int(round(split_fraction * len(patients))), 1), len(patients) - 1)
    masks = []
    for _ in range(n_splits):
        for _attempt in range(max_retries):
            chosen = rng.permutation(patients)[:n_train]
            mask = np.isin(groups, chosen)
            if len(np.unique(labels[mask])) == 2 and len(np.unique(labels[~mask])) == 2:
                masks.append(mask)
                break
        else:
            raise DegenerateLabelsError(f"no split with both classes on both sides after {max_retries} tries")
    return masks


def _probe_one(args):
    features, labels, mask, probe_params = args
    probe = LogisticProbe(**probe_params).fit(features[mask], labels[mask])
    if not probe.converged_:
        return None
    return auroc(probe.decision_function(features[~mask]), labels[~mask]).auroc


def logistic_probe(features, labels, groups, n_splits: int = 100, split_fraction: float = 0.8,
                   rng: np.random.Generator | None = None, splits: list[np.ndarray] | None = None,
                   jobs: int = 1, **probe_params) -> ProbeResult:
    """Mean test AUROC of a logistic probe over patient-level random splits.

    Pass ``splits`` (from :func:`probe_splits`) to compare feature sets on
    identical splits. Splits where the solver hits its iteration cap are
    excluded and counted.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    if not np.all(np.isfinite(features)):
        raise ValueError("probe features must be finite")
    labels = np.asarray(labels)
    if splits is None:
        splits = probe_splits(groups, labels, n_splits, split_fraction, rng)
    tasks = [(features, labels, m, probe_params) for m in splits]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_probe_one, tasks))
    else:
        out = [_probe_one(t) for t in tasks]
    scores = [s for s in out if s is not None]
    excluded = len(out) - len(scores)
    if not scores:
        return ProbeResult(math.nan, math.nan, [], excluded, len(out))
    return ProbeResult(float(np.mean(scores)), float(np.std(scores)), scores, excluded, len(out))
