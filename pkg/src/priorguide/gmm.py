"""Two-component 1-D Gaussian mixture fitted by EM to per-sample losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateFitError, NumericFault

VARIANCE_FLOOR = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GmmModel:
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    loss_min: float = 0.0
    loss_max: float = 1.0
    n_iter: int = 0
    log_likelihood: list = field(default_factory=list)

    def normalize(self, losses) -> np.ndarray:
        return (np.asarray(losses, dtype=np.float64) - self.loss_min) / (self.loss_max - self.loss_min)

    def to_dict(self) -> dict:
        return {
            "means": [float(v) for v in self.means],
            "variances": [float(v) for v in self.variances],
            "weights": [float(v) for v in self.weights],
            "n_iter": int(self.n_iter),
            "log_likelihood": float(self.log_likelihood[-1]) if self.log_likelihood else None,
        }


def _component_logpdf(x, means, variances, weights):
    # shape (N, 2)
    d = x[:, None] - means[None, :]
    return (np.log(weights)[None, :] - 0.5 * (_LOG_2PI + np.log(variances))[None, :]
            - 0.5 * d * d / variances[None, :])


def _loglik_and_resp(x, means, variances, weights):
    lp = _component_logpdf(x, means, variances, weights)
    top = lp.max(axis=1, keepdims=True)
    e = np.exp(lp - top)
    tot = e.sum(axis=1, keepdims=True)
    return float((top + np.log(tot)).sum()), e / tot


def initial_parameters(x: np.ndarray):
    """Means at the 10th/90th percentiles, shared sample variance, equal weights."""
    means = np.percentile(x, [10.0, 90.0])
    var = max(float(np.var(x)), VARIANCE_FLOOR)
    return means.astype(np.float64), np.array([var, var]), np.array([0.5, 0.5])


def fit_em(losses, max_iter: int = 100, tol: float = 1e-8, seed: int = 0) -> GmmModel:
    """Fit the mixture to min-max normalised losses.

    Initialisation is deterministic, so ``seed`` only exists for interface
    symmetry with the other fitting routines. Iteration stops once the
    log-likelihood gains less than ``tol`` or after ``max_iter`` EM steps.
    Component 0 is the one with the smaller mean on return.
    """
    raw = np.asarray(losses, dtype=np.float64).ravel()
    if raw.size < 4:
        raise ConfigError("fit_em needs at least 4 losses")
    if not np.all(np.isfinite(raw)):
        raise ConfigError("fit_em needs finite losses")
    lo, hi = float(raw.min()), float(raw.max())
    if not hi - lo > 1e-12 * max(1.0, abs(hi)):
        raise DegenerateFitError("all losses are identical; no separation evidence")
    x = (raw - lo) / (hi - lo)
    means, variances, weights = initial_parameters(x)
    ll, resp = _loglik_and_resp(x, means, variances, weights)
    trace = [ll]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        nk = resp.sum(axis=0)
        weights = nk / x.size
        means = (resp * x[:, None]).sum(axis=0) / nk
        d = x[:, None] - means[None, :]
        variances = np.maximum((resp * d * d).sum(axis=0) / nk, VARIANCE_FLOOR)
        new_ll, resp = _loglik_and_resp(x, means, variances, weights)
        if not math.isfinite(new_ll):
            raise NumericFault(f"EM produced a non-finite log-likelihood at iteration {n_iter}")
        if new_ll < ll - 1e-9 * (1.0 + abs(ll)):
            raise NumericFault(f"EM log-likelihood decreased at iteration {n_iter}: {ll} -> {new_ll}")
        trace.append(new_ll)
        improved = new_ll - ll
        ll = new_ll
        if improved < tol:
            break
    order = np.argsort(means, kind="stable")
    return GmmModel(means[order], variances[order], weights[order], lo, hi, n_iter, trace)


def component_posteriors(losses, model: GmmModel) -> np.ndarray:
    x = model.normalize(losses)
    _, resp = _loglik_and_resp(x, model.means, model.variances, model.weights)
    return resp


def posterior_clean(losses, model: GmmModel) -> np.ndarray:
    """Responsibility of the small-mean (clean) component for each loss."""
    return component_posteriors(losses, model)[:, 0]


def clean_probability(losses, max_iter: int = 100, tol: float = 1e-8):
    """Fit and evaluate in one go; falls back to all-ones on a degenerate fit.

    Returns ``(w_it, model_or_None)``.
    """
    try:
        model = fit_em(losses, max_iter=max_iter, tol=tol)
    except DegenerateFitError:
        return np.ones(np.asarray(losses).size), None
    return posterior_clean(losses, model), model
