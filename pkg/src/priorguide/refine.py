"""Co-guessed pseudo-labels and their correction through a transition matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import forward
from .divide import DividedSets
from .errors import ShapeError

RIDGE = 1e-3
MAX_CONDITION = 1e8


def sharpen(p: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 1.0:
        return p / p.sum(axis=1, keepdims=True)
    # work in log space so small temperatures do not underflow
    logp = np.log(np.maximum(p, 1e-300)) / temperature
    logp -= logp.max(axis=1, keepdims=True)
    q = np.exp(logp)
    return q / q.sum(axis=1, keepdims=True)


def co_guess(model_a, model_b, features: np.ndarray, n_aug: int = 2, jitter: float = 0.05,
             temperature: float = 0.5, rng: np.random.Generator | None = None) -> np.ndarray:
    """Sharpened average of both models' softmax over jittered copies.

    Each of the ``n_aug`` copies adds Gaussian noise with per-feature standard
    deviation ``jitter * std(feature)``; ``jitter=0`` evaluates the clean
    features once.
    """
    x = np.asarray(features, dtype=np.float64)
    if jitter > 0 and n_aug > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        scale = jitter * x.std(axis=0)
        views = [x + rng.standard_normal(x.shape) * scale for _ in range(n_aug)]
    else:
        views = [x]
    total = np.zeros((x.shape[0], model_a.num_classes))
    for v in views:
        total += forward(model_a, v) + forward(model_b, v)
    return sharpen(total / (2 * len(views)), temperature)


@dataclass
class TransitionMatrix:
    T: np.ndarray
    missing_rows: list = field(default_factory=list)

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.T))


def estimate_T(probs, labels, num_classes: int) -> TransitionMatrix:
    """Row i is the mean predicted distribution of easy samples labelled i.

    Classes without any easy sample fall back to an identity row and are
    listed in ``missing_rows``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[1] != num_classes or labels.shape != (probs.shape[0],):
        raise ShapeError("estimate_T needs an (n, C) probability matrix and n labels")
    T = np.eye(num_classes)
    missing = []
    for i in range(num_classes):
        rows = probs[labels == i]
        if rows.shape[0]:
            T[i] = rows.mean(axis=0)
        else:
            missing.append(i)
    return TransitionMatrix(T, missing)


@dataclass
class RefineInfo:
    condition_number: float
    ridge_used: bool
    collapsed_rows: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def refine_pseudo(P, T, ridge: float = RIDGE, max_condition: float = MAX_CONDITION,
                  return_info: bool = False):
    """``P T^-1``, negatives clamped to zero, rows renormalised.

    A near-singular ``T`` is replaced by ``T + ridge * I`` before inversion. A
    row that is all zero after clamping keeps its unrefined value.
    """
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T.T if isinstance(T, TransitionMatrix) else T, dtype=np.float64)
    c = T.shape[0]
    if T.shape != (c, c) or P.ndim != 2 or P.shape[1] != c:
        raise ShapeError("refine_pseudo needs P of shape (n, C) and a C x C matrix")
    cond = float(np.linalg.cond(T))
    ridge_used = not np.isfinite(cond) or cond > max_condition
    A = T + ridge * np.eye(c) if ridge_used else T
    # rows of P T^-1 solve x A = p, i.e. A^T x^T = p^T
    refined = np.linalg.solve(A.T, P.T).T
    refined = np.maximum(refined, 0.0)
    sums = refined.sum(axis=1, keepdims=True)
    collapsed = (sums[:, 0] <= 0) | ~np.isfinite(sums[:, 0])
    # rows already on the simplex to rounding are left bit-identical
    rescale = ~collapsed & (np.abs(sums[:, 0] - 1.0) > 1e-12)
    refined[rescale] /= sums[rescale]
    refined[collapsed] = P[collapsed]
    if return_info:
        return refined, RefineInfo(cond, bool(ridge_used), int(collapsed.sum()))
    return refined


def combine_label(y, p, w):
    """Convex combination ``w * y + (1 - w) * p`` (broadcasts over rows)."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1 and y.ndim == 2:
        w = w[:, None]
    return w * y + (1.0 - w) * p


def relabel(divided: DividedSets, P_refined, labels, num_classes: int) -> np.ndarray:
    """Training targets: one-hot on easy, combined on hard, pseudo-label on noisy."""
    labels = np.asarray(labels, dtype=np.int64)
    targets = np.eye(num_classes)[labels]
    P_refined = np.asarray(P_refined, dtype=np.float64)
    if divided.hard.size:
        targets[divided.hard] = combine_label(targets[divided.hard], P_refined[divided.hard],
                                              divided.w[divided.hard])
    if divided.noisy.size:
        targets[divided.noisy] = P_refined[divided.noisy]
    return targets
