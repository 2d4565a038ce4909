"""Per-epoch probability history and mean-probability quantile selection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

HISTOGRAM_BINS = 50


class ProbabilityHistory:
    """N x k matrix of each sample's predicted probability on its observed label.

    Columns must be written in epoch order, each exactly once.
    """

    def __init__(self, num_samples: int):
        self.num_samples = int(num_samples)
        self._columns: list[np.ndarray] = []

    @property
    def epoch_count(self) -> int:
        return len(self._columns)

    def record(self, epoch_index: int, per_sample_probs) -> "ProbabilityHistory":
        probs = np.asarray(per_sample_probs, dtype=np.float64)
        if probs.shape != (self.num_samples,):
            raise ShapeError(f"expected {self.num_samples} probabilities, got shape {probs.shape}")
        if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
            raise ConfigError("history probabilities must lie in [0, 1]")
        if epoch_index < self.epoch_count:
            raise UsageError(f"epoch {epoch_index} already recorded")
        if epoch_index != self.epoch_count:
            raise UsageError(f"epoch {epoch_index} recorded out of order "
                             f"(next expected {self.epoch_count})")
        self._columns.append(probs.copy())
        return self

    def __call__(self, epoch_index: int, per_sample_probs) -> None:
        # lets a history act directly as a warm-up history sink
        self.record(epoch_index, per_sample_probs)

    @property
    def matrix(self) -> np.ndarray:
        if not self._columns:
            return np.zeros((self.num_samples, 0))
        return np.stack(self._columns, axis=1)

    def save_csv(self, path, ids=None) -> None:
        h = self.matrix
        ids = np.arange(self.num_samples) if ids is None else np.asarray(ids)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id"] + [f"h_{j + 1}" for j in range(h.shape[1])])
            for i in range(h.shape[0]):
                writer.writerow([int(ids[i])] + [repr(float(v)) for v in h[i]])

    @classmethod
    def load_csv(cls, path) -> "ProbabilityHistory":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
        hist = cls(data.shape[0])
        for j in range(data.shape[1] if data.ndim == 2 else 0):
            hist.record(j, data[:, j])
        return hist


def mean_history(h) -> np.ndarray:
    """Row-wise arithmetic mean of the history matrix."""
    h = h.matrix if isinstance(h, ProbabilityHistory) else np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] < 1:
        raise ShapeError("mean_history needs at least one recorded epoch")
    return h.mean(axis=1)


def descending_order(values) -> np.ndarray:
    """Ids sorted by value descending, ties by ascending id."""
    values = np.asarray(values, dtype=np.float64)
    return np.lexsort((np.arange(values.size), -values))


def select_by_quantile(h_mean, tau_e: float, tau_n1: float):
    """Split ids into ``(easy, noisy, middle)`` by mean-probability rank.

    The top ``floor(N * tau_e)`` ids are easy and the bottom
    ``floor(N * tau_n1)`` are noisy; each returned array is sorted ascending.
    """
    if tau_e < 0 or tau_n1 < 0 or tau_e + tau_n1 > 1 + 1e-12:
        raise ConfigError(f"need tau_e, tau_n1 >= 0 and tau_e + tau_n1 <= 1, got {tau_e}, {tau_n1}")
    order = descending_order(h_mean)
    n = order.size
    n_easy = int(math.floor(n * tau_e + 1e-9))
    n_noisy = min(int(math.floor(n * tau_n1 + 1e-9)), n - n_easy)
    easy = np.sort(order[:n_easy])
    noisy = np.sort(order[n - n_noisy:]) if n_noisy else np.array([], dtype=np.int64)
    middle = np.sort(order[n_easy:n - n_noisy])
    return easy, noisy, middle


@dataclass
class SeparationReport:
    mean_clean: float
    mean_noisy: float
    std_clean: float
    std_noisy: float
    pooled_std: float
    n_clean: int
    n_noisy: int
    bin_edges: list
    clean_hist: list
    noisy_hist: list

    @property
    def gap(self) -> float:
        return self.mean_clean - self.mean_noisy

    def separated(self) -> bool:
        """Clean and noisy means differ by at least the pooled standard deviation."""
        return self.gap >= self.pooled_std

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["gap"] = self.gap
        return d


def _stat(values, fn):
    return float(fn(values)) if values.size else float("nan")


def separation_report(h_mean, flip_mask) -> SeparationReport:
    """Clean-vs-noisy statistics and 50-bin histograms of mean probability over [0, 1]."""
    h_mean = np.asarray(h_mean, dtype=np.float64)
    noisy_mask = np.asarray(flip_mask, dtype=bool)
    if noisy_mask.shape != h_mean.shape:
        raise ShapeError("flip mask and mean history must have the same length")
    clean, noisy = h_mean[~noisy_mask], h_mean[noisy_mask]
    edges = np.linspace(0.0, 1.0, HISTOGRAM_BINS + 1)
    ch, _ = np.histogram(clean, bins=edges)
    nh, _ = np.histogram(noisy, bins=edges)
    dof = clean.size + noisy.size - 2
    if dof > 0:
        ss = (np.sum((clean - clean.mean()) ** 2) if clean.size else 0.0) + \
             (np.sum((noisy - noisy.mean()) ** 2) if noisy.size else 0.0)
        pooled = math.sqrt(ss / dof)
    else:
        pooled = float("nan")
    return SeparationReport(
        mean_clean=_stat(clean, np.mean), mean_noisy=_stat(noisy, np.mean),
        std_clean=_stat(clean, np.std), std_noisy=_stat(noisy, np.std), pooled_std=pooled,
        n_clean=int(clean.size), n_noisy=int(noisy.size), bin_edges=edges.tolist(),
        clean_hist=ch.tolist(), noisy_hist=nh.tolist(),
    )
