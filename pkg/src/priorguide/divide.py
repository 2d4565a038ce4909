"""Fusion of prior and loss-based clean probabilities into easy/hard/noisy sets."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .prior import PriorPartition

EASY, HARD, NOISY = "easy", "hard", "noisy"


def prior_clean_prob(partition: PriorPartition) -> np.ndarray:
    """Clean probability implied by the prior partition alone.

    1 on the easy set, ``p_h`` on the hard set, ``1 - p_n`` on the classified
    noisy set and 0 on the directly selected noisy set.
    """
    w = np.zeros(partition.num_samples)
    w[partition.easy] = 1.0
    pos = {int(i): j for j, i in enumerate(partition.middle)}
    hard_j = np.array([pos[int(i)] for i in partition.hard], dtype=np.int64)
    n2_j = np.array([pos[int(i)] for i in partition.noisy_classified], dtype=np.int64)
    if hard_j.size:
        w[partition.hard] = partition.p_h[hard_j]
    if n2_j.size:
        w[partition.noisy_classified] = 1.0 - partition.p_n[n2_j]
    w[partition.noisy_direct] = 0.0
    return w


def fuse(w_it, w_ip, easy_mask, m: float) -> np.ndarray:
    """``m * w_it + (1 - m) * w_ip`` off the prior-easy set, exactly 1 on it."""
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"fusion coefficient m must lie in [0, 1], got {m}")
    w_it = np.asarray(w_it, dtype=np.float64)
    w_ip = np.asarray(w_ip, dtype=np.float64)
    easy_mask = np.asarray(easy_mask, dtype=bool)
    w = m * w_it + (1.0 - m) * w_ip
    w[easy_mask] = 1.0
    return w


@dataclass
class DividedSets:
    easy: np.ndarray
    hard: np.ndarray
    noisy: np.ndarray
    w: np.ndarray

    @property
    def labeled(self) -> np.ndarray:
        return np.sort(np.concatenate([self.easy, self.hard]))

    def set_names(self) -> np.ndarray:
        names = np.empty(self.w.size, dtype=object)
        names[self.easy] = EASY
        names[self.hard] = HARD
        names[self.noisy] = NOISY
        return names

    def sizes(self) -> dict:
        return {EASY: int(self.easy.size), HARD: int(self.hard.size), NOISY: int(self.noisy.size)}

    def quality(self, flip_mask) -> dict:
        """Dividing precision/recall against a known flip mask."""
        noisy_truth = np.asarray(flip_mask, dtype=bool)
        n_noisy = int(noisy_truth.sum())

        def frac_clean(ids):
            return float(np.mean(~noisy_truth[ids])) if ids.size else float("nan")

        caught = int(noisy_truth[self.noisy].sum())
        return {
            "easy_purity": frac_clean(self.easy),
            "hard_purity": frac_clean(self.hard),
            "labeled_precision": frac_clean(self.labeled),
            "noisy_precision": float(caught / self.noisy.size) if self.noisy.size else float("nan"),
            "noisy_recall": float(caught / n_noisy) if n_noisy else float("nan"),
        }


def assign_sets(w_i, easy_mask=None, easy_threshold: float = 1.0) -> DividedSets:
    """Easy / hard / noisy assignment from fused clean probabilities.

    With ``easy_mask`` (the prior-easy branch) easy membership is the branch
    itself, not a float comparison. Without it a sample is easy when
    ``w_i >= easy_threshold``. Among the rest, ``w_i > 0.5`` is hard and
    everything else, the 0.5 boundary included, is noisy.
    """
    w = np.asarray(w_i, dtype=np.float64)
    if easy_mask is None:
        easy = w >= easy_threshold
    else:
        easy = np.asarray(easy_mask, dtype=bool)
    hard = ~easy & (w > 0.5)
    noisy = ~easy & ~hard
    return DividedSets(np.flatnonzero(easy), np.flatnonzero(hard), np.flatnonzero(noisy), w.copy())


def save_divide_csv(path, w_ip, w_it, divided: DividedSets) -> None:
    names = divided.set_names()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "w_ip", "w_it", "w_i", "set"])
        for i in range(divided.w.size):
            wip = "" if w_ip is None else repr(float(w_ip[i]))
            writer.writerow([i, wip, repr(float(w_it[i])), repr(float(divided.w[i])), names[i]])
