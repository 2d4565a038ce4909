"""Prior generation: easy / hard / noisy pre-classification from training history.

The pipeline trains a classifier on the data while recording each sample's
probability on its observed label, takes the most and least confident
samples as easy and noisy, and resolves the ambiguous middle band with a
small 1-D CNN (the history classifier). That CNN is trained on an artificial
copy of the easy set whose labels are corrupted at the dataset's noise ratio,
so the flip mask of the copy supplies ground truth for hard vs noisy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import MLP, TrainConfig, softmax, warmup_train
from .dataset import LabeledDataset, NoiseSpec, inject_noise
from .errors import DegenerateTrainingError, PriorGenerationError, ShapeError
from .history import ProbabilityHistory, mean_history, select_by_quantile
from .seeding import child_seed, make_rng

HARD, NOISY = 0, 1


@dataclass(frozen=True)
class PriorConfig:
    channels: tuple[int, ...] = (8, 16, 16)
    kernel: int = 3
    epochs: int = 50
    learning_rate: float = 0.5
    momentum: float = 0.9
    patience: int = 5
    min_improvement: float = 1e-5
    retrain_from_scratch: bool = True
    exclude_self: bool = False


class HistoryClassifier:
    """Three same-padded 1-D convolutions, global average pooling, one dense layer.

    Input is a batch of history rows ``(B, k)``; output is a 2-way softmax over
    ``(hard, noisy)``. Rows are rescaled from [0, 1] to [-1, 1] before the
    first convolution.
    """

    def __init__(self, conv_weights, conv_biases, fc_weight, fc_bias, input_length: int):
        self.conv_weights = [np.array(w, dtype=np.float64) for w in conv_weights]
        self.conv_biases = [np.array(b, dtype=np.float64) for b in conv_biases]
        self.fc_weight = np.array(fc_weight, dtype=np.float64)
        self.fc_bias = np.array(fc_bias, dtype=np.float64)
        self.input_length = int(input_length)
        self.velocity = [np.zeros_like(p) for p in self.params()]

    @classmethod
    def init(cls, input_length: int, channels: Sequence[int] = (8, 16, 16), kernel: int = 3,
             seed: int = 0) -> "HistoryClassifier":
        rng = make_rng(seed, "history-cnn")
        ws, bs = [], []
        c_in = 1
        for c_out in channels:
            bound = math.sqrt(6.0 / (c_in * kernel + c_out * kernel))
            ws.append(rng.uniform(-bound, bound, size=(c_out, c_in, kernel)))
            bs.append(np.zeros(c_out))
            c_in = c_out
        bound = math.sqrt(6.0 / (c_in + 2))
        return cls(ws, bs, rng.uniform(-bound, bound, size=(c_in, 2)), np.zeros(2), input_length)

    @classmethod
    def zeros(cls, input_length: int, channels: Sequence[int] = (8, 16, 16),
              kernel: int = 3) -> "HistoryClassifier":
        ws, c_in = [], 1
        for c_out in channels:
            ws.append(np.zeros((c_out, c_in, kernel)))
            c_in = c_out
        return cls(ws, [np.zeros(c) for c in channels], np.zeros((c_in, 2)), np.zeros(2),
                   input_length)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.conv_weights, self.conv_biases):
            out.extend((w, b))
        out.extend((self.fc_weight, self.fc_bias))
        return out

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat_params(self, flat) -> None:
        offset = 0
        for p in self.params():
            p[...] = np.asarray(flat[offset:offset + p.size]).reshape(p.shape)
            offset += p.size

    def _prepare(self, rows) -> np.ndarray:
        h = np.asarray(rows, dtype=np.float64)
        if h.ndim == 1:
            h = h[None, :]
        if h.ndim != 2 or h.shape[1] != self.input_length:
            raise ShapeError(f"history rows must have length {self.input_length}, got shape {h.shape}")
        return (2.0 * h - 1.0)[:, None, :]

    def forward_cache(self, rows):
        a = self._prepare(rows)
        cache = []
        for w, b in zip(self.conv_weights, self.conv_biases):
            k = w.shape[2]
            pad = k // 2
            ap = np.pad(a, ((0, 0), (0, 0), (pad, k - 1 - pad)))
            win = np.lib.stride_tricks.sliding_window_view(ap, k, axis=2)  # (B, Cin, L, K)
            z = np.einsum("bclk,ock->bol", win, w) + b[None, :, None]
            a = np.tanh(z)
            cache.append((win, a, ap.shape))
        pooled = a.mean(axis=2)
        logits = pooled @ self.fc_weight + self.fc_bias
        return logits, (cache, pooled)

    def predict_proba(self, rows) -> np.ndarray:
        return softmax(self.forward_cache(rows)[0])

    def backward(self, cache, grad_logits: np.ndarray) -> list[np.ndarray]:
        conv_cache, pooled = cache
        g_fc_w = pooled.T @ grad_logits
        g_fc_b = grad_logits.sum(axis=0)
        length = conv_cache[-1][1].shape[2]
        grad_a = np.repeat((grad_logits @ self.fc_weight.T)[:, :, None], length, axis=2) / length
        grads = []
        for l in range(len(self.conv_weights) - 1, -1, -1):
            win, a, padded_shape = conv_cache[l]
            w = self.conv_weights[l]
            k = w.shape[2]
            pad = k // 2
            grad_z = grad_a * (1.0 - a * a)
            g_w = np.einsum("bol,bclk->ock", grad_z, win)
            g_b = grad_z.sum(axis=(0, 2))
            grads.append((g_w, g_b))
            if l > 0:
                grad_ap = np.zeros(padded_shape)
                for j in range(k):
                    grad_ap[:, :, j:j + length] += np.einsum("bol,oc->bcl", grad_z, w[:, :, j])
                grad_a = grad_ap[:, :, pad:pad + length]
        out = []
        for g_w, g_b in reversed(grads):
            out.extend((g_w, g_b))
        out.extend((g_fc_w, g_fc_b))
        return out

    def loss_and_grads(self, rows, labels, class_weights=None):
        """Class-weighted mean cross-entropy over (hard, noisy) labels."""
        labels = np.asarray(labels, dtype=np.int64)
        cw = np.ones(2) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
        logits, cache = self.forward_cache(rows)
        p = softmax(logits)
        w = cw[labels]
        n = labels.size
        rows_idx = np.arange(n)
        loss = float(-np.sum(w * np.log(np.maximum(p[rows_idx, labels], 1e-300))) / n)
        grad = p.copy()
        grad[rows_idx, labels] -= 1.0
        grad *= w[:, None] / n
        return loss, self.backward(cache, grad)


def fit_history_classifier(rows, labels, config: PriorConfig, seed: int) -> HistoryClassifier:
    """Full-batch momentum gradient descent with inverse-frequency class weights.

    Stops after ``config.epochs`` steps, or earlier once the loss has improved
    by less than ``config.min_improvement`` over the last ``config.patience`` steps.
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if rows.shape[0] == 0:
        raise PriorGenerationError("history classifier has no training rows")
    counts = np.bincount(labels, minlength=2)
    if np.count_nonzero(counts) < 2:
        raise DegenerateTrainingError("history classifier training labels contain a single class")
    class_weights = labels.size / (2.0 * counts)
    model = HistoryClassifier.init(rows.shape[1], config.channels, config.kernel, seed)
    losses = []
    for _ in range(config.epochs):
        loss, grads = model.loss_and_grads(rows, labels, class_weights)
        losses.append(loss)
        if (len(losses) > config.patience
                and losses[-config.patience - 1] - loss < config.min_improvement):
            break
        for p, g, v in zip(model.params(), grads, model.velocity):
            v *= config.momentum
            v += g
            p -= config.learning_rate * v
    model.training_losses = losses
    return model


def record_history(model: MLP, dataset: LabeledDataset, trainer_config: TrainConfig) -> ProbabilityHistory:
    hist = ProbabilityHistory(len(dataset))
    warmup_train(model, dataset, trainer_config, history_sink=hist)
    return hist


def build_Da(dataset: LabeledDataset, easy_ids, tau: float, seed: int, exclude_self: bool = False):
    """Copy of the easy subset with symmetric noise at ratio ``tau``.

    Returns ``(D_a, R)``; ``R.flipped[j]`` marks whether ``D_a``'s j-th sample
    (``easy_ids[j]`` of the original) now carries a wrong label. The copy's
    true labels are the original observed labels, which the easy set trusts.
    """
    easy_ids = np.asarray(easy_ids, dtype=np.int64)
    if easy_ids.size == 0:
        raise PriorGenerationError("easy set is empty; cannot build the artificial noisy set")
    base = dataset.subset(easy_ids)
    trusted = LabeledDataset(base.features, base.labels, base.num_classes, base.labels)
    return inject_noise(trusted, NoiseSpec("symmetric", tau, exclude_self=exclude_self), seed)


def train_Mm(D_a: LabeledDataset, R, tau_e: float, tau_n1: float, classifier_config: PriorConfig,
             trainer_config: TrainConfig, seed: int, init_model: MLP | None = None):
    """Record a history on ``D_a`` and fit the history classifier on its middle band.

    Returns ``(history_classifier, H_n)``. ``init_model`` seeds the retraining
    when fine-tuning instead of starting from scratch.
    """
    if init_model is None:
        model = MLP.init(D_a.feature_dim, trainer_config.hidden, D_a.num_classes,
                         child_seed(seed, "Mc-retrain"))
    else:
        model = init_model.copy()
        model.velocity = [np.zeros_like(v) for v in model.velocity]
    h_n = record_history(model, D_a, trainer_config.replace(seed=child_seed(seed, "Da-train")))
    _, _, middle = select_by_quantile(mean_history(h_n), tau_e, tau_n1)
    if middle.size == 0:
        raise PriorGenerationError("middle band of the artificial set is empty")
    flipped = np.asarray(getattr(R, "flipped", R), dtype=bool)
    mm = fit_history_classifier(h_n.matrix[middle], flipped[middle].astype(np.int64),
                                classifier_config, child_seed(seed, "Mm-fit"))
    return mm, h_n


def classify_middle(mm: HistoryClassifier, rows):
    """Returns ``(p_h, p_n, is_hard)``; an exact 0.5 tie counts as noisy."""
    probs = mm.predict_proba(rows)
    p_h = probs[:, HARD].copy()
    p_n = 1.0 - p_h
    return p_h, p_n, p_h > 0.5


@dataclass
class PriorPartition:
    num_samples: int
    easy: np.ndarray
    hard: np.ndarray
    noisy_direct: np.ndarray
    noisy_classified: np.ndarray
    middle: np.ndarray
    p_h: np.ndarray
    p_n: np.ndarray
    tau: float = float("nan")
    tau_e: float = float("nan")
    tau_n1: float = float("nan")
    flags: dict = field(default_factory=dict)
    # diagnostics, not serialised
    history: ProbabilityHistory | None = field(default=None, repr=False)
    da_ids: np.ndarray | None = field(default=None, repr=False)
    da_history: ProbabilityHistory | None = field(default=None, repr=False)
    da_flipped: np.ndarray | None = field(default=None, repr=False)

    @property
    def noisy(self) -> np.ndarray:
        return np.sort(np.concatenate([self.noisy_direct, self.noisy_classified]))

    def easy_mask(self) -> np.ndarray:
        m = np.zeros(self.num_samples, dtype=bool)
        m[self.easy] = True
        return m

    def validate(self) -> None:
        allids = np.concatenate([self.easy, self.hard, self.noisy_direct, self.noisy_classified])
        if allids.size != self.num_samples or not np.array_equal(np.sort(allids), np.arange(self.num_samples)):
            raise PriorGenerationError("prior sets do not partition the sample ids")
        if self.p_h.shape != self.middle.shape or self.p_n.shape != self.middle.shape:
            raise PriorGenerationError("p_h / p_n must align with the middle band")

    def to_dict(self) -> dict:
        return {
            "num_samples": int(self.num_samples),
            "tau": self.tau, "tau_e": self.tau_e, "tau_n1": self.tau_n1,
            "easy": self.easy.tolist(),
            "hard": self.hard.tolist(),
            "noisy_direct": self.noisy_direct.tolist(),
            "noisy_classified": self.noisy_classified.tolist(),
            "middle": self.middle.tolist(),
            "p_h": [float(v) for v in self.p_h],
            "p_n": [float(v) for v in self.p_n],
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorPartition":
        arr = lambda k: np.asarray(d[k], dtype=np.int64)
        part = cls(int(d["num_samples"]), arr("easy"), arr("hard"), arr("noisy_direct"),
                   arr("noisy_classified"), arr("middle"), np.asarray(d["p_h"], dtype=np.float64),
                   np.asarray(d["p_n"], dtype=np.float64), float(d.get("tau", "nan")),
                   float(d.get("tau_e", "nan")), float(d.get("tau_n1", "nan")),
                   dict(d.get("flags", {})))
        part.validate()
        return part

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PriorPartition":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def default_quantiles(tau: float) -> tuple[float, float]:
    """Easy and direct-noisy fractions for noise ratio ``tau``."""
    return 0.5 * (1.0 - tau), 0.5 * tau


def generate_prior(dataset: LabeledDataset, trainer_config: TrainConfig, tau: float,
                   tau_e: float | None = None, tau_n1: float | None = None, seed: int = 0,
                   config: PriorConfig | None = None) -> PriorPartition:
    """Run the whole prior-generation pipeline and return the partition."""
    config = config or PriorConfig()
    auto_e, auto_n1 = default_quantiles(tau)
    tau_e = auto_e if tau_e is None else tau_e
    tau_n1 = auto_n1 if tau_n1 is None else tau_n1
    flags: dict = {}

    mc = MLP.init(dataset.feature_dim, trainer_config.hidden, dataset.num_classes,
                  child_seed(seed, "Mc-init"))
    hist = record_history(mc, dataset, trainer_config.replace(seed=child_seed(seed, "Mc-train")))
    easy, noisy_direct, middle = select_by_quantile(mean_history(hist), tau_e, tau_n1)

    d_a, r = build_Da(dataset, easy, tau, child_seed(seed, "Da-noise"), config.exclude_self)
    init = None if config.retrain_from_scratch else mc
    h_n = None
    try:
        mm, h_n = train_Mm(d_a, r, tau_e, tau_n1, config, trainer_config, child_seed(seed, "Mm"),
                           init_model=init)
    except DegenerateTrainingError:
        # no corrupted (or no clean) rows in the artificial middle band: there is
        # nothing to learn, so the single observed class decides the middle band
        mm = None
        flags["history_classifier_fallback"] = True

    if middle.size == 0:
        p_h = np.zeros(0)
        is_hard = np.zeros(0, dtype=bool)
    elif mm is None:
        all_noisy = bool(np.all(r.flipped)) and r.flipped.size > 0
        p_h = np.full(middle.size, 0.0 if all_noisy else 1.0)
        is_hard = p_h > 0.5
    else:
        p_h, _, is_hard = classify_middle(mm, hist.matrix[middle])
    p_n = 1.0 - p_h

    part = PriorPartition(
        num_samples=len(dataset), easy=easy, hard=middle[is_hard], noisy_direct=noisy_direct,
        noisy_classified=middle[~is_hard], middle=middle, p_h=p_h, p_n=p_n,
        tau=float(tau), tau_e=float(tau_e), tau_n1=float(tau_n1), flags=flags,
        history=hist, da_ids=easy, da_history=h_n, da_flipped=np.asarray(r.flipped),
    )
    part.validate()
    return part
