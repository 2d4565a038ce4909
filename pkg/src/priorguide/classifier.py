"""Multi-layer perceptron with softmax output, trained by momentum SGD.

Everything is plain numpy in float64. The same model class serves as the
warm-up classifier, the history recorder inside prior generation, and each of
the two co-trained networks.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericFault, ShapeError
from .seeding import make_rng

CHECKPOINT_FORMAT = "priorguide.mlp"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    lr_decay_epoch: int = 0
    lr_decay_factor: float = 0.1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def lr_at(self, epoch: int) -> float:
        """Learning rate with a single optional step decay."""
        if self.lr_decay_epoch > 0 and epoch >= self.lr_decay_epoch:
            return self.learning_rate * self.lr_decay_factor
        return self.learning_rate


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    return p * (grad_p - np.sum(grad_p * p, axis=1, keepdims=True))


class MLP:
    """Fully connected tanh network ``d -> hidden... -> C``.

    ``weights[l]`` has shape ``(fan_in, fan_out)``. Momentum buffers live on
    the instance and are carried through checkpoints only implicitly (they are
    reset on load).
    """

    def __init__(self, layer_sizes: Sequence[int], weights, biases):
        self.layer_sizes = [int(s) for s in layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ShapeError("an MLP needs at least an input and an output layer")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[l], self.layer_sizes[l + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ShapeError(f"layer {l}: expected weight {shape}, got {w.shape}")
        self.velocity = [np.zeros_like(p) for p in self.params()]

    @classmethod
    def init(cls, input_dim: int, hidden: Sequence[int], num_classes: int, seed: int) -> "MLP":
        sizes = [int(input_dim), *[int(h) for h in hidden], int(num_classes)]
        rng = make_rng(seed, "mlp-init")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int]) -> "MLP":
        sizes = list(layer_sizes)
        return cls(sizes, [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MLP":
        m = MLP(self.layer_sizes, self.weights, self.biases)
        m.velocity = [v.copy() for v in self.velocity]
        return m

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        offset = 0
        for p in self.params():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != flat.size:
            raise ShapeError(f"expected {offset} parameters, got {flat.size}")

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected batch with {self.input_dim} features, got shape {x.shape}")
        return x

    def forward_cache(self, x: np.ndarray):
        """Return ``(logits, cache)`` where ``cache`` holds each layer's input."""
        a = self._check_input(x)
        inputs = []
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ w + b
            a = z if l == last else np.tanh(z)
        return a, inputs

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cache(x)[0]

    def backward(self, cache, grad_logits: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given dLoss/dlogits; order matches ``params()``."""
        grads = [None] * (2 * len(self.weights))
        delta = grad_logits
        for l in range(len(self.weights) - 1, -1, -1):
            a_in = cache[l]
            grads[2 * l] = a_in.T @ delta
            grads[2 * l + 1] = delta.sum(axis=0)
            if l > 0:
                # a_in = tanh(z) of the previous layer
                delta = (delta @ self.weights[l].T) * (1.0 - a_in * a_in)
        return grads

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "activation": "tanh",
            "layer_sizes": list(self.layer_sizes),
            "params": [float(v) for v in self.flat_params()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MLP":
        if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
            raise ShapeError("unrecognised checkpoint format or version")
        model = cls.zeros(data["layer_sizes"])
        model.set_flat_params(np.array(data["params"], dtype=np.float64))
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MLP":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def forward(model: MLP, batch: np.ndarray) -> np.ndarray:
    """Class-probability matrix, one row per sample."""
    return softmax(model.logits(batch))


def predict(model: MLP, batch: np.ndarray) -> np.ndarray:
    return np.argmax(model.logits(batch), axis=1)


def accuracy(model_or_models, features: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of one model or of the averaged softmax of several."""
    models = model_or_models if isinstance(model_or_models, (list, tuple)) else [model_or_models]
    probs = sum(forward(m, features) for m in models)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy against (possibly soft) target rows."""
    return -np.sum(targets * log_softmax(logits), axis=1)


def evaluate(model: MLP, features: np.ndarray, labels: np.ndarray):
    """Per-sample CE loss and probability on ``labels`` under a frozen model."""
    logits = model.logits(features)
    logp = log_softmax(logits)
    rows = np.arange(len(labels))
    return -logp[rows, labels], np.exp(logp[rows, labels])


def weighted_ce_grads(model: MLP, x: np.ndarray, targets: np.ndarray, weights: np.ndarray):
    """Loss ``mean_i(weights_i * CE_i)`` and its parameter gradients."""
    logits, cache = model.forward_cache(x)
    p = softmax(logits)
    per = cross_entropy(logits, targets)
    n = x.shape[0]
    loss = float(np.sum(weights * per) / n)
    # dCE/dz = p * sum(t) - t, which is p - t for targets on the simplex
    grad_z = weights[:, None] * (p * targets.sum(axis=1, keepdims=True) - targets) / n
    return loss, model.backward(cache, grad_z)


def sgd_step(model: MLP, grads, lr: float, momentum: float, weight_decay: float) -> None:
    """In-place update ``v = mu*v + (g + wd*p); p -= lr*v``."""
    for p, g, v in zip(model.params(), grads, model.velocity):
        g = g + weight_decay * p if weight_decay else g
        v *= momentum
        v += g
        p -= lr * v


def _check_finite(value: float, what: str) -> None:
    if not math.isfinite(value):
        raise NumericFault(f"non-finite {what}: {value}")


def train_epoch(model: MLP, features: np.ndarray, targets: np.ndarray, sample_weights: np.ndarray,
                config: TrainConfig, epoch: int = 0):
    """One seeded pass of mini-batch momentum SGD over all samples.

    Returns ``(model, losses)``; ``losses`` are per-sample cross-entropies of
    the model as it was before this epoch's first update. The model is updated
    in place.
    """
    x = model._check_input(features)
    targets = np.asarray(targets, dtype=np.float64)
    w = np.asarray(sample_weights, dtype=np.float64)
    if targets.shape != (x.shape[0], model.num_classes) or w.shape != (x.shape[0],):
        raise ShapeError("targets must be (N, C) and sample_weights (N,)")
    if np.any(w < 0):
        raise ConfigError("sample weights must be non-negative")
    losses = cross_entropy(model.logits(x), targets)
    if not np.all(np.isfinite(losses)):
        raise NumericFault(f"epoch {epoch}: non-finite evaluation loss")
    lr = config.lr_at(epoch)
    order = make_rng(config.seed, "epoch", epoch).permutation(x.shape[0])
    for start in range(0, x.shape[0], config.batch_size):
        idx = order[start:start + config.batch_size]
        loss, grads = weighted_ce_grads(model, x[idx], targets[idx], w[idx])
        if not math.isfinite(loss):
            raise NumericFault(f"epoch {epoch}, batch at offset {start}: non-finite loss {loss}")
        sgd_step(model, grads, lr, config.momentum, config.weight_decay)
    return model, losses


def gradient_check(model: MLP, batch: np.ndarray, targets: np.ndarray, epsilon: float = 1e-4,
                   weights: np.ndarray | None = None, floor: float = 1e-7) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per parameter is ``|a - n| / max(|a| + |n|, floor)``; the
    floor keeps parameters with vanishing gradient from dividing by zero.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ConfigError("epsilon must lie in [1e-6, 1e-3]")
    x = model._check_input(batch)
    targets = np.asarray(targets, dtype=np.float64)
    w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    probe = model.copy()
    _, grads = weighted_ce_grads(probe, x, targets, w)
    analytic = np.concatenate([g.ravel() for g in grads])
    theta = probe.flat_params()
    numeric = np.empty_like(theta)

    def loss_at(vec):
        probe.set_flat_params(vec)
        return float(np.sum(w * cross_entropy(probe.logits(x), targets)) / x.shape[0])

    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] += epsilon
        up = loss_at(bumped)
        bumped[i] -= 2 * epsilon
        down = loss_at(bumped)
        numeric[i] = (up - down) / (2 * epsilon)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(rel.max()) if rel.size else 0.0


HistorySink = Callable[[int, np.ndarray], None]


def warmup_train(model: MLP, dataset, config: TrainConfig,
                 history_sink: HistorySink | None = None, epoch_offset: int = 0) -> MLP:
    """Plain cross-entropy training on observed labels with unit weights.

    After every epoch ``history_sink(epoch, probs)`` receives each sample's
    probability on its observed label, measured on the updated model.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot warm up on an empty dataset")
    targets = dataset.one_hot()
    ones = np.ones(len(dataset))
    for e in range(config.epochs):
        train_epoch(model, dataset.features, targets, ones, config, epoch=epoch_offset + e)
        if history_sink is not None:
            _, probs = evaluate(model, dataset.features, dataset.labels)
            history_sink(e, probs)
    return model
