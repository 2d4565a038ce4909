"""MixMatch-style mixing, the hard-sample reweighted loss, and the co-training loop."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import gmm
from .classifier import (MLP, TrainConfig, accuracy, evaluate, log_softmax, sgd_step, softmax,
                         softmax_backward, train_epoch)
from .dataset import LabeledDataset, estimate_noise_ratio
from .divide import DividedSets, assign_sets, fuse, prior_clean_prob
from .errors import ConfigError, NumericFault, TrainingError
from .prior import PriorConfig, PriorPartition, generate_prior
from .refine import co_guess, estimate_T, refine_pseudo, relabel
from .seeding import child_seed, make_rng

NETWORK_NAMES = ("A", "B")


@dataclass(frozen=True)
class PgdfConfig:
    m: float = 0.5
    r: float = 2.0
    alpha: float = 4.0
    lambda_u: float = 6.25
    lambda_r: float = 1.0
    rampup: int = 16
    epochs: int = 50
    warm_up: int = 10
    seed: int = 0
    tau: float | None = None
    tau_e: float | None = None
    tau_n1: float | None = None
    prior_epochs: int = 10
    prior: PriorConfig = field(default_factory=PriorConfig)
    prior_refresh_every: int = 0
    use_prior: bool = True
    two_networks: bool = True
    refine: bool = True
    easy_threshold: float = 0.95
    refit_every: int = 1
    n_aug: int = 2
    jitter: float = 0.05
    temperature: float = 0.5
    gmm_max_iter: int = 100
    gmm_tol: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.m <= 1.0:
            raise ConfigError("m must lie in [0, 1]")
        if self.r < 0:
            raise ConfigError("r must be >= 0")
        if not self.alpha > 0:
            raise ConfigError("alpha must be > 0")
        if self.warm_up < 0 or self.epochs < self.warm_up:
            raise ConfigError("need 0 <= warm_up <= epochs")
        if self.refit_every < 1:
            raise ConfigError("refit_every must be >= 1")
        if self.tau is not None and not 0.0 <= self.tau < 1.0:
            raise ConfigError("tau must lie in [0, 1)")

    def replace(self, **changes) -> "PgdfConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class MixBatch:
    x: np.ndarray
    p: np.ndarray
    partner: np.ndarray
    lam: np.ndarray
    n_labeled: int
    weights: np.ndarray

    @property
    def labeled(self):
        return self.x[:self.n_labeled], self.p[:self.n_labeled]

    @property
    def unlabeled(self):
        return self.x[self.n_labeled:], self.p[self.n_labeled:]


def mix(x_l, p_l, w_l, x_u, p_u, alpha: float, rng: np.random.Generator, lam=None) -> MixBatch:
    """Interpolate every sample with a partner drawn from the union of both sets.

    Each row gets its own ``lam' = max(lam, 1 - lam)`` with ``lam ~ Beta(alpha,
    alpha)`` unless ``lam`` is given. Partners are a random permutation of the
    combined batch. The first ``len(x_l)`` rows form the labeled branch and keep
    the weight of their labeled constituent.
    """
    x_l = np.asarray(x_l, dtype=np.float64)
    if x_l.shape[0] == 0:
        raise TrainingError("labeled set is empty; cannot mix")
    x_u = np.asarray(x_u, dtype=np.float64).reshape(-1, x_l.shape[1])
    x = np.concatenate([x_l, x_u])
    p = np.concatenate([np.asarray(p_l, dtype=np.float64),
                        np.asarray(p_u, dtype=np.float64).reshape(-1, np.shape(p_l)[1])])
    n = x.shape[0]
    if lam is None:
        lam = rng.beta(alpha, alpha, size=n)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    lam = np.maximum(lam, 1.0 - lam)
    partner = rng.permutation(n)
    x_mix = lam[:, None] * x + (1.0 - lam[:, None]) * x[partner]
    p_mix = lam[:, None] * p + (1.0 - lam[:, None]) * p[partner]
    return MixBatch(x_mix, p_mix, partner, lam, x_l.shape[0], np.asarray(w_l, dtype=np.float64))


def enhancement_weights(w, r: float) -> np.ndarray:
    """Per-sample factor ``1 / w**r`` for labeled terms."""
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise ConfigError("labeled samples need clean probability w > 0")
    return w ** (-r)


def loss_labeled(probs, targets, w, r: float) -> float:
    """Mean over the labeled branch of ``CE(target, output) / w**r``."""
    probs = np.asarray(probs, dtype=np.float64)
    ce = -np.sum(np.asarray(targets) * np.log(np.maximum(probs, 1e-300)), axis=1)
    return float(np.mean(enhancement_weights(w, r) * ce))


def loss_unlabeled(probs, targets) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[0] == 0:
        return 0.0
    return float(np.mean(np.sum((np.asarray(targets) - probs) ** 2, axis=1)))


def loss_reg(probs, prior=None) -> float:
    """``sum_c prior_c * log(prior_c / mean_output_c)``; uniform prior by default."""
    probs = np.asarray(probs, dtype=np.float64)
    c = probs.shape[1]
    prior = np.full(c, 1.0 / c) if prior is None else np.asarray(prior, dtype=np.float64)
    return float(np.sum(prior * np.log(prior / probs.mean(axis=0))))


def total_loss(l_x: float, l_u: float, l_reg: float, lambda_u: float, lambda_r: float) -> float:
    return l_x + lambda_u * l_u + lambda_r * l_reg


@dataclass
class LossBreakdown:
    L_X: float
    L_U: float
    L_reg: float
    total: float
    lambda_u: float
    lambda_r: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def semisup_loss_and_grads(model: MLP, batch: MixBatch, r: float, lambda_u: float,
                           lambda_r: float):
    """Combined loss on a mixed batch and its parameter gradients."""
    logits, cache = model.forward_cache(batch.x)
    p = softmax(logits)
    logp = log_softmax(logits)
    nl = batch.n_labeled
    n = p.shape[0]
    nu = n - nl
    c = p.shape[1]
    t = batch.p

    coef = enhancement_weights(batch.weights, r)
    l_x = float(-np.sum(coef * np.sum(t[:nl] * logp[:nl], axis=1)) / nl)
    grad_z = np.zeros_like(p)
    grad_z[:nl] = coef[:, None] * (p[:nl] * t[:nl].sum(axis=1, keepdims=True) - t[:nl]) / nl

    if nu > 0:
        diff = p[nl:] - t[nl:]
        l_u = float(np.sum(diff * diff) / nu)
        if lambda_u:
            grad_z[nl:] += softmax_backward(p[nl:], lambda_u * 2.0 * diff / nu)
    else:
        l_u = 0.0

    prior = np.full(c, 1.0 / c)
    mean_p = p.mean(axis=0)
    l_reg = float(np.sum(prior * np.log(prior / mean_p)))
    if lambda_r:
        g_p = np.broadcast_to(-lambda_r * prior / (mean_p * n), p.shape)
        grad_z += softmax_backward(p, g_p)

    # an empty unlabeled branch skips the lambda_u term entirely
    total = l_x + lambda_u * l_u + lambda_r * l_reg if nu > 0 else l_x + lambda_r * l_reg
    return LossBreakdown(l_x, l_u, l_reg, total, lambda_u, lambda_r), model.backward(cache, grad_z)


def semisup_epoch(model: MLP, features: np.ndarray, targets: np.ndarray, divided: DividedSets,
                  config: PgdfConfig, trainer: TrainConfig, lambda_u: float, epoch: int,
                  rng: np.random.Generator) -> LossBreakdown:
    """One pass over the labeled set; returns step-averaged loss terms."""
    lab = divided.labeled
    unl = divided.noisy
    if lab.size == 0:
        raise TrainingError(f"epoch {epoch}: labeled set is empty")
    lab_order = rng.permutation(lab)
    unl_order = rng.permutation(unl) if unl.size else unl
    b = trainer.batch_size
    nu_batch = min(b, unl.size)
    lr = trainer.lr_at(epoch)
    sums = np.zeros(4)
    steps = int(math.ceil(lab.size / b))
    for s in range(steps):
        lb = lab_order[s * b:(s + 1) * b]
        ub = unl_order[(s * b + np.arange(nu_batch)) % unl.size] if nu_batch else unl_order[:0]
        batch = mix(features[lb], targets[lb], divided.w[lb], features[ub], targets[ub],
                    config.alpha, rng)
        with np.errstate(all="ignore"):
            br, grads = semisup_loss_and_grads(model, batch, config.r, lambda_u, config.lambda_r)
        if not math.isfinite(br.total):
            raise NumericFault(f"epoch {epoch}, step {s}: non-finite loss {br.total}")
        sgd_step(model, grads, lr, trainer.momentum, trainer.weight_decay)
        sums += (br.L_X, br.L_U, br.L_reg, br.total)
    m = sums / steps
    return LossBreakdown(float(m[0]), float(m[1]), float(m[2]), float(m[3]), lambda_u,
                         config.lambda_r)


class JsonlWriter:
    """Appends one JSON object per line and flushes immediately."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = self.path.open("w", encoding="utf-8")

    def __call__(self, record: dict) -> None:
        self._fh.write(json.dumps(_jsonable(record), sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


MetricsSink = Callable[[dict], None]


@dataclass
class TrainResult:
    models: list
    metrics: list
    prior: PriorPartition | None
    tau: float | None

    @property
    def final_accuracy(self) -> float | None:
        accs = [m["test_acc"] for m in self.metrics if m.get("test_acc") is not None]
        return accs[-1] if accs else None

    def tail_accuracy(self, window: int = 10) -> float | None:
        """Mean test accuracy over the last ``window`` epochs that report one."""
        accs = [m["test_acc"] for m in self.metrics if m.get("test_acc") is not None]
        return float(np.mean(accs[-window:])) if accs else None

    @property
    def best_accuracy(self) -> float | None:
        accs = [m["test_acc"] for m in self.metrics if m.get("test_acc") is not None]
        return max(accs) if accs else None


def _lambda_u_at(config: PgdfConfig, epoch: int) -> float:
    if config.rampup <= 0:
        return config.lambda_u
    progress = (epoch - config.warm_up + 1) / config.rampup
    return config.lambda_u * float(np.clip(progress, 0.0, 1.0))


def _emit(sink, metrics, record):
    metrics.append(record)
    if sink is not None:
        sink(record)


def resolve_noise_ratio(train: LabeledDataset, config: PgdfConfig, trainer: TrainConfig) -> float:
    """Configured nominal ratio, or a holdout estimate converted to nominal.

    The estimator measures the fraction of wrong labels, while symmetric
    injection that may redraw the original class corrupts only ``(C-1)/C`` of
    what it touches; the estimate is scaled back so that artificial noise
    added later matches the dataset's wrong-label rate.
    """
    if config.tau is not None:
        return float(config.tau)
    est = estimate_noise_ratio(train, trainer.replace(epochs=config.warm_up or trainer.epochs),
                               child_seed(config.seed, "estimate"))
    c = train.num_classes
    if not config.prior.exclude_self and c > 1:
        est = est * c / (c - 1)
    return float(min(est, 0.95))


def build_prior(train: LabeledDataset, config: PgdfConfig, trainer: TrainConfig) -> PriorPartition:
    """The prior partition ``train_pgdf`` would generate for this config."""
    tau = resolve_noise_ratio(train, config, trainer)
    return generate_prior(train, trainer.replace(epochs=config.prior_epochs), tau, config.tau_e,
                          config.tau_n1, child_seed(config.seed, "prior"), config.prior)


def _divide(net, train, config, partition, w_it_cache, k, epoch):
    flags = {}
    refit = w_it_cache.get(k) is None or (epoch - config.warm_up) % config.refit_every == 0
    if refit:
        losses, _ = evaluate(net, train.features, train.labels)
        w_it, model = gmm.clean_probability(losses, config.gmm_max_iter, config.gmm_tol)
        w_it_cache[k] = (w_it, model)
    w_it, model = w_it_cache[k]
    if model is None:
        flags["gmm_degenerate"] = True
    if config.use_prior:
        w_ip = prior_clean_prob(partition)
        easy = partition.easy_mask()
        w = fuse(w_it, w_ip, easy, config.m)
        divided = assign_sets(w, easy_mask=easy)
    else:
        w_ip = None
        divided = assign_sets(w_it, easy_threshold=config.easy_threshold)
    return divided, w_it, w_ip, model, flags


def train_pgdf(train: LabeledDataset, config: PgdfConfig, trainer: TrainConfig,
               test: LabeledDataset | None = None, prior: PriorPartition | None = None,
               metrics_sink: MetricsSink | None = None,
               divide_hook: Callable | None = None) -> TrainResult:
    """Prior generation, independent warm-up, then co-divided semi-supervised epochs.

    Each network's division of the training set is consumed by its peer. With
    ``two_networks=False`` a single network divides for and guesses with
    itself. ``divide_hook(epoch, network, divided, w_it, w_ip)`` observes each
    division.
    """
    if len(train) == 0:
        raise TrainingError("training set is empty")
    metrics: list = []
    c = train.num_classes
    flips = train.flip_mask() if train.has_true_labels else None
    tau = None
    n_nets = 2 if config.two_networks else 1
    warm_cfg = trainer.replace(epochs=config.prior_epochs)

    if config.use_prior and prior is None and config.epochs > config.warm_up:
        prior = build_prior(train, config, trainer)
        tau = prior.tau
    elif prior is not None:
        tau = prior.tau

    nets = [MLP.init(train.feature_dim, trainer.hidden, c, child_seed(config.seed, "net", k))
            for k in range(n_nets)]
    net_trainers = [trainer.replace(seed=child_seed(config.seed, "train", k)) for k in range(n_nets)]
    onehot = train.one_hot()
    ones = np.ones(len(train))

    def test_acc():
        if test is None or not test.has_true_labels:
            return None
        return accuracy(nets, test.features, test.true_labels)

    for epoch in range(config.warm_up):
        for k, net in enumerate(nets):
            try:
                _, losses = train_epoch(net, train.features, onehot, ones, net_trainers[k], epoch)
            except NumericFault as exc:
                raise NumericFault(f"network {NETWORK_NAMES[k]}, warm-up epoch {epoch}: {exc}") from exc
            _emit(metrics_sink, metrics, {
                "epoch": epoch, "network": NETWORK_NAMES[k], "phase": "warmup",
                "lr": net_trainers[k].lr_at(epoch), "train_loss": float(np.mean(losses)),
                "test_acc": test_acc() if k == n_nets - 1 else None,
            })

    w_it_cache: dict = {}
    for epoch in range(config.warm_up, config.epochs):
        if (config.use_prior and config.prior_refresh_every > 0 and epoch > config.warm_up
                and (epoch - config.warm_up) % config.prior_refresh_every == 0):
            prior = generate_prior(train, warm_cfg, tau, config.tau_e, config.tau_n1,
                                   child_seed(config.seed, "prior", epoch), config.prior)
        lam_u = _lambda_u_at(config, epoch)
        divisions = []
        for k, net in enumerate(nets):
            try:
                div = _divide(net, train, config, prior, w_it_cache, k, epoch)
            except NumericFault as exc:
                raise NumericFault(f"network {NETWORK_NAMES[k]}, epoch {epoch}: {exc}") from exc
            divisions.append(div)
            if divide_hook is not None:
                divide_hook(epoch, NETWORK_NAMES[k], div[0], div[1], div[2])

        for k, net in enumerate(nets):
            peer_k = (1 - k) if n_nets == 2 else k
            divided, w_it, w_ip, gmm_model, flags = divisions[peer_k]
            flags = dict(flags)
            rng = make_rng(config.seed, "pgdf", epoch, k)
            P = co_guess(net, nets[peer_k], train.features, config.n_aug, config.jitter,
                         config.temperature, rng)
            t_cond = None
            T_flat = None
            if config.refine:
                T = estimate_T(P[divided.easy], train.labels[divided.easy], c)
                if T.missing_rows:
                    flags["T_missing_rows"] = T.missing_rows
                P_ref, info = refine_pseudo(P, T, return_info=True)
                t_cond = info.condition_number
                T_flat = T.T.ravel()
                if info.ridge_used:
                    flags["T_ridge"] = True
                if info.collapsed_rows:
                    flags["collapsed_rows"] = info.collapsed_rows
            else:
                P_ref = P
            targets = relabel(divided, P_ref, train.labels, c)
            try:
                br = semisup_epoch(net, train.features, targets, divided, config, net_trainers[k],
                                   lam_u, epoch, rng)
            except (NumericFault, TrainingError) as exc:
                raise type(exc)(f"network {NETWORK_NAMES[k]}, epoch {epoch}: {exc}") from exc
            record = {
                "epoch": epoch, "network": NETWORK_NAMES[k], "phase": "pgdf",
                "divided_by": NETWORK_NAMES[peer_k], "lr": net_trainers[k].lr_at(epoch),
                "loss": br.to_dict(), "sets": divided.sizes(),
                "T_condition": t_cond, "T": T_flat,
                "gmm": gmm_model.to_dict() if gmm_model is not None else None,
                "flags": flags,
                "test_acc": test_acc() if k == n_nets - 1 else None,
            }
            if flips is not None:
                record["dividing"] = divided.quality(flips)
            _emit(metrics_sink, metrics, record)

    return TrainResult(nets, metrics, prior, tau)


def train_cross_entropy(train: LabeledDataset, trainer: TrainConfig, epochs: int, seed: int,
                        test: LabeledDataset | None = None,
                        metrics_sink: MetricsSink | None = None) -> TrainResult:
    """Single network trained with plain cross-entropy on observed labels."""
    net = MLP.init(train.feature_dim, trainer.hidden, train.num_classes, child_seed(seed, "net", 0))
    cfg = trainer.replace(seed=child_seed(seed, "train", 0))
    onehot = train.one_hot()
    ones = np.ones(len(train))
    metrics: list = []
    for epoch in range(epochs):
        _, losses = train_epoch(net, train.features, onehot, ones, cfg, epoch)
        acc = None
        if test is not None and test.has_true_labels:
            acc = accuracy(net, test.features, test.true_labels)
        _emit(metrics_sink, metrics, {"epoch": epoch, "network": "A", "phase": "ce",
                                      "lr": cfg.lr_at(epoch), "train_loss": float(np.mean(losses)),
                                      "test_acc": acc})
    return TrainResult([net], metrics, None, None)
