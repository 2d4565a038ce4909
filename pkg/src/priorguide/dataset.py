"""Datasets, label-noise injection, CSV ingestion and noise-ratio estimation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, EstimationError, IngestionError
from .seeding import child_seed, make_rng

SYMMETRIC = "symmetric"
ASYMMETRIC = "asymmetric"


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    observed_label: int
    true_label: int | None = None


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix with observed labels and optional hidden true labels.

    Sample ids are the row indices ``0..N-1``. Arrays are stored read-only so a
    dataset can be shared freely once constructed.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    true_labels: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ConfigError(f"features must be 2-D, got shape {x.shape}")
        y = np.asarray(self.labels, dtype=np.int64)
        if y.shape != (x.shape[0],):
            raise ConfigError("labels must have one entry per sample")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ConfigError("observed label outside [0, num_classes)")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))
        if self.true_labels is not None:
            t = np.asarray(self.true_labels, dtype=np.int64)
            if t.shape != y.shape:
                raise ConfigError("true_labels must have one entry per sample")
            if t.size and (t.min() < 0 or t.max() >= self.num_classes):
                raise ConfigError("true label outside [0, num_classes)")
            object.__setattr__(self, "true_labels", _frozen(t))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_true_labels(self) -> bool:
        return self.true_labels is not None

    def __getitem__(self, i: int) -> Sample:
        t = None if self.true_labels is None else int(self.true_labels[i])
        return Sample(int(i), self.features[i], int(self.labels[i]), t)

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def flip_mask(self) -> np.ndarray:
        if self.true_labels is None:
            raise ConfigError("dataset has no true labels")
        return self.labels != self.true_labels

    def with_labels(self, labels) -> "LabeledDataset":
        return LabeledDataset(self.features, labels, self.num_classes, self.true_labels)

    def subset(self, ids) -> "LabeledDataset":
        ids = np.asarray(ids, dtype=np.int64)
        true = None if self.true_labels is None else self.true_labels[ids]
        return LabeledDataset(self.features[ids], self.labels[ids], self.num_classes, true)

    def one_hot(self) -> np.ndarray:
        return np.eye(self.num_classes)[self.labels]


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = SYMMETRIC
    ratio: float = 0.0
    permutation: Mapping[int, int] | Sequence[int] | None = None
    exclude_self: bool = False

    def validate(self, num_classes: int) -> None:
        if not 0.0 <= self.ratio < 1.0:
            raise ConfigError(f"noise ratio must lie in [0, 1), got {self.ratio}")
        if self.kind not in (SYMMETRIC, ASYMMETRIC):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.kind == ASYMMETRIC:
            perm = self.permutation_array(num_classes)
            if not np.any(perm != np.arange(num_classes)):
                raise ConfigError("asymmetric permutation must move at least one class")

    def permutation_array(self, num_classes: int) -> np.ndarray:
        if self.permutation is None:
            raise ConfigError("asymmetric noise requires a class permutation")
        perm = np.arange(num_classes)
        items = (self.permutation.items() if isinstance(self.permutation, Mapping)
                 else enumerate(self.permutation))
        for src, dst in items:
            if not (0 <= int(src) < num_classes and 0 <= int(dst) < num_classes):
                raise ConfigError(f"permutation entry {src}->{dst} outside [0, {num_classes})")
            perm[int(src)] = int(dst)
        return perm


@dataclass(frozen=True)
class FlipMask:
    flipped: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.flipped)

    @property
    def rate(self) -> float:
        return float(np.mean(self.flipped)) if len(self.flipped) else 0.0


def synth_blobs(num_classes: int, per_class: int, feature_dim: int, separation: float,
                seed: int) -> LabeledDataset:
    """Draw ``num_classes`` isotropic unit-variance Gaussian clusters.

    When ``num_classes <= feature_dim`` the cluster means sit on scaled
    coordinate axes, so every pair of means is exactly ``separation`` apart.
    Otherwise the means are random directions of the same norm. Rows are
    ordered class by class.
    """
    if num_classes < 2 or per_class < 1 or feature_dim < 2 or not separation > 0:
        raise ConfigError("synth_blobs needs C >= 2, n >= 1, d >= 2 and separation > 0")
    rng = make_rng(seed, "blobs")
    radius = separation / math.sqrt(2.0)
    if num_classes <= feature_dim:
        means = np.zeros((num_classes, feature_dim))
        means[np.arange(num_classes), np.arange(num_classes)] = radius
    else:
        means = rng.standard_normal((num_classes, feature_dim))
        means *= radius / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), per_class)
    x = means[labels] + rng.standard_normal((labels.size, feature_dim))
    return LabeledDataset(x, labels, num_classes, labels.copy())


def inject_noise(dataset: LabeledDataset, spec: NoiseSpec, seed: int):
    """Corrupt observed labels; returns ``(noisy_dataset, FlipMask)``.

    Symmetric noise picks ``floor(ratio * N)`` samples without replacement and
    resamples their label uniformly over all classes (the original class
    included unless ``spec.exclude_self``). Asymmetric noise picks
    ``floor(ratio * N)`` samples among those whose true class the permutation
    moves and maps them through it.
    """
    if dataset.true_labels is None:
        raise ConfigError("inject_noise requires true labels")
    c = dataset.num_classes
    spec.validate(c)
    n = len(dataset)
    true = dataset.true_labels
    labels = np.array(true, copy=True)
    n_noisy = int(math.floor(spec.ratio * n))
    rng = make_rng(seed, "noise", spec.kind)
    if spec.kind == SYMMETRIC:
        chosen = rng.choice(n, size=n_noisy, replace=False)
        if spec.exclude_self:
            if c < 2:
                raise ConfigError("exclude_self needs at least two classes")
            offset = rng.integers(1, c, size=n_noisy)
            labels[chosen] = (true[chosen] + offset) % c
        else:
            labels[chosen] = rng.integers(0, c, size=n_noisy)
    else:
        perm = spec.permutation_array(c)
        candidates = np.flatnonzero(perm[true] != true)
        if n_noisy > candidates.size:
            raise ConfigError(
                f"asymmetric ratio {spec.ratio} needs {n_noisy} movable samples, "
                f"only {candidates.size} available")
        chosen = rng.choice(candidates, size=n_noisy, replace=False)
        labels[chosen] = perm[true[chosen]]
    noisy = LabeledDataset(dataset.features, labels, c, true)
    return noisy, FlipMask(_frozen(labels != true))


def split(dataset: LabeledDataset, fractions: Sequence[float], seed: int):
    """Seeded partition into ``len(fractions)`` parts, stratified by observed label.

    Samples are ordered by their relative rank inside a shuffled copy of their
    class, so every contiguous cut takes roughly the same share of each class;
    cut points are ``round(N * cumulative_fraction)``.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or fr.size < 1 or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError("split fractions must be non-negative and sum to 1")
    rng = make_rng(seed, "split")
    n = len(dataset)
    keys = np.empty(n)
    for cls in range(dataset.num_classes):
        ids = np.flatnonzero(dataset.labels == cls)
        order = rng.permutation(ids.size)
        keys[ids[order]] = (np.arange(ids.size) + rng.random(ids.size)) / max(ids.size, 1)
    ordered = np.lexsort((np.arange(n), keys))
    cuts = np.rint(np.cumsum(fr) * n).astype(int)
    cuts[-1] = n
    parts, start = [], 0
    for stop in cuts:
        parts.append(dataset.subset(np.sort(ordered[start:stop])))
        start = stop
    return tuple(parts)


def load_csv(path, num_classes: int | None = None) -> LabeledDataset:
    """Read ``f0,...,f{d-1},label[,true_label]`` rows (header required)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError("empty file", row=1) from None
        has_true = bool(header) and header[-1] == "true_label"
        n_feat = len(header) - (2 if has_true else 1)
        label_col = header[n_feat] if n_feat >= 0 and n_feat < len(header) else None
        expected = [f"f{j}" for j in range(n_feat)]
        if n_feat < 1 or label_col != "label" or header[:n_feat] != expected:
            raise IngestionError(
                "header must be f0,...,f{d-1},label[,true_label]", row=1)
        feats, labels, trues = [], [], []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"expected {len(header)} cells, found {len(row)}", row=rowno)
            try:
                feats.append([float(cell) for cell in row[:n_feat]])
            except ValueError as exc:
                raise IngestionError(f"non-numeric feature cell ({exc})", row=rowno) from None
            if not all(math.isfinite(v) for v in feats[-1]):
                raise IngestionError("non-finite feature value", row=rowno)
            lab = [_parse_label(cell, rowno, num_classes) for cell in row[n_feat:]]
            labels.append(lab[0])
            if has_true:
                trues.append(lab[1])
    if not labels:
        raise IngestionError("no data rows", row=2)
    if num_classes is None:
        num_classes = int(max(labels + trues)) + 1
    return LabeledDataset(np.array(feats), np.array(labels), num_classes,
                          np.array(trues) if has_true else None)


def _parse_label(cell: str, rowno: int, num_classes: int | None) -> int:
    try:
        value = float(cell)
    except ValueError:
        raise IngestionError(f"non-numeric label {cell!r}", row=rowno) from None
    if not value.is_integer() or value < 0:
        raise IngestionError(f"label {cell!r} is not a non-negative integer", row=rowno)
    if num_classes is not None and value >= num_classes:
        raise IngestionError(f"label {int(value)} >= num_classes {num_classes}", row=rowno)
    return int(value)


def save_csv(dataset: LabeledDataset, path) -> None:
    path = Path(path)
    header = [f"f{j}" for j in range(dataset.feature_dim)] + ["label"]
    if dataset.has_true_labels:
        header.append("true_label")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(str(int(dataset.labels[i])))
            if dataset.has_true_labels:
                row.append(str(int(dataset.true_labels[i])))
            writer.writerow(row)


def estimate_noise_ratio(dataset: LabeledDataset, trainer_config, seed: int) -> float:
    """Holdout estimate of the fraction of observed labels that are wrong.

    A classifier is warm-trained on one random half and predicts the other;
    the disagreement with observed labels is averaged over both directions.
    Early-stopped training fits the majority (clean) signal before it
    memorises flipped labels, so the disagreement tracks the flip rate.
    """
    from .classifier import MLP, predict, warmup_train

    c = dataset.num_classes
    if len(dataset) < 2 * c * 10:
        raise EstimationError(
            f"need at least {2 * c * 10} samples to estimate the noise ratio, got {len(dataset)}")
    halves = split(dataset, (0.5, 0.5), child_seed(seed, "estimate-split"))
    rates = []
    for k, (fit_part, held) in enumerate((halves, halves[::-1])):
        model = MLP.init(dataset.feature_dim, trainer_config.hidden, c,
                         child_seed(seed, "estimate-model", k))
        cfg = trainer_config.replace(seed=child_seed(seed, "estimate-train", k))
        warmup_train(model, fit_part, cfg)
        rates.append(float(np.mean(predict(model, held.features) != held.labels)))
    return float(min(max(np.mean(rates), 0.0), 1.0 - 1e-9))
