"""Flat, namespaced experiment configuration.

Every knob lives under a dotted key such as ``trainer.learning_rate``. Values
are resolved in this order, later sources winning:

1. built-in defaults (``DEFAULTS``)
2. the ``--config`` file (YAML or JSON; flat dotted keys or nested mappings)
3. ``--set key=value`` overrides, in command-line order
4. the dedicated ``--seed`` / ``--out`` flags

Unknown keys are rejected at every stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .classifier import TrainConfig
from .dataset import NoiseSpec
from .errors import ConfigError
from .prior import PriorConfig
from .semisup import PgdfConfig


@dataclass(frozen=True)
class Option:
    kind: str  # int, float, bool, str, float?, ints, floats
    default: Any
    doc: str


OPTIONS: dict[str, Option] = {
    "seed": Option("int", 0, "master seed for data, noise and training"),
    "out": Option("str", "runs/default", "run directory"),

    "dataset.classes": Option("int", 4, "number of blob classes"),
    "dataset.per_class": Option("int", 1000, "samples per class before the split"),
    "dataset.dim": Option("int", 8, "feature dimension"),
    "dataset.separation": Option("float", 4.0, "distance between neighbouring class means"),
    "dataset.test_fraction": Option("float", 0.5, "stratified share held out as test.csv"),

    "noise.kind": Option("str", "symmetric", "symmetric or asymmetric"),
    "noise.ratio": Option("float", 0.4, "fraction of training labels redrawn"),
    "noise.permutation": Option("ints", (), "asymmetric class map, e.g. 1,2,3,0"),
    "noise.exclude_self": Option("bool", False, "symmetric redraws never keep the original class"),

    "trainer.learning_rate": Option("float", 0.02, "SGD step size"),
    "trainer.momentum": Option("float", 0.9, "SGD momentum"),
    "trainer.weight_decay": Option("float", 5e-4, "L2 penalty"),
    "trainer.batch_size": Option("int", 16, "mini-batch size"),
    "trainer.hidden": Option("ints", (64, 64), "hidden layer widths"),
    "trainer.lr_decay_epoch": Option("int", 0, "epoch at which the step size decays (0 = never)"),
    "trainer.lr_decay_factor": Option("float", 0.1, "decay multiplier"),

    "prior.enabled": Option("bool", True, "use the prior partition when dividing"),
    "prior.tau": Option("float?", None, "dataset noise ratio; null estimates it"),
    "prior.tau_e": Option("float?", None, "easy quantile; null means 0.5*(1-tau)"),
    "prior.tau_n1": Option("float?", None, "direct-noisy quantile; null means 0.5*tau"),
    "prior.epochs": Option("int", 10, "warm-up epochs recorded into the history"),
    "prior.channels": Option("ints", (8, 16, 16), "history classifier conv widths"),
    "prior.kernel": Option("int", 3, "history classifier kernel size"),
    "prior.classifier_epochs": Option("int", 50, "history classifier gradient steps"),
    "prior.learning_rate": Option("float", 0.5, "history classifier step size"),
    "prior.momentum": Option("float", 0.9, "history classifier momentum"),
    "prior.patience": Option("int", 5, "early-stop window"),
    "prior.min_improvement": Option("float", 1e-5, "early-stop loss improvement"),
    "prior.retrain_from_scratch": Option("bool", True, "fresh network for the artificial set"),
    "prior.refresh_every": Option("int", 0, "regenerate the prior every n epochs (0 = once)"),

    "gmm.max_iter": Option("int", 100, "EM iteration cap"),
    "gmm.tol": Option("float", 1e-8, "EM log-likelihood tolerance"),

    "divide.m": Option("float", 0.5, "weight of the loss posterior in the fusion"),
    "divide.easy_threshold": Option("float", 0.95, "easy cut-off when the prior is disabled"),
    "divide.refit_every": Option("int", 1, "refit the mixture every n epochs"),
    "divide.dump": Option("bool", False, "write divide/epoch_XXX_net.csv every epoch"),

    "refine.enabled": Option("bool", True, "correct pseudo-labels with the transition matrix"),
    "refine.n_aug": Option("int", 2, "jittered copies per co-guess"),
    "refine.jitter": Option("float", 0.05, "jitter scale relative to feature std"),
    "refine.temperature": Option("float", 0.5, "sharpening temperature"),

    "semisup.epochs": Option("int", 50, "total epochs including warm-up"),
    "semisup.warm_up": Option("int", 10, "cross-entropy warm-up epochs"),
    "semisup.r": Option("float", 2.0, "hard-sample enhancement exponent"),
    "semisup.alpha": Option("float", 4.0, "Beta parameter for mixing"),
    "semisup.lambda_u": Option("float", 6.25, "unlabeled loss weight after ramp-up"),
    "semisup.lambda_r": Option("float", 1.0, "regularisation weight"),
    "semisup.rampup": Option("int", 16, "epochs of linear lambda_u ramp"),
    "semisup.two_networks": Option("bool", True, "co-train two networks"),
    "semisup.final_window": Option("int", 10, "epochs averaged into the reported final accuracy"),
}

DEFAULTS = {k: o.default for k, o in OPTIONS.items()}


def _coerce(key: str, value: Any) -> Any:
    kind = OPTIONS[key].kind
    try:
        if kind == "float?":
            if value is None or (isinstance(value, str) and value.strip().lower() in ("", "null", "none")):
                return None
            return float(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("true", "1", "yes", "on"):
                return True
            if text in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "str":
            return str(value)
        if kind in ("ints", "floats"):
            cast = int if kind == "ints" else float
            if isinstance(value, str):
                parts = [p for p in value.replace(" ", "").split(",") if p]
            elif isinstance(value, (list, tuple)):
                parts = list(value)
            else:
                parts = [value]
            return tuple(cast(p) for p in parts)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {value!r} as {kind}") from None
    raise ConfigError(f"{key}: unknown option kind {kind}")


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


class ExperimentConfig:
    """Resolved key/value configuration with typed accessors for each module."""

    def __init__(self, values: dict | None = None):
        self._values = dict(DEFAULTS)
        if values:
            self.update(values)

    def update(self, values: dict) -> "ExperimentConfig":
        for key, value in _flatten(values).items():
            if key not in OPTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            self._values[key] = _coerce(key, value)
        return self

    def set(self, assignment: str) -> "ExperimentConfig":
        if "=" not in assignment:
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        key, value = assignment.split("=", 1)
        return self.update({key.strip(): value.strip()})

    def __getitem__(self, key: str):
        return self._values[key]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self._values.items())}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping of keys to values")
        return cls(data)

    def validate(self) -> "ExperimentConfig":
        self.noise_spec().validate(self["dataset.classes"])
        self.pgdf()
        if not 0.0 < self["dataset.test_fraction"] < 1.0:
            raise ConfigError("dataset.test_fraction must lie in (0, 1)")
        for key in ("trainer.batch_size", "dataset.per_class", "semisup.final_window"):
            if self[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        return self

    # typed views
    def trainer(self, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self["trainer.learning_rate"], momentum=self["trainer.momentum"],
            weight_decay=self["trainer.weight_decay"], batch_size=self["trainer.batch_size"],
            epochs=self["semisup.warm_up"] if epochs is None else epochs, seed=self["seed"],
            hidden=self["trainer.hidden"], lr_decay_epoch=self["trainer.lr_decay_epoch"],
            lr_decay_factor=self["trainer.lr_decay_factor"],
        )

    def noise_spec(self) -> NoiseSpec:
        perm = self["noise.permutation"] or None
        return NoiseSpec(self["noise.kind"], self["noise.ratio"], perm, self["noise.exclude_self"])

    def prior_config(self) -> PriorConfig:
        return PriorConfig(
            channels=self["prior.channels"], kernel=self["prior.kernel"],
            epochs=self["prior.classifier_epochs"], learning_rate=self["prior.learning_rate"],
            momentum=self["prior.momentum"], patience=self["prior.patience"],
            min_improvement=self["prior.min_improvement"],
            retrain_from_scratch=self["prior.retrain_from_scratch"],
            exclude_self=self["noise.exclude_self"],
        )

    def pgdf(self, seed: int | None = None) -> PgdfConfig:
        return PgdfConfig(
            m=self["divide.m"], r=self["semisup.r"], alpha=self["semisup.alpha"],
            lambda_u=self["semisup.lambda_u"], lambda_r=self["semisup.lambda_r"],
            rampup=self["semisup.rampup"], epochs=self["semisup.epochs"],
            warm_up=self["semisup.warm_up"], seed=self["seed"] if seed is None else seed,
            tau=self["prior.tau"], tau_e=self["prior.tau_e"], tau_n1=self["prior.tau_n1"],
            prior_epochs=self["prior.epochs"], prior=self.prior_config(),
            prior_refresh_every=self["prior.refresh_every"], use_prior=self["prior.enabled"],
            two_networks=self["semisup.two_networks"], refine=self["refine.enabled"],
            easy_threshold=self["divide.easy_threshold"], refit_every=self["divide.refit_every"],
            n_aug=self["refine.n_aug"], jitter=self["refine.jitter"],
            temperature=self["refine.temperature"], gmm_max_iter=self["gmm.max_iter"],
            gmm_tol=self["gmm.tol"],
        )


def describe_options() -> str:
    width = max(len(k) for k in OPTIONS)
    lines = []
    for key, opt in OPTIONS.items():
        default = ",".join(map(str, opt.default)) if isinstance(opt.default, tuple) else opt.default
        lines.append(f"  {key:<{width}}  {str(default):<14} {opt.doc}")
    return "\n".join(lines)
