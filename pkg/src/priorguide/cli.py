"""Command-line experiment runner.

Subcommands share ``--config``, ``--seed``, ``--out`` and repeatable
``--set key=value``. Each writes its artifacts plus the resolved
``config.json`` into the run directory. Exit codes: 0 success, 2 bad
configuration or missing input artifact, 3 runtime or numeric fault.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .classifier import MLP, accuracy, warmup_train
from .config import ExperimentConfig, describe_options
from .dataset import LabeledDataset, inject_noise, load_csv, save_csv, split, synth_blobs
from .divide import save_divide_csv
from .errors import ConfigError, IngestionError, PriorGuideError, UsageError
from .history import ProbabilityHistory, mean_history, separation_report
from .prior import PriorPartition, generate_prior
from .semisup import (JsonlWriter, PgdfConfig, build_prior, resolve_noise_ratio, train_cross_entropy,
                      train_pgdf)
from .seeding import child_seed

log = logging.getLogger("priorguide")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

ARMS = {
    "full": {},
    "no-prior": {"use_prior": False},
    "no-refine": {"refine": False},
    "no-enhance": {"r": 0.0},
    "single-network": {"two_networks": False},
    "no-divide": {"m": 0.0},
    "ce": None,
}
SWEEP_KEYS = {"tau_e": "prior.tau_e", "tau_n1": "prior.tau_n1", "m": "divide.m", "r": "semisup.r"}


class MissingArtifact(ConfigError):
    pass


# ---------------------------------------------------------------- helpers

def _require(path: Path, hint: str) -> Path:
    if not path.is_file():
        raise MissingArtifact(f"missing artifact {path} ({hint})")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_dataset(path: Path, hint: str, num_classes: int) -> LabeledDataset:
    return load_csv(_require(path, hint), num_classes=num_classes)


def make_benchmark(cfg: ExperimentConfig, seed: int):
    """Clean train/test split plus the noisy training set for ``seed``."""
    full = synth_blobs(cfg["dataset.classes"], cfg["dataset.per_class"], cfg["dataset.dim"],
                       cfg["dataset.separation"], seed)
    frac = cfg["dataset.test_fraction"]
    train, test = split(full, (1.0 - frac, frac), seed)
    noisy, flips = inject_noise(train, cfg.noise_spec(), seed)
    return train, test, noisy, flips


def _known_tau(cfg: ExperimentConfig) -> float:
    """Nominal ratio for in-memory benchmarks, where the injected noise is known."""
    return cfg["prior.tau"] if cfg["prior.tau"] is not None else cfg["noise.ratio"]


def _final_accuracy(result, cfg: ExperimentConfig) -> float:
    return result.tail_accuracy(cfg["semisup.final_window"])


def _summary(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def _fmt(mean: float, std: float) -> str:
    if math.isnan(mean):
        return "failed"
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: ExperimentConfig, out: Path, args) -> int:
    full = synth_blobs(cfg["dataset.classes"], cfg["dataset.per_class"], cfg["dataset.dim"],
                       cfg["dataset.separation"], cfg["seed"])
    frac = cfg["dataset.test_fraction"]
    train, test = split(full, (1.0 - frac, frac), cfg["seed"])
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    print(f"train.csv: {len(train)} rows, test.csv: {len(test)} rows")
    return EXIT_OK


def cmd_inject(cfg: ExperimentConfig, out: Path, args) -> int:
    train = _load_dataset(out / "train.csv", "run `synth` first", cfg["dataset.classes"])
    noisy, flips = inject_noise(train, cfg.noise_spec(), cfg["seed"])
    save_csv(noisy, out / "noisy.csv")
    _write_json(out / "noise.json", {"kind": cfg["noise.kind"], "ratio": cfg["noise.ratio"],
                                     "flipped": int(flips.flipped.sum()), "actual_rate": flips.rate})
    print(f"noisy.csv: {int(flips.flipped.sum())} of {len(noisy)} labels wrong ({flips.rate:.4f})")
    return EXIT_OK


def cmd_warmup(cfg: ExperimentConfig, out: Path, args) -> int:
    noisy = _load_dataset(out / "noisy.csv", "run `inject` first", cfg["dataset.classes"])
    seed = cfg["seed"]
    model = MLP.init(noisy.feature_dim, cfg["trainer.hidden"], noisy.num_classes, child_seed(seed, "net", 0))
    hist = ProbabilityHistory(len(noisy))
    trainer = cfg.trainer(cfg["semisup.warm_up"]).replace(seed=child_seed(seed, "train", 0))
    warmup_train(model, noisy, trainer, history_sink=hist)
    hist.save_csv(out / "history.csv")
    model.save(out / "model_warmup.json")
    if noisy.has_true_labels:
        rep = separation_report(mean_history(hist), noisy.flip_mask())
        _write_json(out / "separation.json", rep.to_dict())
        print(f"mean probability clean {rep.mean_clean:.4f} noisy {rep.mean_noisy:.4f} "
              f"pooled std {rep.pooled_std:.4f} separated={rep.separated()}")
    print(f"history.csv: {len(noisy)} x {hist.epoch_count}")
    return EXIT_OK


def _prior_report(part: PriorPartition, ds: LabeledDataset) -> dict:
    flips = ds.flip_mask()
    orig = separation_report(mean_history(part.history), flips)
    report = {"original": orig.to_dict()}
    if part.da_history is not None:
        report["artificial"] = separation_report(mean_history(part.da_history), part.da_flipped).to_dict()
    noisy_truth = np.flatnonzero(flips)
    report["easy_purity"] = float(1.0 - flips[part.easy].mean()) if part.easy.size else None
    report["noisy_recall"] = float(np.isin(noisy_truth, part.noisy).mean()) if noisy_truth.size else None
    return report


def cmd_prior(cfg: ExperimentConfig, out: Path, args) -> int:
    noisy = _load_dataset(out / "noisy.csv", "run `inject` first", cfg["dataset.classes"])
    pcfg = cfg.pgdf()
    trainer = cfg.trainer()
    tau = resolve_noise_ratio(noisy, pcfg, trainer)
    part = generate_prior(noisy, trainer.replace(epochs=pcfg.prior_epochs), tau, pcfg.tau_e, pcfg.tau_n1,
                          child_seed(pcfg.seed, "prior"), pcfg.prior)
    part.save(out / "prior.json")
    print(f"prior.json: tau={tau:.4f} easy={part.easy.size} hard={part.hard.size} "
          f"noisy={part.noisy_direct.size}+{part.noisy_classified.size}")
    if noisy.has_true_labels:
        rep = _prior_report(part, noisy)
        _write_json(out / "prior_separation.json", rep)
        print(f"easy purity {rep['easy_purity']:.4f} noisy recall {rep['noisy_recall']:.4f}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    noisy = _load_dataset(out / "noisy.csv", "run `inject` first", cfg["dataset.classes"])
    test_path = out / "test.csv"
    test = load_csv(test_path, num_classes=cfg["dataset.classes"]) if test_path.is_file() else None
    prior = None
    prior_path = out / "prior.json"
    if cfg["prior.enabled"] and prior_path.is_file():
        prior = PriorPartition.load(prior_path)
        if prior.num_samples != len(noisy):
            raise ConfigError(f"{prior_path} covers {prior.num_samples} samples, noisy.csv has {len(noisy)}")
    hook = None
    if cfg["divide.dump"]:
        ddir = out / "divide"
        ddir.mkdir(exist_ok=True)

        def hook(epoch, net, divided, w_it, w_ip):
            save_divide_csv(ddir / f"epoch_{epoch:03d}_{net}.csv", w_ip, w_it, divided)

    with JsonlWriter(out / "metrics.jsonl") as sink:
        result = train_pgdf(noisy, cfg.pgdf(), cfg.trainer(), test, prior=prior,
                            metrics_sink=sink, divide_hook=hook)
    for name, model in zip(("model_a", "model_b"), result.models):
        model.save(out / f"{name}.json")
    if result.prior is not None and prior is None:
        result.prior.save(prior_path)
    summary = {"final_accuracy": _final_accuracy(result, cfg) if test is not None else None,
               "last_accuracy": result.final_accuracy, "best_accuracy": result.best_accuracy,
               "tau": result.tau, "epochs": cfg["semisup.epochs"]}
    _write_json(out / "summary.json", summary)
    if summary["final_accuracy"] is not None:
        print(f"final test accuracy {summary['final_accuracy']:.4f} "
              f"(mean of last {cfg['semisup.final_window']} epochs)")
    print(f"metrics.jsonl: {len(result.metrics)} records")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, out: Path, args) -> int:
    paths = [Path(p) for p in args.model] if args.model else [out / "model_a.json", out / "model_b.json"]
    if not args.model and not paths[1].is_file():
        paths = paths[:1]
    models = [MLP.load(_require(p, "run `train` first")) for p in paths]
    data_path = Path(args.data) if args.data else out / "test.csv"
    ds = _load_dataset(data_path, "run `synth` first or pass --data", cfg["dataset.classes"])
    labels = ds.true_labels if ds.has_true_labels else ds.labels
    acc = accuracy(models, ds.features, labels)
    _write_json(out / "eval.json", {"accuracy": acc, "samples": len(ds), "data": str(data_path),
                                    "models": [str(p) for p in paths]})
    print(f"accuracy {acc:.4f} on {len(ds)} samples")
    return EXIT_OK


def run_arm(cfg: ExperimentConfig, arm: str, seed: int, noisy, test, prior=None) -> float:
    changes = ARMS[arm]
    if changes is None:
        res = train_cross_entropy(noisy, cfg.trainer(), cfg["semisup.epochs"], seed, test)
    else:
        pcfg = cfg.pgdf(seed).replace(tau=_known_tau(cfg), **changes)
        res = train_pgdf(noisy, pcfg, cfg.trainer(), test, prior=prior if pcfg.use_prior else None)
    return _final_accuracy(res, cfg)


def _seed_list(args, cfg) -> list[int]:
    if args.seeds:
        return [int(s) for s in args.seeds.split(",") if s.strip()]
    base = cfg["seed"]
    return [base, base + 1, base + 2]


def cmd_ablate(cfg: ExperimentConfig, out: Path, args) -> int:
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    unknown = [a for a in arms if a not in ARMS]
    if unknown or not arms:
        raise ConfigError(f"unknown ablation arms {unknown}; choose from {', '.join(ARMS)}")
    seeds = _seed_list(args, cfg)
    accs: dict[str, dict[int, float]] = {a: {} for a in arms}
    errors: dict[str, str] = {}
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["arm", "seed", "final_accuracy", "status"])
        for seed in seeds:
            _, test, noisy, _ = make_benchmark(cfg, seed)
            prior = None
            for arm in arms:
                try:
                    if prior is None and ARMS[arm] is not None and ARMS[arm].get("use_prior", True):
                        prior = build_prior(noisy, cfg.pgdf(seed).replace(tau=_known_tau(cfg)), cfg.trainer())
                    acc = run_arm(cfg, arm, seed, noisy, test, prior)
                    accs[arm][seed] = acc
                    writer.writerow([arm, seed, repr(acc), "ok"])
                    log.info("seed %d %-15s %.4f", seed, arm, acc)
                except PriorGuideError as exc:
                    errors[arm] = f"seed {seed}: {exc}"
                    writer.writerow([arm, seed, "", f"failed: {exc}"])
                    log.error("seed %d %s failed: %s", seed, arm, exc)
                fh.flush()
    report = {"seeds": seeds, "arms": {}}
    lines = [f"seeds: {','.join(map(str, seeds))}", "", "| arm | accuracy (%) | runs |", "|---|---|---|"]
    for arm in arms:
        mean, std = _summary(list(accs[arm].values()))
        complete = len(accs[arm]) == len(seeds)
        report["arms"][arm] = {"mean": mean, "std": std, "runs": len(accs[arm]),
                               "per_seed": {str(s): a for s, a in accs[arm].items()},
                               "failed": not complete, "error": errors.get(arm)}
        label = _fmt(mean, std) if complete else f"failed ({errors.get(arm)})"
        lines.append(f"| {arm} | {label} | {len(accs[arm])}/{len(seeds)} |")
    _write_json(out / "ablation.json", report)
    table = "\n".join(lines) + "\n"
    (out / "ablation.md").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK if not errors else EXIT_RUNTIME


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> int:
    if args.param not in SWEEP_KEYS:
        raise ConfigError(f"sweep parameter must be one of {', '.join(SWEEP_KEYS)}, got {args.param!r}")
    key = SWEEP_KEYS[args.param]
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if not values:
        raise ConfigError("--values is empty")
    seeds = _seed_list(args, cfg)
    # validate every point before spending any compute
    snapshots = []
    for v in values:
        point = ExperimentConfig(cfg.to_dict()).update({key: v}).validate()
        pc = point.pgdf()
        tau = _known_tau(point)
        te = pc.tau_e if pc.tau_e is not None else 0.5 * (1.0 - tau)
        tn = pc.tau_n1 if pc.tau_n1 is not None else 0.5 * tau
        if te < 0 or tn < 0 or te + tn > 1:
            raise ConfigError(f"{key}={v}: need tau_e, tau_n1 >= 0 and tau_e + tau_n1 <= 1")
        snapshots.append(point)
    rows = []
    for v, point in zip(values, snapshots):
        accs = []
        for seed in seeds:
            _, test, noisy, _ = make_benchmark(point, seed)
            accs.append(run_arm(point, "full", seed, noisy, test))
            log.info("%s=%g seed %d %.4f", args.param, v, seed, accs[-1])
        mean, std = _summary(accs)
        rows.append([args.param, repr(v), repr(mean), repr(std), len(seeds), ";".join(map(str, seeds)),
                     json.dumps(point.to_dict(), sort_keys=True)])
        print(f"{args.param}={v:g}: {_fmt(mean, std)}")
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["param", "value", "mean", "std", "runs", "seeds", "config"])
        writer.writerows(rows)
    return EXIT_OK


COMMANDS = {
    "synth": (cmd_synth, "generate the blob dataset (train.csv, test.csv)"),
    "inject": (cmd_inject, "corrupt train.csv labels (noisy.csv)"),
    "warmup": (cmd_warmup, "warm up one network, record history.csv and separation.json"),
    "prior": (cmd_prior, "generate the prior partition (prior.json)"),
    "train": (cmd_train, "full two-network training (metrics.jsonl, model_a/b.json)"),
    "eval": (cmd_eval, "accuracy of saved checkpoints (eval.json)"),
    "ablate": (cmd_ablate, "compare ablation arms over several seeds"),
    "sweep": (cmd_sweep, "sensitivity of final accuracy to one parameter"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON file with dotted keys")
    common.add_argument("--seed", type=int, help="overrides the seed key")
    common.add_argument("--out", help="run directory (overrides the out key)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="priorguide", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Noisy-label training with prior-guided sample dividing.",
        epilog="config keys (default, meaning):\n" + describe_options())
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=help_)
               for name, (_, help_) in COMMANDS.items()}
    parsers["eval"].add_argument("--model", action="append", help="checkpoint path; repeat to ensemble")
    parsers["eval"].add_argument("--data", help="CSV to evaluate (default: run directory test.csv)")
    parsers["ablate"].add_argument("--arms", default=",".join(ARMS),
                                   help=f"comma-separated subset of {','.join(ARMS)}")
    parsers["ablate"].add_argument("--seeds", help="comma-separated seeds (default: seed, seed+1, seed+2)")
    parsers["sweep"].add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_KEYS)}")
    parsers["sweep"].add_argument("--values", required=True, help="comma-separated values")
    parsers["sweep"].add_argument("--seeds", help="comma-separated seeds (default: seed, seed+1, seed+2)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for item in args.overrides:
        cfg.set(item)
    if args.seed is not None:
        cfg.update({"seed": args.seed})
    if args.out is not None:
        cfg.update({"out": args.out})
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        return COMMANDS[args.command][0](cfg, out, args)
    except (ConfigError, IngestionError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PriorGuideError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
