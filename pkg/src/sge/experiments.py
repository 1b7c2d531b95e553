"""Seeded toy experiments: single runs, baseline comparison and ablations."""
from __future__ import annotations

import csv
import statistics
from dataclasses import asdict, dataclass, replace

from .data import DatasetConfig, make_datasets
from .nn import build_model, toy_specs
from .train import TrainConfig, substream_seed, train

# Task on which spatially selective gating has room to help: fragments of
# the class glyphs as clutter plus a random per-image gain.
TOY_DATA = DatasetConfig(noise=0.3, clutter=4, gain_range=(0.2, 5.0), train_size=4000, test_size=2000)
TOY_TRAIN = TrainConfig(epochs=20)
TOY_CHANNELS = (16, 32)
PLACEMENT_NOTE = "SGE after the final conv+relu; no BatchNorm in the toy net"


def _defaults(data, train_config, channels):
    return (TOY_DATA if data is None else data, TOY_TRAIN if train_config is None else train_config,
            TOY_CHANNELS if channels is None else channels)


@dataclass(frozen=True)
class RunSpec:
    attention: str = "sge"
    groups: int = 8
    gamma_init: float = 0.0
    beta_init: float = 1.0
    normalize: bool = True
    seed: int = 0


@dataclass
class RunResult:
    spec: RunSpec
    test_accuracy: float
    test_loss: float
    train_accuracy: float
    report: object
    model: object
    data_config: DatasetConfig


def run(spec: RunSpec, data=None, train_config=None, channels=None, datasets=None):
    """Train one toy model. Weights, data and shuffling come from named substreams of ``spec.seed``.

    Unset settings fall back to the module-level toy defaults.
    """
    data, train_config, channels = _defaults(data, train_config, channels)
    data = replace(data, seed=substream_seed(spec.seed, "data"))
    train_set, test_set = datasets if datasets is not None else make_datasets(data)
    specs = toy_specs(spec.attention, spec.groups, spec.gamma_init, spec.beta_init, spec.normalize,
                      channels=channels, classes=data.num_classes)
    model = build_model(specs, substream_seed(spec.seed, "weights"), train_set.images.shape[1:])
    config = replace(train_config, seed=spec.seed)
    report = train(model, train_set, config, test_set)
    report.metadata = {**{f"run.{k}": v for k, v in asdict(spec).items()},
                       **{f"data.{k}": v for k, v in asdict(data).items()},
                       "placement": PLACEMENT_NOTE, **report.metadata}
    _, _, test_loss, test_acc = report.final("test")
    return RunResult(spec, test_acc, test_loss, report.final("train")[3], report, model, data)


AXES = {
    "attention": lambda: [("none", RunSpec(attention="none")), ("sge", RunSpec())],
    "groups": lambda channels: [
        (f"G={g}", RunSpec(groups=g)) for g in (1, 2, 4, 8, 16, 32, 64) if channels % g == 0],
    "init": lambda: [(f"gamma={g:g},beta={b:g}", RunSpec(gamma_init=g, beta_init=b))
                     for g in (0.0, 1.0) for b in (0.0, 1.0)],
    "norm": lambda: [("norm=on", RunSpec(normalize=True)), ("norm=off", RunSpec(normalize=False))],
}


def ablate(axis, seeds, data=None, train_config=None, channels=None, progress=None):
    """Run every setting of ``axis`` for every seed; returns ``{setting: [RunResult, ...]}``.

    Settings that share a seed share the exact same data split.
    """
    data, train_config, channels = _defaults(data, train_config, channels)
    settings = AXES[axis](channels[-1]) if axis == "groups" else AXES[axis]()
    results = {label: [] for label, _ in settings}
    for seed in seeds:
        datasets = make_datasets(replace(data, seed=substream_seed(seed, "data")))
        for label, spec in settings:
            r = run(replace(spec, seed=seed), data, train_config, channels, datasets)
            results[label].append(r)
            if progress:
                progress(label, seed, r)
    return results


def summarize(results):
    """``{setting: (median, mean, std)}`` of test accuracy."""
    out = {}
    for label, runs in results.items():
        accs = [r.test_accuracy for r in runs]
        out[label] = (statistics.median(accs), statistics.fmean(accs),
                      statistics.pstdev(accs) if len(accs) > 1 else 0.0)
    return out


def write_ablation_csv(path, axis, results, metadata=None):
    """One row per (setting, seed) and mean/std/median summary rows per setting."""
    with open(path, "w", newline="") as f:
        for k, v in (metadata or {}).items():
            f.write(f"# {k}={v}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["axis", "setting", "seed", "test_accuracy", "test_loss", "train_accuracy"])
        for label, runs in results.items():
            for r in runs:
                w.writerow([axis, label, r.spec.seed, repr(r.test_accuracy), repr(r.test_loss),
                            repr(r.train_accuracy)])
        for label, (med, mean, std) in summarize(results).items():
            w.writerow([axis, label, "mean", repr(mean), "", ""])
            w.writerow([axis, label, "std", repr(std), "", ""])
            w.writerow([axis, label, "median", repr(med), "", ""])
