"""Command-line entry point: ``sge <command> [flags]``.

Exit codes: 0 success, 1 a check failed, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace

from . import experiments as ex
from .data import DatasetConfig, make_datasets
from .errors import SgeError
from .gradcheck import DEFAULT_SHAPES, oracle_suite, run_suite
from .io import load_checkpoint, read_tensor, save_checkpoint, write_heatmap
from .op import count_flops, count_params
from .stats import (activation_histogram, group_variance_distribution, normalize_unit_interval,
                    site_lengths, write_histogram_csv, write_variance_csv)


class UsageError(Exception):
    pass


def _shape(text):
    try:
        parts = tuple(int(t) for t in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; expected N,C,H,W,G") from None
    if len(parts) != 5 or min(parts) <= 0 or parts[1] % parts[4]:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; expected N,C,H,W,G with G dividing C")
    return parts


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def build_parser():
    p = argparse.ArgumentParser(prog="sge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    g.add_argument("--seeds", type=int, default=20, help="seeds per shape")
    g.add_argument("--shapes", type=_shape, nargs="+", default=list(DEFAULT_SHAPES),
                   metavar="N,C,H,W,G", help="input shape plus group count")

    o = sub.add_parser("oracle", help="vectorized forward vs loop-for-loop reference")
    o.add_argument("--instances", type=int, default=100, help="random instances to compare")
    o.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train one toy model")
    t.add_argument("--attention", choices=("none", "sge"), default="sge")
    t.add_argument("--groups", type=int, default=ex.RunSpec.groups)
    t.add_argument("--gamma-init", type=float, default=0.0)
    t.add_argument("--beta-init", type=float, default=1.0)
    t.add_argument("--norm", type=_on_off, default=True, metavar="{on,off}")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=ex.TOY_TRAIN.epochs)
    t.add_argument("--out", required=True, help="directory for report.csv and model.ckpt")

    a = sub.add_parser("ablate", help="sweep one ablation axis over several seeds")
    a.add_argument("--axis", choices=("groups", "init", "norm", "attention"), required=True)
    a.add_argument("--seeds", type=int, default=5, help="seeds 0..N-1 per setting")
    a.add_argument("--epochs", type=int, default=ex.TOY_TRAIN.epochs)
    a.add_argument("--out", default="ablation", help="directory for ablate_<axis>.csv")

    s = sub.add_parser("stats", help="variance and histogram CSVs at the SGE site")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--group", type=int, default=0, help="group for the histogram")
    s.add_argument("--bins", type=int, default=64)

    h = sub.add_parser("heatmap", help="pre/post activation-length maps as PGM images")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--input", required=True, help="tensor file with N x 1 x H x W images")
    h.add_argument("--group", type=int, action="append", required=True, help="repeat for several groups")
    h.add_argument("--sample", type=int, default=0)
    h.add_argument("--scale", type=int, default=16, help="nearest-neighbour upscale factor")
    h.add_argument("--out", required=True)

    c = sub.add_parser("count", help="parameter and multiply-add counts of one SGE unit")
    c.add_argument("--channels", type=int, required=True)
    c.add_argument("--groups", type=int, required=True)
    c.add_argument("--height", type=int, required=True)
    c.add_argument("--width", type=int, required=True)
    c.add_argument("--batch", type=int, default=1)
    return p


def _announce(args):
    cfg = {k: v for k, v in vars(args).items() if k != "verbose"}
    print("config: " + json.dumps(cfg, sort_keys=True, default=str))
    seed = cfg.get("seed", cfg.get("seeds"))
    print(f"seed: {seed}")
    sys.stdout.flush()


def cmd_gradcheck(args):
    results = run_suite(args.shapes, range(args.seeds))
    failed = [r for r in results if not r.passed]
    for shape in args.shapes:
        rs = [r for r in results if r.shape == tuple(shape[:4]) + (shape[4],)]
        print(f"shape={shape} seeds={len(rs)} max_rel_error={max(r.max_rel_error for r in rs):.3e} "
              f"max_abs_error={max(r.max_abs_error for r in rs):.3e} "
              f"failed={sum(not r.passed for r in rs)}")
    for r in failed:
        for f in r.failures:
            print(f"FAIL shape={r.shape} seed={r.seed} {f.which}{list(f.index)} analytic={f.analytic!r} "
                  f"numeric={f.numeric!r} rel_error={f.rel_error:.3e}", file=sys.stderr)
    return 1 if failed else 0


def cmd_oracle(args):
    worst, failures = oracle_suite(args.instances, args.seed)
    print(f"instances={args.instances} max_rel_error={worst:.3e} failed={len(failures)}")
    for k in failures:
        print(f"FAIL instance {k}", file=sys.stderr)
    return 1 if failures else 0


def cmd_train(args):
    os.makedirs(args.out, exist_ok=True)
    spec = ex.RunSpec(args.attention, args.groups, args.gamma_init, args.beta_init, args.norm, args.seed)
    result = ex.run(spec, train_config=replace(ex.TOY_TRAIN, epochs=args.epochs))
    result.report.write_csv(os.path.join(args.out, "report.csv"))
    save_checkpoint(os.path.join(args.out, "model.ckpt"), result.model,
                    {"run": asdict(spec), "data": asdict(result.data_config),
                     "train": asdict(replace(ex.TOY_TRAIN, epochs=args.epochs, seed=args.seed))})
    print(f"test_accuracy={result.test_accuracy:.4f} test_loss={result.test_loss:.4f}")
    return 0


def cmd_ablate(args):
    os.makedirs(args.out, exist_ok=True)

    def progress(label, seed, r):
        print(f"{label} seed={seed} test_accuracy={r.test_accuracy:.4f}")
        sys.stdout.flush()

    results = ex.ablate(args.axis, range(args.seeds), train_config=replace(ex.TOY_TRAIN, epochs=args.epochs),
                        progress=progress)
    meta = {"axis": args.axis, "seeds": args.seeds, "epochs": args.epochs,
            **{f"data.{k}": v for k, v in asdict(ex.TOY_DATA).items()}, "placement": ex.PLACEMENT_NOTE}
    path = os.path.join(args.out, f"ablate_{args.axis}.csv")
    ex.write_ablation_csv(path, args.axis, results, meta)
    for label, (med, mean, std) in ex.summarize(results).items():
        print(f"{label} median={med:.4f} mean={mean:.4f} std={std:.4f}")
    return 0


def _checkpoint_data(header):
    cfg = header.get("config", {}).get("data")
    if cfg is None:
        raise UsageError("checkpoint carries no dataset configuration")
    cfg = dict(cfg)
    cfg["gain_range"] = tuple(cfg.get("gain_range", (1.0, 1.0)))
    return DatasetConfig(**cfg)


def cmd_stats(args):
    model, header = load_checkpoint(args.checkpoint)
    data = _checkpoint_data(header)
    _, test_set = make_datasets(data)
    os.makedirs(args.out, exist_ok=True)
    meta = {"checkpoint": args.checkpoint, "seed": header["seed"], "layer": model.sge_layers()[-1]
            if model.sge_layers() else None, "config": json.dumps(header.get("config", {}), sort_keys=True),
            "activation": "per-position sub-feature length", "aggregation": "per-sample variance over positions; "
            "mean and std across samples"}
    summaries = group_variance_distribution(model, test_set)
    write_variance_csv(os.path.join(args.out, "group_variance.csv"), summaries.values(), meta)
    hist = activation_histogram(model, test_set, group=args.group, bins=args.bins)
    write_histogram_csv(os.path.join(args.out, "histogram.csv"), hist, {**meta, "group": args.group})
    pre, post = summaries["pre"].mean_variance, summaries["post"].mean_variance
    print(f"groups_with_increased_variance={int((post > pre).sum())}/{len(pre)}")
    print(f"low_quartile_mass_shift={hist.low_mass_shift():+.4f}")
    return 0


def cmd_heatmap(args):
    model, header = load_checkpoint(args.checkpoint)
    images = read_tensor(args.input)
    if images.ndim == 3:
        images = images[None]
    if not (0 <= args.sample < len(images)):
        raise UsageError(f"--sample {args.sample} out of range for {len(images)} images")
    pre, post = site_lengths(model, images[args.sample:args.sample + 1])
    layer = model.sge_layers()[-1]
    _, h, w = model.layer_inputs[layer].shape[1:]
    os.makedirs(args.out, exist_ok=True)
    for g in args.group:
        if not (0 <= g < pre.shape[1]):
            raise UsageError(f"--group {g} out of range [0, {pre.shape[1]})")
        for phase, lengths in (("pre", pre), ("post", post)):
            path = os.path.join(args.out, f"group{g:02d}_{phase}.pgm")
            write_heatmap(normalize_unit_interval(lengths[0, g].reshape(h, w)), path, scale=args.scale)
            print(path)
    return 0


def cmd_count(args):
    print(f"params={count_params(args.channels, args.groups)}")
    print(f"flops={count_flops(args.batch, args.channels, args.height, args.width, args.groups)}")
    return 0


COMMANDS = {"gradcheck": cmd_gradcheck, "oracle": cmd_oracle, "train": cmd_train, "ablate": cmd_ablate,
            "stats": cmd_stats, "heatmap": cmd_heatmap, "count": cmd_count}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    _announce(args)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SgeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
