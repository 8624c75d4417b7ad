"""Command line entry point: ``altssl {pretext,run,compare,plot,make-digits}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .data import make_synthetic_digits, write_idx
from .harness import (ConfigError, compare_runs, load_config, load_metrics_csv, obtain_pretext,
                      plot_decision_boundary, run_experiment, run_seed)
from .harness.runner import load_data, prepare_seed
from .models import ModelState


def _out_dir(args, config) -> Path:
    if args.out:
        return Path(args.out)
    if config.output:
        return config.resolve(config.output)
    return Path("runs") / config.name


def _load(args):
    config = load_config(args.config)
    if args.seed_override is not None:
        config = config.with_seeds([args.seed_override])
    return config


def cmd_pretext(args) -> int:
    config = _load(args)
    if config.dataset.kind != "idx":
        raise ConfigError(["the pretext command needs an image (idx) dataset"])
    out = _out_dir(args, config)
    for seed in config.seeds:
        ckpt = obtain_pretext(config, load_data(config, seed), seed, out)
        print(f"seed {seed}: rotation accuracy {ckpt.pretext_accuracy:.4f}")
    return 0


def cmd_run(args) -> int:
    config = _load(args)
    out = _out_dir(args, config)
    summary = run_experiment(config, out)
    for seed, acc in summary.final_accuracies.items():
        print(f"seed {seed}: final test accuracy {acc:.6f}")
    std = "n/a" if len(summary.seeds) < 2 else f"{summary.std:.6f}"
    print(f"{config.name}: mean {summary.mean:.6f} std {std} -> {out / 'metrics.csv'}")
    return 0


def cmd_compare(args) -> int:
    summaries = {}
    for cfg_path in args.config or []:
        config = load_config(cfg_path)
        if args.seed_override is not None:
            config = config.with_seeds([args.seed_override])
        out = Path(args.out) / config.name if args.out else _out_dir(argparse.Namespace(out=None), config)
        summaries[config.name] = run_experiment(config, out)
    for p in args.runs:
        p = Path(p)
        csv = p / "metrics.csv" if p.is_dir() else p
        name = p.name if p.is_dir() else p.parent.name
        if name in summaries:
            name = str(p)
        summaries[name] = load_metrics_csv(csv, name=name)
    if len(summaries) < 2:
        print("compare needs at least two runs (--config files and/or run directories)", file=sys.stderr)
        return 2
    table = compare_runs(summaries).format_table()
    print(table, end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "comparison.txt").write_text(table)
    return 0


def cmd_plot(args) -> int:
    config = _load(args)
    if config.dataset.kind != "two_moons":
        raise ConfigError(["decision boundaries can only be drawn for 2-D (two_moons) datasets"])
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    for seed in config.seeds:
        ckpt = out / "models" / f"seed_{seed}.ckpt"
        if ckpt.exists():
            _, split, model = prepare_seed(config, seed)
            model.restore(ModelState.load(ckpt))
        else:
            result = run_seed(config, seed, out)
            split, model = result.split, result.model
        path = out / f"boundary_seed_{seed}.ppm"
        plot_decision_boundary(model, split, args.resolution, path)
        print(f"seed {seed}: wrote {path}")
    return 0


def cmd_make_digits(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for part, n, seed in (("train", args.n_train, args.seed), ("test", args.n_test, args.seed + 1)):
        images, labels = make_synthetic_digits(n, seed=seed)
        write_idx(images, labels, out / f"{part}-images-idx3-ubyte", out / f"{part}-labels-idx1-ubyte")
        print(f"wrote {n} {part} digits to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="altssl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment YAML file")
        p.add_argument("--out", help="output directory (default: config 'output' or runs/<name>)")
        p.add_argument("--seed-override", type=int, help="run this single seed instead of the config's list")

    p = sub.add_parser("pretext", help="train (or load cached) rotation checkpoints per seed")
    common(p)
    p.set_defaults(func=cmd_pretext)

    p = sub.add_parser("run", help="run an experiment and write metrics.csv / summary.json")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare runs sharing a seed list")
    p.add_argument("runs", nargs="*", help="run directories or metrics CSV files")
    p.add_argument("--config", action="append", help="experiment YAML to run first (repeatable)")
    p.add_argument("--out", help="directory for runs started here and comparison.txt")
    p.add_argument("--seed-override", type=int, help="run this single seed for every --config")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="decision-boundary PPM for two-moons runs")
    common(p)
    p.add_argument("--resolution", type=int, default=200, help="grid points per side (default 200)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("make-digits", help="write synthetic digit IDX files")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=2100)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_make_digits)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
