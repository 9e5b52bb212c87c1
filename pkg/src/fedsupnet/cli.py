"""Command line entry points.

Subcommands: generate-data, train, adapt, crosseval, check-budget,
report. Every command exits 0 on success and nonzero with a diagnostic
on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiment, report
from .config import ConfigError, ExperimentConfig


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "output", None):
        cfg.output_dir = args.output
    if getattr(args, "data_dir", None):
        cfg.data_dir = args.data_dir
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "model_run", None):
        cfg.model_run = args.model_run
    if getattr(args, "adapt_run", None):
        cfg.adapt_run = args.adapt_run
    return cfg


def _add_common(p):
    p.add_argument("--config", required=True, help="experiment config YAML")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--output", default=None, help="override output directory")
    p.add_argument("--data-dir", dest="data_dir", default=None,
                   help="override data directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsupnet",
        description="Federated supernet training and per-site path personalization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render the synthetic site cohorts")
    _add_common(p)

    p = sub.add_parser("train", help="run one training mode")
    _add_common(p)
    p.add_argument("--mode", choices=("unet-local", "unet-fed", "sn-local", "sn-fed"),
                   default=None, help="override config mode")

    p = sub.add_parser("adapt", help="select per-site paths on frozen weights")
    _add_common(p)
    p.add_argument("--model-run", dest="model_run", default=None,
                   help="train run directory holding the checkpoints")

    p = sub.add_parser("crosseval", help="score every site's model on every site")
    _add_common(p)
    p.add_argument("--model-run", dest="model_run", default=None)
    p.add_argument("--adapt-run", dest="adapt_run", default=None,
                   help="adaptation run whose chosen paths to evaluate")

    p = sub.add_parser("check-budget",
                       help="expected path selections for a training budget")
    p.add_argument("--config", required=True)
    p.add_argument("--iterations", type=int, default=None,
                   help="override the total supernet iteration count")

    p = sub.add_parser("report", help="render text tables from run directories")
    p.add_argument("runs", nargs="*", help="run directories with metrics.csv")
    p.add_argument("--output", default=None, help="write the report here too")
    return parser


def cmd_generate_data(args) -> int:
    cfg = _load_config(args)
    cfg.data.validate()
    root = experiment.generate_data(cfg)
    print(f"wrote {len(cfg.data.sites)} site cohorts under {root}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = experiment.run_train(cfg)
    print(f"training artifacts in {out}")
    return 0


def cmd_adapt(args) -> int:
    cfg = _load_config(args)
    cfg.mode = "adapt"
    out = experiment.run_adapt(cfg)
    print(f"adaptation artifacts in {out}")
    return 0


def cmd_crosseval(args) -> int:
    cfg = _load_config(args)
    cfg.mode = "crosseval"
    out = experiment.run_crosseval(cfg)
    print(f"cross-site matrix in {out}")
    return 0


def cmd_check_budget(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    sn_cfg = experiment.build_supernet_config(cfg)
    if args.iterations is not None:
        iters = args.iterations
    else:
        rounds, local_iters = experiment._budget(cfg, "sn-fed", len(cfg.data.sites))
        iters = rounds * local_iters * len(cfg.data.sites)
    baseline = max(1, iters // cfg.train.sn_train_multiplier)
    chk = experiment.check_training_length(sn_cfg, iters,
                                           baseline_iterations=baseline)
    print(f"paths: {chk.path_count}")
    print(f"iterations: {chk.iterations}")
    print(f"expected selections per path: {chk.expected_selections_per_path:.6g}")
    print(f"budget multiplier vs baseline: {chk.multiplier_vs_baseline:.3g}")
    print("PASS" if chk.passed else "FAIL: expected selections per path < 1")
    return 0 if chk.passed else 1


def cmd_report(args) -> int:
    for d in args.runs:
        if not (Path(d) / "metrics.csv").exists():
            raise ConfigError(f"{d}: no metrics.csv found")
    text = report.render_report(args.runs)
    sys.stdout.write(text)
    if args.output:
        Path(args.output).write_text(text)
    return 0


_COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "adapt": cmd_adapt,
    "crosseval": cmd_crosseval,
    "check-budget": cmd_check_budget,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
