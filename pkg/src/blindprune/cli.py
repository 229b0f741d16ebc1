"""Command-line entry point: ``blindprune {train,prune,eval,mi-report,occupancy,reproduce}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import DEFAULT_DATA_DIR, ExperimentConfig, from_dict, load_config
from .errors import BlindPruneError
from .experiment import get_baseline, mnist, reproduce_table, run_experiment, train_baseline
from .infometrics import (
    HistogramEstimator,
    blind_range_occupancy,
    mi_rank_layer,
    write_mi_csv,
    write_occupancy_csv,
)
from .network import PruneMask, load_checkpoint, save_checkpoint, sparsity
from .pruner import evaluate

# CLI flag -> ExperimentConfig field
_FLAG_FIELDS = {
    "activation": "activation", "method": "method", "target": "target",
    "per_iter": "per_iter", "data_fraction": "data_fraction", "alpha": "alpha",
    "beta": "beta", "eps": "eps", "layer_factor": "layer_factor",
    "lambda_rl1": "lambda_rl1", "seed": "seed", "data_dir": "data_dir",
    "out_dir": "out_dir", "checkpoint": "checkpoint", "epochs": "epochs", "lr": "lr",
    "fine_tune_lr": "fine_tune_lr", "fine_tune_epochs": "fine_tune_epochs",
    "batch_size": "batch_size", "cache_dir": "cache_dir",
    "resample_subset": "resample_subset", "leaky_slope": "leaky_slope",
}


def _on_off(text):
    if text in ("on", "true", "1", "yes"):
        return True
    if text in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError("expected on or off")


def _experiment_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--activation", choices=["relu", "leaky-relu", "sigmoid", "tanh"])
    p.add_argument("--leaky-slope", type=float)
    p.add_argument("--method", choices=["contribution", "magnitude", "wanda", "random"])
    p.add_argument("--target", type=float)
    p.add_argument("--per-iter", type=float)
    p.add_argument("--data-fraction", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--layer-factor", type=_on_off, metavar="{on,off}")
    p.add_argument("--lambda-rl1", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--fine-tune-lr", type=float)
    p.add_argument("--fine-tune-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--resample-subset", action="store_const", const=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--out-dir")
    p.add_argument("--cache-dir")
    p.add_argument("--checkpoint")


def _config(args) -> ExperimentConfig:
    overrides = {}
    for flag, key in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "config", None):
        return load_config(args.config, overrides)
    return from_dict(overrides)


def _cmd_train(args):
    cfg = _config(args)
    train_split, test_split = mnist(cfg.data_dir)
    model = train_baseline(cfg, train_split)
    mask = PruneMask.full(model)
    out = Path(args.save or Path(cfg.out_dir) / "baseline.aplb")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, mask, out)
    cfg.write(out.with_suffix(".json"))
    print(f"accuracy {evaluate(model, mask, test_split):.4f} checkpoint {out}")


def _cmd_prune(args):
    cfg = _config(args)
    result = run_experiment(cfg)
    for r in result.report.records:
        print(f"iteration {r.iteration} sparsity {r.sparsity:.4f} accuracy {r.accuracy:.4f}")
    print(f"baseline {result.baseline_accuracy:.4f} final {result.row.accuracy:.4f} "
          f"-> {result.out_dir}")


def _cmd_eval(args):
    model, mask = load_checkpoint(args.checkpoint)
    _, test_split = mnist(args.data_dir)
    print(f"accuracy {evaluate(model, mask, test_split):.4f} "
          f"sparsity {sparsity(model):.4f} pruned {mask.n_pruned}/{model.n_weights}")


def _scoring_data(args):
    train_split, _ = mnist(args.data_dir)
    return train_split.images[:args.samples]


def _cmd_mi_report(args):
    model, mask = load_checkpoint(args.checkpoint)
    images = _scoring_data(args)
    _, estimates = mi_rank_layer(model, mask, images, args.layer,
                                 HistogramEstimator(args.bins), sample_cap=args.samples)
    write_mi_csv(estimates, args.output)
    print(f"wrote {len(estimates)} estimates to {args.output}")


def _cmd_occupancy(args):
    model, mask = load_checkpoint(args.checkpoint)
    fractions = blind_range_occupancy(model, mask, _scoring_data(args), tol=args.tol)
    if args.output:
        write_occupancy_csv(fractions, args.output)
    for k, frac in enumerate(fractions):
        print(f"layer {k} occupancy {frac:.4f}")


def _cmd_reproduce(args):
    cfg = _config(args)
    markdown, csv_text, _ = reproduce_table(args.table, seeds=args.seeds, base=cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"table{args.table}.md").write_text(markdown)
    (out / f"table{args.table}.csv").write_text(csv_text)
    print(markdown)


def build_parser():
    parser = argparse.ArgumentParser(prog="blindprune", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an unpruned baseline")
    _experiment_flags(p)
    p.add_argument("--save", help="checkpoint path (default <out-dir>/baseline.aplb)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("prune", help="train or load a baseline, then prune iteratively")
    _experiment_flags(p)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("eval", help="test accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", default=DEFAULT_DATA_DIR)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("mi-report", help="weight-presence mutual information for one layer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--output", default="mi_report.csv")
    p.add_argument("--data-dir", default=DEFAULT_DATA_DIR)
    p.set_defaults(func=_cmd_mi_report)

    p = sub.add_parser("occupancy", help="blind-range occupancy per hidden layer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--output")
    p.add_argument("--data-dir", default=DEFAULT_DATA_DIR)
    p.set_defaults(func=_cmd_occupancy)

    p = sub.add_parser("reproduce", help="rerun one of the result tables")
    _experiment_flags(p)
    p.add_argument("--table", type=int, required=True, choices=[1, 2, 3, 4, 5])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.set_defaults(func=_cmd_reproduce)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (BlindPruneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
