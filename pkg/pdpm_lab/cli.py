"""
Command-line entry point.

Usage:
    python run_lab.py train --config configs/grid25.yaml --lambda 1 --out out/grid25
    python run_lab.py compare --config configs/grid25.yaml --seeds 5 --lambda 0,0.1,1,5,10 --workers 4
    python run_lab.py probe out/grid25 --pairs 200
    python run_lab.py plot out/grid25
    python run_lab.py similarity-map out/grid25
    python run_lab.py dump-data --dataset ring8 --n 2000 --out ring8.csv
    python run_lab.py verify
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import harness
from .config import ExperimentConfig, MixtureConfig, load_config, parse_config
from .errors import EXIT_NUMERIC, EXIT_OK, ConfigError, LabError, exit_code_for
from .logs import setup_logging
from .synthetic_data import MIXTURE_NAMES

logger = logging.getLogger(__name__)


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", metavar="PATH", help="experiment YAML/JSON (default: built-in defaults)")
    parser.add_argument("--seed", type=int, help="run seed (compare: first seed)")
    parser.add_argument("--out", "-o", metavar="DIR", help="output directory")
    parser.add_argument("--steps", type=int, metavar="N", help="total generator steps")
    parser.add_argument("--scale", type=_float_list, metavar="LIST", help="sigmoid scale(s) s")
    parser.add_argument("--ms", action="store_true", help="add the mode-seeking term (train) or row (compare)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdpm-lab",
        description="Train and compare GANs with the pairwise diversity penalty on 2D mixtures.",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    parser.add_argument("--quiet", "-q", action="store_true", help="warnings only, no progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run")
    _add_experiment_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, metavar="VALUE", help="diversity penalty weight")
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint in --out")
    p.add_argument("--plot", action="store_true", help="render SVG figures after training")

    p = sub.add_parser("compare", help="baseline vs PDPM over paired seeds")
    _add_experiment_flags(p)
    p.add_argument("--seeds", type=int, metavar="N", help="number of seeds (>= 3)")
    p.add_argument("--lambda", dest="lam", type=_float_list, metavar="LIST", help="lambda values, e.g. 0,1,5")
    p.add_argument("--workers", type=int, metavar="N", help="worker processes")

    p = sub.add_parser("probe", help="near-duplicate latent similarity of a trained run")
    p.add_argument("run_dir")
    p.add_argument("--pairs", type=int, default=200, metavar="N")
    p.add_argument("--mse-threshold", type=float, metavar="EPS")
    p.add_argument("--probe-steps", type=int, metavar="N")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("plot", help="render SVG figures of a run")
    p.add_argument("run_dir")
    p.add_argument("--samples", type=int, metavar="N")

    p = sub.add_parser("similarity-map", help="discriminator feature similarity between modes")
    p.add_argument("run_dir")
    p.add_argument("--per-mode", type=int, default=64, metavar="N")

    p = sub.add_parser("dump-data", help="write samples of a mixture as CSV")
    p.add_argument("--config", "-c", metavar="PATH")
    p.add_argument("--dataset", choices=[n for n in MIXTURE_NAMES if n != "custom"])
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "-o", metavar="PATH", required=True)

    p = sub.add_parser("verify", help="Gaussian-product, Gram and DP oracles, gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=50)
    return parser


def experiment_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or defaults) with command-line overrides, validated as a whole."""
    base = load_config(args.config) if args.config else ExperimentConfig()
    data = base.to_dict()
    train = data["train"]
    if getattr(args, "seed", None) is not None:
        train["seed"] = args.seed
        data["seeds"] = None
    if getattr(args, "seeds", None) is not None:
        data["n_seeds"] = args.seeds
        data["seeds"] = None
    if getattr(args, "steps", None) is not None:
        train["total_generator_steps"] = args.steps
    if getattr(args, "out", None) is not None:
        data["output_dir"] = args.out
    if getattr(args, "workers", None) is not None:
        data["workers"] = args.workers

    lam = getattr(args, "lam", None)
    scale = getattr(args, "scale", None)
    if args.command == "train":
        if lam is not None:
            train["lam"] = lam
        if scale:
            if len(scale) != 1:
                raise ConfigError([("--scale", "train takes a single value")])
            train["s"] = scale[0]
        if args.ms:
            train["lam_ms"] = harness.MS_COEFFICIENT
    else:
        if lam is not None:
            data["lambdas"] = lam
        if scale:
            data["scales"] = scale
        if args.ms:
            data["include_ms"] = True
    return parse_config(data)


def run(args: argparse.Namespace) -> int:
    if args.command == "train":
        config = experiment_from_args(args)
        run_dir = harness.cmd_train(config, config.output_dir, resume=args.resume, quiet=args.quiet,
                                    plot=args.plot)
        print(run_dir.root)
        return EXIT_OK

    if args.command == "compare":
        config = experiment_from_args(args)
        report = harness.cmd_compare(config, config.output_dir, quiet=args.quiet)
        print(harness.format_table(report), end="")
        return EXIT_OK

    if args.command == "probe":
        doc = harness.cmd_probe(args.run_dir, args.pairs, mse_threshold=args.mse_threshold,
                                steps=args.probe_steps, seed=args.seed)
        print(f"mean near-duplicate latent similarity: {doc['mean']:.4f} "
              f"({doc['count']}/{doc['n_pairs']} pairs converged)")
        return EXIT_OK

    if args.command == "plot":
        for path in harness.cmd_plot(args.run_dir, args.samples):
            print(path)
        return EXIT_OK

    if args.command == "similarity-map":
        matrix = harness.cmd_similarity_map(args.run_dir, args.per_mode)
        print(harness.RunDirectory(args.run_dir).similarity_map, f"({len(matrix)} modes)")
        return EXIT_OK

    if args.command == "dump-data":
        if args.config:
            dataset = load_config(args.config).dataset
        else:
            dataset = MixtureConfig(name=args.dataset or "grid25")
        print(harness.cmd_dump_data(dataset, args.n, args.seed, args.out))
        return EXIT_OK

    if args.command == "verify":
        results = harness.cmd_verify(seed=args.seed, n_draws=args.draws)
        for r in results:
            print(f"{r.name:<18} {r.instances:>4} instances  max error {r.max_error:.3e}  "
                  f"{'ok' if r.passed else 'FAILED'}")
        return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC

    raise AssertionError(f"unhandled command {args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(verbose=args.verbose, quiet=args.quiet)
    try:
        return run(args)
    except (LabError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
