"""Command-line entry point: ``bsblfr {bench,recover,classify,synth,selftest}``.

Exit status is 0 on success, 1 for usage, configuration or input errors and 2
for failures while running.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .bench import FORMATS, emit_report, format_report, load_config, run_experiment
from .classifier import build_dictionary, classify, classify_robust
from .data import load_directory, read_image, save_dataset, synth_dataset
from .errors import BsblError, ConfigError, FormatError, InputValidationError
from .features import downsampler, transform
from .solvers import SOLVERS, BlockPartition, SensingProblem, SolverOptions
from .solvers.instances import oracle_equivalence

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _dims(text: str) -> tuple:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("dimensions must be positive")
    return h, w


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bsblfr", description="Block-sparse recovery and sparse-representation face classification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bench", help="run an experiment config and write a report")
    p.add_argument("config", help="TOML experiment config")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--format", choices=FORMATS, default="csv")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-timing", action="store_true", help="write wall_ms = 0 for byte-reproducible reports")

    p = sub.add_parser("recover", help="solve one block-sparse recovery problem from CSV")
    p.add_argument("phi", help="CSV file with the m x n sensing matrix")
    p.add_argument("y", help="CSV file with the m measurements (one per line or one row)")
    p.add_argument("--blocks", required=True,
                   help="block sizes: one integer for equal blocks, or a comma-separated list")
    p.add_argument("--solver", choices=sorted(SOLVERS), default="bsbl")
    p.add_argument("--epsilon", type=float, default=0.0, help="residual tolerance for l1/block_l1")
    p.add_argument("--out", help="write x_hat as CSV")

    p = sub.add_parser("classify", help="classify one image against a labelled image directory")
    p.add_argument("dictionary", help="directory with one sub-directory of images per class")
    p.add_argument("image", help="test image (PGM or CSV)")
    p.add_argument("--solver", default="bsbl", help="bsbl, l1 (src) or block_l1 (bsco)")
    p.add_argument("--robust", action="store_true", help="add the outlier block")
    p.add_argument("--downsample", type=_dims, metavar="HxW", help="downsample all images first")

    p = sub.add_parser("synth", help="write a synthetic face-like dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--per-class", type=int, default=15)
    p.add_argument("--dims", type=_dims, default=(40, 30), metavar="HxW")
    p.add_argument("--subspace-dim", type=int, default=4)
    p.add_argument("--noise-sigma", type=float, default=2.0)
    p.add_argument("--format", choices=("pgm", "csv"), default="pgm")

    p = sub.add_parser("selftest", help="compare the solvers with the exhaustive oracle")
    p.add_argument("--seed", type=int, default=0, help="first instance seed")
    p.add_argument("--instances", type=int, default=20)
    return parser


def _read_matrix(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise InputValidationError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _partition(text: str, n: int) -> BlockPartition:
    try:
        sizes = [int(v) for v in text.split(",")]
    except ValueError:
        raise InputValidationError(f"--blocks: expected integers, got {text!r}") from None
    if len(sizes) == 1:
        if sizes[0] < 1 or n % sizes[0]:
            raise InputValidationError(f"--blocks {sizes[0]} does not divide n = {n}")
        return BlockPartition.uniform(n // sizes[0], sizes[0])
    return BlockPartition(sizes)


def _cmd_bench(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    report = run_experiment(config, threads=args.threads, timing=not args.no_timing)
    if args.out:
        emit_report(report, args.format, args.out)
    else:
        sys.stdout.write(format_report(report, args.format))
    failed = [r for r in report.rows if r.error]
    for r in failed:
        print(f"cell {r.classifier}/{r.feature}/{r.corruption}:{r.fraction}/{r.trial} failed: {r.error}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_recover(args) -> int:
    phi = _read_matrix(args.phi)
    y = _read_matrix(args.y).reshape(-1)
    problem = SensingProblem(phi, y, _partition(args.blocks, phi.shape[1]))
    result = SOLVERS[args.solver](problem, SolverOptions(epsilon=args.epsilon))
    print(result.summary(problem.partition))
    if args.out:
        np.savetxt(args.out, result.x_hat[:, None], delimiter=",", fmt="%.17g")
    return EXIT_OK


def _cmd_classify(args) -> int:
    ds = load_directory(args.dictionary)
    test = read_image(args.image)
    if args.downsample:
        ext = downsampler(*args.downsample)
        train = [transform(ext, img) for img in ds.images]
        y = transform(ext, test)
    else:
        if test.shape != ds.dims:
            raise InputValidationError(f"test image is {test.shape}, dictionary images are {ds.dims}")
        train = list(ds.vectors())
        y = test.reshape(-1)
    d = build_dictionary(list(zip(train, ds.labels.tolist())))
    fn = classify_robust if args.robust else classify
    result = fn(d, y, args.solver)
    print(f"predicted: {ds.class_names[result.predicted_class]}")
    for label, res in zip(d.class_ids, result.residuals):
        print(f"  {ds.class_names[label]}: {res:.6g}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    ds = synth_dataset(
        classes=args.classes, per_class=args.per_class, dims=args.dims,
        subspace_dim=args.subspace_dim, noise_sigma=args.noise_sigma, seed=args.seed, quantize=True,
    )
    save_dataset(ds, args.out, fmt=args.format)
    print(f"wrote {len(ds.labels)} images in {ds.n_classes} classes to {args.out}")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    required = {"bsbl": 19, "block_l1": 17}
    ok = True
    for check in oracle_equivalence(args.instances, args.seed):
        need = int(np.ceil(required[check.solver] * args.instances / 20))
        passed = check.matches >= need
        ok &= passed
        print(f"{check.solver:9s} {check.matches}/{check.total} match the oracle (need {need}): "
              f"{'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


_COMMANDS = {
    "bench": _cmd_bench,
    "recover": _cmd_recover,
    "classify": _cmd_classify,
    "synth": _cmd_synth,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, InputValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BsblError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
