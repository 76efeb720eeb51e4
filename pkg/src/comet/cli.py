"""Command-line entry point: ``comet <subcommand> ...``.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
``COMET_WORKERS`` overrides ``--workers`` where a command accepts it.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import data, engine, metrics, sim
from .errors import CometError, JobError, ParseError, UnsupportedError, ValidationError
from .lazy import CommitteeEvaluator
from .stopping import LAZY_RULES, Rule, StopConfig, build_table

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
# MLEE tables beyond this size take hours to build
MLEE_FORCE_LIMIT = 100_000


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _alpha(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {v}")
    return v


def _rule(text):
    try:
        return Rule.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("expected positive integers")
    return vals


def _workers(flag: int) -> int:
    env = os.environ.get("COMET_WORKERS")
    if env is None:
        return flag
    try:
        v = int(env)
    except ValueError:
        raise ValidationError(f"COMET_WORKERS must be an integer, got {env!r}") from None
    if v < 1:
        raise ValidationError("COMET_WORKERS must be >= 1")
    return v


# --- subcommands -------------------------------------------------------------------

def cmd_shuffle(args) -> int:
    paths = data.shuffle_split(args.input, args.blocks, args.seed, args.out_dir)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_synth(args) -> int:
    data.SynthSpec(args.n, args.d, args.c, args.separation, args.noise)
    if (args.test_n > 0) != (args.test_out is not None):
        raise ValidationError("--test-n and --test-out go together")
    # one draw so train and test share class centers
    block = data.synth_generate(data.SynthSpec(args.n + args.test_n, args.d, args.c,
                                               args.separation, args.noise), args.seed)
    train, test = block.split(args.n) if args.test_n else (block, None)
    data.write_block(train, args.out)
    print(f"wrote {len(train)} examples to {args.out}")
    if args.test_out:
        data.write_block(test, args.test_out)
        print(f"wrote {len(test)} examples to {args.test_out}")
    return EXIT_OK


def cmd_train(args) -> int:
    blocks_dir = Path(args.blocks_dir)
    if not blocks_dir.is_dir():
        raise ValidationError(f"blocks directory {blocks_dir} does not exist")
    paths = sorted(blocks_dir.glob("*.csv"))
    if not paths:
        raise ValidationError(f"no .csv blocks in {blocks_dir}")
    cfg = engine.TrainConfig(
        tuple(paths), args.sampler, args.trees_per_block, args.bite_size,
        args.partitions, args.seed, _workers(args.workers),
    )
    result = engine.train_distributed(cfg, args.out_dir)
    for block_id, seconds in sorted(result.block_seconds.items()):
        print(f"block {block_id} ({paths[block_id].name}): {seconds:.3f}s")
    for path, size in zip(result.paths, result.partition_sizes):
        print(f"{path}: {size} trees")
    print(f"total trees: {result.total_trees}")
    return EXIT_OK


def _write_predictions(path, preds, used, stages):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "prediction", "votes_used", "stage"])
        for i, (p, u, s) in enumerate(zip(preds, used, stages)):
            w.writerow([i, int(p), int(u), s])


def cmd_predict(args) -> int:
    partitions = [engine.load_ensemble(p) for p in args.ensemble]
    ensemble = engine.merge_partitions(args.ensemble)
    test = data.load_block(args.test)
    c = max(ensemble.num_classes, test.num_classes)
    if args.rule is Rule.MLEE and c > 2:
        raise UnsupportedError(f"MLEE supports two classes only; data has {c}")

    if args.committee:
        if test.num_features != ensemble.num_features:
            raise ValidationError(f"test block has {test.num_features} features, "
                                  f"ensemble expects {ensemble.num_features}")
        committee = CommitteeEvaluator(partitions, args.rule, args.alpha, args.seed)
        start = time.perf_counter()
        out = [committee(x) for x in test.X]
        seconds = time.perf_counter() - start
        preds = np.array([r.prediction for r, _ in out], dtype=np.int64)
        used = np.array([r.votes_used for r, _ in out], dtype=np.int64)
        stages = [s for _, s in out]
        report = metrics.EvalReport(
            float(np.mean(preds == test.y)), float(used.mean()), seconds,
            metrics.confusion_matrix(test.y, preds, c), preds, used,
        )
        escalated = sum(s == "full" for s in stages)
        print(f"committee: {len(committee.partitions)} partitions, {escalated} escalated to full")
    elif args.rule is Rule.FULL:
        report = metrics.evaluate(ensemble, test, "full")
        stages = ["full"] * len(test)
    else:
        table = build_table(StopConfig(args.rule, args.alpha, len(ensemble)), c)
        report = metrics.evaluate(ensemble, test, "lazy", table, args.seed)
        stages = ["lazy"] * len(test)

    print(report.summary())
    if args.out:
        _write_predictions(args.out, report.predictions, report.votes_used, stages)
    return EXIT_OK


def cmd_simulate(args) -> int:
    workers = _workers(args.workers)
    if args.preset == "paper-sim":
        reports = []
        for grid in sim.SWEEP_PRESET:
            reports += sim.sweep(LAZY_RULES, grid["m_values"], grid["alphas"], args.trials, args.seed, workers)
    else:
        if args.m is None or args.alpha is None:
            raise ValidationError("--m and --alpha are required without --preset")
        rules = LAZY_RULES if args.rule == "all" else (_rule(args.rule),)
        reports = sim.sweep(rules, [args.m], [args.alpha], args.trials, args.seed, workers)
    print(",".join(sim.SWEEP_COLUMNS))
    for r in reports:
        row = r.row()
        print(",".join(str(row[k]) for k in sim.SWEEP_COLUMNS))
    if args.out:
        sim.write_sweep_csv(reports, args.out)
    if args.histogram:
        if len(reports) != 1:
            raise ValidationError("--histogram needs a single rule, m and alpha")
        sim.write_histogram_csv(reports[0], args.histogram)
    return EXIT_OK


def _check_mlee_size(rule, m, force):
    if rule is Rule.MLEE and m > MLEE_FORCE_LIMIT and not force:
        raise ValidationError(f"MLEE table for m={m} would take hours; pass --force to build it anyway")


def cmd_table(args) -> int:
    _check_mlee_size(args.rule, args.m, args.force)
    start = time.perf_counter()
    table = build_table(StopConfig(args.rule, args.alpha, args.m))
    seconds = time.perf_counter() - start
    table.to_csv(args.out)
    rows = args.m - min(table.n_min, args.m) + 1
    print(f"{args.rule.value} m={args.m} alpha={args.alpha}: {rows} rows in {seconds:.3f}s -> {args.out}")
    return EXIT_OK


def bench_tables(rules, m_values, alpha, force=False):
    """Build-time in seconds for every (rule, m); the MLEE kernel is compiled first."""
    for rule in rules:
        for m in m_values:
            _check_mlee_size(rule, m, force)
    if Rule.MLEE in rules:
        build_table(StopConfig(Rule.MLEE, alpha, 8))
    rows = []
    for rule in rules:
        for m in m_values:
            start = time.perf_counter()
            build_table(StopConfig(rule, alpha, m))
            rows.append((rule.value, m, time.perf_counter() - start))
    return rows


def cmd_bench_table(args) -> int:
    rules = [_rule(r) for r in args.rules.split(",")]
    rows = bench_tables(rules, args.m_list, args.alpha, args.force)
    print("rule,m,seconds")
    for rule, m, s in rows:
        print(f"{rule},{m},{s:.6f}")
    if args.out:
        metrics.write_rows_csv(rows, ("rule", "m", "seconds"), args.out)
    return EXIT_OK


def cmd_bite_sweep(args) -> int:
    if any(b % 2 for b in args.sizes):
        raise ValidationError("bite sizes must be even")
    train = data.load_block(args.train)
    test = data.load_block(args.test, train.num_classes)
    rows = metrics.bite_size_sweep(train, test, args.sizes, args.m, args.seed)
    print("bite_size,accuracy")
    for b, acc in rows:
        print(f"{b},{acc:.6f}")
    if args.out:
        metrics.write_rows_csv(rows, ("bite_size", "accuracy"), args.out)
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="comet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("shuffle", help="split a CSV into random blocks")
    p.add_argument("--input", required=True)
    p.add_argument("--blocks", type=_positive_int, required=True)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_shuffle)

    p = sub.add_parser("synth", help="write a synthetic Gaussian-class dataset")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--d", type=_positive_int, default=20)
    p.add_argument("--c", type=_positive_int, default=2)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--test-n", type=_nonneg_int, default=0, help="held-out examples from the same draw")
    p.add_argument("--test-out", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train per-block ensembles and write partitions")
    p.add_argument("--blocks-dir", required=True)
    p.add_argument("--sampler", choices=("ivoting", "bagging"), default="ivoting")
    p.add_argument("--trees-per-block", type=_positive_int, default=100)
    p.add_argument("--bite-size", type=_positive_int, default=None)
    p.add_argument("--partitions", type=_positive_int, default=1)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="evaluate ensemble partitions on a test CSV")
    p.add_argument("--ensemble", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--rule", type=_rule, default=Rule.FULL)
    p.add_argument("--alpha", type=_alpha, default=0.01)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--committee", action="store_true")
    p.add_argument("--out", default=None, help="per-example predictions CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="Monte-Carlo lazy-evaluation study")
    p.add_argument("--m", type=_positive_int)
    p.add_argument("--alpha", type=_alpha)
    p.add_argument("--rule", default="g1-fpc", help="rule name or 'all'")
    p.add_argument("--trials", type=_positive_int, default=1_000_000)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--preset", choices=("paper-sim",), default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--histogram", default=None, help="votes-used histogram CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("table", help="export a stopping-threshold table")
    p.add_argument("--m", type=_positive_int, required=True)
    p.add_argument("--alpha", type=_alpha, required=True)
    p.add_argument("--rule", type=_rule, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("bench-table", help="time stopping-table construction")
    p.add_argument("--m-list", type=_int_list, required=True)
    p.add_argument("--rules", default="g1,g2,g1-fpc,g2-fpc,mlee")
    p.add_argument("--alpha", type=_alpha, default=0.01)
    p.add_argument("--force", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench_table)

    p = sub.add_parser("bite-sweep", help="IVoting accuracy against bite size")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--sizes", type=_int_list, required=True)
    p.add_argument("--m", type=_positive_int, default=1000)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bite_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        print(f"comet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ParseError, UnsupportedError) as exc:
        print(f"comet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (JobError, CometError, OSError) as exc:
        print(f"comet {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
