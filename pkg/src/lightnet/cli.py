"""Command-line entry point: ``lightnet {check,bench,train,version}``.

Exit codes: 0 success, 1 check or assertion failure, 2 usage or input error.
Every run prints its resolved configuration to stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from lightnet import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _n_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("sequence lengths must be positive")
    return vals


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dtype", choices=("f32", "f64"), default=None)
    common.add_argument("--out", type=Path, default=None, help="output path")

    p = argparse.ArgumentParser(prog="lightnet", description="LightNet additive-decay linear attention toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="run oracle and property suites")
    c.add_argument("--suite", choices=("recurrence", "attention", "posenc", "lna", "all"), default="all")
    c.add_argument("--force-failure", action="store_true", help=argparse.SUPPRESS)

    b = sub.add_parser("bench", parents=[common], help="time 1-scan vs 2-scan")
    b.add_argument("--n-list", type=_n_list, default=None, help="comma-separated sequence lengths")
    b.add_argument("--d", type=_positive, default=64)
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--chunk", type=_positive, default=64)
    b.add_argument("--dedup-diagonal", action="store_true", help="count the diagonal once in the 2-scan")

    t = sub.add_parser("train", parents=[common], help="train a demo model")
    t.add_argument("task", choices=("char-lm", "grid2d"))
    t.add_argument("--corpus", type=Path, default=None)
    t.add_argument("--steps", type=_positive, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--batch", type=_positive, default=None)
    t.add_argument("--d", type=_positive, default=None)
    t.add_argument("--layers", type=_positive, default=None)
    t.add_argument("--heads", type=_positive, default=None)
    t.add_argument("--no-tpe", action="store_true")
    t.add_argument("--no-lrpe", action="store_true")
    t.add_argument("--shuffle-labels", action="store_true")
    t.add_argument("--threads", type=_positive, default=1)

    sub.add_parser("version", help="print the version")
    return p


def _echo(config: dict) -> None:
    print(json.dumps(config, sort_keys=True, default=str), file=sys.stderr)


def cmd_check(args) -> int:
    from lightnet.checks import run_suite

    _echo({"command": "check", "suite": args.suite, "seed": args.seed, "dtype": args.dtype or "f64", "out": args.out})
    if args.dtype == "f32":
        raise UsageError("check suites run in double precision only (--dtype f64)")
    report, failure = run_suite(args.suite, args.seed, args.force_failure)
    text = json.dumps(report, sort_keys=True)
    print(text)
    if args.out is not None:
        _write(args.out, text + "\n")
    return EXIT_OK if failure is None else EXIT_FAIL


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror or exc}") from exc


def cmd_bench(args) -> int:
    from lightnet.bench import DEFAULT_N_LIST, MIN_REPS, bench_scans, ratio_table, records_to_csv

    n_list = args.n_list or list(DEFAULT_N_LIST)
    dtype = args.dtype or "f32"
    _echo({"command": "bench", "n_list": n_list, "d": args.d, "dtype": dtype, "reps": args.reps, "chunk": args.chunk,
           "dedup_diagonal": args.dedup_diagonal, "seed": args.seed, "out": args.out})
    if args.reps < MIN_REPS:
        raise UsageError(f"--reps must be at least {MIN_REPS}, got {args.reps}")
    if args.out is not None:
        _write(args.out, "")  # fail before spending time on the runs
    records = bench_scans(n_list, args.d, dtype, args.reps, args.chunk, args.seed, dedup_diagonal=args.dedup_diagonal)
    text = records_to_csv(records)
    if args.out is not None:
        _write(args.out, text)
    else:
        sys.stderr.write(text)
    print(f"{'n':>8} {'fwd 2s/1s':>10} {'bwd 2s/1s':>10}")
    for n, fr, br in ratio_table(records):
        print(f"{n:>8} {fr:>10.3f} {br:>10.3f}")
    return EXIT_OK


def cmd_train(args) -> int:
    from lightnet.checkpoint import save_checkpoint
    from lightnet.train import char_lm_config, grid2d_config, train_char_lm, train_grid2d

    model_over = {k: getattr(args, k) for k in ("d", "layers", "heads") if getattr(args, k) is not None}
    model_over.update(seed=args.seed, dtype=args.dtype or "f64")
    out = args.out or Path(f"{args.task}-run")
    run = {"steps": args.steps, "lr": args.lr, "batch": args.batch, "threads": args.threads}
    run = {k: v for k, v in run.items() if v is not None}
    try:
        if args.task == "char-lm":
            cfg = char_lm_config(tpe=not args.no_tpe, lrpe=not args.no_lrpe, **model_over)
        else:
            cfg = grid2d_config(tpe=not args.no_tpe, lrpe=not args.no_lrpe, **model_over)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _echo({"command": "train", "task": args.task, "corpus": args.corpus, "out": out, "model": cfg.to_dict(), **run})

    if args.task == "char-lm":
        if args.corpus is None:
            raise UsageError("char-lm needs --corpus PATH")
        if not args.corpus.is_file():
            raise UsageError(f"corpus not found: {args.corpus}")
        if args.shuffle_labels:
            raise UsageError("--shuffle-labels only applies to grid2d")
        try:
            report = train_char_lm(cfg, args.corpus, **run)
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from exc
    else:
        if args.corpus is not None:
            raise UsageError("grid2d does not take --corpus")
        report = train_grid2d(cfg, shuffle_labels=args.shuffle_labels, **run)

    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_name(out.name + ".csv")
    _write(csv_path, report.to_csv())
    manifest, blob = save_checkpoint(report.model, out, report.optimizer)
    print(f"initial loss {report.initial_loss:.6f}  final loss {report.final_loss:.6f}  ratio {report.loss_ratio:.4f}")
    if report.accuracy is not None:
        blind = " (position-blind run)" if args.no_tpe and args.no_lrpe else ""
        print(f"final accuracy {report.accuracy:.4f}{blind}")
    print(f"wrote {csv_path}, {manifest}, {blob}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "version":
            _echo({"command": "version"})
            print(f"lightnet {__version__}")
            return EXIT_OK
        handler = {"check": cmd_check, "bench": cmd_bench, "train": cmd_train}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"lightnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"lightnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
