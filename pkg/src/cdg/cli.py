"""Command line entry point: ``cdg verify|precondition|train|sweep|ablate|analyze``.

Exit codes: 0 ok, 1 verification failure, 2 invalid arguments, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from cdg import analysis, data, harness, tensor, verify
from cdg.errors import DegenerateResult, InvalidArgument
from cdg.precondition import METRICS, PrecondConfig, precondition

EXIT_OK, EXIT_VERIFY, EXIT_ARGS, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InvalidArgument(message)


def _run_options(p):
    p.add_argument("--config", help="flat key = value run config file")
    p.add_argument("--seed", type=int, help="run a single seed (overrides seeds)")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--data-dir", help="directory with the IDX files (or $CDG_DATA_DIR)")
    p.add_argument("--out-dir")
    p.add_argument("--task", choices=harness.TASKS)
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--axis", choices=("output", "input"))
    p.add_argument("--rasterize", action="store_const", const=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--train-n", type=int)
    p.add_argument("--test-n", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")
    p.add_argument("--no-figures", action="store_true")


def _run_config(args):
    overrides = {}
    for key in ("data_dir", "out_dir", "task", "metric", "lam", "beta", "axis", "rasterize",
                "sigma", "optimizer", "lr", "epochs", "batch_size", "train_n", "test_n",
                "eval_every", "workers", "seeds"):
        overrides[key] = getattr(args, key, None)
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    for item in args.set:
        if "=" not in item:
            raise InvalidArgument(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return harness.load_config(args.config, overrides)


def build_parser():
    parser = _Parser(prog="cdg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("verify", help="run oracle and invariant suites")
    p.add_argument("--suite", action="append", choices=list(verify.SUITES),
                   help="run only this suite (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="validate this run config before verifying")

    p = sub.add_parser("precondition", help="precondition a CDG1 gradient tensor")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=METRICS, default="sobolev_tilde_h1")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--axis", choices=("output", "input"), default="output")
    p.add_argument("--rasterize", action="store_true")
    p.add_argument("--sigma", type=float, default=1.0)

    p = sub.add_parser("train", help="train the CNN (or synthetic task) for each seed")
    _run_options(p)
    p.add_argument("--save-tensors", action="store_true",
                   help="write final weight tensors as CDG1 files")

    p = sub.add_parser("sweep", help="final accuracy as a function of lambda")
    _run_options(p)
    p.add_argument("--lambdas", default="0,0.5,1,2,5,10,20")
    p.add_argument("--metrics", default="sobolev_tilde_h1,reweighted_h0_code_variant")

    p = sub.add_parser("ablate", help="smoothing-direction ablation")
    _run_options(p)

    p = sub.add_parser("analyze", help="channel correlation curve of a CDG1 tensor")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--axis", choices=("output", "input"), default="output")
    p.add_argument("--max-d", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", default=None)
    return parser


def cmd_verify(args):
    if args.config:
        harness.load_config(args.config)
    ok, _ = verify.run(args.suite, seed=args.seed)
    print("all suites passed" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_precondition(args):
    cfg = PrecondConfig(metric=args.metric, lam=args.lam, beta=args.beta, axis=args.axis,
                        rasterize=args.rasterize, sigma=args.sigma)
    g = precondition(tensor.load(args.inp), cfg)
    tensor.save(args.out, g)
    return EXIT_OK


def cmd_train(args):
    cfg = _run_config(args)
    trials, files = harness.cmd_train(cfg, figures=not args.no_figures,
                                      save_tensors=args.save_tensors)
    for t in trials:
        print(f"seed {t.seed} {t.metric}: final test acc {t.final_test_acc:.4f} "
              f"final loss {t.final_loss:.6g}")
    for f in files.values():
        print(f"wrote {f}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _run_config(args)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    rows, files = harness.cmd_sweep(cfg, args.lambdas, metrics, figures=not args.no_figures)
    for metric, lam, mean, std, n in rows:
        print(f"{metric:28s} lambda={lam:<6g} acc {mean:.4f} +- {std:.4f} (n={n})")
    for f in files.values():
        print(f"wrote {f}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = _run_config(args)
    rows, files = harness.cmd_ablate_direction(cfg, figures=not args.no_figures)
    for direction, metric, mean, std, n in rows:
        print(f"{direction:18s} {metric:22s} acc {mean:.4f} +- {std:.4f} (n={n})")
    for f in files.values():
        print(f"wrote {f}")
    return EXIT_OK


def cmd_analyze(args):
    x = tensor.load(args.inp)
    layer = args.layer or os.path.splitext(os.path.basename(args.inp))[0]
    rows = [
        (layer, args.axis, d, c.mean, c.n_pairs)
        for d, c in analysis.correlation_curve(x, args.axis, args.max_d)
    ]
    if not rows:
        raise InvalidArgument(f"axis {args.axis} has fewer than two slices")
    analysis._write_csv(args.out, analysis.CORRELATION_COLUMNS, rows)
    return EXIT_OK


COMMANDS = {
    "verify": cmd_verify,
    "precondition": cmd_precondition,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except InvalidArgument as exc:
        print(f"cdg: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InvalidArgument, DegenerateResult) as exc:
        print(f"cdg: invalid argument: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (OSError, data.IdxFormatError) as exc:
        print(f"cdg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
