"""Command-line front end: one subcommand per pipeline stage.

Config flags are generated from the config dataclasses, using the same
names as the config files (``--num-identities``, ``--lambda``, ``--K``).
A ``--config`` file is read first and flags override it.

Exit codes: 0 success, 1 usage/config error, 2 data/schema error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import evalrank, gradcheck
from .configio import atomic_write_text, from_kv, read_kv
from .errors import DataError, DcdlError, UsageError
from .multiorder import build_tri_order_sets, parse_combination
from .oneview_gan import GanTrainConfig
from .synthcam import DatasetManifest, read_dataset_with_header
from .trainer import (
    REID_ALIASES,
    ReidConfig,
    stage_augment,
    stage_eval,
    stage_gen_data,
    stage_train_gan,
    stage_train_reid,
    train_reid,
)


class ArgParser(argparse.ArgumentParser):
    """Parse errors raise UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


# --- config flags ---------------------------------------------------------------


def _config_keys(cls, aliases=None) -> list[str]:
    reverse = {v: k for k, v in (aliases or {}).items()}
    return [reverse.get(f.name, f.name) for f in dataclasses.fields(cls)]


def _add_config_flags(p: argparse.ArgumentParser, cls, aliases=None) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    group = p.add_argument_group(f"{cls.__name__} overrides")
    for key in _config_keys(cls, aliases):
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="VALUE",
                           default=None)


def _build_config(args, cls, aliases=None):
    values = read_kv(args.config) if args.config else {}
    for key in _config_keys(cls, aliases):
        v = getattr(args, f"cfg_{key}")
        if v is not None:
            values[key] = v
    return from_kv(cls, values, aliases)


# --- commands -------------------------------------------------------------------


def _progress(args, text: str) -> None:
    if not args.quiet:
        print(text, file=sys.stderr, flush=True)


def _require(path) -> None:
    if not Path(path).is_file():
        raise DataError(f"input file not found: {path}")


def cmd_gen_data(args) -> int:
    manifest = _build_config(args, DatasetManifest)
    paths = stage_gen_data(manifest, args.out)
    for name in ("train", "test"):
        print(paths[name])
    return 0


def cmd_train_gan(args) -> int:
    config = _build_config(args, GanTrainConfig)
    _require(args.data)

    def progress(e):
        if (e.epoch + 1) % args.log_every == 0:
            _progress(args, f"epoch {e.epoch + 1}/{config.epochs} d={e.d_loss:.4f} g={e.g_loss:.4f}")

    print(stage_train_gan(args.data, config, args.out, progress))
    return 0


def cmd_augment(args) -> int:
    _require(args.data)
    _require(args.gan)
    print(stage_augment(args.data, args.gan, args.out))
    return 0


def cmd_train_reid(args) -> int:
    config = _build_config(args, ReidConfig, REID_ALIASES)
    _require(args.data)

    def progress(e):
        if e.t % args.log_every == 0:
            _progress(args, f"iter {e.t}/{config.iterations} lr={e.lr:.3g} loss={e.loss:.4f}")

    print(stage_train_reid(args.data, config, args.out, progress))
    return 0


def _print_reports(reports) -> None:
    for r in reports:
        print(f"{r.combination}\tmAP={r.mAP:.4f}\tRank-1={r.rank1:.4f}\tqueries={r.num_queries}")


def cmd_eval(args) -> int:
    parse_combination(args.combination)
    _require(args.data)
    _require(args.model)
    _print_reports(stage_eval(args.data, args.model, [args.combination], args.out,
                              evalrank.EvalProtocol(args.max_rank)))
    return 0


def cmd_ablate(args) -> int:
    combos = args.combinations.split(",") if args.combinations else evalrank.ABLATION_COMBINATIONS
    for c in combos:
        parse_combination(c)
    _require(args.data)
    _require(args.model)
    _print_reports(stage_eval(args.data, args.model, combos, args.out,
                              evalrank.EvalProtocol(args.max_rank)))
    return 0


def cmd_sweep_lambda(args) -> int:
    base = _build_config(args, ReidConfig, REID_ALIASES)
    combination = parse_combination(args.combination)
    try:
        lambdas = [float(v) for v in args.lambdas.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --lambdas value: {args.lambdas!r}") from exc
    for path in (args.train, args.test):
        _require(path)
    train_records, _ = read_dataset_with_header(args.train)
    test_records, _ = read_dataset_with_header(args.test)

    def train_and_eval(lam):
        config = dataclasses.replace(base, lam=lam)
        config.validate()
        _progress(args, f"lambda={lam!r}: training {config.iterations} iterations")
        model, _ = train_reid(train_records, config)
        sets = build_tri_order_sets(model.embed, test_records)
        return evalrank.evaluate(sets, combination)

    rows = evalrank.sweep_lambda(train_and_eval, lambdas)
    meta = {"seed": base.seed, "combination": str(combination)}
    atomic_write_text(args.out, evalrank.sweep_to_csv(rows, meta))
    for r in rows:
        print(f"lambda={r.lam!r}\tRank-1={r.rank1:.4f}\tmAP={r.mAP:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_gradcheck(seed=args.seed, points=args.points, step=args.step)
    ok = True
    for r in results:
        flag = "ok" if r.passed(args.tol) else "FAIL"
        ok = ok and r.passed(args.tol)
        print(f"{r.name:<18} max_rel_error={r.max_rel_error:.3e} points={r.points} "
              f"skipped={r.skipped} {flag}")
    return 0 if ok else 3


# --- parser ---------------------------------------------------------------------


def build_parser() -> ArgParser:
    parser = ArgParser(prog="dcdlearn", description=__doc__.splitlines()[0])
    parser.add_argument("--quiet", action="store_true", help="no progress lines on stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=ArgParser)
    sub.required = True

    p = sub.add_parser("gen-data", help="generate and split a synthetic dataset")
    _add_config_flags(p, DatasetManifest)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-gan", help="train the one-view GAN on a train split")
    _add_config_flags(p, GanTrainConfig)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("augment", help="add order-1/2 records with a trained GAN")
    p.add_argument("--data", required=True)
    p.add_argument("--gan", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train-reid", help="train the embedding on augmented records")
    _add_config_flags(p, ReidConfig, REID_ALIASES)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log-every", type=int, default=250)
    p.set_defaults(func=cmd_train_reid)

    for name, func, help_ in (("eval", cmd_eval, "evaluate one combination"),
                              ("ablate", cmd_ablate, "evaluate a list of combinations")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--data", required=True, help="augmented test records")
        p.add_argument("--model", required=True, help="embedding checkpoint")
        if name == "eval":
            p.add_argument("--combination", default="d1+d2+d10")
        else:
            p.add_argument("--combinations", default=None,
                           help="comma-separated list (default: the 15-column ablation list)")
        p.add_argument("--max-rank", type=int, default=10)
        p.add_argument("--out", required=True, help="report prefix (.csv and .md are written)")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep-lambda", help="retrain per lambda and evaluate")
    _add_config_flags(p, ReidConfig, REID_ALIASES)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--lambdas", default="0.0006,0.001,0.003,0.006,0.01")
    p.add_argument("--combination", default="d1+d2+d10")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except DcdlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
