"""Retrain the embedding for each center-loss weight and report Rank-1 / mAP.

    python3 scripts/lambda_sweep.py --train runs/default/aug/train.jsonl \
        --test runs/default/aug/test.jsonl --out runs/default/sweep.csv
"""

import argparse
import tempfile
from pathlib import Path

from dcdlearn.configio import atomic_write_text
from dcdlearn.evalrank import sweep_lambda, sweep_to_csv
from dcdlearn.trainer import ReidConfig, stage_eval, stage_train_reid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train", required=True)
    ap.add_argument("--test", required=True)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0006, 0.001, 0.003, 0.006, 0.01])
    ap.add_argument("--combination", default="d1+d2+d10")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        def closure(lam):
            ckpt = stage_train_reid(args.train, ReidConfig(seed=args.seed, lam=lam), Path(tmp) / "e.ckpt")
            rep = stage_eval(args.test, ckpt, [args.combination], Path(tmp) / "r")[0]
            print(f"lambda={lam:g} rank1={100 * rep.rank1:.2f} mAP={100 * rep.mAP:.2f}", flush=True)
            return rep

        rows = sweep_lambda(closure, args.lambdas)
    atomic_write_text(args.out, sweep_to_csv(rows, {"seed": args.seed, "combination": args.combination}))


if __name__ == "__main__":
    main()
