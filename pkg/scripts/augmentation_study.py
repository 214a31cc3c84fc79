"""Rank-1 / mAP for each training-order subset, over several seeds.

One GAN and one augmented dataset per seed; the embedding is retrained
for orders {0}, {0,1}, {0,2}, {0,1,2}. The order-0 arm is scored with d1
alone, the others with d1+d2+d10. Lambda defaults to 0 so the only
difference between arms is the augmented data.

    python3 scripts/augmentation_study.py --seeds 0 1 2 --out runs/aug
"""

import argparse
import dataclasses
from pathlib import Path

from dcdlearn.oneview_gan import GanTrainConfig
from dcdlearn.synthcam import DatasetManifest
from dcdlearn.trainer import ReidConfig, stage_augment, stage_eval, stage_gen_data, stage_train_gan, stage_train_reid

ARMS = [((0,), "d1"), ((0, 1), "d1+d2+d10"), ((0, 2), "d1+d2+d10"), ((0, 1, 2), "d1+d2+d10")]


def run_seed(seed, out, lam):
    out.mkdir(parents=True, exist_ok=True)
    data = stage_gen_data(DatasetManifest(seed=seed), out / "data")
    gan = stage_train_gan(data["train"], GanTrainConfig(seed=seed), out / "gan.ckpt")
    aug_train = stage_augment(data["train"], gan, out / "aug_train.jsonl")
    aug_test = stage_augment(data["test"], gan, out / "aug_test.jsonl")
    rows = []
    for orders, combo in ARMS:
        tag = "".join(map(str, orders))
        cfg = ReidConfig(seed=seed, lam=lam, train_orders=orders)
        ckpt = stage_train_reid(aug_train, cfg, out / f"embed_{tag}.ckpt")
        rep = stage_eval(aug_test, ckpt, [combo], out / f"report_{tag}")[0]
        rows.append((seed, "+".join(map(str, orders)), combo, rep.rank1, rep.mAP))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--lam", type=float, default=0.0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    out = Path(args.out)
    print("seed,orders,combination,rank1,mAP")
    for seed in args.seeds:
        for row in run_seed(seed, out / f"seed{seed}", args.lam):
            print(",".join(map(str, row)), flush=True)


if __name__ == "__main__":
    main()
