"""Score one trained embedding under every cross-distance combination.

    python3 scripts/combination_ablation.py --data runs/default/aug/test.jsonl \
        --model runs/default/embed.ckpt --out runs/default/ablation
"""

import argparse

from dcdlearn.evalrank import ABLATION_COMBINATIONS, reports_to_markdown
from dcdlearn.trainer import stage_eval


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True)
    ap.add_argument("--model", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    reports = stage_eval(args.data, args.model, ABLATION_COMBINATIONS, args.out)
    print(reports_to_markdown(reports))


if __name__ == "__main__":
    main()
