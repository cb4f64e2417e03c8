"""Run the desk-scale experiment and write a JSON summary.

    python scripts/desk_experiment.py --out results/desk.json [--checkpoint results/desk_ck]
"""
import argparse
import json
import logging
import os

from terrace import network
from terrace.experiment import DeskRecipe, run


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/desk.json")
    ap.add_argument("--checkpoint", help="also save the trained weights here")
    ap.add_argument("--epochs", type=int, default=DeskRecipe.epochs)
    ap.add_argument("--batch-size", type=int, default=DeskRecipe.batch_size)
    ap.add_argument("--augment", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    recipe = DeskRecipe(epochs=args.epochs, batch_size=args.batch_size, augment=args.augment, rng_seed=args.seed)
    result = run(recipe)
    weights = result.pop("weights")
    if args.checkpoint:
        network.save_checkpoint(weights, args.checkpoint)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    for key in ("full", "ablation", "full_touching", "ablation_touching"):
        print(f"{key:18s} F1={result[key]['F1']:.4f}  TP={result[key]['TP']} FP={result[key]['FP']} FN={result[key]['FN']}")
    print(f"near-pair fraction (test) {result['near_pair_fraction_test']:.3f}; total {result['seconds']['total']:.0f} s")


if __name__ == "__main__":
    main()
