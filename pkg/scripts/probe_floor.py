"""Weighted and macro F1 of the order-imbalance probe on a synthetic market, per horizon."""
import argparse

from lobhorizon.data import DEFAULT_HORIZONS, balanced_alphas
from lobhorizon.experiments import RecoveryConfig, synthetic_split
from lobhorizon.oracle import imbalance_probe
from lobhorizon.pipeline import split_series


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--signal", type=float, nargs="+", default=[0.0, 0.4, 0.8])
    ap.add_argument("--data-seed", type=int, default=11)
    args = ap.parse_args()
    horizons = list(DEFAULT_HORIZONS)
    print("signal  averaging " + " ".join(f"{'k=' + str(k):>7}" for k in horizons))
    for s in args.signal:
        train, test = synthetic_split(RecoveryConfig(signal_strength=s, data_seed=args.data_seed))
        # same thresholds as the trained models: balanced on the fitting part of the training span
        alphas = balanced_alphas(split_series(train, 0.2)[0], horizons)
        res = imbalance_probe(train, test, horizons, alphas)
        for name, rep in (("weighted", res.weighted), ("macro", res.macro)):
            print(f"{s:6.2f}  {name:<9} " + " ".join(f"{f:7.2f}" for f in rep.f1()))


if __name__ == "__main__":
    main()
