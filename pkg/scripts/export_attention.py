"""Average attention profile of a checkpoint over a data file.

Writes one row per decoder step with the mean weight on each encoder
position (oldest first), ready for a heatmap.
"""
import argparse
import csv

from lobhorizon.checkpoint import load_checkpoint
from lobhorizon.data import parse_lob_csv
from lobhorizon.evaluation import evaluate
from lobhorizon.pipeline import attention_recency


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ckpt", required=True)
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.config.decoder.kind != "attention":
        raise SystemExit(f"{args.ckpt} holds a {ckpt.config.decoder.kind} model; it has no attention")
    ev = evaluate(ckpt, parse_lob_csv(args.data))
    profile = ev.attention.mean(axis=0)  # [K, T]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "horizon"] + [f"w{i}" for i in range(profile.shape[1])])
        for j, row in enumerate(profile):
            w.writerow([j + 1, ev.report.horizons[j]] + [repr(float(v)) for v in row])
    last, first = attention_recency(ev.attention)
    print(f"{len(ev.predictions)} windows; mean mass on last 10 positions {last:.3f}, first 10 {first:.3f}")


if __name__ == "__main__":
    main()
