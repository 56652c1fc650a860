#!/usr/bin/env python3
"""Print per-layer deviation medians and compromise probabilities for an
attack corpus: which conv layers an adversarial perturbation disturbs
more than matched Gaussian noise, per amplification strength."""

import argparse

import numpy as np

from noisecam.bench import collect_deviation_records
from noisecam.deviation import compromise_profile
from noisecam.network import load_weights


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--weights", required=True)
    parser.add_argument("--corpus", required=True)
    parser.add_argument("--max-seeds", type=int, default=50)
    args = parser.parse_args()

    model = load_weights(args.weights)
    records = collect_deviation_records(model, args.corpus, args.max_seeds)
    strengths = sorted({r.strength for r in records})

    header = "layer        " + "".join(f"  s={s:<5g}" for s in strengths)
    print("median similarity, adversarial / gaussian")
    print(header)
    for cid in model.conv_layer_ids():
        cells = []
        for s in strengths:
            adv = np.median(
                [r.similarity for r in records
                 if r.layer_id == cid and r.strength == s and r.kind == "adversarial"]
            )
            gau = np.median(
                [r.similarity for r in records
                 if r.layer_id == cid and r.strength == s and r.kind == "gaussian"]
            )
            cells.append(f"{adv:.3f}/{gau:.3f}")
        print(f"{cid:<13}" + "  ".join(cells))

    print()
    print("compromise probability (adversarial deviation below the gaussian median)")
    print(header)
    for cid in model.conv_layer_ids():
        profile = compromise_profile(records, cid, min_samples=1)
        row = "  ".join(
            f"{profile.probability_per_strength[s]:^11.2f}" for s in strengths
        )
        print(f"{cid:<13}{row}")


if __name__ == "__main__":
    main()
