"""Sweep the inner-product attacks over k, with and without sign masks.

For each k this encrypts a fresh Gaussian dataset, runs the public scan
against a candidate pool and pair detection against a mixing history, and
prints one row per configuration. The point of the sweep: every attack column
collapses once masks are on, and degrades smoothly in k while they are off.
"""

import argparse
import json

import numpy as np

from instahide.attacks import pair_detection_attack, public_scan_attack
from instahide.core import Image, make_gaussian_dataset, sample_coefficients
from instahide.encrypt import SchemeConfig, encrypt_history
from instahide.rng import RngStream


def scan_row(k: int, masked: bool, candidates: int, trials: int, rng: RngStream) -> dict:
    d = 3072
    patches = rng.child("pool").generator().normal(size=(candidates, d)) / np.sqrt(d)
    scheme = "inside" if masked else "mixup"
    recalls = []
    for t in range(trials):
        gen = rng.child("members", t).generator()
        members = gen.choice(candidates, size=k, replace=False)
        lam = sample_coefficients(k, 0.65 if k > 1 else 1.0, rng.child("lam", t))
        mix = Image((lam.values @ patches[members]).astype(np.float32), (3, 32, 32))
        if masked:
            from instahide.core import sample_sign_mask
            from instahide.encrypt import apply_mask

            mix = apply_mask(mix, sample_sign_mask(d, rng.child("mask", t)))
        rep = public_scan_attack(mix, patches, k, truth_members=set(int(v) for v in members))
        recalls.append(rep.metrics["recall"])
    return {"attack": "public_scan", "scheme": scheme, "k": k, "recall": float(np.mean(recalls))}


def pair_row(k: int, masked: bool, n: int, epochs: int, rng: RngStream) -> dict:
    ds = make_gaussian_dataset(n, (3, 32, 32), rng.child("data"), classes=10)
    scheme = "inside" if masked else "mixup"
    cfg = SchemeConfig(scheme, k=k, c1=0.65 if k > 1 else 1.0)
    samples, keys = encrypt_history(ds, cfg, epochs, rng.child("history"))
    rep = pair_detection_attack(samples, truth_keys=keys, k=k)
    return {
        "attack": "pair_detection",
        "scheme": scheme,
        "k": k,
        "detected": int(rep.metrics["detected_pairs"]),
        "precision": rep.metrics["precision"],
        "recall": rep.metrics["recall"],
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--candidates", type=int, default=1000)
    ap.add_argument("--scan-trials", type=int, default=25)
    ap.add_argument("--history-n", type=int, default=50)
    ap.add_argument("--history-epochs", type=int, default=20)
    ap.add_argument("--out", help="also write the rows as JSON here")
    args = ap.parse_args()

    rows = []
    for masked in (False, True):
        for k in (2, 4, 6):
            rng = RngStream(args.seed).child("scan", k, int(masked))
            rows.append(scan_row(k, masked, args.candidates, args.scan_trials, rng))
        rng = RngStream(args.seed).child("pair", int(masked))
        rows.append(pair_row(2, masked, args.history_n, args.history_epochs, rng))

    for row in rows:
        print(json.dumps(row))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
