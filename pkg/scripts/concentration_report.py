"""Run every statistical validator at full scale and dump one JSON report.

Covers the three Monte Carlo tail checks (squared norms, inner products,
bounded sums) and both member/non-member separation checks (pair and scan)
that justify the attack thresholds.
"""

import argparse
import json

from instahide.rng import RngStream
from instahide.stats import (
    ConcentrationCheckConfig,
    check_bernstein_tail,
    check_chi_square_tail,
    check_inner_product_concentration,
    check_theorem_gap,
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--d", type=int, default=3072)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--delta", type=float, default=0.01)
    ap.add_argument("--beta", type=float, default=2.0)
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--gap-trials", type=int, default=1000)
    ap.add_argument("--out", help="write JSON here instead of stdout")
    args = ap.parse_args()

    cfg = ConcentrationCheckConfig(
        d=args.d, n=args.n, k=args.k, delta=args.delta,
        trials=args.trials, beta=args.beta,
    )
    gap_cfg = ConcentrationCheckConfig(
        d=args.d, n=args.n, k=args.k, delta=args.delta,
        trials=args.gap_trials, beta=args.beta,
    )
    pair_cfg = ConcentrationCheckConfig(
        d=args.d, n=args.n, k=2, delta=args.delta,
        trials=args.gap_trials, beta=args.beta,
    )
    rng = RngStream(args.seed)
    report = {
        "chi_square": check_chi_square_tail(cfg, rng.child("chi"), t_values=(1.0, 2.0, 4.0)),
        "inner_product": check_inner_product_concentration(cfg, rng.child("ip")),
        "bernstein": check_bernstein_tail(cfg, rng.child("bern"), t_multipliers=(1.0, 2.0, 4.0)),
        "gap_scan": check_theorem_gap(gap_cfg, "scan", rng.child("gap", "scan")),
        "gap_pair": check_theorem_gap(pair_cfg, "pair", rng.child("gap", "pair")),
    }
    report["all_pass"] = all(
        bool(v.get("passes")) for v in report.values() if isinstance(v, dict)
    )
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}; all_pass={report['all_pass']}")
    else:
        print(text)


if __name__ == "__main__":
    main()
