"""Robust accuracy of AT-SDI on the desk benchmark as beta varies."""

import argparse
import dataclasses

from sdi_at import benchmark
from sdi_at.harness import SWEEP_HEADER, beta_sweep, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--betas", default="0,1,3,6")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="beta_sweep.csv")
    args = ap.parse_args()

    train_set, test_set = benchmark.load()
    cfg = dataclasses.replace(benchmark.AT_SDI_CONFIG, seed=args.seed)
    attacks = [dataclasses.replace(benchmark.EVAL_ATTACK, loss=l) for l in ("ce", "cw")]
    results = beta_sweep(benchmark.SPEC, train_set, test_set, cfg, [float(b) for b in args.betas.split(",")], attacks)
    write_csv([dict(beta=b, **row) for b, r in results for row in r.rows()], args.out, SWEEP_HEADER)
    for b, r in results:
        print(f"beta {b:g}: natural {100 * r.natural_acc:.2f}  ce {100 * r.robust_acc['ce']:.2f}  "
              f"cw {100 * r.robust_acc['cw']:.2f}")


if __name__ == "__main__":
    main()
