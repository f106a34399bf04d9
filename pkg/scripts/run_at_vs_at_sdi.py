"""AT against AT-SDI (beta 3) on the desk benchmark, same seed and budget."""

import argparse
import dataclasses

from sdi_at import benchmark
from sdi_at.harness import EVAL_HEADER, evaluate, write_csv
from sdi_at.training import train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--attacks", default="ce,kl,sdi,cw")
    ap.add_argument("--out", default="at_vs_at_sdi.csv")
    args = ap.parse_args()

    train_set, test_set = benchmark.load()
    attacks = [dataclasses.replace(benchmark.EVAL_ATTACK, loss=l) for l in args.attacks.split(",")]
    rows = []
    for name, cfg in (("at", benchmark.AT_CONFIG), ("at_sdi", benchmark.AT_SDI_CONFIG)):
        ck, _ = train(benchmark.SPEC, train_set, dataclasses.replace(cfg, seed=args.seed))
        report = evaluate(ck.params, test_set, attacks)
        for row in report.rows():
            rows.append(dict(model=name, **row))
            print(f"{name:7s} {row['attack']:8s} {100 * row['robust_acc']:6.2f}")
    write_csv(rows, args.out, ("model",) + EVAL_HEADER)


if __name__ == "__main__":
    main()
