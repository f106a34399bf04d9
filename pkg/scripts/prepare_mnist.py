"""Export the bundled 5000-image MNIST sample as a 4000/1000 IDX split."""

import argparse

from sdi_at import benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", nargs="?", default="data/mnist5k")
    args = ap.parse_args()
    for path in benchmark.export_idx(args.out_dir):
        print(path)


if __name__ == "__main__":
    main()
