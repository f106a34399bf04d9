"""Command-line entry point: ``sdi-at {train,attack,eval,compare,sweep,gradcheck}``.

Exit status is 0 on success, 1 on configuration or input errors, and 2 when a
check (``gradcheck``) fails.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, benchmark
from .config import ConfigError, RunConfig, build_run_config, read_config
from .data import Dataset, IdxFormatError, gen_blobs, gen_spirals, load_idx, split
from .gradcheck import gradient_suite
from .harness import (EVAL_HEADER, METRICS_HEADER, SWEEP_HEADER, attack_comparison, beta_sweep, evaluate,
                      write_csv)
from .model import CheckpointError, load_checkpoint
from .training import train

COMPARE_HEADER = ("attack", "epsilon", "steps", "robust_acc")
CHECK_HEADER = ("check", "max_rel_error", "coords", "passed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--config", type=Path, default=None, help="key = value config file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    parser = _Parser(prog="sdi-at", description="SDI-regularized adversarial training at desk scale")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="train a model, write checkpoint and metrics.csv")
    sub.add_parser("attack", parents=[common], help="run the attack.* adversary against a checkpoint")
    sub.add_parser("eval", parents=[common], help="natural and robust accuracy over eval.attacks")
    sub.add_parser("compare", parents=[common], help="CE- vs KL- vs SDI-PGD robust accuracy")
    sub.add_parser("sweep", parents=[common], help="train and evaluate once per sweep.betas value")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every objective")
    return parser


def load_run(args) -> RunConfig:
    flat = read_config(args.config) if args.config is not None else {}
    return build_run_config(flat, seed=args.seed)


def load_data(run: RunConfig) -> tuple[Dataset, Dataset]:
    d = run.dataset
    if d.kind == "mnist5k":
        return benchmark.load()
    if d.kind == "idx":
        if not d.train_images or not d.train_labels:
            raise ConfigError("dataset.kind = idx needs dataset.train_images and dataset.train_labels")
        for p in (d.train_images, d.train_labels, d.test_images, d.test_labels):
            if p and not Path(p).is_file():
                raise ConfigError(f"data file not found: {p}")
        full = load_idx(d.train_images, d.train_labels, d.limit or None)
        if d.test_images:
            return full, load_idx(d.test_images, d.test_labels, None)
        return split(full, d.n_train or int(0.8 * len(full)), d.seed)
    if d.kind == "blobs":
        full = gen_blobs(d.num_classes, d.per_class, d.spread, d.seed)
    elif d.kind == "spirals":
        full = gen_spirals(d.num_classes, d.per_class, d.noise, d.seed)
    else:
        raise ConfigError(f"unknown dataset.kind {d.kind!r} (blobs, spirals, idx, mnist5k)")
    return split(full, d.n_train or int(0.8 * len(full)), d.seed)


def _test_subset(run: RunConfig, test: Dataset) -> Dataset:
    return test.subset(range(min(run.eval_limit, len(test)))) if run.eval_limit else test


def checkpoint_path(run: RunConfig, out: Path) -> Path:
    return Path(run.checkpoint) if run.checkpoint else out / "model.sdic"


def _load_model(run: RunConfig, out: Path):
    path = checkpoint_path(run, out)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_train(run: RunConfig, out: Path) -> int:
    train_set, _ = load_data(run)
    spec = run.model_spec(train_set.inputs.shape[1], train_set.num_classes)

    def report(rec):
        print(f"epoch {rec.epoch:3d}  loss {rec.mean_train_loss:.4f}  nat {rec.natural_acc:.3f}  "
              f"adv {rec.robust_acc:.3f}  gate {rec.gate_open_fraction:.3f}  lr {rec.lr_used:g}")

    _, records = train(spec, train_set, run.train, checkpoint_path(run, out), on_epoch=report)
    write_csv(records, out / "metrics.csv", METRICS_HEADER)
    return 0


def cmd_attack(run: RunConfig, out: Path) -> int:
    ck = _load_model(run, out)
    _, test = load_data(run)
    report = evaluate(ck.params, _test_subset(run, test), [run.attack])
    rows = report.rows()[1:]
    write_csv(rows, out / "attack.csv", EVAL_HEADER)
    for r in rows:
        print(f"{r['attack']}: robust_acc {r['robust_acc']:.4f}  mean_final_loss {r['mean_final_loss']:.4f}")
    return 0


def cmd_eval(run: RunConfig, out: Path) -> int:
    ck = _load_model(run, out)
    _, test = load_data(run)
    report = evaluate(ck.params, _test_subset(run, test), run.eval_attacks)
    write_csv(report.rows(), out / "eval.csv", EVAL_HEADER)
    for r in report.rows():
        print(f"{r['attack']:8s} robust_acc {r['robust_acc']:.4f}")
    return 0


def cmd_compare(run: RunConfig, out: Path) -> int:
    ck = _load_model(run, out)
    _, test = load_data(run)
    table = attack_comparison(ck.params, _test_subset(run, test), run.compare)
    rows = [dict(attack=name, epsilon=run.compare.epsilon, steps=run.compare.steps, robust_acc=acc)
            for name, acc in table]
    write_csv(rows, out / "compare.csv", COMPARE_HEADER)
    for r in rows:
        print(f"{r['attack']:4s} robust_acc {r['robust_acc']:.4f}")
    return 0


def cmd_sweep(run: RunConfig, out: Path) -> int:
    train_set, test = load_data(run)
    spec = run.model_spec(train_set.inputs.shape[1], train_set.num_classes)
    results = beta_sweep(spec, train_set, _test_subset(run, test), run.train, run.betas, run.eval_attacks)
    rows = [dict(beta=beta, **row) for beta, report in results for row in report.rows()]
    write_csv(rows, out / "sweep.csv", SWEEP_HEADER)
    for beta, report in results:
        accs = "  ".join(f"{k} {v:.4f}" for k, v in report.robust_acc.items())
        print(f"beta {beta:g}: natural {report.natural_acc:.4f}  {accs}")
    return 0


def cmd_gradcheck(run: RunConfig, out: Path) -> int:
    results = gradient_suite(seed=run.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:45s} max rel err {r.max_rel_error:.2e} over {r.coords} coords")
    rows = [dict(check=r.name, max_rel_error=r.max_rel_error, coords=r.coords, passed=r.passed) for r in results]
    write_csv(rows, out / "gradcheck.csv", CHECK_HEADER)
    return 0 if all(r.passed for r in results) else 2


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"sdi-at: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        run = load_run(args)
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "manifest.txt").write_text(
            "\n".join([f"tool = sdi-at {__version__}", f"command = {args.command}", *run.manifest_lines()]) + "\n")
        return COMMANDS[args.command](run, args.out)
    except (ConfigError, CheckpointError, IdxFormatError, benchmark.BenchmarkDataMissing) as exc:
        print(f"sdi-at: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
