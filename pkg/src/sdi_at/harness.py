"""Evaluation, attack comparison, beta sweeps and CSV output."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import objectives as obj
from .attacks import AttackConfig, run_attack
from .data import Dataset
from .model import ModelSpec, ParamSet, forward_probs, predict
from .training import TrainConfig, train

METRICS_HEADER = ("epoch", "mean_train_loss", "natural_acc", "robust_acc", "gate_open_fraction", "lr_used")
EVAL_HEADER = ("attack", "epsilon", "steps", "robust_acc", "mean_final_loss")
SWEEP_HEADER = ("beta",) + EVAL_HEADER
COMPARISON_LOSSES = ("ce", "kl", "sdi")


@dataclass
class EvalReport:
    natural_acc: float
    natural_loss: float
    robust_acc: dict[str, float] = field(default_factory=dict)
    mean_final_loss: dict[str, float] = field(default_factory=dict)
    attacks: dict[str, AttackConfig] = field(default_factory=dict)
    n: int = 0
    fingerprint: str = ""

    def rows(self) -> list[dict]:
        out = [dict(attack="natural", epsilon=0.0, steps=0, robust_acc=self.natural_acc,
                    mean_final_loss=self.natural_loss)]
        for name, cfg in self.attacks.items():
            steps = cfg.spsa.iters if cfg.loss == "spsa" else cfg.steps
            out.append(dict(attack=name, epsilon=cfg.epsilon, steps=steps,
                            robust_acc=self.robust_acc[name], mean_final_loss=self.mean_final_loss[name]))
        return out


def fingerprint(*configs) -> str:
    return hashlib.sha256(repr(configs).encode()).hexdigest()[:16]


def evaluate(params: ParamSet, dataset: Dataset, attacks) -> EvalReport:
    """Natural accuracy plus robust accuracy under each attack config.

    A sample counts as robust when the post-attack prediction equals its label,
    whether or not it was classified correctly to begin with.
    """
    x, y = dataset.inputs, dataset.labels
    probs = forward_probs(params, x)
    report = EvalReport(
        natural_acc=float(np.mean(predict(params, x) == y)),
        natural_loss=float(np.mean(obj.cross_entropy(probs, y))),
        n=len(y),
    )
    for cfg in attacks:
        name = cfg.loss
        if name in report.attacks:
            raise ValueError(f"attack {name!r} listed twice")
        res = run_attack(params, x, y, cfg)
        report.attacks[name] = cfg
        report.robust_acc[name] = float(np.mean(~res.success_mask))
        report.mean_final_loss[name] = res.final_loss
    report.fingerprint = fingerprint(tuple(attacks), len(y))
    return report


def attack_comparison(params: ParamSet, dataset: Dataset, base_cfg: AttackConfig) -> list[tuple[str, float]]:
    """Robust accuracy under CE-, KL- and SDI-PGD sharing one epsilon, step, budget and seed."""
    report = evaluate(params, dataset, [dataclasses.replace(base_cfg, loss=l) for l in COMPARISON_LOSSES])
    return [(l, report.robust_acc[l]) for l in COMPARISON_LOSSES]


def beta_sweep(spec: ModelSpec, train_set: Dataset, test_set: Dataset, cfg: TrainConfig, betas,
               attacks) -> list[tuple[float, EvalReport]]:
    betas = list(betas)
    if not betas:
        raise ValueError("betas must be non-empty")
    out = []
    for beta in betas:
        ck, _ = train(spec, train_set, dataclasses.replace(cfg, beta=float(beta)))
        out.append((float(beta), evaluate(ck.params, test_set, attacks)))
    return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def write_csv(records, path, header) -> None:
    """Header line then one comma-separated line per record; reals to 6 decimals."""
    lines = [",".join(header)]
    for rec in records:
        row = rec if isinstance(rec, dict) else dataclasses.asdict(rec)
        lines.append(",".join(_fmt(row[k]) for k in header))
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")
