"""Adversarial training loops: AT, TRADES, AT-SDI and TRADES-SDI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from . import objectives as obj
from .attacks import AttackConfig, kl_pgd_attack, pgd_attack
from .data import Dataset, batches
from .model import Checkpoint, ModelSpec, ParamSet, init_params, predict, probs_graph, save_checkpoint

OBJECTIVES = ("at", "trades", "at_sdi", "trades_sdi")


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "at_sdi"
    beta: float = 3.0
    lambda_inv: float = 6.0
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 30
    lr_drops: tuple = ((20, 10.0), (25, 10.0))
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(epsilon=0.1, step_size=0.01, steps=10))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lr_drops", tuple((int(e), float(d)) for e, d in self.lr_drops))
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; choose from {OBJECTIVES}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be at least 1")
        if self.weight_decay < 0 or self.beta < 0 or self.lambda_inv < 0:
            raise ValueError("weight_decay, beta and lambda_inv must be non-negative")
        if any(d <= 0 for _, d in self.lr_drops):
            raise ValueError("lr divisors must be positive")

    @property
    def objective_config(self) -> obj.ObjectiveConfig:
        return obj.ObjectiveConfig(self.beta, self.lambda_inv)


@dataclass
class OptimizerState:
    velocity: list[tuple]

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "OptimizerState":
        return cls([(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers])


@dataclass
class EpochRecord:
    epoch: int
    mean_train_loss: float
    natural_acc: float
    robust_acc: float
    gate_open_fraction: float
    lr_used: float


def sgd_step(params: ParamSet, grads: ParamSet, state: OptimizerState, lr: float,
             momentum: float, weight_decay: float) -> tuple[ParamSet, OptimizerState]:
    """Heavy-ball SGD with L2 weight decay added to the gradient."""
    if len(grads.layers) != len(params.layers) or len(state.velocity) != len(params.layers):
        raise nx.DimensionError("gradient / state layer count does not match parameters")
    new_layers, new_vel = [], []
    for (w, b), (gw, gb), (vw, vb) in zip(params.layers, grads.layers, state.velocity):
        pair_p, pair_v = [], []
        for p, g, v in ((w, gw, vw), (b, gb, vb)):
            if p.shape != g.shape or p.shape != v.shape:
                raise nx.DimensionError(f"shape mismatch {p.shape} / {g.shape} / {v.shape}")
            v = momentum * v + (g + weight_decay * p)
            pair_p.append(p - lr * v)
            pair_v.append(v)
        new_layers.append(tuple(pair_p))
        new_vel.append(tuple(pair_v))
    return ParamSet(new_layers), OptimizerState(new_vel)


def lr_at(base_lr: float, drops, epoch: int) -> float:
    """Base rate divided by every divisor whose drop epoch has been reached."""
    lr = base_lr
    for at, divisor in drops:
        if epoch >= at:
            lr = lr / divisor
    return lr


def attack_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1, np.uint64)[0])


def inner_attack(params: ParamSet, x, y, ids, cfg: TrainConfig, epoch: int) -> np.ndarray:
    """Adversarial batch for the outer step: CE-PGD for AT variants, KL-PGD for TRADES variants."""
    acfg = dataclasses.replace(cfg.attack, seed=attack_seed(cfg.attack.seed, epoch))
    if cfg.objective in ("at", "at_sdi"):
        return pgd_attack(params, x, y, dataclasses.replace(acfg, loss="ce"), ids=ids).x_adv
    return kl_pgd_attack(params, x, y, dataclasses.replace(acfg, loss="kl"), ids=ids).x_adv


def batch_objective(params, x, x_adv, y, cfg: TrainConfig):
    """Mean batch loss as a differentiable expression of ``params``."""
    ocfg = cfg.objective_config
    p_adv = probs_graph(params, x_adv)
    if cfg.objective == "at":
        return nx.mean(obj.cross_entropy(p_adv, y))
    if cfg.objective == "at_sdi":
        return obj.at_sdi_objective(p_adv, y, ocfg)
    p_nat = probs_graph(params, x)
    if cfg.objective == "trades":
        return obj.trades_objective(p_nat, p_adv, y, ocfg)
    return obj.trades_sdi_objective(p_nat, p_adv, y, ocfg)


def loss_and_grads(params: ParamSet, x, x_adv, y, cfg: TrainConfig) -> tuple[float, ParamSet]:
    r = nx.value_and_grad(lambda v: batch_objective(ParamSet.from_dict(v), x, x_adv, y, cfg), params.as_dict())
    return r.value, ParamSet.from_dict(r.grads)


def train_epoch(params: ParamSet, data: Dataset, cfg: TrainConfig, epoch: int,
                state: OptimizerState | None = None) -> tuple[ParamSet, OptimizerState, EpochRecord]:
    state = state or OptimizerState.zeros_like(params)
    lr = lr_at(cfg.lr, cfg.lr_drops, epoch)
    total_loss = 0.0
    n_seen = n_nat = n_rob = n_gate = 0
    for batch in batches(data, cfg.batch_size, cfg.seed, epoch):
        x_adv = inner_attack(params, batch.x, batch.y, batch.ids, cfg, epoch)
        p_adv = probs_graph(params, x_adv).value
        n_nat += int(np.sum(predict(params, batch.x) == batch.y))
        n_rob += int(np.sum(np.argmax(p_adv, axis=-1) == batch.y))
        n_gate += int(np.sum(obj.margin_dm(p_adv, batch.y) >= 0))
        loss, grads = loss_and_grads(params, batch.x, x_adv, batch.y, cfg)
        params, state = sgd_step(params, grads, state, lr, cfg.momentum, cfg.weight_decay)
        total_loss += loss * len(batch.y)
        n_seen += len(batch.y)
    record = EpochRecord(epoch, total_loss / n_seen, n_nat / n_seen, n_rob / n_seen, n_gate / n_seen, lr)
    return params, state, record


def train(spec: ModelSpec, dataset: Dataset, cfg: TrainConfig, checkpoint_path=None,
          on_epoch=None) -> tuple[Checkpoint, list[EpochRecord]]:
    if spec.input_dim != dataset.inputs.shape[1] or spec.num_classes != dataset.num_classes:
        raise nx.DimensionError("model spec does not match the dataset")
    params = init_params(spec, cfg.seed)
    state = OptimizerState.zeros_like(params)
    records = []
    for epoch in range(1, cfg.epochs + 1):
        params, state, rec = train_epoch(params, dataset, cfg, epoch, state)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    ck = Checkpoint(spec, params, seed=cfg.seed, epoch=cfg.epochs)
    if checkpoint_path is not None:
        save_checkpoint(ck, checkpoint_path)
    return ck, records
