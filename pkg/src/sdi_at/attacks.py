"""l-infinity adversaries: sign-gradient PGD on several losses, and SPSA.

All attacks start from the natural input plus small Gaussian noise (SPSA starts
from the input itself), take ``steps`` sign-gradient steps of size
``step_size``, and after every step project back into the epsilon-ball around
the input intersected with ``[clip_min, clip_max]``.

Randomness is drawn per sample from a generator keyed on ``(seed, sample_id)``
so a sample's trajectory does not depend on which batch it sits in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from . import objectives as obj
from .model import ParamSet, logits_graph, predict, probs_graph

LOSSES = ("ce", "sdi", "kl", "cw", "spsa")


@dataclass(frozen=True)
class SPSAConfig:
    delta: float = 0.001
    lr: float = 0.01
    batch: int = 256
    iters: int = 100

    def __post_init__(self):
        if self.delta <= 0 or self.lr <= 0 or self.batch < 1 or self.iters < 1:
            raise ValueError("SPSA delta, lr, batch and iters must be positive")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.1
    step_size: float = 0.01
    steps: int = 20
    init_noise_std: float = 0.001
    loss: str = "ce"
    clip_min: float = 0.0
    clip_max: float = 1.0
    seed: int = 0
    spsa: SPSAConfig = field(default_factory=SPSAConfig)

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown attack loss {self.loss!r}; choose from {LOSSES}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.epsilon > 0 and self.step_size > 2 * self.epsilon:
            raise ValueError("step_size larger than the ball diameter 2*epsilon")
        if self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if self.init_noise_std < 0:
            raise ValueError("init_noise_std must be non-negative")
        if not self.clip_min < self.clip_max:
            raise ValueError("clip_min must be below clip_max")

    @property
    def name(self) -> str:
        return "spsa" if self.loss == "spsa" else f"pgd-{self.loss}"


@dataclass
class AttackResult:
    x_adv: np.ndarray
    success_mask: np.ndarray
    loss_trace: list[float]

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]


def project_linf(x_adv, x, epsilon, clip_min=0.0, clip_max=1.0) -> np.ndarray:
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_adv.shape != x.shape:
        raise nx.DimensionError(f"shape mismatch {x_adv.shape} vs {x.shape}")
    out = np.clip(x_adv, x - epsilon, x + epsilon)
    return np.clip(out, clip_min, clip_max)


def sample_rng(seed: int, sample_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(sample_id)])


def _start(x, cfg: AttackConfig, ids) -> np.ndarray:
    if cfg.init_noise_std == 0:
        return project_linf(x, x, cfg.epsilon, cfg.clip_min, cfg.clip_max)
    noise = np.stack([sample_rng(cfg.seed, i).standard_normal(x.shape[1:]) for i in ids])
    return project_linf(x + cfg.init_noise_std * noise, x, cfg.epsilon, cfg.clip_min, cfg.clip_max)


def _prepare(x, y, ids):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise nx.DimensionError(f"expected a (batch, features) input, got {x.shape}")
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(y) != len(x):
        raise nx.DimensionError("input and label counts differ")
    ids = np.arange(len(x)) if ids is None else np.asarray(ids)
    return x, y, ids


def sign_pgd(loss_fn: Callable, x, cfg: AttackConfig, ascend: bool, ids=None):
    """Sign-gradient PGD on ``sum(loss_fn(x_adv))``; returns (x_adv, per-step mean losses)."""
    x, _, ids = _prepare(x, np.zeros(len(x)), ids)
    n = len(x)
    direction = 1.0 if ascend else -1.0
    x_adv = _start(x, cfg, ids)
    trace = []
    for _ in range(cfg.steps):
        r = nx.value_and_grad(lambda v: nx.sum(loss_fn(v)), x_adv)
        trace.append(r.value / n)
        x_adv = x_adv + direction * cfg.step_size * np.sign(r.grads["x"])
        x_adv = project_linf(x_adv, x, cfg.epsilon, cfg.clip_min, cfg.clip_max)
    trace.append(float(np.sum(nx.value_of(loss_fn(x_adv)))) / n)
    return x_adv, trace


def _result(params, x_adv, y, trace) -> AttackResult:
    return AttackResult(x_adv, predict(params, x_adv) != y, trace)


def pgd_attack(params: ParamSet, x, y, cfg: AttackConfig, ids=None) -> AttackResult:
    """Cross-entropy ascent."""
    x, y, ids = _prepare(x, y, ids)
    x_adv, trace = sign_pgd(lambda v: obj.cross_entropy(probs_graph(params, v), y), x, cfg, True, ids)
    return _result(params, x_adv, y, trace)


def sdi_pgd_attack(params: ParamSet, x, y, cfg: AttackConfig, ids=None) -> AttackResult:
    """Descent on the ungated SDI measure of the adversarial probabilities."""
    x, y, ids = _prepare(x, y, ids)
    x_adv, trace = sign_pgd(lambda v: obj.m_sdi(probs_graph(params, v), y), x, cfg, False, ids)
    return _result(params, x_adv, y, trace)


def kl_pgd_attack(params: ParamSet, x, y, cfg: AttackConfig, ids=None) -> AttackResult:
    """KL(p(x) || p(x_adv)) ascent with the natural distribution held fixed."""
    x, y, ids = _prepare(x, y, ids)
    p_nat = probs_graph(params, x).value
    x_adv, trace = sign_pgd(lambda v: obj.kl_divergence(p_nat, probs_graph(params, v)), x, cfg, True, ids)
    return _result(params, x_adv, y, trace)


def cw_pgd_attack(params: ParamSet, x, y, cfg: AttackConfig, ids=None) -> AttackResult:
    """Logit-margin ascent."""
    x, y, ids = _prepare(x, y, ids)
    x_adv, trace = sign_pgd(lambda v: obj.cw_margin(logits_graph(params, v), y), x, cfg, True, ids)
    return _result(params, x_adv, y, trace)


# -- SPSA ------------------------------------------------------------------

def log_prob_margin(probs: np.ndarray, labels) -> np.ndarray:
    """CW margin recovered from probabilities: log-ratios equal logit differences."""
    logp = np.log(np.maximum(probs, 1e-300))
    return obj.cw_margin(logp, labels)


def spsa_gradient(loss_fn: Callable, x: np.ndarray, delta: float, batch: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Antithetic Rademacher estimate of the gradient of a scalar black box.

    ``loss_fn`` maps a ``(m, d)`` array of points to ``m`` loss values.  Each of
    the ``batch`` directions is evaluated at ``x + delta*D`` and ``x - delta*D``.
    """
    x = np.asarray(x, dtype=np.float64)
    d = rng.choice(np.array([-1.0, 1.0]), size=(batch, x.size))
    pts = np.concatenate([x.reshape(1, -1) + delta * d, x.reshape(1, -1) - delta * d])
    vals = np.asarray(loss_fn(pts), dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(vals)):
        raise nx.NumericError("black box returned non-finite values")
    diff = (vals[:batch] - vals[batch:]) / (2 * delta)
    # 1/D == D for +-1 entries
    return (diff[:, None] * d).mean(axis=0).reshape(x.shape)


def spsa_attack(black_box_probs: Callable, x, y, cfg: AttackConfig, spsa: SPSAConfig | None = None,
                ids=None) -> AttackResult:
    """Gradient-free CW-margin ascent using only ``black_box_probs(x) -> probs``."""
    x, y, ids = _prepare(x, y, ids)
    spsa = spsa or cfg.spsa

    def query(pts):
        p = np.asarray(black_box_probs(pts), dtype=np.float64)
        if not np.all(np.isfinite(p)):
            raise nx.NumericError("black box returned non-finite probabilities")
        return p

    x_adv = project_linf(x, x, cfg.epsilon, cfg.clip_min, cfg.clip_max)
    losses = np.zeros((spsa.iters + 1, len(x)))
    for i, sid in enumerate(ids):
        rng = sample_rng(cfg.seed, sid)
        label = np.full(2 * spsa.batch, y[i])
        xi = x_adv[i]
        for t in range(spsa.iters):
            g = spsa_gradient(lambda pts: log_prob_margin(query(pts), label), xi, spsa.delta, spsa.batch, rng)
            losses[t, i] = log_prob_margin(query(xi[None]), y[i:i + 1])[0]
            xi = project_linf(xi + spsa.lr * g, x[i], cfg.epsilon, cfg.clip_min, cfg.clip_max)
        x_adv[i] = xi
    probs = query(x_adv)
    losses[-1] = log_prob_margin(probs, y)
    success = np.argmax(probs, axis=-1) != y
    return AttackResult(x_adv, success, [float(v) for v in losses.mean(axis=1)])


def run_attack(params: ParamSet, x, y, cfg: AttackConfig, ids=None) -> AttackResult:
    if cfg.loss == "spsa":
        return spsa_attack(lambda v: probs_graph(params, v).value, x, y, cfg, ids=ids)
    fn = {"ce": pgd_attack, "sdi": sdi_pgd_attack, "kl": kl_pgd_attack, "cw": cw_pgd_attack}[cfg.loss]
    return fn(params, x, y, cfg, ids=ids)
