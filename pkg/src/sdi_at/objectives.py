"""Scalar losses and measures on class-probability vectors.

Every function takes a single sample (``probs`` of shape ``(C,)``, integer
label) or a batch (``(n, C)`` with a label vector).  Per-sample measures return
one value per row; the two training objectives reduce a batch to its mean.
Plain array inputs give plain numpy results; if any input is a
:class:`~sdi_at.numerics.Var` the result is a ``Var`` that can be
differentiated.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import numerics as nx

PROB_FLOOR = 1e-12
# stands in for -inf when excluding the true class from a max
_EXCLUDE = -1e300

# incremented every time the d_m >= 0 gate is evaluated
gate_evaluations = 0


@dataclass(frozen=True)
class ObjectiveConfig:
    beta: float = 3.0
    lambda_inv: float = 6.0

    def __post_init__(self):
        if self.beta < 0 or self.lambda_inv < 0:
            raise ValueError("beta and lambda_inv must be non-negative")


def _lifted(fn):
    """Return numpy values when no argument is differentiable."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        out = fn(*args, **kwargs)
        if any(isinstance(a, nx.Var) for a in (*args, *kwargs.values())):
            return out
        v = nx.value_of(out)
        return float(v) if v.ndim == 0 else v

    return wrapper


def onehot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes})")
    return np.eye(num_classes)[labels]


def _true_and_rest(probs: nx.Var, labels):
    """(p_y, max_{k != y} p_k) for every row, both differentiable."""
    mask = onehot(labels, probs.shape[-1])
    p_true = nx.sum(probs * mask, axis=-1)
    p_other = nx.max(probs + _EXCLUDE * mask, axis=-1)
    return p_true, p_other


def vanilla_sd(data) -> float:
    """Sample standard deviation with the N-1 denominator."""
    x = np.asarray(data, dtype=np.float64)
    if x.size < 2:
        raise ValueError("standard deviation needs at least two values")
    return float(np.sqrt(np.sum((x - x.mean()) ** 2) / (x.size - 1)))


@_lifted
def cross_entropy(probs, labels):
    probs = nx.as_var(probs)
    p_true = nx.sum(probs * onehot(labels, probs.shape[-1]), axis=-1)
    return -nx.log(nx.maximum(p_true, PROB_FLOOR))


@_lifted
def kl_divergence(p, q):
    p, q = nx.as_var(p), nx.as_var(q)
    logp = nx.log(nx.maximum(p, PROB_FLOOR))
    logq = nx.log(nx.maximum(q, PROB_FLOOR))
    return nx.sum(p * (logp - logq), axis=-1)


@_lifted
def cw_margin(logits, labels):
    """Largest wrong-class logit minus the true-class logit (confidence 0)."""
    z = nx.as_var(logits)
    z_true, z_other = _true_and_rest(z, labels)
    return z_other - z_true


@_lifted
def m_sdi(probs, labels):
    """Root-mean-square deviation of all class probabilities from the true one."""
    probs = nx.as_var(probs)
    c = probs.shape[-1]
    if c < 2:
        raise ValueError("need at least two classes")
    mask = onehot(labels, c)
    p_true = nx.sum(probs * mask, axis=-1)
    p_true = nx.reshape(p_true, (*p_true.shape, 1))
    dev = nx.square(probs - p_true)
    return nx.sqrt(nx.sum(dev, axis=-1) / float(c - 1))


@_lifted
def margin_dm(probs, labels):
    probs = nx.as_var(probs)
    p_true, p_other = _true_and_rest(probs, labels)
    return p_true - p_other


def gate(probs, labels) -> np.ndarray:
    """Boolean mask of samples with d_m >= 0; never differentiated."""
    global gate_evaluations
    gate_evaluations += 1
    return np.asarray(margin_dm(nx.value_of(probs), labels)) >= 0


@_lifted
def l_sdi(probs, labels):
    probs = nx.as_var(probs)
    open_ = gate(probs, labels).astype(np.float64)
    return m_sdi(probs, labels) * open_


@_lifted
def at_sdi_objective(probs_adv, labels, cfg: ObjectiveConfig):
    probs_adv = nx.as_var(probs_adv)
    loss = nx.mean(cross_entropy(probs_adv, labels))
    if cfg.beta == 0:
        return loss
    return loss - cfg.beta * nx.mean(l_sdi(probs_adv, labels))


@_lifted
def trades_objective(probs_nat, probs_adv, labels, cfg: ObjectiveConfig):
    probs_nat, probs_adv = nx.as_var(probs_nat), nx.as_var(probs_adv)
    return nx.mean(cross_entropy(probs_nat, labels)) + cfg.lambda_inv * nx.mean(kl_divergence(probs_nat, probs_adv))


@_lifted
def trades_sdi_objective(probs_nat, probs_adv, labels, cfg: ObjectiveConfig):
    loss = trades_objective(nx.as_var(probs_nat), nx.as_var(probs_adv), labels, cfg)
    if cfg.beta == 0:
        return loss
    return loss - cfg.beta * nx.mean(l_sdi(nx.as_var(probs_adv), labels))
