"""Finite-difference verification of every differentiable objective.

Points are sampled at random and rejected when they sit within ``MARGIN`` of a
kink: a gate flip (d_m = 0), a tie in the largest competing probability or
logit, a vanishing SDI measure, or a ReLU pre-activation near zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from . import objectives as obj
from .model import ModelSpec, ParamSet, init_params, logits_graph, probs_graph

H = 1e-5
TOLERANCE = 1e-4
MARGIN = 1e-3
NUM_CLASSES = 4
NET = ModelSpec(8, (16,), NUM_CLASSES)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    coords: int
    points: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE and self.coords >= 100


def _second_gap(v: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gap between the largest and second-largest non-true entries per row."""
    masked = np.where(obj.onehot(y, v.shape[-1]) > 0, -np.inf, v)
    top2 = np.sort(masked, axis=-1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


def well_separated(probs: np.ndarray, y: np.ndarray, logits: np.ndarray | None = None) -> bool:
    if np.any(np.abs(obj.margin_dm(probs, y)) <= MARGIN):
        return False
    if np.any(_second_gap(probs, y) <= MARGIN) or np.any(obj.m_sdi(probs, y) <= MARGIN):
        return False
    return logits is None or bool(np.all(_second_gap(logits, y) > MARGIN))


def _hidden_clear(params: ParamSet, x: np.ndarray) -> bool:
    h = x
    for w, b in params.layers[:-1]:
        pre = h @ w.T + b
        if np.any(np.abs(pre) <= MARGIN):
            return False
        h = np.maximum(pre, 0.0)
    return True


def _run(name: str, draw: Callable, fn_for: Callable, points: int, coords_per: int, rng) -> CheckResult:
    worst, total = 0.0, 0
    for i in range(points):
        point, extra = draw(rng)
        fn = fn_for(extra)
        size = sum(np.asarray(v).size for v in point.values())
        k = min(coords_per, size)
        err = nx.check_gradient(fn, point, h=H, samples=k, seed=int(rng.integers(2**32)))
        worst = max(worst, err)
        total += k
    return CheckResult(name, worst, total, points)


def _draw_logits(rng, n_inputs=1, batch=4):
    while True:
        y = rng.integers(0, NUM_CLASSES, size=batch)
        zs = [rng.normal(0, 2.0, size=(batch, NUM_CLASSES)) for _ in range(n_inputs)]
        if all(well_separated(nx.softmax(z).value, y, z) for z in zs):
            return {f"z{i}": z for i, z in enumerate(zs)}, y


def _draw_mlp(rng, batch=6, need_mixed_gate=False):
    while True:
        params = init_params(NET, int(rng.integers(2**31)))
        params = ParamSet([(w, rng.normal(0, 0.1, size=b.shape)) for w, b in params.layers])
        x = rng.uniform(0, 1, size=(batch, NET.input_dim))
        x_adv = np.clip(x + rng.uniform(-0.1, 0.1, size=x.shape), 0, 1)
        y = rng.integers(0, NUM_CLASSES, size=batch)
        ok = True
        for inp in (x, x_adv):
            z = logits_graph(params, inp).value
            ok &= well_separated(nx.softmax(z).value, y, z) and _hidden_clear(params, inp)
        if not ok:
            continue
        gate = obj.gate(probs_graph(params, x_adv).value, y)
        if need_mixed_gate and (gate.all() or not gate.any()):
            continue
        return params, x, x_adv, y


def gradient_suite(seed: int = 0, points: int = 100, coords_per: int = 4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    cfg = obj.ObjectiveConfig(beta=3.0, lambda_inv=6.0)
    results = []

    def logit_check(name, make):
        results.append(_run(name, lambda r: _draw_logits(r), make, points, coords_per, rng))

    logit_check("cross_entropy∘softmax", lambda y: lambda v: nx.sum(obj.cross_entropy(nx.softmax(v["z0"]), y)))
    logit_check("m_sdi∘softmax", lambda y: lambda v: nx.sum(obj.m_sdi(nx.softmax(v["z0"]), y)))
    logit_check("l_sdi∘softmax", lambda y: lambda v: nx.sum(obj.l_sdi(nx.softmax(v["z0"]), y)))
    logit_check("margin_dm∘softmax", lambda y: lambda v: nx.sum(obj.margin_dm(nx.softmax(v["z0"]), y)))
    logit_check("cw_margin", lambda y: lambda v: nx.sum(obj.cw_margin(v["z0"], y)))
    results.append(_run(
        "kl_divergence∘softmax", lambda r: _draw_logits(r, n_inputs=2),
        lambda y: lambda v: nx.sum(obj.kl_divergence(nx.softmax(v["z0"]), nx.softmax(v["z1"]))),
        points, coords_per, rng))

    def mlp_check(name, loss, wrt_input=False, mixed=False):
        def draw(r):
            params, x, x_adv, y = _draw_mlp(r, need_mixed_gate=mixed)
            if wrt_input:
                return {"x": x_adv}, (params, x, y)
            return params.as_dict(), (x, x_adv, y)

        def make(extra):
            if wrt_input:
                params, x, y = extra
                return lambda v: loss(params, x, v["x"], y)
            x, x_adv, y = extra
            return lambda v: loss(ParamSet.from_dict(v), x, x_adv, y)

        results.append(_run(name, draw, make, points, coords_per, rng))

    mlp_check("at_sdi_objective∘softmax∘MLP [params]",
              lambda p, x, xa, y: obj.at_sdi_objective(probs_graph(p, xa), y, cfg), mixed=True)
    mlp_check("trades_sdi_objective∘softmax∘MLP [params]",
              lambda p, x, xa, y: obj.trades_sdi_objective(probs_graph(p, x), probs_graph(p, xa), y, cfg),
              mixed=True)
    mlp_check("cross_entropy∘softmax∘MLP [input]",
              lambda p, x, xa, y: nx.sum(obj.cross_entropy(probs_graph(p, xa), y)), wrt_input=True)
    mlp_check("m_sdi∘softmax∘MLP [input]",
              lambda p, x, xa, y: nx.sum(obj.m_sdi(probs_graph(p, xa), y)), wrt_input=True)
    mlp_check("kl_divergence∘softmax∘MLP [input]",
              lambda p, x, xa, y: nx.sum(obj.kl_divergence(probs_graph(p, x).value, probs_graph(p, xa))),
              wrt_input=True)
    mlp_check("cw_margin∘MLP [input]",
              lambda p, x, xa, y: nx.sum(obj.cw_margin(logits_graph(p, xa), y)), wrt_input=True)
    return results
