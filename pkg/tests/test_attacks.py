import itertools

import numpy as np
import pytest

from sdi_at import objectives as obj
from sdi_at.attacks import (AttackConfig, SPSAConfig, cw_pgd_attack, kl_pgd_attack, pgd_attack, project_linf,
                            run_attack, sdi_pgd_attack, spsa_attack, spsa_gradient)
from sdi_at.data import gen_blobs
from sdi_at.model import ModelSpec, ParamSet, forward_logits, forward_probs, init_params
from sdi_at.training import TrainConfig, train


# independent scalar oracles for the corner search
def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def oracle_ce(z, y):
    return -np.log(_softmax(z)[y])


def oracle_sdi(z, y):
    p = _softmax(z)
    return np.sqrt(np.sum((p - p[y]) ** 2) / (len(p) - 1))


def oracle_cw(z, y):
    return max(z[k] for k in range(len(z)) if k != y) - z[y]


def best_corner(f, w, b, x, y, eps, pick):
    corners = [x + eps * np.array(s) for s in itertools.product((-1.0, 1.0), repeat=2)]
    return pick(f(w @ c + b, y) for c in corners)


@pytest.fixture(scope="module")
def blob_model():
    data = gen_blobs(3, 40, 0.06, seed=0)
    cfg = TrainConfig(objective="at", beta=0.0, lr=0.05, epochs=15, batch_size=16, lr_drops=(),
                      attack=AttackConfig(epsilon=0.02, step_size=0.01, steps=3))
    ck, _ = train(ModelSpec(2, (16,), 3), data, cfg)
    return ck.params, data


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.1, step_size=0.3)
    with pytest.raises(ValueError):
        AttackConfig(clip_min=1.0, clip_max=0.0)
    with pytest.raises(ValueError):
        AttackConfig(loss="l2")
    with pytest.raises(ValueError):
        AttackConfig(steps=0)
    AttackConfig(epsilon=0.0, step_size=0.5)


def test_project_examples():
    assert project_linf(np.array([0.9]), np.array([0.5]), 0.1)[0] == pytest.approx(0.6)
    assert project_linf(np.array([1.2]), np.array([0.95]), 0.1)[0] == 1.0
    x = np.array([0.2, 0.4])
    assert np.array_equal(project_linf(x, x, 0.3), x)
    with pytest.raises(ValueError):
        project_linf(np.zeros(2), np.zeros(3), 0.1)


ATTACKS = [pgd_attack, sdi_pgd_attack, kl_pgd_attack, cw_pgd_attack]


@pytest.mark.parametrize("attack", ATTACKS)
def test_zero_epsilon_returns_clipped_input(attack, blob_model):
    params, data = blob_model
    x = data.inputs[:10]
    cfg = AttackConfig(epsilon=0.0, step_size=0.01, steps=5, loss="ce")
    res = attack(params, x, data.labels[:10], cfg)
    assert np.array_equal(res.x_adv, np.clip(x, 0, 1))
    natural_wrong = np.argmax(forward_logits(params, x), axis=1) != data.labels[:10]
    assert np.array_equal(res.success_mask, natural_wrong)


def test_spsa_zero_epsilon(blob_model):
    params, data = blob_model
    x = data.inputs[:3]
    cfg = AttackConfig(epsilon=0.0, step_size=0.01, loss="spsa", spsa=SPSAConfig(batch=8, iters=3))
    res = spsa_attack(lambda v: forward_probs(params, v), x, data.labels[:3], cfg)
    assert np.array_equal(res.x_adv, x)


def _linear(rng, c=2):
    return rng.normal(0, 3, size=(c, 2)), rng.normal(0, 1, size=c)


@pytest.mark.parametrize("loss,oracle,pick", [("ce", oracle_ce, max), ("cw", oracle_cw, max)])
def test_single_step_ascent_hits_best_corner(loss, oracle, pick):
    rng = np.random.default_rng(0)
    for _ in range(100):
        w, b = _linear(rng)
        x = rng.uniform(0.3, 0.7, size=2)
        y = int(rng.integers(2))
        eps = rng.uniform(0.01, 0.2)
        res = run_attack(ParamSet([(w, b)]), x[None], [y], AttackConfig(eps, eps, 1, init_noise_std=0.0, loss=loss))
        got = oracle(w @ res.x_adv[0] + b, y)
        assert got == pytest.approx(best_corner(oracle, w, b, x, y, eps, pick), rel=1e-12, abs=1e-12)


def test_single_step_sdi_descent_hits_best_corner():
    rng = np.random.default_rng(1)
    done = 0
    while done < 100:
        w, b = _linear(rng)
        x = rng.uniform(0.3, 0.7, size=2)
        y = int(rng.integers(2))
        eps = rng.uniform(0.01, 0.2)
        # the ball must not contain the decision boundary, otherwise the minimum is interior
        gap = lambda v: (w[y] - w[1 - y]) @ v + b[y] - b[1 - y]
        corners = [gap(x + eps * np.array(s)) for s in itertools.product((-1.0, 1.0), repeat=2)]
        if min(corners) <= 0 <= max(corners):
            continue
        res = sdi_pgd_attack(ParamSet([(w, b)]), x[None], [y], AttackConfig(eps, eps, 1, init_noise_std=0.0, loss="sdi"))
        got = oracle_sdi(w @ res.x_adv[0] + b, y)
        assert got == pytest.approx(best_corner(oracle_sdi, w, b, x, y, eps, min), rel=1e-12, abs=1e-12)
        done += 1


def test_pgd_increases_ce_on_random_net():
    rng = np.random.default_rng(0)
    params = init_params(ModelSpec(10, (32,), 4), 3)
    x = rng.uniform(size=(64, 10))
    y = rng.integers(0, 4, size=64)
    res = pgd_attack(params, x, y, AttackConfig(0.1, 0.01, 20, seed=1))
    probs_nat = forward_probs(params, x)
    probs_adv = forward_probs(params, res.x_adv)
    assert obj.cross_entropy(probs_adv, y).mean() >= obj.cross_entropy(probs_nat, y).mean()
    assert len(res.loss_trace) == 21


def test_sdi_pgd_on_uniform_model_is_stationary():
    spec = ModelSpec(4, (5,), 3)
    zero = ParamSet([(np.zeros_like(w), np.zeros_like(b)) for w, b in init_params(spec, 0).layers])
    x = np.random.default_rng(0).uniform(0.2, 0.8, size=(6, 4))
    cfg = AttackConfig(0.1, 0.02, 10, seed=4, loss="sdi")
    res = sdi_pgd_attack(zero, x, np.zeros(6, dtype=int), cfg)
    # only the initial noise moves the point
    noise_only = run_attack(zero, x, np.zeros(6, dtype=int), AttackConfig(0.1, 0.02, 1, seed=4, loss="sdi"))
    assert np.array_equal(res.x_adv, noise_only.x_adv)
    assert not np.array_equal(res.x_adv, x)


def test_sdi_pgd_reduces_sdi_on_trained_model(blob_model):
    params, data = blob_model
    x, y = data.inputs, data.labels
    res = sdi_pgd_attack(params, x, y, AttackConfig(0.1, 0.01, 20, seed=0, loss="sdi"))
    assert obj.m_sdi(forward_probs(params, res.x_adv), y).mean() < obj.m_sdi(forward_probs(params, x), y).mean()


def test_sdi_pgd_never_consults_gate(blob_model):
    params, data = blob_model
    before = obj.gate_evaluations
    sdi_pgd_attack(params, data.inputs[:20], data.labels[:20], AttackConfig(0.1, 0.01, 5, loss="sdi"))
    assert obj.gate_evaluations == before


def test_kl_pgd_from_identity_start(blob_model):
    params, data = blob_model
    x, y = data.inputs[:30], data.labels[:30]
    res = kl_pgd_attack(params, x, y, AttackConfig(0.1, 0.01, 10, init_noise_std=0.0, loss="kl"))
    assert abs(res.loss_trace[0]) < 1e-12
    res = kl_pgd_attack(params, x, y, AttackConfig(0.1, 0.01, 10, seed=2, loss="kl"))
    assert all(v >= -1e-15 for v in res.loss_trace)
    assert res.loss_trace[-1] > res.loss_trace[0]


def test_cw_success_matches_positive_margin(blob_model):
    params, data = blob_model
    x, y = data.inputs, data.labels
    res = cw_pgd_attack(params, x, y, AttackConfig(0.15, 0.02, 20, loss="cw"))
    margin = obj.cw_margin(forward_logits(params, res.x_adv), y)
    untied = margin != 0
    assert np.array_equal(res.success_mask[untied], (margin > 0)[untied])


def test_spsa_estimator_on_quadratic():
    rng = np.random.default_rng(0)
    x = np.array([1.0, 1.0])
    g = spsa_gradient(lambda pts: np.sum(pts ** 2, axis=1), x, 1e-3, 1024, rng)
    assert np.linalg.norm(g - 2 * x) / np.linalg.norm(2 * x) < 0.1


def test_spsa_defaults_match_reported_settings():
    s = SPSAConfig()
    assert (s.delta, s.lr, s.batch, s.iters) == (0.001, 0.01, 256, 100)


def test_spsa_rejects_non_finite_black_box():
    from sdi_at.numerics import NumericError

    with pytest.raises(NumericError):
        spsa_attack(lambda v: np.full((len(v), 2), np.nan), np.full((1, 2), 0.5), [0],
                    AttackConfig(0.1, 0.01, loss="spsa", spsa=SPSAConfig(batch=4, iters=1)))


def test_spsa_uses_only_black_box_queries(blob_model):
    params, data = blob_model
    calls = []

    def box(v):
        calls.append(len(v))
        return forward_probs(params, v)

    cfg = AttackConfig(0.1, 0.01, loss="spsa", spsa=SPSAConfig(batch=16, iters=5))
    res = spsa_attack(box, data.inputs[:4], data.labels[:4], cfg)
    assert calls and np.max(np.abs(res.x_adv - data.inputs[:4])) <= 0.1 + 1e-12


def test_per_sample_streams_do_not_depend_on_batching(blob_model):
    params, data = blob_model
    x, y = data.inputs[:12], data.labels[:12]
    cfg = AttackConfig(0.1, 0.01, 5, seed=7)
    whole = pgd_attack(params, x, y, cfg)
    parts = [pgd_attack(params, x[i:i + 4], y[i:i + 4], cfg, ids=np.arange(i, i + 4)) for i in (0, 4, 8)]
    np.testing.assert_allclose(np.concatenate([p.x_adv for p in parts]), whole.x_adv, rtol=0, atol=1e-15)
