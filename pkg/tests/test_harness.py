import dataclasses

import numpy as np
import pytest

from sdi_at import attacks
from sdi_at.attacks import AttackConfig
from sdi_at.cli import main
from sdi_at.config import ConfigError, build_run_config, parse_config, read_config
from sdi_at.data import gen_blobs, split
from sdi_at.harness import EVAL_HEADER, attack_comparison, beta_sweep, evaluate, write_csv
from sdi_at.model import ModelSpec, ParamSet, init_params
from sdi_at.training import TrainConfig, train

SPEC = ModelSpec(2, (8,), 3)


@pytest.fixture(scope="module")
def data():
    return split(gen_blobs(3, 30, 0.08, 0), 60, 0)


def _zero(spec=SPEC):
    return ParamSet([(np.zeros_like(w), np.zeros_like(b)) for w, b in init_params(spec, 0).layers])


def test_write_csv_format(tmp_path):
    write_csv([], tmp_path / "a.csv", ("x", "y"))
    assert (tmp_path / "a.csv").read_text() == "x,y\n"
    write_csv([dict(x=0.5, y=3), dict(x=True, y="ce")], tmp_path / "b.csv", ("x", "y"))
    assert (tmp_path / "b.csv").read_text() == "x,y\n0.500000,3\n1,ce\n"
    write_csv([dict(x=0.5, y=3)], tmp_path / "c.csv", ("x", "y"))
    assert (tmp_path / "c.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_uniform_model_reports_chance(data):
    _, test = data
    report = evaluate(_zero(), test, [AttackConfig(0.1, 0.01, 5, loss=l) for l in ("ce", "cw", "sdi")])
    # argmax ties resolve to class 0
    assert report.natural_acc == pytest.approx(np.mean(test.labels == 0))
    assert all(v == report.natural_acc for v in report.robust_acc.values())
    assert [name for name, _ in attack_comparison(_zero(), test, AttackConfig(0.1, 0.01, 5))] == ["ce", "kl", "sdi"]
    assert all(acc == report.natural_acc
               for _, acc in attack_comparison(_zero(), test, AttackConfig(0.1, 0.01, 5)))


def test_zero_epsilon_robust_equals_natural(data):
    _, test = data
    params = init_params(SPEC, 4)
    report = evaluate(params, test, [AttackConfig(0.0, 0.01, 5, loss=l) for l in ("ce", "kl", "cw")])
    assert all(v == report.natural_acc for v in report.robust_acc.values())


def test_empty_attack_list_skips_attacks(data, monkeypatch):
    _, test = data
    monkeypatch.setattr(attacks, "sign_pgd", lambda *a, **k: pytest.fail("attack ran"))
    report = evaluate(init_params(SPEC, 0), test, [])
    assert report.robust_acc == {} and len(report.rows()) == 1
    assert list(report.rows()[0]) == list(EVAL_HEADER)


def test_duplicate_attack_rejected(data):
    with pytest.raises(ValueError):
        evaluate(init_params(SPEC, 0), data[1], [AttackConfig(), AttackConfig()])


def test_beta_sweep(data):
    train_set, test = data
    cfg = TrainConfig(objective="at_sdi", lr=0.05, epochs=2, batch_size=16, lr_drops=(),
                      attack=AttackConfig(0.05, 0.01, 2))
    evals = [AttackConfig(0.05, 0.01, 3)]
    out = beta_sweep(SPEC, train_set, test, cfg, [0, 3, 3], evals)
    assert [b for b, _ in out] == [0.0, 3.0, 3.0]
    assert out[1][1] == out[2][1]
    baseline = beta_sweep(SPEC, train_set, test, dataclasses.replace(cfg, objective="at"), [0], evals)
    assert out[0][1] == baseline[0][1]
    with pytest.raises(ValueError):
        beta_sweep(SPEC, train_set, test, cfg, [], evals)


def test_parse_config():
    flat = parse_config("# comment\nseed = 3\n\ntrain.lr = 0.2  # trailing\n")
    assert flat == {"seed": "3", "train.lr": "0.2"}
    with pytest.raises(ConfigError, match=":2:"):
        parse_config("seed = 1\nnonsense\n")


def test_build_run_config():
    run = build_run_config(parse_config("seed = 4\ntrain.lr_drops = 5:10, 8:2\nmodel.hidden = 16, 8\n"
                                        "eval.attacks = ce, kl\nattack.epsilon = 0.2\nattack.step_size = 0.05\n"))
    assert run.seed == 4 and run.train.seed == 4 and run.attack.seed == 4
    assert run.train.lr_drops == ((5, 10.0), (8, 2.0))
    assert run.hidden == (16, 8)
    assert [a.loss for a in run.eval_attacks] == ["ce", "kl"]
    assert run.eval_attacks[0].epsilon == 0.2 and run.eval_attacks[0].steps == 20
    assert build_run_config({}, seed=9).seed == 9


@pytest.mark.parametrize("text", ["bogus = 1", "train.nope = 1", "model.depth = 3", "train.lr = fast",
                                  "train.epochs = 0", "eval.attacks = ce, fgsm", "train.lr_drops = 5"])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        build_run_config(parse_config(text))


def test_read_config_missing(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        read_config(tmp_path / "none.cfg")


CFG = """
seed = 0
dataset.kind = blobs
dataset.per_class = 20
model.hidden = 8
train.epochs = 2
train.batch_size = 16
train.lr = 0.05
train.lr_drops =
attack.epsilon = 0.05
attack.steps = 2
eval.steps = 3
eval.attacks = ce, sdi
sweep.betas = 0, 1
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(CFG)
    return p


def test_cli_pipeline(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    args = ["--config", str(cfg_file), "--out", str(out)]
    assert main(["train", *args]) == 0
    assert (out / "model.sdic").is_file() and (out / "manifest.txt").is_file()
    assert (out / "metrics.csv").read_text().count("\n") == 3
    assert main(["eval", *args]) == 0
    rows = (out / "eval.csv").read_text().splitlines()
    assert rows[0] == ",".join(EVAL_HEADER) and [r.split(",")[0] for r in rows[1:]] == ["natural", "ce", "sdi"]
    assert main(["attack", *args]) == 0
    assert main(["compare", *args]) == 0
    assert [r.split(",")[0] for r in (out / "compare.csv").read_text().splitlines()[1:]] == ["ce", "kl", "sdi"]
    assert main(["sweep", *args]) == 0
    assert (out / "sweep.csv").read_text().count("\n") == 1 + 2 * 3


def test_cli_errors(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 1
    assert "missing.cfg" in capsys.readouterr().err
    # no checkpoint yet
    assert main(["eval", "--out", str(tmp_path / "empty")]) == 1
    bad = tmp_path / "bad.sdic"
    bad.write_bytes(b"nope")
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"checkpoint = {bad}\n")
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "magic" in capsys.readouterr().err


def test_cli_gradcheck(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "gradcheck.csv").read_text().splitlines()
    assert len(lines) == 13 and all(l.endswith(",1") for l in lines[1:])


def test_strong_attack_cannot_raise_accuracy():
    data = gen_blobs(2, 40, 0.03, 0)
    cfg = TrainConfig(objective="at", lr=0.05, epochs=20, batch_size=16, lr_drops=(),
                      attack=AttackConfig(0.0, 0.01, 1))
    ck, _ = train(ModelSpec(2, (8,), 2), data, cfg)
    report = evaluate(ck.params, data, [AttackConfig(0.5, 0.1, 20, loss="cw")])
    assert report.natural_acc == 1.0
    assert report.robust_acc["cw"] <= report.natural_acc
