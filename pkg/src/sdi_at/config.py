"""``key = value`` run configuration files.

Blank lines and ``#`` comments are ignored; nested settings use dotted keys::

    seed = 0
    dataset.kind = blobs
    train.objective = at_sdi
    attack.epsilon = 0.1
    eval.attacks = ce, cw, sdi
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackConfig, SPSAConfig
from .model import ModelSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "blobs"
    num_classes: int = 3
    per_class: int = 100
    spread: float = 0.08
    noise: float = 0.1
    seed: int = 0
    n_train: int = 0
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    limit: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    hidden: tuple[int, ...] = (32,)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_attacks: tuple[AttackConfig, ...] = ()
    eval_limit: int = 0
    compare: AttackConfig = field(default_factory=lambda: AttackConfig(epsilon=0.1, step_size=0.01, steps=20))
    # inner attack for training; also what the ``attack`` subcommand runs
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(epsilon=0.1, step_size=0.01, steps=10))
    betas: tuple[float, ...] = (0.0, 1.0, 3.0)
    checkpoint: str = ""

    def model_spec(self, input_dim: int, num_classes: int) -> ModelSpec:
        return ModelSpec(input_dim, self.hidden, num_classes)

    def manifest_lines(self) -> list[str]:
        return [f"{k} = {v}" for k, v in _flatten(self)]


def _flatten(obj, prefix=""):
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            yield from _flatten(v, key + ".")
        elif isinstance(v, tuple) and v and dataclasses.is_dataclass(v[0]):
            for i, item in enumerate(v):
                yield from _flatten(item, f"{key}.{i}.")
        else:
            yield key, v


def _coerce(template, raw: str, key: str):
    try:
        if isinstance(template, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(template).__name__}") from exc
    return raw


def _floats(raw: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in raw.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {raw!r}") from exc


def _drops(raw: str, key: str) -> tuple:
    out = []
    for item in (s.strip() for s in raw.split(",")):
        if not item:
            continue
        try:
            epoch, divisor = item.split(":")
            out.append((int(epoch), float(divisor)))
        except ValueError as exc:
            raise ConfigError(f"{key}: expected 'epoch:divisor' entries, got {item!r}") from exc
    return tuple(out)


def _apply(instance, section: dict[str, str], prefix: str):
    """Replace dataclass fields of ``instance`` from ``section`` (already stripped of ``prefix``)."""
    names = {f.name for f in dataclasses.fields(instance)}
    changes = {}
    for key, raw in section.items():
        if key not in names or dataclasses.is_dataclass(getattr(instance, key)):
            raise ConfigError(f"unknown config key {prefix}{key}")
        current = getattr(instance, key)
        if key == "lr_drops":
            changes[key] = _drops(raw, prefix + key)
        else:
            changes[key] = _coerce(current, raw, prefix + key)
    try:
        return dataclasses.replace(instance, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {prefix.rstrip('.') or 'config'} settings: {exc}") from exc


def _section(flat: dict[str, str], name: str) -> dict[str, str]:
    p = name + "."
    return {k[len(p):]: v for k, v in flat.items() if k.startswith(p)}


SECTIONS = ("dataset", "model", "train", "attack", "eval", "spsa", "compare", "sweep")
TOP_LEVEL = ("seed", "checkpoint")


def build_run_config(flat: dict[str, str], seed: int | None = None) -> RunConfig:
    for key in flat:
        head = key.split(".", 1)[0]
        if ("." in key and head not in SECTIONS) or ("." not in key and key not in TOP_LEVEL):
            raise ConfigError(f"unknown config key {key}")

    run_seed = int(_coerce(0, flat["seed"], "seed")) if "seed" in flat else 0
    if seed is not None:
        run_seed = seed

    dataset = _apply(DatasetSpec(), _section(flat, "dataset"), "dataset.")

    model = _section(flat, "model")
    hidden = (32,)
    for key in model:
        if key != "hidden":
            raise ConfigError(f"unknown config key model.{key}")
    if "hidden" in model:
        try:
            hidden = tuple(int(s) for s in model["hidden"].split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(f"model.hidden: expected comma-separated integers, got {model['hidden']!r}") from exc

    spsa = _apply(SPSAConfig(), _section(flat, "spsa"), "spsa.")
    attack = _apply(AttackConfig(epsilon=0.1, step_size=0.01, steps=10, seed=run_seed, spsa=spsa),
                    _section(flat, "attack"), "attack.")
    train = _apply(TrainConfig(seed=run_seed, attack=attack), _section(flat, "train"), "train.")
    train = dataclasses.replace(train, seed=run_seed, attack=attack)

    ev = _section(flat, "eval")
    names = [s.strip() for s in ev.pop("attacks", "ce,cw,sdi").split(",") if s.strip()]
    limit = int(_coerce(0, ev.pop("limit", "0"), "eval.limit"))
    eval_base = _apply(AttackConfig(epsilon=attack.epsilon, step_size=attack.step_size, steps=20,
                                    init_noise_std=attack.init_noise_std, clip_min=attack.clip_min,
                                    clip_max=attack.clip_max, seed=run_seed, spsa=spsa),
                       ev, "eval.")
    try:
        eval_attacks = tuple(dataclasses.replace(eval_base, loss=n) for n in names)
    except ValueError as exc:
        raise ConfigError(f"eval.attacks: {exc}") from exc

    compare = _apply(dataclasses.replace(eval_base, loss="ce"), _section(flat, "compare"), "compare.")

    sweep = _section(flat, "sweep")
    for key in sweep:
        if key != "betas":
            raise ConfigError(f"unknown config key sweep.{key}")
    betas = _floats(sweep["betas"], "sweep.betas") if "betas" in sweep else (0.0, 1.0, 3.0)

    return RunConfig(seed=run_seed, dataset=dataset, hidden=hidden, train=train, eval_attacks=eval_attacks,
                     eval_limit=limit, compare=compare, attack=attack, betas=betas,
                     checkpoint=flat.get("checkpoint", ""))
