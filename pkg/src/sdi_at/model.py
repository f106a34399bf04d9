"""ReLU multilayer perceptron with a softmax head, plus checkpoint I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx

MAGIC = b"SDIC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.num_classes]


@dataclass
class ParamSet:
    """Ordered (weight[out, in], bias[out]) pairs."""

    layers: list[tuple] = field(default_factory=list)

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"layers.{i}.weight"] = w
            out[f"layers.{i}.bias"] = b
        return out

    @classmethod
    def from_dict(cls, d) -> "ParamSet":
        n = len(d) // 2
        return cls([(d[f"layers.{i}.weight"], d[f"layers.{i}.bias"]) for i in range(n)])

    def copy(self) -> "ParamSet":
        return ParamSet([(np.array(w), np.array(b)) for w, b in self.layers])

    def equals(self, other: "ParamSet") -> bool:
        """Bitwise equality of every array."""
        if len(self.layers) != len(other.layers):
            return False
        return all(
            w1.shape == w2.shape and w1.tobytes() == w2.tobytes() and b1.tobytes() == b2.tobytes()
            for (w1, b1), (w2, b2) in zip(self.layers, other.layers)
        )


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: ParamSet
    seed: int = 0
    epoch: int = 0


def init_params(spec: ModelSpec, seed: int) -> ParamSet:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    dims = spec.dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        layers.append((w, np.zeros(fan_out)))
    return ParamSet(layers)


def _check_input(params: ParamSet, x) -> None:
    w0 = params.layers[0][0]
    width = x.shape[-1] if x.ndim else 0
    if x.ndim != 2 or width != w0.shape[1]:
        raise nx.DimensionError(f"input of shape {x.shape} does not match input width {w0.shape[1]}")


def logits_graph(params: ParamSet, x) -> nx.Var:
    """Forward pass on possibly-differentiable parameters or inputs."""
    h = nx.as_var(x)
    _check_input(params, h)
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = nx.matmul(h, nx.transpose(w)) + b
        if i < last:
            h = nx.relu(h)
    return h


def probs_graph(params: ParamSet, x) -> nx.Var:
    return nx.softmax(logits_graph(params, x), axis=-1)


def forward_logits(params: ParamSet, x) -> np.ndarray:
    return logits_graph(params, np.asarray(x, dtype=np.float64)).value


def forward_probs(params: ParamSet, x) -> np.ndarray:
    return probs_graph(params, np.asarray(x, dtype=np.float64)).value


def predict(params: ParamSet, x) -> np.ndarray:
    # np.argmax returns the first maximal index
    return np.argmax(forward_logits(params, x), axis=-1)


# -- checkpoint file -------------------------------------------------------

def checkpoint_bytes(ck: Checkpoint) -> bytes:
    spec = ck.spec
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<II", spec.input_dim, len(spec.hidden)),
        struct.pack(f"<{len(spec.hidden)}I", *spec.hidden),
        struct.pack("<I", spec.num_classes),
        struct.pack("<IQ", ck.epoch, ck.seed),
    ]
    dims = spec.dims
    for (w, b), fan_in, fan_out in zip(ck.params.layers, dims[:-1], dims[1:]):
        if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
            raise CheckpointError("parameters do not match the model spec")
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ck))


def parse_checkpoint(buf: bytes) -> Checkpoint:
    def take(fmt, offset):
        size = struct.calcsize(fmt)
        if offset + size > len(buf):
            raise CheckpointError("truncated checkpoint header")
        return struct.unpack_from(fmt, buf, offset), offset + size

    if len(buf) < 4:
        raise CheckpointError("truncated checkpoint header")
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (version,), off = take("<I", 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (input_dim, n_hidden), off = take("<II", off)
    if n_hidden > 4096:
        raise CheckpointError(f"implausible hidden layer count {n_hidden}")
    hidden, off = take(f"<{n_hidden}I", off)
    (num_classes,), off = take("<I", off)
    (epoch, seed), off = take("<IQ", off)
    try:
        spec = ModelSpec(input_dim, hidden, num_classes)
    except ValueError as exc:
        raise CheckpointError(f"inconsistent dimension header: {exc}") from exc

    dims = spec.dims
    expected = sum((i + 1) * o for i, o in zip(dims[:-1], dims[1:])) * 8
    if len(buf) - off != expected:
        raise CheckpointError(f"payload is {len(buf) - off} bytes, header implies {expected}")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(buf, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_out, fan_in)
        off += w.nbytes
        b = np.frombuffer(buf, dtype="<f8", count=fan_out, offset=off)
        off += b.nbytes
        layers.append((w.astype(np.float64), b.astype(np.float64)))
    return Checkpoint(spec, ParamSet(layers), seed=seed, epoch=epoch)


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())
