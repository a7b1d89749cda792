"""Fully connected regression network in numpy (float64).

Hidden layers use sigmoid or relu, the output layer is linear. Loss is the
mean squared error averaged over samples and outputs. Weights are drawn
uniformly from ``[-sqrt(3 / fan_in), sqrt(3 / fan_in)]`` (unit-variance
preserving for unit-variance inputs), biases start at zero.

Weight file layout (little-endian)::

    "GFNN" | u16 version | u16 number of layer sizes | u32 sizes...
    | u8 activation id per weight layer | u64 adam step
    | f64 W, b per layer (W row-major, shape (fan_in, fan_out))
    | f64 adam first moments (same order) | f64 adam second moments
    | u32 CRC-32 of everything before it
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from flexgrid._rng import make_rng
from flexgrid.errors import FlexgridError, InfeasibleError
from flexgrid.grid_model import GridKind, GridSpec, build_ladder, first_spacing_violation

MAGIC = b"GFNN"
FORMAT_VERSION = 1
ACTIVATION_IDS = {"sigmoid": 0, "relu": 1, "linear": 2}
ACTIVATION_NAMES = {v: k for k, v in ACTIVATION_IDS.items()}
GRID_INPUTS = 8
GRID_OUTPUTS = 4


class ModelFormatError(FlexgridError):
    """Weight file is corrupt, truncated or of an unknown version."""


class ArchitectureMismatch(ModelFormatError):
    """Model shape does not match what the caller requires."""


@dataclass(frozen=True)
class NetworkArch:
    sizes: tuple = (GRID_INPUTS, 500, 500, 500, GRID_OUTPUTS)
    activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 3:
            raise ValueError("need an input layer, at least one hidden layer and an output layer")
        if min(self.sizes) < 1:
            raise ValueError("layer sizes must be positive")
        if self.activation not in ("sigmoid", "relu"):
            raise ValueError(f"unsupported hidden activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 40
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class NetworkModel:
    arch: NetworkArch
    weights: list
    biases: list
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
            self.v = [np.zeros_like(p) for p in self.params]

    @property
    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "NetworkModel":
        return NetworkModel(
            self.arch,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            [a.copy() for a in self.m],
            [a.copy() for a in self.v],
            self.step,
        )


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free logistic


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return a * (1.0 - a)


def init_network(arch: NetworkArch, seed: int = 0) -> NetworkModel:
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.sizes[:-1], arch.sizes[1:]):
        limit = math.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkModel(arch, weights, biases)


def _as_batch(model: NetworkModel, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = X.reshape(1, -1) if single else X
    if X.ndim != 2 or X.shape[1] != model.arch.sizes[0]:
        raise ArchitectureMismatch(f"input width {X.shape[-1]} does not match network input {model.arch.sizes[0]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite network input")
    return X, single


def _forward_all(model: NetworkModel, X: np.ndarray):
    pre, acts = [], [X]
    a = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        pre.append(z)
        a = z if i == last else _act(z, model.arch.activation)
        acts.append(a)
    return pre, acts


def forward(model: NetworkModel, x) -> np.ndarray:
    """Network output for one input vector or a ``(batch, inputs)`` array."""
    X, single = _as_batch(model, x)
    out = _forward_all(model, X)[1][-1]
    return out[0] if single else out


def loss(model: NetworkModel, X, Y) -> float:
    pred = forward(model, np.atleast_2d(X))
    return float(np.mean((pred - np.atleast_2d(Y)) ** 2))


def backward(model: NetworkModel, X, Y) -> list:
    """Gradients of the batch MSE w.r.t. every parameter, in ``model.params`` order."""
    X, _ = _as_batch(model, X)
    Y = np.asarray(Y, dtype=np.float64).reshape(len(X), -1)
    if len(X) == 0:
        raise ValueError("empty batch")
    if Y.shape[1] != model.arch.sizes[-1]:
        raise ArchitectureMismatch(f"target width {Y.shape[1]} does not match network output {model.arch.sizes[-1]}")
    pre, acts = _forward_all(model, X)
    delta = 2.0 * (acts[-1] - Y) / Y.size
    grads = [None] * (2 * len(model.weights))
    for i in range(len(model.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * _act_grad(pre[i - 1], acts[i], model.arch.activation)
    return grads


def adam_step(model: NetworkModel, grads: Sequence[np.ndarray], config: TrainConfig) -> NetworkModel:
    """Apply one bias-corrected adam update in place; returns ``model``."""
    model.step += 1
    t = model.step
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for p, g, m, v in zip(model.params, grads, model.m, model.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.lr * (m / corr1) / (np.sqrt(v / corr2) + config.eps)
    return model


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["epoch,train_mse,val_mse"]
        for e, tr in enumerate(self.train_loss):
            va = self.val_loss[e] if e < len(self.val_loss) else ""
            rows.append(f"{e + 1},{tr!r},{va!r}" if va != "" else f"{e + 1},{tr!r},")
        return "\n".join(rows) + "\n"


def train(
    model: NetworkModel,
    train_X,
    train_Y,
    val_X=None,
    val_Y=None,
    config: TrainConfig = TrainConfig(),
    callback=None,
) -> tuple[NetworkModel, TrainHistory]:
    """Mini-batch adam training; shuffles every epoch with a generator seeded by ``config.seed``.

    Trains ``model`` in place and returns it with the per-epoch train and
    validation MSE.
    """
    X = np.asarray(train_X, dtype=np.float64)
    Y = np.asarray(train_Y, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("empty training set")
    has_val = val_X is not None and len(val_X) > 0
    rng = make_rng(config.seed)
    history = TrainHistory()
    order = np.arange(len(X))
    for epoch in range(config.epochs):
        if config.shuffle:
            order = rng.permutation(len(X))
        for lo in range(0, len(X), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            adam_step(model, backward(model, X[idx], Y[idx]), config)
        history.train_loss.append(loss(model, X, Y))
        if has_val:
            history.val_loss.append(loss(model, val_X, val_Y))
        if callback is not None:
            callback(epoch, history)
    return model, history


@dataclass(frozen=True)
class GridPrediction:
    spec: GridSpec
    raw: tuple
    adjustments: tuple

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "raw_output": list(self.raw), "adjustments": list(self.adjustments)}


def predict_grid_params(model: NetworkModel, features, stats, profile, anchor: float, fee: float = 0.0) -> GridPrediction:
    """Turn window features into a ready flexible GridSpec.

    The network output is mapped back to price units, bounds are clamped into
    ``profile`` around ``anchor``, counts rounded and clamped to the profile's
    integer range, then counts are lowered until the fee-spacing constraint
    holds. Every change is listed in ``adjustments``.

    Raises:
        ArchitectureMismatch: the model is not an 8-in / 4-out grid network.
        FlexgridError: non-finite network output.
        InfeasibleError: no count within the profile satisfies the spacing constraint.
    """
    if model.arch.sizes[0] != GRID_INPUTS or model.arch.sizes[-1] != GRID_OUTPUTS:
        raise ArchitectureMismatch(f"grid prediction needs an 8-in/4-out network, got {model.arch.sizes}")
    x = features.as_array() if hasattr(features, "as_array") else np.asarray(features, dtype=np.float64)
    out = stats.inverse_y(forward(model, stats.transform_x(x)))
    if not np.all(np.isfinite(out)):
        raise FlexgridError(f"network produced non-finite output {out}")
    raw = tuple(float(v) for v in out)
    notes = []

    def clamp(value, lo, hi, name):
        clamped = min(max(value, lo), hi)
        if clamped != value:
            notes.append(f"{name} clamped from {value:.6g} to {clamped:.6g}")
        return clamped

    ul = clamp(raw[0], profile.upper[0] * anchor, profile.upper[1] * anchor, "upper")
    ll = clamp(raw[1], profile.lower[0] * anchor, profile.lower[1] * anchor, "lower")
    lo_n, hi_n = profile.counts
    counts = []
    for value, name in ((raw[2], "n_upper"), (raw[3], "n_lower")):
        rounded = int(round(value))
        counts.append(int(clamp(rounded, max(lo_n, 1), hi_n, name)))
    nu, nl = counts

    while True:
        spec = GridSpec(GridKind.FLEXIBLE, ul, ll, nu, nl, anchor)
        ladder = build_ladder(spec)
        i = first_spacing_violation(ladder.lines, fee)
        if i is None:
            break
        if i < ladder.anchor_index and nl > max(lo_n, 1):
            nl -= 1
            notes.append(f"n_lower lowered to {nl} for fee spacing")
        elif i >= ladder.anchor_index and nu > max(lo_n, 1):
            nu -= 1
            notes.append(f"n_upper lowered to {nu} for fee spacing")
        else:
            raise InfeasibleError(f"no grid count in {profile.counts} satisfies the spacing constraint at fee {fee}")
    return GridPrediction(spec, raw, tuple(notes))


def save_model(model: NetworkModel) -> bytes:
    sizes = model.arch.sizes
    n_layers = len(sizes) - 1
    acts = [ACTIVATION_IDS[model.arch.activation]] * (n_layers - 1) + [ACTIVATION_IDS["linear"]]
    parts = [
        struct.pack("<4sHH", MAGIC, FORMAT_VERSION, len(sizes)),
        struct.pack(f"<{len(sizes)}I", *sizes),
        struct.pack(f"<{n_layers}B", *acts),
        struct.pack("<Q", model.step),
    ]
    for group in (model.params, model.m, model.v):
        for arr in group:
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def load_model(data: bytes, expected_arch: Optional[NetworkArch] = None) -> NetworkModel:
    if len(data) < 12:
        raise ModelFormatError("weight file truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ModelFormatError("weight file checksum mismatch (corrupt or truncated)")
    magic, version, n_sizes = struct.unpack_from("<4sHH", body, 0)
    if magic != MAGIC:
        raise ModelFormatError("not a GFNN weight file")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported weight file version {version}")
    off = 8
    sizes = struct.unpack_from(f"<{n_sizes}I", body, off)
    off += 4 * n_sizes
    n_layers = n_sizes - 1
    acts = struct.unpack_from(f"<{n_layers}B", body, off)
    off += n_layers
    (step,) = struct.unpack_from("<Q", body, off)
    off += 8
    if acts[-1] != ACTIVATION_IDS["linear"] or len(set(acts[:-1])) != 1:
        raise ModelFormatError(f"unsupported activation layout {acts}")
    arch = NetworkArch(tuple(sizes), ACTIVATION_NAMES[acts[0]])
    if expected_arch is not None and arch != expected_arch:
        raise ArchitectureMismatch(f"weight file holds {arch}, expected {expected_arch}")
    shapes = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        shapes += [(a, b), (b,)]
    groups = []
    for _ in range(3):
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            if off + 8 * count > len(body):
                raise ModelFormatError("weight file truncated")
            arrays.append(np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64))
            off += 8 * count
        groups.append(arrays)
    if off != len(body):
        raise ModelFormatError("trailing bytes in weight file")
    params, m, v = groups
    return NetworkModel(arch, params[0::2], params[1::2], m, v, step)
