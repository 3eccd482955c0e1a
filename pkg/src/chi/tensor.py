"""Numeric substrate: tanh MLPs with hand-written backprop, Adam, diagonal Gaussians.

Every network in the package is an :class:`MlpParams`. Parameters may carry a
leading "stack" axis so that an ensemble of identically shaped networks runs as
one batched matmul; all functions here accept both layouts.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

LOG_STD_MIN = math.log(1e-4)
LOG_STD_MAX = math.log(2.0)
LOG_2PI = math.log(2.0 * math.pi)


class ConfigurationError(ValueError):
    """Shapes or hyperparameters that cannot work together."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient contained NaN or inf; the update was not applied."""


@dataclass
class MlpParams:
    """Weights ``(..., in, out)`` and biases ``(..., out)`` of a feed-forward net.

    Hidden layers use tanh, the head is linear.
    """

    weights: list[Array]
    biases: list[Array]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape[-1] != w.shape[-1]:
                raise ConfigurationError(f"layer {i}: bias {b.shape} does not match weight {w.shape}")
            if i and self.weights[i - 1].shape[-1] != w.shape[-2]:
                raise ConfigurationError(f"layer {i}: input dim {w.shape[-2]} does not chain")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[-2]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[-1]

    @property
    def stack(self) -> int | None:
        """Leading ensemble size, or None for a single network."""
        return self.weights[0].shape[0] if self.weights[0].ndim == 3 else None

    def arrays(self) -> list[Array]:
        out: list[Array] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[Array]) -> MlpParams:
        if len(arrays) % 2:
            raise ConfigurationError("expected interleaved weight/bias arrays")
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> MlpParams:
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def member(self, i: int) -> MlpParams:
        if self.stack is None:
            raise ConfigurationError("not a stacked parameter set")
        if not 0 <= i < self.stack:
            raise IndexError(f"member {i} out of range for ensemble of {self.stack}")
        return MlpParams([w[i] for w in self.weights], [b[i] for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    *,
    stack: int | None = None,
    zero_head: bool = False,
) -> MlpParams:
    """Uniform fan-in initialisation, zero biases."""
    if len(sizes) < 2 or min(sizes) < 1:
        raise ConfigurationError(f"bad layer sizes {sizes}")
    lead = () if stack is None else (stack,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=lead + (fan_in, fan_out)))
        biases.append(np.zeros(lead + (fan_out,)))
    if zero_head:
        weights[-1][...] = 0.0
        biases[-1][...] = 0.0
    return MlpParams(weights, biases)


def _check_input(params: MlpParams, x: Array) -> None:
    if x.shape[-1] != params.in_dim:
        raise ConfigurationError(f"input has {x.shape[-1]} features, network expects {params.in_dim}")


def mlp_forward_cached(params: MlpParams, x: Array) -> tuple[Array, list[Array]]:
    """Forward pass returning the output and the input of every layer."""
    _check_input(params, x)
    if params.stack is not None and x.ndim == 1:
        raise ConfigurationError("stacked networks need batched input")
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + (b[..., None, :] if w.ndim == 3 else b)
        h = z if i == last else np.tanh(z)
        if i != last:
            acts.append(h)
    return h, acts


def mlp_forward(params: MlpParams, x: Array) -> Array:
    return mlp_forward_cached(params, x)[0]


def mlp_backward(
    params: MlpParams,
    x: Array,
    output_grad: Array,
    cache: list[Array] | None = None,
) -> tuple[MlpParams, Array]:
    """Gradients of ``sum(output_grad * mlp_forward(params, x))``.

    Returns parameter gradients shaped like ``params`` and the gradient with
    respect to ``x``. ``x`` may be 1-d (one sample) or batched along axis -2.
    """
    if cache is None:
        out, cache = mlp_forward_cached(params, x)
    else:
        out = None
    expected = cache[-1].shape[:-1] + (params.out_dim,)
    if output_grad.shape[-1] != params.out_dim or (out is not None and output_grad.shape != out.shape):
        raise ConfigurationError(f"output_grad shape {output_grad.shape}, expected {expected}")

    single = x.ndim == 1
    g = output_grad[None, :] if single else output_grad
    dws: list[Array] = [None] * len(params.weights)  # type: ignore[list-item]
    dbs: list[Array] = [None] * len(params.weights)  # type: ignore[list-item]
    grad_in = g
    for i in reversed(range(len(params.weights))):
        inp = cache[i]
        if inp.ndim == 1:
            inp = inp[None, :]
        w = params.weights[i]
        dw = np.swapaxes(inp, -1, -2) @ g
        db = g.sum(axis=-2)
        dws[i] = dw
        dbs[i] = db
        grad_in = g @ np.swapaxes(w, -1, -2)
        if i:
            g = grad_in * (1.0 - inp * inp)
    if single:
        grad_in = grad_in[0]
    return MlpParams(dws, dbs), grad_in


@dataclass
class AdamState:
    m: list[Array]
    v: list[Array]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> AdamState:
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)

    def arrays(self) -> list[Array]:
        return [*self.m, *self.v, np.array([float(self.step)])]


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: MlpParams,
    grads: MlpParams,
    state: AdamState,
    lr: float | None = None,
    config: AdamConfig = AdamConfig(),
) -> tuple[MlpParams, AdamState]:
    """One Adam update; returns new parameter and state objects.

    Raises :class:`NonFiniteError` (leaving everything untouched) if any
    gradient entry is NaN or inf.
    """
    lr = config.lr if lr is None else lr
    garrs = grads.arrays()
    parrs = params.arrays()
    if len(garrs) != len(parrs) or any(g.shape != p.shape for g, p in zip(garrs, parrs)):
        raise ConfigurationError("gradient shapes do not mirror parameters")
    if not all(np.isfinite(g).all() for g in garrs):
        raise NonFiniteError("non-finite gradient, update rejected")
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(parrs, garrs, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + config.eps))
        new_m.append(m)
        new_v.append(v)
    return MlpParams.from_arrays(new_p), AdamState(new_m, new_v, t)


def polyak(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    return MlpParams.from_arrays([(1.0 - tau) * t + tau * o for t, o in zip(target.arrays(), online.arrays())])


# -- diagonal Gaussians -------------------------------------------------------


@dataclass
class DiagGaussian:
    """Diagonal Gaussian over the last axis; ``log_std`` is clamped on construction."""

    mean: Array
    log_std: Array = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.log_std is None:
            self.log_std = np.zeros_like(self.mean)
        self.log_std = np.clip(np.asarray(self.log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
        if self.log_std.shape != self.mean.shape:
            raise ConfigurationError(f"mean {self.mean.shape} and log_std {self.log_std.shape} differ")

    @classmethod
    def from_std(cls, mean: Array, std: Array) -> DiagGaussian:
        with np.errstate(divide="ignore"):
            return cls(mean, np.log(np.asarray(std, dtype=np.float64)))

    @property
    def std(self) -> Array:
        return np.exp(self.log_std)


def gaussian_sample(d: DiagGaussian, noise: Array) -> Array:
    """Reparameterised draw ``mean + std * noise``."""
    return d.mean + d.std * noise


def gaussian_log_prob(d: DiagGaussian, x: Array) -> Array:
    z = (np.asarray(x) - d.mean) / d.std
    return np.sum(-0.5 * z * z - d.log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(d: DiagGaussian) -> Array:
    return np.sum(d.log_std + 0.5 * (LOG_2PI + 1.0), axis=-1)


def gaussian_kl(p: DiagGaussian, q: DiagGaussian) -> Array:
    """KL(p || q), summed over the last axis."""
    var_ratio = np.exp(2.0 * (p.log_std - q.log_std))
    diff = (p.mean - q.mean) / q.std
    return np.sum(q.log_std - p.log_std + 0.5 * (var_ratio + diff * diff - 1.0), axis=-1)


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_MAGIC = b"CHIPARAM"
CHECKPOINT_VERSION = 1


def write_record(fh: BinaryIO, arrays: Sequence[Array]) -> None:
    fh.write(struct.pack("<I", len(arrays)))
    for a in arrays:
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    for a in arrays:
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes(order="C"))


def read_record(fh: BinaryIO) -> list[Array]:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    shapes = []
    for _ in range(n):
        (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
        shapes.append(struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim)))
    out = []
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        buf = _read_exact(fh, 8 * count)
        out.append(np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape))
    return out


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated checkpoint")
    return buf


def save_checkpoint(path, records: Sequence[Sequence[Array]]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(records)))
        for rec in records:
            write_record(fh, rec)


def load_checkpoint(path) -> list[list[Array]]:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        version, n = struct.unpack("<II", _read_exact(fh, 8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        return [read_record(fh) for _ in range(n)]
