"""Dense MLP parameters, masked forward/backward passes and a masked Adam.

Arrays are float64 numpy arrays. Weight matrices are stored ``(out_dim, in_dim)``
so a layer computes ``x @ W.T + b``. Only weight matrices are prunable; biases
are always dense.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import kernels
from .fileio import atomic_write_bytes

if TYPE_CHECKING:
    from .masking import BinaryMask

ACTIVATIONS = ("relu", "linear")
LOSSES = ("mse", "bce")

PARAMS_MAGIC = b"ATPS"
PARAMS_VERSION = 1


class ShapeError(ValueError):
    """Raised when arrays or parameter sets do not chain or align."""


@dataclass
class ParamSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        # kernels update flat views in place, so storage must be contiguous
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i}: expected in_dim {self.weights[i - 1].shape[0]}, got {w.shape[1]}"
                )

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [tuple(w.shape) for w in self.weights]

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def total_prunable(self) -> int:
        return sum(w.size for w in self.weights)

    @property
    def dense_count(self) -> int:
        return sum(b.size for b in self.biases)

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check_congruent(self, other: "ParamSet") -> None:
        if self.shapes != other.shapes:
            raise ShapeError(f"parameter shapes differ: {self.shapes} vs {other.shapes}")

    def equals(self, other: "ParamSet") -> bool:
        """Bit-level equality of every weight and bias."""
        if self.shapes != other.shapes:
            return False
        pairs = zip(self.weights + self.biases, other.weights + other.biases)
        return all(np.array_equal(a.view(np.uint64), b.view(np.uint64)) for a, b in pairs)


# gradients share the parameter layout
Gradients = ParamSet


def init_params(widths: Sequence[int], seed: int, gain: float = np.sqrt(2.0)) -> ParamSet:
    """Fan-in scaled normal init: ``W ~ N(0, gain**2 / fan_in)``, zero biases.

    With the default ``gain = sqrt(2)`` this is the Kaiming-normal draw for ReLU
    networks. Layers are drawn in order from one generator, so a prefix of the
    widths always receives the same values.
    """
    if len(widths) < 2:
        raise ShapeError("need at least input and output width")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ParamSet(weights, biases)


@dataclass
class ForwardCache:
    params: ParamSet
    mask: "BinaryMask | None"
    activation: str
    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    effective: list[np.ndarray] = field(default_factory=list)  # mask * W per layer


def _effective(params: ParamSet, mask: "BinaryMask | None", layer: int) -> np.ndarray:
    w = params.weights[layer]
    if mask is None:
        return w
    return w * mask.layers[layer]


def forward(
    params: ParamSet,
    mask: "BinaryMask | None",
    x: np.ndarray,
    activation: str = "relu",
) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate ``f(x; mask * params)``. Hidden layers use ``activation``,
    the last layer is linear. ``mask=None`` means no weight is pruned."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if mask is not None:
        mask.check_params(params)
    cache = ForwardCache(params, mask, activation)
    a = x
    last = len(params.weights) - 1
    for i in range(last + 1):
        expected = params.weights[i].shape[1]
        if a.shape[1] != expected:
            raise ShapeError(f"layer {i}: expected input width {expected}, got {a.shape[1]}")
        w = _effective(params, mask, i)
        z = a @ w.T
        z += params.biases[i]
        cache.effective.append(w)
        cache.inputs.append(a)
        cache.preacts.append(z)
        if i < last and activation == "relu":
            a = np.maximum(z, 0.0)
        else:
            a = z
    return a, cache


def backward(cache: ForwardCache, loss_grad: np.ndarray) -> Gradients:
    """Reverse-mode pass for a cached :func:`forward` call.

    Returns ``dL/dparams``. The chain rule through ``mask * W`` multiplies each
    weight gradient by its mask bit, so pruned entries come out as zero.
    """
    params, mask = cache.params, cache.mask
    delta = np.asarray(loss_grad, dtype=np.float64)
    if delta.ndim == 1:
        delta = delta[None, :]
    out_shape = cache.preacts[-1].shape
    if delta.shape != out_shape:
        raise ShapeError(f"loss gradient shape {delta.shape} does not match output {out_shape}")
    n = len(params.weights)
    ones = np.ones(delta.shape[0])
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        if i < n - 1 and cache.activation == "relu":
            delta = delta * (cache.preacts[i] > 0.0)
        g = delta.T @ cache.inputs[i]
        if mask is not None:
            np.multiply(g, mask.layers[i], out=g)
        gw[i] = g
        gb[i] = ones @ delta  # column sums; faster than sum(axis=0) for small batches
        if i:
            delta = delta @ cache.effective[i]
    return ParamSet(gw, gb)


def loss_and_grad(output: np.ndarray, target: np.ndarray, kind: str = "mse") -> tuple[float, np.ndarray]:
    """Mean loss over all output entries and its gradient w.r.t. ``output``.

    ``kind="bce"`` is binary cross-entropy on logits with targets in [0, 1].
    """
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(output.shape)
    n = output.size
    if kind == "mse":
        diff = output - target
        return float(np.mean(diff * diff)), 2.0 * diff / n
    if kind == "bce":
        if np.any((target < 0.0) | (target > 1.0)):
            raise ValueError("BCE targets must lie in [0, 1]")
        loss = np.logaddexp(0.0, output) - target * output
        prob = 0.5 * (1.0 + np.tanh(0.5 * output))
        return float(np.mean(loss)), (prob - target) / n
    raise ValueError(f"unknown loss {kind!r}")


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def fresh(cls, params: ParamSet, lr: float = 1e-4, **kwargs) -> "AdamState":
        zw = [np.zeros_like(w) for w in params.weights]
        zb = [np.zeros_like(b) for b in params.biases]
        return cls(zw, [z.copy() for z in zw], zb, [z.copy() for z in zb], lr=lr, **kwargs)


def adam_step(
    params: ParamSet,
    grads: Gradients,
    mask: "BinaryMask | None",
    state: AdamState,
) -> tuple[ParamSet, AdamState]:
    """One bias-corrected Adam update, applied in place.

    Weights whose mask bit is 0 keep both their value and their moment
    estimates untouched. Biases are always updated.
    """
    params.check_congruent(grads)
    if mask is not None:
        mask.check_params(params)
    state.step += 1
    bias1 = 1.0 - state.beta1**state.step
    bias2 = 1.0 - state.beta2**state.step
    hyper = (state.lr, state.beta1, state.beta2, state.eps, bias1, bias2)
    for i, (w, g) in enumerate(zip(params.weights, grads.weights)):
        bits = None if mask is None else mask.layers[i].reshape(-1).view(np.uint8)
        kernels.masked_adam_update(
            w.reshape(-1), np.ascontiguousarray(g).reshape(-1),
            state.m_w[i].reshape(-1), state.v_w[i].reshape(-1), bits, *hyper,
        )
    for i, (b, g) in enumerate(zip(params.biases, grads.biases)):
        kernels.masked_adam_update(
            b, np.ascontiguousarray(g), state.m_b[i], state.v_b[i], None, *hyper
        )
    return params, state


def write_params(params: ParamSet, path: str | Path) -> None:
    """Binary layout: magic, version, layer count, (out, in) per layer, then
    little-endian float64 values layer by layer, weights before biases."""
    head = [PARAMS_MAGIC, struct.pack("<II", PARAMS_VERSION, len(params.weights))]
    head += [struct.pack("<II", *shape) for shape in params.shapes]
    body = []
    for w, b in zip(params.weights, params.biases):
        body.append(w.astype("<f8").tobytes())
        body.append(b.astype("<f8").tobytes())
    atomic_write_bytes(path, b"".join(head + body))


def read_params(path: str | Path) -> ParamSet:
    raw = Path(path).read_bytes()
    if raw[:4] != PARAMS_MAGIC:
        raise ValueError(f"{path}: not a parameter file")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported parameter format version {version}")
    offset = 12
    shapes = []
    for _ in range(count):
        shapes.append(struct.unpack_from("<II", raw, offset))
        offset += 8
    weights, biases = [], []
    for out_dim, in_dim in shapes:
        size = out_dim * in_dim
        if offset + 8 * (size + out_dim) > len(raw):
            raise ValueError(f"{path}: truncated parameter payload")
        w = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(out_dim, in_dim)
        offset += 8 * size
        b = np.frombuffer(raw, dtype="<f8", count=out_dim, offset=offset)
        offset += 8 * out_dim
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameter payload")
    return ParamSet(weights, biases)
