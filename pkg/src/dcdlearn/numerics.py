"""Dense float64 math: seeded RNG, small MLPs with explicit backward, Adam."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError

MASK64 = (1 << 64) - 1
ACTIVATIONS = ("tanh", "relu", "none")


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Rng:
    """xoshiro256** generator seeded from one 64-bit integer via splitmix64."""

    def __init__(self, seed: int = 0):
        sm = int(seed) & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s
        self._spare_normal: float | None = None

    @classmethod
    def from_state(cls, state: Sequence[int]) -> "Rng":
        rng = cls.__new__(cls)
        rng.s = [int(v) & MASK64 for v in state]
        rng._spare_normal = None
        return rng

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def integers(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def normal(self) -> float:
        """Standard normal draw (Box-Muller, second value cached)."""
        if self._spare_normal is not None:
            z, self._spare_normal = self._spare_normal, None
            return z
        u1 = 1.0 - self.random()  # (0, 1]
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, *shape: int) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        return np.array([self.normal() for _ in range(n)], dtype=np.float64).reshape(shape)

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.integers(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, items: Sequence, k: int) -> list:
        """k distinct items, order of selection preserved (partial Fisher-Yates)."""
        pool = list(items)
        if k > len(pool):
            raise ValueError("sample larger than population")
        for i in range(k):
            j = i + self.integers(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


@dataclass
class Layer:
    weight: np.ndarray  # out x in
    bias: np.ndarray  # out
    activation: str = "none"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"layer weight {self.weight.shape} and bias {self.bias.shape} do not agree"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class MlpParams:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        for k in range(len(self.layers) - 1):
            if self.layers[k].out_dim != self.layers[k + 1].in_dim:
                raise ShapeError(
                    f"layer {k} out-dim {self.layers[k].out_dim} != "
                    f"layer {k + 1} in-dim {self.layers[k + 1].in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def size(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def copy(self) -> "MlpParams":
        return copy.deepcopy(self)

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            [Layer(np.zeros_like(l.weight), np.zeros_like(l.bias), l.activation) for l in self.layers]
        )

    def flatten(self) -> np.ndarray:
        parts = []
        for l in self.layers:
            parts.append(l.weight.ravel())
            parts.append(l.bias.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def with_flat(self, flat: np.ndarray) -> "MlpParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size:
            raise ShapeError(f"flat vector has {flat.size} entries, expected {self.size}")
        layers, pos = [], 0
        for l in self.layers:
            w = flat[pos:pos + l.weight.size].reshape(l.weight.shape)
            pos += l.weight.size
            b = flat[pos:pos + l.bias.size].copy()
            pos += l.bias.size
            layers.append(Layer(w.copy(), b, l.activation))
        return MlpParams(layers)

    def equals(self, other: "MlpParams") -> bool:
        if len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation
            and np.array_equal(a.weight, b.weight)
            and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


def init_mlp(
    rng: Rng,
    dims: Sequence[int],
    activations: Sequence[str],
    zero_last: bool = False,
    last_scale: float = 1.0,
) -> MlpParams:
    """Gaussian init with std 1/sqrt(fan_in); biases start at zero."""
    if len(activations) != len(dims) - 1:
        raise ShapeError("need one activation per layer")
    layers = []
    n_layers = len(dims) - 1
    for k, act in enumerate(activations):
        fan_in, fan_out = dims[k], dims[k + 1]
        if k == n_layers - 1 and zero_last:
            w = np.zeros((fan_out, fan_in))
        else:
            w = rng.normals(fan_out, fan_in) / math.sqrt(fan_in)
            if k == n_layers - 1:
                w = w * last_scale
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(layers)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "tanh":
        return np.tanh(z)
    if act == "relu":
        return np.maximum(z, 0.0)
    return z


def _as_batch(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match in-dim {params.in_dim}")
    if not np.isfinite(x).all():
        raise NumericalError("non-finite network input")
    return x, single


def _forward_cache(params: MlpParams, x: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per layer: (layer input, pre-activation)."""
    cache = []
    h = x
    for layer in params.layers:
        z = h @ layer.weight.T + layer.bias
        cache.append((h, z))
        h = _activate(z, layer.activation)
    cache.append((h, None))
    return cache


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Apply the network to a vector or to a batch of row vectors."""
    xb, single = _as_batch(params, x)
    out = _forward_cache(params, xb)[-1][0]
    if not math.isfinite(float(out.sum())):  # any nan/inf poisons the sum
        raise NumericalError("non-finite network output")
    return out[0] if single else out


def mlp_backward(params: MlpParams, x, output_grad) -> tuple[MlpParams, np.ndarray]:
    """Gradients of the scalar whose output-gradient is ``output_grad``.

    Rows of a batch contribute additively to the parameter gradients.
    """
    xb, single = _as_batch(params, x)
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != (xb.shape[0], params.out_dim):
        raise ShapeError(f"output_grad shape {np.shape(output_grad)} does not match output")
    cache = _forward_cache(params, xb)
    grads: list[Layer] = [None] * len(params.layers)  # type: ignore[list-item]
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        h_in, z = cache[k]
        if layer.activation == "tanh":
            g = g * (1.0 - cache[k + 1][0] ** 2)
        elif layer.activation == "relu":
            g = g * (z > 0)
        grads[k] = Layer(g.T @ h_in, g.sum(axis=0), layer.activation)
        g = g @ layer.weight
    return MlpParams(grads), (g[0] if single else g)


def add_params(a: MlpParams, b: MlpParams, scale: float = 1.0) -> MlpParams:
    return MlpParams(
        [
            Layer(x.weight + scale * y.weight, x.bias + scale * y.bias, x.activation)
            for x, y in zip(a.layers, b.layers)
        ]
    )


@dataclass
class AdamState:
    m: list[list[np.ndarray]]  # per layer: [weight moment, bias moment]
    v: list[list[np.ndarray]]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        def zeros():
            return [[np.zeros_like(l.weight), np.zeros_like(l.bias)] for l in params.layers]

        return cls(m=zeros(), v=zeros(), t=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr: float) -> MlpParams:
    """One bias-corrected Adam update. Mutates ``state``; returns new params."""
    if len(grads.layers) != len(params.layers):
        raise ShapeError("gradient layer count does not match parameters")
    for k, (p, g) in enumerate(zip(params.layers, grads.layers)):
        if g.weight.shape != p.weight.shape or g.bias.shape != p.bias.shape:
            raise ShapeError(f"gradient shape mismatch at layer {k}")
        if not (np.all(np.isfinite(g.weight)) and np.all(np.isfinite(g.bias))):
            raise NumericalError(f"non-finite gradient in layer {k}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    new_layers = []
    for k, (p, g) in enumerate(zip(params.layers, grads.layers)):
        updated = []
        for j, (value, grad) in enumerate(((p.weight, g.weight), (p.bias, g.bias))):
            m = b1 * state.m[k][j] + (1.0 - b1) * grad
            v = b2 * state.v[k][j] + (1.0 - b2) * grad * grad
            state.m[k][j] = m
            state.v[k][j] = v
            updated.append(value - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_layers.append(Layer(updated[0], updated[1], p.activation))
    return MlpParams(new_layers)


def finite_diff_grad(loss_fn: Callable, params, step: float = 1e-5):
    """Central differences per coordinate.

    ``params`` may be a flat array or an MlpParams; the estimate has the
    same type. ``loss_fn`` receives the same type as ``params``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if isinstance(params, MlpParams):
        flat = params.flatten()
        est = finite_diff_grad(lambda v: loss_fn(params.with_flat(v)), flat, step)
        return params.with_flat(est)
    x = np.array(params, dtype=np.float64)
    shape = x.shape
    x = x.ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + step
        fp = loss_fn(x.reshape(shape))
        x[i] = old - step
        fm = loss_fn(x.reshape(shape))
        x[i] = old
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(shape)


def relative_error(analytic, numeric) -> float:
    """Max coordinate error scaled by the larger gradient's max magnitude."""
    a = analytic.flatten() if isinstance(analytic, MlpParams) else np.ravel(analytic)
    n = numeric.flatten() if isinstance(numeric, MlpParams) else np.ravel(numeric)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    diff = np.max(np.abs(a - n), initial=0.0)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)
