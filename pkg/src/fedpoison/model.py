"""Dense ReLU regression network with exact backpropagation and Adam.

All attacks and defenses in this package act on parameter vectors, so the
network is kept deliberately small: fully connected layers, ReLU on hidden
layers, a linear head of width 51 (17 trajectory points x 3 coordinates),
and L1 training loss. Every operation here is a pure function of its
arguments; parameters are never mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .data import Sample

OUTPUT_DIM = 51  # 17 points x (lateral, height, forward)


class NonFiniteGradientError(ValueError):
    """Raised when a gradient contains NaN or infinity."""


@dataclass(eq=False)
class ModelParams:
    """Layered weights/biases plus a canonical flat-vector view.

    ``weights[k]`` has shape (layer_sizes[k+1], layer_sizes[k]) and
    ``biases[k]`` has shape (layer_sizes[k+1],). The canonical flat order
    is layer 0 weights row-major, layer 0 bias, layer 1 weights, ...
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "ModelParams":
        return ModelParams(
            layer_sizes=tuple(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass(frozen=True)
class TrainingHyper:
    """Local-training knobs shared by honest clients and the server."""

    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.adam_beta1 < 1:
            raise ValueError(f"adam_beta1 must be in (0, 1), got {self.adam_beta1}")
        if not 0 < self.adam_beta2 < 1:
            raise ValueError(f"adam_beta2 must be in (0, 1), got {self.adam_beta2}")
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be > 0, got {self.adam_eps}")


@dataclass(eq=False)
class AdamState:
    """First/second moment estimates over the flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), t=0)


def init_model(layer_sizes: Sequence[int], seed: int) -> ModelParams:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError(f"layer_sizes needs >= 2 entries, got {sizes}")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer_sizes must be positive, got {sizes}")
    if sizes[-1] != OUTPUT_DIM:
        raise ValueError(f"output width must be {OUTPUT_DIM}, got {sizes[-1]}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(layer_sizes=sizes, weights=weights, biases=biases)


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Network output for a single input vector or a (batch, in) matrix.

    Hidden layers apply ReLU; the final layer is linear.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.ndim != 2 or a.shape[1] != params.layer_sizes[0]:
        raise ValueError(
            f"input width {x.shape[-1]} != layer_sizes[0] {params.layer_sizes[0]}"
        )
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w.T + b
        if k != last:
            np.maximum(a, 0.0, out=a)
    return a[0] if single else a


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute difference (1/n) * sum |y_i - yhat_i|."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size == 0:
        raise ValueError(f"length mismatch or empty: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def _stack_batch(batch: Sequence["Sample"]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.image for s in batch])
    y = np.stack([s.target for s in batch])
    return x, y


def backward(
    params: ModelParams, batch: Sequence["Sample"], loss_sign: int = 1
) -> np.ndarray:
    """Exact gradient of the mean batch L1 loss (times loss_sign), flat.

    The subgradient of |.| at 0 is taken as 0, so a batch predicted exactly
    yields a zero gradient. ``loss_sign=-1`` turns descent into ascent.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if loss_sign not in (1, -1):
        raise ValueError(f"loss_sign must be +1 or -1, got {loss_sign}")
    x, y = _stack_batch(batch)

    # Forward pass, caching post-activations and ReLU masks.
    last = len(params.weights) - 1
    acts = [x]
    masks = []
    a = x
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        if k != last:
            mask = z > 0
            masks.append(mask)
            a = np.where(mask, z, 0.0)
        else:
            a = z
        acts.append(a)

    n_batch, n_out = a.shape
    delta = loss_sign * np.sign(a - y) / (n_out * n_batch)

    grads: list[np.ndarray | None] = [None] * len(params.weights)
    for k in range(last, -1, -1):
        gw = delta.T @ acts[k]
        gb = delta.sum(axis=0)
        grads[k] = np.concatenate([gw.ravel(), gb])
        if k > 0:
            delta = (delta @ params.weights[k]) * masks[k - 1]
    return np.concatenate(grads)


def adam_step(
    params: ModelParams,
    state: AdamState,
    gradient: np.ndarray,
    hyper: TrainingHyper,
) -> tuple[ModelParams, AdamState]:
    """One Adam update with bias correction; returns new params and state."""
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != (params.n_params,):
        raise ValueError(f"gradient length {g.shape} != ({params.n_params},)")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError("gradient contains non-finite entries")
    t = state.t + 1
    m = hyper.adam_beta1 * state.m + (1 - hyper.adam_beta1) * g
    v = hyper.adam_beta2 * state.v + (1 - hyper.adam_beta2) * g * g
    m_hat = m / (1 - hyper.adam_beta1**t)
    v_hat = v / (1 - hyper.adam_beta2**t)
    theta = flatten(params) - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.adam_eps)
    return unflatten(theta, params.layer_sizes), AdamState(m=m, v=v, t=t)


def train(
    start: ModelParams,
    data: Sequence["Sample"],
    hyper: TrainingHyper,
    seed: int,
    loss_sign: int = 1,
) -> ModelParams:
    """Mini-batch Adam on L1 loss with seeded per-epoch shuffling.

    Optimizer state is fresh for every call: clients do not persist Adam
    moments across federation rounds.
    """
    if len(data) == 0:
        raise ValueError("empty training data")
    params = start
    state = AdamState.zeros(start.n_params)
    rng = np.random.default_rng(seed)
    order = np.arange(len(data))
    for _ in range(hyper.epochs):
        rng.shuffle(order)
        for lo in range(0, len(order), hyper.batch_size):
            batch = [data[i] for i in order[lo : lo + hyper.batch_size]]
            grad = backward(params, batch, loss_sign)
            params, state = adam_step(params, state, grad, hyper)
    return params


def train_honest(
    start: ModelParams, data: Sequence["Sample"], hyper: TrainingHyper, seed: int
) -> ModelParams:
    """Honest local training: gradient descent on the client's own data."""
    return train(start, data, hyper, seed, loss_sign=1)


def flatten(params: ModelParams) -> np.ndarray:
    """Canonical flat view: per layer, row-major weights then bias."""
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(flat: np.ndarray, layer_sizes: Sequence[int]) -> ModelParams:
    """Inverse of :func:`flatten` for the given layer sizes."""
    flat = np.asarray(flat, dtype=np.float64)
    sizes = tuple(int(s) for s in layer_sizes)
    total = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
    if flat.shape != (total,):
        raise ValueError(f"flat length {flat.shape} != ({total},) for {sizes}")
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in).copy())
        pos += fan_out * fan_in
        biases.append(flat[pos : pos + fan_out].copy())
        pos += fan_out
    return ModelParams(layer_sizes=sizes, weights=weights, biases=biases)


def params_mse(a: ModelParams, b: ModelParams) -> float:
    """Mean squared difference over all scalars of two same-shaped models."""
    if tuple(a.layer_sizes) != tuple(b.layer_sizes):
        raise ValueError(f"layer_sizes mismatch: {a.layer_sizes} vs {b.layer_sizes}")
    d = flatten(a) - flatten(b)
    return float(np.mean(d * d))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|), defined as 0 when either norm is 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
