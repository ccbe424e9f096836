"""Small fully connected network with hand-written backprop, Huber loss,
softmax head, Adam/SGD and a finite-difference gradient checker.

All parameters of an :class:`Mlp` live in one flat float64 vector; the
per-layer weight matrices and bias vectors are views into it. Gradients use
the same layout, so optimizers work on a single array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

HEADS = ("identity", "softmax")
LOG_PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


def _layout(layer_dims: Sequence[int]) -> list[tuple[slice, tuple[int, int], slice]]:
    spans, offset = [], 0
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        w = slice(offset, offset + fan_in * fan_out)
        offset += fan_in * fan_out
        b = slice(offset, offset + fan_out)
        offset += fan_out
        spans.append((w, (fan_in, fan_out), b))
    return spans


def n_params(layer_dims: Sequence[int]) -> int:
    return sum(i * o + o for i, o in zip(layer_dims[:-1], layer_dims[1:]))


class ParamVector:
    """Flat parameter storage exposing ``(W, b)`` views per layer."""

    def __init__(self, layer_dims: Sequence[int], flat: np.ndarray | None = None):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ShapeError(f"bad layer dims {layer_dims}")
        size = n_params(self.layer_dims)
        if flat is None:
            flat = np.zeros(size)
        flat = np.ascontiguousarray(flat)
        if not np.issubdtype(flat.dtype, np.floating):
            flat = flat.astype(float)
        if flat.shape != (size,):
            raise ShapeError(f"expected {size} parameters, got shape {flat.shape}")
        self.flat = flat
        self.layers = [(flat[w].reshape(shape), flat[b]) for w, shape, b in _layout(self.layer_dims)]

    def tensors(self) -> list[np.ndarray]:
        return [t for pair in self.layers for t in pair]


class GradientBundle(ParamVector):
    """Gradients shaped like the parameters of the network they belong to."""


class Mlp(ParamVector):
    """ReLU hidden layers, identity or softmax output."""

    def __init__(self, layer_dims: Sequence[int], head: str = "identity", flat: np.ndarray | None = None):
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        super().__init__(layer_dims, flat)
        self.head = head

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> Mlp:
        return Mlp(self.layer_dims, self.head, self.flat.copy())

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def init_mlp(layer_dims: Sequence[int], head: str, rng: np.random.Generator) -> Mlp:
    """Uniform He-style initialization, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    net = Mlp(layer_dims, head)
    for W, _ in net.layers:
        limit = np.sqrt(6.0 / W.shape[0])
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return net


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    x: np.ndarray
    activations: list[np.ndarray] = field(default_factory=list)  # post-ReLU hidden outputs
    logits: np.ndarray | None = None
    output: np.ndarray | None = None


def forward_cache(net: Mlp, x) -> ForwardCache:
    x = np.asarray(x, dtype=net.flat.dtype)
    if x.shape[-1] != net.n_inputs or x.ndim > 2:
        raise ShapeError(f"input shape {x.shape} does not match {net.n_inputs} features")
    cache = ForwardCache(x)
    a = x
    last = len(net.layers) - 1
    for i, (W, b) in enumerate(net.layers):
        z = a @ W + b
        if i < last:
            a = np.maximum(z, 0.0)
            cache.activations.append(a)
        else:
            cache.logits = z
    cache.output = softmax(cache.logits) if net.head == "softmax" else cache.logits
    return cache


def forward(net: Mlp, x) -> np.ndarray:
    """Network output for one input vector or a batch of row vectors."""
    return forward_cache(net, x).output


def backward(
    net: Mlp,
    cache: ForwardCache,
    grad_output,
    *,
    wrt_logits: bool = False,
    out: GradientBundle | None = None,
) -> GradientBundle:
    """Reverse-mode gradient of a loss w.r.t. every parameter.

    ``grad_output`` is dLoss/d(output) as returned by :func:`forward`, or
    dLoss/d(logits) when ``wrt_logits`` is set (identical for the identity
    head). Batched inputs accumulate gradients over rows. ``out`` is an
    optional buffer that is overwritten and returned.
    """
    delta = np.asarray(grad_output, dtype=float)
    if delta.shape != cache.logits.shape:
        raise ShapeError(f"upstream gradient shape {delta.shape} != output shape {cache.logits.shape}")
    if net.head == "softmax" and not wrt_logits:
        p = cache.output
        delta = p * (delta - np.sum(delta * p, axis=-1, keepdims=True))
    grads = out if out is not None else GradientBundle(net.layer_dims)
    inputs = [cache.x, *cache.activations]
    for i in range(len(net.layers) - 1, -1, -1):
        W, _ = net.layers[i]
        gW, gb = grads.layers[i]
        a_in = inputs[i]
        if delta.ndim == 1:
            np.outer(a_in, delta, out=gW)
            gb[...] = delta
        else:
            np.matmul(a_in.T, delta, out=gW)
            gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W.T) * (inputs[i] > 0)
    return grads


def huber(prediction, target, delta: float = 1.0):
    e = np.asarray(prediction) - np.asarray(target)
    ae = np.abs(e)
    out = np.where(ae <= delta, 0.5 * e * e, delta * (ae - 0.5 * delta))
    return out[()]


def huber_grad(prediction, target, delta: float = 1.0):
    """d huber / d prediction."""
    e = np.asarray(prediction, dtype=float) - np.asarray(target, dtype=float)
    out = np.clip(e, -delta, delta)
    return float(out) if out.ndim == 0 else out


# -- losses used by the agents and by grad_check -----------------------------


class HuberQLoss:
    """Huber loss between the chosen-action outputs and fixed targets (summed over rows)."""

    wrt_logits = False

    def __init__(self, actions, targets):
        self.actions = np.atleast_1d(np.asarray(actions, dtype=int))
        self.targets = np.atleast_1d(np.asarray(targets, dtype=float))

    def _picked(self, out: np.ndarray) -> np.ndarray:
        out = np.atleast_2d(out)
        return out[np.arange(len(self.actions)), self.actions]

    def value(self, out: np.ndarray):
        return np.sum(huber(self._picked(out), self.targets))

    def grad(self, out: np.ndarray) -> np.ndarray:
        g = np.zeros_like(np.atleast_2d(out))
        g[np.arange(len(self.actions)), self.actions] = huber_grad(self._picked(out), self.targets)
        return g.reshape(np.shape(out))


class ReinforceLoss:
    """``-(1/T) * sum_t G_t * ln pi(a_t | s_t)`` on a softmax head; gradient taken w.r.t. logits."""

    wrt_logits = True

    def __init__(self, actions, returns):
        self.actions = np.atleast_1d(np.asarray(actions, dtype=int))
        self.returns = np.atleast_1d(np.asarray(returns, dtype=float))

    def value(self, probs: np.ndarray):
        probs = np.atleast_2d(probs)
        picked = probs[np.arange(len(self.actions)), self.actions]
        return -np.mean(self.returns * np.log(np.maximum(picked, LOG_PROB_FLOOR)))

    def grad(self, probs: np.ndarray) -> np.ndarray:
        p2 = np.atleast_2d(probs)
        rows = np.arange(len(self.actions))
        onehot = np.zeros_like(p2)
        onehot[rows, self.actions] = 1.0
        weight = self.returns / len(self.actions)
        # below the floor ln(pi) is constant, so no gradient flows
        weight = np.where(p2[rows, self.actions] > LOG_PROB_FLOOR, weight, 0.0)
        return ((p2 - onehot) * weight[:, None]).reshape(np.shape(probs))


class SquaredLoss:
    """``0.5 * ||out - target||^2``."""

    wrt_logits = False

    def __init__(self, target):
        self.target = np.asarray(target, dtype=float)

    def value(self, out: np.ndarray):
        return 0.5 * np.sum((out - self.target) ** 2)

    def grad(self, out: np.ndarray) -> np.ndarray:
        return out - self.target


def loss_and_grad(net: Mlp, x, loss) -> tuple[float, GradientBundle]:
    cache = forward_cache(net, x)
    return float(loss.value(cache.output)), backward(net, cache, loss.grad(cache.output), wrt_logits=loss.wrt_logits)


# -- optimizers ----------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    timestep: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def make_optimizer(kind: str, learning_rate: float, net: Mlp) -> OptimizerState:
    opt = OptimizerState(kind, learning_rate)
    if kind == "adam":
        opt.m = np.zeros_like(net.flat)
        opt.v = np.zeros_like(net.flat)
    return opt


def apply_update(net: Mlp, grads: GradientBundle | np.ndarray, opt: OptimizerState) -> None:
    """In-place SGD or bias-corrected Adam step on ``net``."""
    g = grads.flat if isinstance(grads, ParamVector) else np.asarray(grads, dtype=float)
    if g.shape != net.flat.shape:
        raise ShapeError("gradient does not match parameter layout")
    if opt.kind == "sgd":
        net.flat -= opt.learning_rate * g
        return
    if opt.m is None:
        opt.m = np.zeros_like(net.flat)
        opt.v = np.zeros_like(net.flat)
    opt.timestep += 1
    t = opt.timestep
    opt.m *= opt.beta1
    opt.m += (1.0 - opt.beta1) * g
    opt.v *= opt.beta2
    opt.v += (1.0 - opt.beta2) * (g * g)
    # lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded into scalars
    root = math.sqrt(1.0 - opt.beta2**t)
    buf = np.sqrt(opt.v)
    buf += opt.eps * root
    np.divide(opt.m, buf, out=buf)
    buf *= opt.learning_rate * root / (1.0 - opt.beta1**t)
    net.flat -= buf


# -- gradient checking -----------------------------------------------------------


def grad_check(
    net: Mlp,
    x,
    loss,
    step: float = 1e-5,
    grad_fn: Callable[[Mlp, np.ndarray, object], np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The finite differences are evaluated in extended precision so that
    rounding noise does not swamp very small gradient entries. ``grad_fn``
    substitutes the analytic gradient (used to test the checker).
    """
    x = np.asarray(x, dtype=float)
    analytic = grad_fn(net, x, loss) if grad_fn is not None else loss_and_grad(net, x, loss)[1].flat
    probe = Mlp(net.layer_dims, net.head, net.flat.astype(np.longdouble))
    xl = x.astype(np.longdouble)
    h = np.longdouble(step)
    numeric = np.empty(len(probe.flat), dtype=np.longdouble)
    for i in range(len(probe.flat)):
        orig = probe.flat[i]
        probe.flat[i] = orig + h
        up = loss.value(forward(probe, xl))
        probe.flat[i] = orig - h
        down = loss.value(forward(probe, xl))
        probe.flat[i] = orig
        numeric[i] = (up - down) / (2 * h)
    numeric = numeric.astype(float)
    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(rel.max())


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(net: Mlp, path: str | Path) -> None:
    """Text checkpoint: a header line, then one row-major tensor per line."""
    lines = [f"mlp dims={','.join(map(str, net.layer_dims))} head={net.head}"]
    names = [name for i in range(len(net.layers)) for name in (f"W{i + 1}", f"b{i + 1}")]
    for name, tensor in zip(names, net.tensors()):
        shape = "x".join(map(str, tensor.shape))
        values = " ".join(f"{v:.17g}" for v in tensor.ravel())
        lines.append(f"{name} {shape} {values}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> Mlp:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("mlp "):
        raise ValueError(f"{path}: not an mlp checkpoint")
    meta = dict(item.split("=", 1) for item in lines[0].split()[1:])
    net = Mlp([int(d) for d in meta["dims"].split(",")], meta["head"])
    tensors = net.tensors()
    if len(lines) - 1 != len(tensors):
        raise ValueError(f"{path}: expected {len(tensors)} tensors, found {len(lines) - 1}")
    for line, tensor in zip(lines[1:], tensors):
        _, shape, *values = line.split()
        if tuple(int(s) for s in shape.split("x")) != tensor.shape:
            raise ValueError(f"{path}: tensor shape mismatch in line {line[:20]!r}")
        tensor[...] = np.array([float(v) for v in values]).reshape(tensor.shape)
    return net
