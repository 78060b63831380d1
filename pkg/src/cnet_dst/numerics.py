"""Dense float64 tensors with a reverse-mode gradient tape, plus Adam and gradient checking.

Every operation on :class:`Tensor` records a node holding its parents and a
closure that maps the output gradient to parent gradients.  ``backward``
walks the recorded graph once in reverse topological order.  Arrays are numpy
``float64`` throughout.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, GradCheckError, StructureError, TrainingError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (used for inference and finite differences)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise StructureError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


TensorLike = Union[Tensor, np.ndarray, float, Sequence[float]]


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementary operations


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product for 1-D and 2-D operands (no batching)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise StructureError("matmul supports 1-D and 2-D operands only")
    if a.shape[-1] != b.shape[0]:
        raise StructureError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        A, B = a.data, b.data
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:  # matrix @ vector
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:  # vector @ matrix
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return Tensor._from_op(a.data @ b.data, (a, b), backward)


def linear(x: TensorLike, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ W.T + b`` for a vector or a batch of row vectors."""
    x = as_tensor(x)
    if x.shape[-1] != W.shape[1]:
        raise StructureError(f"linear: input dim {x.shape[-1]} does not match weight {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise StructureError(f"linear: bias shape {b.shape} does not match weight {W.shape}")
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        gx = g @ W.data
        gW = np.outer(g, x.data) if x.data.ndim == 1 else g.T @ x.data
        if b is None:
            return gx, gW
        gb = g if g.ndim == 1 else g.sum(axis=0)
        return gx, gW, gb

    parents = (x, W) if b is None else (x, W, b)
    return Tensor._from_op(out, parents, backward)


def take_rows(x: Tensor, index) -> Tensor:
    """Gather rows ``x[index]`` (embedding lookup, snapshot selection)."""
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return Tensor._from_op(x.data[index], (x,), backward)


def stack(rows: Sequence[TensorLike]) -> Tensor:
    rows = [as_tensor(r) for r in rows]
    if not rows:
        raise StructureError("stack of zero tensors")
    return Tensor._from_op(
        np.stack([r.data for r in rows]), tuple(rows),
        lambda g: tuple(g[i] for i in range(len(rows))),
    )


def tensor_sum(x: Tensor) -> Tensor:
    return Tensor._from_op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def scale(x: Tensor, c: float) -> Tensor:
    return Tensor._from_op(x.data * c, (x,), lambda g: (g * c,))


# --------------------------------------------------------------------------
# activations


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(x: Tensor) -> Tensor:
    y = sigmoid_array(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,))


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def apply_activation(x: TensorLike, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}") from None
    return fn(as_tensor(x))


def softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: TensorLike) -> Tensor:
    """Softmax along the last axis (row-wise for matrices)."""
    x = as_tensor(x)
    y = softmax_array(x.data)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(y, (x,), backward)


# --------------------------------------------------------------------------
# losses and regularizers

PROB_EPS = 1e-12


def cross_entropy(probs: Tensor, gold) -> Tensor:
    """``-log(probs[gold] + 1e-12)``; for a matrix of row distributions the row losses are summed."""
    gold_arr = np.asarray(gold, dtype=np.intp)
    n = probs.shape[-1]
    if np.any(gold_arr < 0) or np.any(gold_arr >= n):
        raise StructureError(f"gold index {gold} out of range for {n} classes")
    if probs.data.ndim == 1:
        if gold_arr.ndim != 0:
            raise StructureError("vector probabilities need a scalar gold index")
        rows = ()
        picked = probs.data[gold_arr]
    else:
        if gold_arr.shape != (probs.shape[0],):
            raise StructureError("one gold index per probability row required")
        rows = np.arange(probs.shape[0])
        picked = probs.data[rows, gold_arr]
    loss = -np.log(picked + PROB_EPS).sum()

    def backward(g):
        gp = np.zeros_like(probs.data)
        if probs.data.ndim == 1:
            gp[gold_arr] = -g / (picked + PROB_EPS)
        else:
            gp[rows, gold_arr] = -g / (picked + PROB_EPS)
        return (gp,)

    return Tensor._from_op(np.asarray(loss), (probs,), backward)


def binary_cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Summed ``softplus(z) - y*z``, the stable form of sigmoid + binary cross-entropy."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise StructureError(f"targets shape {y.shape} does not match logits {logits.shape}")
    z = logits.data
    loss = (np.logaddexp(0.0, z) - y * z).sum()
    return Tensor._from_op(
        np.asarray(loss), (logits,), lambda g: (g * (sigmoid_array(z) - y),)
    )


def l2_penalty(params: Sequence[Tensor], lam: float) -> Tensor:
    """``lam * sum ||W||^2``; callers pass only the weight matrices that should be penalized."""
    if lam < 0:
        raise ConfigError("l2 coefficient must be non-negative")
    params = list(params)
    total = lam * sum(float(np.sum(p.data * p.data)) for p in params)
    return Tensor._from_op(
        np.asarray(total), tuple(params),
        lambda g: tuple(2.0 * lam * g * p.data for p in params),
    )


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` so inference is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,))


# --------------------------------------------------------------------------
# randomness and initialization


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``seed`` and an optional sub-stream path."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def glorot_uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState) -> None:
    """One bias-corrected Adam update, in place.  ``None`` gradients count as zero."""
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(grads) != len(params) or len(state.first_moment) != len(params):
        raise StructureError("params, grads and optimizer state are misaligned")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is not None:
            if g.shape != p.shape:
                raise StructureError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {p.name or i}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = 0.0
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(learning_rate=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, grad_scale: float = 1.0):
        grads = [None if p.grad is None else p.grad * grad_scale for p in self.params]
        adam_step(self.params, grads, self.state)


# --------------------------------------------------------------------------
# gradient checking


def _named(params) -> dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {(p.name or f"param{i}"): p for i, p in enumerate(params)}


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


@dataclass
class GradCheckResult:
    """Per-parameter comparison of tape and central-difference gradients.

    ``noise_floor`` estimates the finite-difference error caused by rounding
    the loss value itself (``eps * |f| / step``).  ``resolved_rel_error`` only
    looks at coordinates whose gradient is at least ``1e4 * noise_floor``,
    where a 1e-4 relative agreement is achievable at all.
    """

    loss: float
    step: float
    rel_error: dict[str, float]
    abs_error: dict[str, float]
    resolved_rel_error: dict[str, float]

    @property
    def noise_floor(self) -> float:
        return float(np.finfo(np.float64).eps * abs(self.loss) / self.step)

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_error.values(), default=0.0)


def grad_check_details(loss_fn: Callable[[], Tensor], params, step: float = 1e-4) -> GradCheckResult:
    if step <= 0:
        raise ConfigError("finite-difference step must be positive")
    named = _named(params)
    with no_grad():
        f0 = float(loss_fn().data)
        if float(loss_fn().data) != f0:
            raise GradCheckError("loss function is not deterministic")
    for p in named.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    resolvable = 1e4 * np.finfo(np.float64).eps * abs(f0) / step
    rel, absolute, resolved = {}, {}, {}
    with no_grad():
        for name, p in named.items():
            analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(loss_fn().data)
                flat[i] = orig - step
                fm = float(loss_fn().data)
                flat[i] = orig
                numeric.reshape(-1)[i] = (fp - fm) / (2.0 * step)
            if not p.data.size:
                rel[name] = absolute[name] = resolved[name] = 0.0
                continue
            err = relative_error(analytic, numeric)
            big = np.maximum(np.abs(analytic), np.abs(numeric)) >= resolvable
            rel[name] = float(err.max())
            absolute[name] = float(np.abs(analytic - numeric).max())
            resolved[name] = float(err[big].max()) if big.any() else 0.0
    return GradCheckResult(f0, step, rel, absolute, resolved)


def grad_check_report(loss_fn: Callable[[], Tensor], params, step: float = 1e-4) -> dict[str, float]:
    """Max relative error between tape and central-difference gradients, per parameter."""
    return grad_check_details(loss_fn, params, step).rel_error


def grad_check(loss_fn: Callable[[], Tensor], params, step: float = 1e-4) -> float:
    report = grad_check_report(loss_fn, params, step)
    return max(report.values(), default=0.0)
