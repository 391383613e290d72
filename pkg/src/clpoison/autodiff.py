"""Reverse-mode automatic differentiation over a small, closed operation set.

Every operation accepts plain float64 ndarrays, `Var` nodes, or a mix. With
ndarray-only arguments it computes the plain numpy result (no graph); as soon
as a `Var` is involved the operation records itself on the tape so that
`backward` can accumulate gradients. Model code is therefore written once and
used both for training (Var inputs) and fast inference (ndarray inputs).

Supported set: affine maps (add/sub/mul/matmul/affine), element-wise
nonlinearities (relu/sigmoid/exp/square), sum/mean reductions,
softmax cross-entropy, binary cross-entropy on logits, and Gaussian KL
(composed from the primitives). Anything else cannot be expressed against
a `Var`, so unsupported expressions fail at construction time.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .params import ParamSet


class NumericFailure(FloatingPointError):
    """An operation produced a non-finite value; carries the op name."""


def _finite_or_raise(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NumericFailure(f"non-finite value produced by op '{op}'")
    return value


class Var:
    """One node of the gradient tape: a float64 array plus backward wiring."""

    __slots__ = ("value", "grad", "_parents", "_vjp", "op")

    def __init__(
        self,
        value: np.ndarray,
        parents: Sequence["Var"] = (),
        vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        op: str = "leaf",
    ):
        self.value = _finite_or_raise(np.asarray(value, dtype=np.float64), op)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._vjp = vjp
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    # Arithmetic sugar so tape code reads like numpy code.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _is_var(x) -> bool:
    return isinstance(x, Var)


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=np.float64), op="const")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce *grad* back to *shape* after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    if not (_is_var(a) or _is_var(b)):
        return _finite_or_raise(_val(a) + _val(b), "add")
    a, b = _as_var(a), _as_var(b)
    return Var(
        a.value + b.value,
        parents=(a, b),
        vjp=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        op="add",
    )


def sub(a, b):
    if not (_is_var(a) or _is_var(b)):
        return _finite_or_raise(_val(a) - _val(b), "sub")
    a, b = _as_var(a), _as_var(b)
    return Var(
        a.value - b.value,
        parents=(a, b),
        vjp=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        op="sub",
    )


def mul(a, b):
    if not (_is_var(a) or _is_var(b)):
        return _finite_or_raise(_val(a) * _val(b), "mul")
    a, b = _as_var(a), _as_var(b)
    return Var(
        a.value * b.value,
        parents=(a, b),
        vjp=lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
        op="mul",
    )


def matmul(a, b):
    if not (_is_var(a) or _is_var(b)):
        return _finite_or_raise(_val(a) @ _val(b), "matmul")
    a, b = _as_var(a), _as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    return Var(
        a.value @ b.value,
        parents=(a, b),
        vjp=lambda g: (g @ b.value.T, a.value.T @ g),
        op="matmul",
    )


def affine(x, w, b):
    """x @ w + b with bias broadcast over rows."""
    return add(matmul(x, w), b)


def relu(x):
    if not _is_var(x):
        return np.maximum(_val(x), 0.0)
    mask = x.value > 0
    return Var(
        np.where(mask, x.value, 0.0),
        parents=(x,),
        vjp=lambda g: (g * mask,),
        op="relu",
    )


def sigmoid(x):
    if not _is_var(x):
        return _finite_or_raise(_sigmoid_np(_val(x)), "sigmoid")
    s = _sigmoid_np(x.value)
    return Var(s, parents=(x,), vjp=lambda g: (g * s * (1.0 - s),), op="sigmoid")


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def exp(x):
    with np.errstate(over="ignore"):  # overflow becomes an explicit NumericFailure
        if not _is_var(x):
            return _finite_or_raise(np.exp(_val(x)), "exp")
        e = _finite_or_raise(np.exp(x.value), "exp")
    return Var(e, parents=(x,), vjp=lambda g: (g * e,), op="exp")


def square(x):
    return mul(x, x)


def vsum(x, axis: int | None = None):
    """Sum reduction, optionally along one axis."""
    if not _is_var(x):
        return _finite_or_raise(_val(x).sum(axis=axis), "sum")
    shape = x.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Var(x.value.sum(axis=axis), parents=(x,), vjp=vjp, op="sum")


def vmean(x, axis: int | None = None):
    """Mean reduction, optionally along one axis."""
    n = _val(x).size if axis is None else _val(x).shape[axis]
    return mul(vsum(x, axis=axis), 1.0 / n)


def softmax_cross_entropy(logits, targets, active: np.ndarray | None = None):
    """Mean cross-entropy between softmax(logits) and targets.

    targets: int vector of hard labels, or a (batch, classes) row-stochastic
    array of soft targets. `active` optionally restricts the softmax support
    to a boolean subset of classes (inactive logits act as -inf).
    """
    logits_val = _val(logits)
    if logits_val.ndim != 2:
        raise ValueError(f"logits must be 2-D (batch, classes), got {logits_val.shape}")
    n, k = logits_val.shape
    if active is None:
        active = np.ones(k, dtype=bool)
    else:
        active = np.asarray(active, dtype=bool)
        if active.shape != (k,) or not active.any():
            raise ValueError("active mask must be a nonempty boolean vector over classes")

    targets_arr = np.asarray(targets)
    if targets_arr.ndim == 1 and np.issubdtype(targets_arr.dtype, np.integer):
        labels = targets_arr
        if labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got shape {labels.shape}")
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
            raise ValueError(f"label out of range for {k} classes")
        if not active[labels].all():
            raise ValueError("hard label refers to an inactive class")
        target_rows = np.zeros((n, k))
        target_rows[np.arange(n), labels] = 1.0
    else:
        target_rows = np.asarray(targets_arr, dtype=np.float64)
        if target_rows.shape != (n, k):
            raise ValueError(f"soft targets must have shape {(n, k)}, got {target_rows.shape}")
        if np.abs(target_rows[:, ~active]).max(initial=0.0) > 1e-9:
            raise ValueError("soft targets place mass on inactive classes")

    masked = np.where(active, logits_val, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    shifted = masked - m
    expz = np.where(active, np.exp(shifted), 0.0)
    sumexp = expz.sum(axis=1, keepdims=True)
    log_softmax = shifted - np.log(sumexp)
    per_sample = -(target_rows * np.where(active, log_softmax, 0.0)).sum(axis=1)
    loss_val = per_sample.mean()

    if not _is_var(logits):
        return _finite_or_raise(np.asarray(loss_val), "softmax_cross_entropy")

    probs = expz / sumexp

    def vjp(g):
        grad = (probs - target_rows) / n
        grad[:, ~active] = 0.0
        return (g * grad,)

    return Var(np.asarray(loss_val), parents=(logits,), vjp=vjp, op="softmax_cross_entropy")


def binary_cross_entropy_logits(logits, targets):
    """Mean over batch of the per-sample summed Bernoulli cross-entropy.

    `targets` values must lie in [0, 1]. Computed from logits for stability.
    """
    z = _val(logits)
    t = np.asarray(_val(targets), dtype=np.float64)
    if z.shape != t.shape or z.ndim != 2:
        raise ValueError(f"logits/targets must share a 2-D shape, got {z.shape} vs {t.shape}")
    if t.min(initial=0.0) < 0.0 or t.max(initial=0.0) > 1.0:
        raise ValueError("targets must lie in [0, 1]")
    n = z.shape[0]
    per_elem = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    loss_val = per_elem.sum(axis=1).mean()

    if not _is_var(logits):
        return _finite_or_raise(np.asarray(loss_val), "binary_cross_entropy_logits")

    def vjp(g):
        return (g * (_sigmoid_np(z) - t) / n,)

    return Var(
        np.asarray(loss_val),
        parents=(logits,),
        vjp=vjp,
        op="binary_cross_entropy_logits",
    )


def gaussian_kl(mu, logvar):
    """Mean over batch of KL(N(mu, diag exp(logvar)) || N(0, I)).

    Composed from primitives so its gradient comes from the tape itself.
    """
    inner = sub(add(square(mu), exp(logvar)), add(logvar, 1.0))
    return mul(vmean(vsum(inner, axis=1)), 0.5)


def backward(loss: Var) -> None:
    """Accumulate gradients of a scalar *loss* into every reachable Var."""
    if loss.value.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")

    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones(())
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros(parent.shape)
            parent.grad = parent.grad + g


def forward_backward(params: ParamSet, loss_fn: Callable[[dict[str, Var]], Var]) -> tuple[float, ParamSet]:
    """Run *loss_fn* over tape-wrapped *params*; return (loss, gradients).

    `loss_fn` receives a dict name -> Var (inputs are closed over) and must
    return a scalar Var built from the supported operations. Gradients come
    back as a ParamSet aligned with *params*; parameters the loss never
    touches get zero gradients.
    """
    leaves = {name: Var(value, op="param") for name, value in params.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, Var):
        raise TypeError("loss_fn must return a Var built from supported ops")
    backward(loss)
    grads = ParamSet({
        name: leaves[name].grad if leaves[name].grad is not None else np.zeros_like(value)
        for name, value in params.items()
    })
    return float(loss.value), grads


def grad_check(
    loss_fn: Callable[[dict[str, Var]], Var],
    params: ParamSet,
    step: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences."""
    if step <= 0:
        raise ValueError("step must be positive")
    _, grads = forward_backward(params, loss_fn)
    analytic = grads.flatten()
    flat = params.flatten()

    def eval_at(vec: np.ndarray) -> float:
        loss = loss_fn({n: t for n, t in params.unflatten(vec).items()})
        return float(_val(loss))

    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        hi = eval_at(bumped)
        bumped[i] = flat[i] - step
        lo = eval_at(bumped)
        numeric[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))
