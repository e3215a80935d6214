"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Graphs are rebuilt
per forward pass; node ids increase monotonically, so sorting reachable nodes
by id gives a valid topological order.

Broadcasting is deliberately absent except for python-scalar operands.  Where
a row vector must be combined with a batch, use an explicit op such as
:func:`linear` (affine map with bias) or :func:`expand`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "elementwise",
    "matmul",
    "linear",
    "affine",
    "softmax",
    "log_softmax",
    "sum",
    "mean",
    "concat",
    "stack",
    "reshape",
    "embed",
    "pick",
    "weighted_sum",
    "expand",
    "window_conv",
    "masked_fill",
    "backward",
    "graph_nodes",
    "grad_check",
    "GradCheckReport",
]

_ids = itertools.count()

Scalar = Union[int, float]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(ArithmeticError):
    """A non-finite value reached an operation that requires finite input."""


class Tensor:
    """A node in a dynamically built computation graph.

    ``value`` holds the float64 data and ``grad`` the accumulated derivative of
    the last backward root.  Tensors created by operations keep references to
    their parents only when some parent requires a gradient.
    """

    __slots__ = ("value", "_grad", "requires_grad", "id", "op", "parents", "_backward", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf", parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self._grad = None
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.op = op
        self.parents = parents
        self._backward = backward_fn

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g) -> None:
        g = np.asarray(g, dtype=np.float64)
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match value shape {self.value.shape}")
        self._grad = g

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(value, requires_grad: bool = False) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, requires_grad=requires_grad)


def _node(value: np.ndarray, parents: Tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, op, parents, backward_fn)
    return Tensor(value, False, op)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.value + c, (a,), lambda g: (g,), "add_scalar")
    _same_shape(a, b, "add")
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _same_shape(a, b, "sub")
    return _node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.value * c, (a,), lambda g: (g * c,), "mul_scalar")
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def neg(a: Tensor) -> Tensor:
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.value)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return _node(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.value
    if np.any(x <= 0):
        raise NumericError(f"log: non-positive input (min {x.min():g})")
    return _node(np.log(x), (a,), lambda g: (g / x,), "log")


_ELEMENTWISE = {"tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log, "neg": neg,
                "add": add, "sub": sub, "mul": mul}


def elementwise(f: str, *args) -> Tensor:
    """Dispatch a pointwise operation by name (``tanh``, ``sigmoid``, ``mul``, ...)."""
    try:
        fn = _ELEMENTWISE[f]
    except KeyError:
        raise ValueError(f"unknown elementwise op {f!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b``.

    ``b`` must be a matrix ``[k, n]`` or a vector ``[k]``; ``a`` may carry any
    number of leading dimensions ``[..., k]``.
    """
    av, bv = a.value, b.value
    if bv.ndim not in (1, 2) or av.ndim < 1 or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    k = bv.shape[0]
    if bv.ndim == 2:
        n = bv.shape[1]

        def back(g):
            return g @ bv.T, av.reshape(-1, k).T @ g.reshape(-1, n)
    else:

        def back(g):
            return g[..., None] * bv, av.reshape(-1, k).T @ g.reshape(-1)

    return _node(av @ bv, (a, b), back, "matmul")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ w.T + b`` applied to the last axis of ``x``.

    ``w`` is ``[out, in]`` as in the column-vector convention ``W x``; the bias
    (if any) is added to every leading position.
    """
    xv, wv = x.value, w.value
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[1]:
        raise ShapeError(f"linear: input {xv.shape} incompatible with weight {wv.shape}")
    out = xv @ wv.T
    n_in, n_out = wv.shape[1], wv.shape[0]
    if b is None:

        def back(g):
            return g @ wv, g.reshape(-1, n_out).T @ xv.reshape(-1, n_in)

        return _node(out, (x, w), back, "linear")
    if b.value.shape != (n_out,):
        raise ShapeError(f"linear: bias {b.value.shape} incompatible with weight {wv.shape}")

    def back_b(g):
        g2 = g.reshape(-1, n_out)
        return g @ wv, g2.T @ xv.reshape(-1, n_in), g2.sum(axis=0)

    return _node(out + b.value, (x, w, b), back_b, "linear")


def affine(terms: Sequence[Tuple[Tensor, Tensor]], b: Optional[Tensor] = None) -> Tensor:
    """``sum_k x_k @ w_k.T + b`` for several ``(x_k, w_k)`` pairs sharing an output width.

    Equivalent to adding separate :func:`linear` results; one graph node keeps
    recurrent gates cheap.
    """
    xs = [x.value for x, _ in terms]
    ws = [w.value for _, w in terms]
    n_out = ws[0].shape[0]
    for xv, wv in zip(xs, ws):
        if wv.ndim != 2 or wv.shape[0] != n_out or xv.shape[-1] != wv.shape[1] or xv.shape[:-1] != xs[0].shape[:-1]:
            raise ShapeError(f"affine: input {xv.shape} incompatible with weight {wv.shape}")
    out = xs[0] @ ws[0].T
    for xv, wv in zip(xs[1:], ws[1:]):
        out = out + xv @ wv.T
    parents = [t for pair in terms for t in pair]
    if b is not None:
        if b.value.shape != (n_out,):
            raise ShapeError(f"affine: bias {b.value.shape} incompatible with width {n_out}")
        out = out + b.value
        parents.append(b)

    def back(g):
        g2 = g.reshape(-1, n_out)
        grads = []
        for xv, wv in zip(xs, ws):
            grads.append(g @ wv)
            grads.append(g2.T @ xv.reshape(-1, wv.shape[1]))
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _node(out, tuple(parents), back, "affine")


# ---------------------------------------------------------------------------
# normalisation and reductions
# ---------------------------------------------------------------------------


def _check_finite(x: np.ndarray, op: str) -> None:
    if not np.isfinite(x).all():
        raise NumericError(f"{op}: non-finite input")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    x = a.value
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax: need at least one entry, got shape {x.shape}")
    _check_finite(x, "softmax")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (a,), back, "softmax")


def log_softmax(a: Tensor) -> Tensor:
    x = a.value
    _check_finite(x, "log_softmax")
    s = x - x.max(axis=-1, keepdims=True)
    y = s - np.log(np.exp(s).sum(axis=-1, keepdims=True))

    def back(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _node(y, (a,), back, "log_softmax")


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = a.value.shape
    if axis is None:
        return _node(np.asarray(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")
    ax = axis % len(shape)

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return _node(a.value.sum(axis=ax), (a,), back, "sum")


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    vals = [p.value for p in parts]
    lead = {v.shape[:-1] for v in vals} if axis in (-1, vals[0].ndim - 1) else None
    if lead is not None and len(lead) != 1:
        raise ShapeError(f"concat: leading shapes differ {[v.shape for v in vals]}")
    out = np.concatenate(vals, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(parts), back, "concat")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    vals = [p.value for p in parts]
    if len({v.shape for v in vals}) != 1:
        raise ShapeError(f"stack: shapes differ {[v.shape for v in vals]}")
    out = np.stack(vals, axis=axis)
    n = len(vals)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _node(out, tuple(parts), back, "stack")


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def embed(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradient reaches only the looked-up rows."""
    ids = np.array(ids, dtype=np.int64)
    tv = table.value
    if ids.size and (ids.min() < 0 or ids.max() >= tv.shape[0]):
        raise IndexError(f"embed: id out of range for table with {tv.shape[0]} rows")

    def back(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, ids, g)
        return (gt,)

    return _node(tv[ids], (table,), back, "embed")


def pick(a: Tensor, idx) -> Tensor:
    """Per-row selection ``a[b, idx[b]]`` along axis 1 of a ``[B, N, ...]`` tensor."""
    idx = np.array(idx, dtype=np.int64)
    av = a.value
    if av.ndim < 2 or idx.shape != (av.shape[0],):
        raise ShapeError(f"pick: index shape {idx.shape} incompatible with {av.shape}")
    rows = np.arange(av.shape[0])

    def back(g):
        ga = np.zeros_like(av)
        ga[rows, idx] = g
        return (ga,)

    return _node(av[rows, idx], (a,), back, "pick")


def weighted_sum(weights: Tensor, vectors: Tensor) -> Tensor:
    """``out[b] = sum_i weights[b, i] * vectors[b, i]`` for ``[B, M]`` x ``[B, M, d]``."""
    w, v = weights.value, vectors.value
    if v.ndim != 3 or w.shape != v.shape[:2]:
        raise ShapeError(f"weighted_sum: weights {w.shape} incompatible with vectors {v.shape}")

    def back(g):
        return np.einsum("bd,bmd->bm", g, v), w[:, :, None] * g[:, None, :]

    return _node(np.einsum("bm,bmd->bd", w, v), (weights, vectors), back, "weighted_sum")


def expand(a: Tensor, m: int) -> Tensor:
    """Explicit repeat ``[B, d] -> [B, m, d]``."""
    av = a.value
    if av.ndim != 2:
        raise ShapeError(f"expand: expected [B, d], got {av.shape}")
    out = np.broadcast_to(av[:, None, :], (av.shape[0], m, av.shape[1]))
    return _node(out, (a,), lambda g: (g.sum(axis=1),), "expand")


def window_conv(weights: Tensor, kernel: Tensor) -> Tensor:
    """Windowed feature of previous attention weights.

    ``out[b, j] = sum_o kernel[o] * weights[b, j + o - K//2]`` with offsets that
    fall outside ``0..M-1`` dropped.  ``weights`` is ``[B, M]``, ``kernel`` is
    ``[K, d]`` with odd ``K``; the result is ``[B, M, d]``.
    """
    w, kv = weights.value, kernel.value
    K = kv.shape[0]
    if w.ndim != 2 or kv.ndim != 2:
        raise ShapeError(f"window_conv: weights {w.shape}, kernel {kv.shape}")
    if K % 2 == 0:
        raise ValueError(f"window_conv: window size must be odd, got {K}")
    B, M = w.shape
    h = K // 2
    padded = np.zeros((B, M + 2 * h))
    padded[:, h:h + M] = w
    out = np.zeros((B, M, kv.shape[1]))
    for o in range(K):
        out += padded[:, o:o + M, None] * kv[o]

    def back(g):
        gk = np.empty_like(kv)
        gp = np.zeros_like(padded)
        for o in range(K):
            win = padded[:, o:o + M]
            gk[o] = np.einsum("bm,bmd->d", win, g)
            gp[:, o:o + M] += g @ kv[o]
        return gp[:, h:h + M], gk

    return _node(out, (weights, kernel), back, "window_conv")


def masked_fill(a: Tensor, mask, fill: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``fill``; those entries get no gradient."""
    mask = np.array(mask, dtype=bool)  # copy: callers often mutate their mask afterwards
    if mask.shape != a.value.shape:
        raise ShapeError(f"masked_fill: mask {mask.shape} vs tensor {a.value.shape}")
    out = np.where(mask, fill, a.value)
    return _node(out, (a,), lambda g: (np.where(mask, 0.0, g),), "masked_fill")


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def graph_nodes(root: Tensor) -> List[Tensor]:
    """All gradient-carrying nodes reachable from ``root``, in creation order."""
    seen: Dict[int, Tensor] = {}
    stack_ = [root]
    while stack_:
        node = stack_.pop()
        if node.id in seen:
            continue
        seen[node.id] = node
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack_.append(p)
    return [seen[k] for k in sorted(seen)]


def backward(root: Tensor) -> None:
    """Accumulate ``d root / d t`` into ``t.grad`` for every reachable tensor."""
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be a scalar, got shape {root.value.shape}")
    if not root.requires_grad:
        return
    pending: Dict[int, np.ndarray] = {root.id: np.ones_like(root.value)}
    for node in reversed(graph_nodes(root)):
        g = pending.pop(node.id, None)
        if g is None:
            continue
        node._grad = g if node._grad is None else node._grad + g
        if node._backward is None:
            continue
        for p, gp in zip(node.parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            prev = pending.get(p.id)
            pending[p.id] = gp if prev is None else prev + gp


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    tol: float
    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    @property
    def worst(self) -> Tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    def __str__(self) -> str:
        lines = [f"{n}: {e:.3e}" for n, e in self.errors.items()]
        return "\n".join(lines + [f"passed={self.passed} tol={self.tol:g}"])


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare backprop gradients against central finite differences.

    The error for an entry is ``|analytic - numeric| / max(1, |numeric|)`` and
    the report keeps the maximum per parameter.  ``max_entries`` limits the
    number of entries probed per parameter (chosen with ``rng``).
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        flat = p.value.reshape(-1)
        idx: Iterable[int] = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            err = abs(analytic[name].reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
        report.errors[name] = worst
    for p in params.values():
        p.zero_grad()
    return report
