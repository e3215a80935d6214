"""Recurrent transition functions: a plain tanh RNN and a gated recurrent unit.

States are batched row matrices ``[B, hidden]`` and inputs ``[B, input]``.
Weight matrices use the column-vector convention (``U`` is ``[hidden, hidden]``
and acts as ``U h``), applied through :func:`atnk.tensor.linear`.

The GRU follows these equations in order::

    u_t = sigmoid(U_u h_{t-1} + W_u x_t + b_u)
    r_t = sigmoid(U_r h_{t-1} + W_r x_t + b_r)
    g_t = tanh(U h_{t-1} + W (r_t * x_t) + b)
    h_t = u_t * g_t + (1 - u_t) * h_{t-1}

The reset gate multiplies the input, so it has the input's width.  Biases
start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

INIT_SCALE = 0.08


def uniform(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class ParamGroup:
    """Mixin for dataclasses whose tensor fields are trainable parameters."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Tensor):
                yield prefix + f.name, v
            elif isinstance(v, ParamGroup):
                yield from v.named_parameters(f"{prefix}{f.name}.")


@dataclass
class TanhParams(ParamGroup):
    U: Tensor
    W: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, n_in: int) -> "TanhParams":
        return cls(U=uniform(rng, hidden, hidden), W=uniform(rng, hidden, n_in))

    @property
    def hidden(self) -> int:
        return self.U.shape[0]


@dataclass
class GruParams(ParamGroup):
    U: Tensor
    W: Tensor
    U_u: Tensor
    W_u: Tensor
    U_r: Tensor
    W_r: Tensor
    b: Tensor
    b_u: Tensor
    b_r: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, n_in: int) -> "GruParams":
        return cls(
            U=uniform(rng, hidden, hidden),
            W=uniform(rng, hidden, n_in),
            U_u=uniform(rng, hidden, hidden),
            W_u=uniform(rng, hidden, n_in),
            U_r=uniform(rng, n_in, hidden),
            W_r=uniform(rng, n_in, n_in),
            b=zeros(hidden),
            b_u=zeros(hidden),
            b_r=zeros(n_in),
        )

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @property
    def n_in(self) -> int:
        return self.W.shape[1]


def _check(params, h: Tensor, x: Tensor) -> None:
    H, n_in = params.U.shape[0], params.W.shape[1]
    if h.ndim != 2 or x.ndim != 2 or h.shape[1] != H or x.shape[1] != n_in or h.shape[0] != x.shape[0]:
        raise ShapeError(f"cell expects h [B, {H}] and x [B, {n_in}], got {h.shape} and {x.shape}")


def tanh_cell_step(params: TanhParams, h_prev: Tensor, x: Tensor) -> Tensor:
    """``h_t = tanh(U h_{t-1} + W x_t)``."""
    _check(params, h_prev, x)
    return T.tanh(T.affine([(h_prev, params.U), (x, params.W)]))


def gru_step(params: GruParams, h_prev: Tensor, x: Tensor) -> Tensor:
    _check(params, h_prev, x)
    u = T.sigmoid(T.affine([(h_prev, params.U_u), (x, params.W_u)], params.b_u))
    r = T.sigmoid(T.affine([(h_prev, params.U_r), (x, params.W_r)], params.b_r))
    cand = T.tanh(T.affine([(h_prev, params.U), (T.mul(r, x), params.W)], params.b))
    return T.add(T.mul(u, cand), T.mul(T.add(T.neg(u), 1.0), h_prev))


Cell = Callable[[object, Tensor, Tensor], Tensor]


def cell_for(params) -> Cell:
    return gru_step if isinstance(params, GruParams) else tanh_cell_step


def unroll(cell: Optional[Cell], params, h0: Tensor, inputs: Sequence[Tensor]) -> List[Tensor]:
    """Run ``h_t = cell(params, h_{t-1}, x_t)`` over ``inputs``; returns every state.

    ``h0`` may be a single ``[hidden]`` vector, which is tiled explicitly to
    the batch size of the inputs.
    """
    if len(inputs) == 0:
        raise ValueError("unroll: empty input sequence")
    cell = cell or cell_for(params)
    h = initial_state(h0, inputs[0].shape[0])
    states = []
    for x in inputs:
        h = cell(params, h, x)
        states.append(h)
    return states


def initial_state(h0: Tensor, batch: int) -> Tensor:
    if h0.ndim == 2:
        return h0
    return T.reshape(T.expand(T.reshape(h0, (1, h0.shape[0])), batch), (batch, h0.shape[0]))
