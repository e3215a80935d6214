"""Encoders that turn an input sequence into a context set.

A :class:`ContextSet` holds a ``[B, M, d_c]`` tensor: ``B`` instances of the
same length encoded side by side, each with ``M`` context vectors.  Source
metadata (token id or city coordinates) rides along so attention exports and
pointer decoding can name positions without recomputing them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .cells import GruParams, ParamGroup, Cell, cell_for, uniform, unroll, zeros
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class Position:
    index: int
    token: Optional[int] = None
    xy: Optional[Tuple[float, float]] = None


@dataclass
class ContextSet:
    vectors: Tensor
    positions: List[List[Position]]

    def __post_init__(self):
        if self.vectors.ndim != 3 or self.vectors.shape[1] < 1:
            raise ShapeError(f"context vectors must be [B, M>=1, d], got {self.vectors.shape}")
        if len(self.positions) != self.vectors.shape[0] or any(len(p) != self.M for p in self.positions):
            raise ValueError("positions must list M records per batch row")

    @property
    def batch(self) -> int:
        return self.vectors.shape[0]

    @property
    def M(self) -> int:
        return self.vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]

    def mean(self) -> Tensor:
        return T.mean(self.vectors, axis=1)

    def repeat(self, n: int) -> "ContextSet":
        """Tile a single-instance context set to ``n`` identical rows (graph-connected)."""
        if self.batch != 1:
            raise ValueError("repeat expects a single-instance context set")
        v = T.reshape(self.vectors, (1, self.M * self.dim))
        v = T.reshape(T.expand(v, n), (n, self.M, self.dim))
        return ContextSet(v, [self.positions[0]] * n)


@dataclass
class Embedding(ParamGroup):
    table: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, vocab: int, dim: int) -> "Embedding":
        return cls(uniform(rng, vocab, dim))

    def __call__(self, ids) -> Tensor:
        return T.embed(self.table, ids)


@dataclass
class BiRNNParams(ParamGroup):
    fwd: GruParams
    bwd: GruParams
    h0_fwd: Tensor
    h0_bwd: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, n_in: int) -> "BiRNNParams":
        return cls(GruParams.init(rng, hidden, n_in), GruParams.init(rng, hidden, n_in),
                   zeros(hidden), zeros(hidden))


@dataclass
class MeanPoolParams(ParamGroup):
    rnn: GruParams
    h0: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, n_in: int) -> "MeanPoolParams":
        return cls(GruParams.init(rng, hidden, n_in), zeros(hidden))


@dataclass
class PointLift(ParamGroup):
    """Shared affine + tanh map from 2-D coordinates to the encoder input width."""

    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int) -> "PointLift":
        return cls(uniform(rng, dim, 2), zeros(dim))


def _token_positions(tokens: np.ndarray) -> List[List[Position]]:
    return [[Position(i, token=int(t)) for i, t in enumerate(row)] for row in tokens]


def birnn_encode(params: BiRNNParams, inputs: Sequence[Tensor],
                 positions: Optional[List[List[Position]]] = None,
                 cell: Optional[Cell] = None) -> ContextSet:
    """Concatenate forward and backward states per step: ``c_t = [fwd_t; bwd_t]``.

    Args:
        params: forward/backward cell parameters and their learned initial states.
        inputs: length-``T`` list of embedded inputs, each ``[B, n_in]``.
        positions: per-row source metadata; defaults to bare indices.
        cell: transition function; inferred from the parameter type if omitted.
    """
    if len(inputs) == 0:
        raise ValueError("birnn_encode: empty input")
    fwd = unroll(cell, params.fwd, params.h0_fwd, inputs)
    bwd = unroll(cell, params.bwd, params.h0_bwd, list(reversed(inputs)))[::-1]
    ctx = T.stack([T.concat([f, b]) for f, b in zip(fwd, bwd)], axis=1)
    if positions is None:
        positions = [[Position(i) for i in range(len(inputs))] for _ in range(inputs[0].shape[0])]
    return ContextSet(ctx, positions)


def meanpool_encode(params: MeanPoolParams, inputs: Sequence[Tensor],
                    positions: Optional[List[List[Position]]] = None,
                    cell: Optional[Cell] = None) -> ContextSet:
    """Single context vector: the arithmetic mean of the recurrent states."""
    if len(inputs) == 0:
        raise ValueError("meanpool_encode: empty input")
    states = unroll(cell, params.rnn, params.h0, inputs)
    pooled = T.mean(T.stack(states, axis=1), axis=1)
    B = inputs[0].shape[0]
    ctx = T.reshape(pooled, (B, 1, pooled.shape[1]))
    return ContextSet(ctx, [[Position(0)] for _ in range(B)])


def point_encode(cities, lift: PointLift, params: BiRNNParams) -> ContextSet:
    """Encode ``[B, n, 2]`` city coordinates: per-city lift, then a BiRNN."""
    pts = np.asarray(cities, dtype=np.float64)
    if pts.ndim == 2:
        pts = pts[None]
    if pts.ndim != 3 or pts.shape[2] != 2:
        raise ShapeError(f"point_encode: expected [B, n, 2] coordinates, got {pts.shape}")
    if pts.shape[1] < 2:
        raise ValueError("point_encode: need at least 2 cities")
    lifted = T.tanh(T.linear(Tensor(pts), lift.W, lift.b))
    B, n, d = lifted.shape
    inputs = [_column(lifted, i) for i in range(n)]
    positions = [[Position(i, xy=(float(x), float(y))) for i, (x, y) in enumerate(row)] for row in pts]
    return birnn_encode(params, inputs, positions)


def _column(t: Tensor, i: int) -> Tensor:
    return T.pick(t, np.full(t.shape[0], i))


def embed_tokens(emb: Embedding, tokens: np.ndarray) -> Tuple[List[Tensor], List[List[Position]]]:
    """Embed a ``[B, T]`` int array into a list of ``T`` tensors ``[B, d]``."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2 or tokens.shape[1] == 0:
        raise ValueError(f"expected non-empty [B, T] token array, got shape {tokens.shape}")
    return [emb(tokens[:, t]) for t in range(tokens.shape[1])], _token_positions(tokens)
