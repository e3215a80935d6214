"""Additive attention: scoring, normalisation, and soft/hard readouts.

Scores use the additive form ``e_j = v_a . tanh(W_a z + U_a c_j [+ f_loc_j])``.
The optional location term convolves the previous step's weights with a
learned kernel of ``K`` vectors (one per window offset); offsets that fall
outside the sequence are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .cells import ParamGroup, uniform
from .encoders import ContextSet
from .tensor import ShapeError, Tensor


@dataclass
class AttentionParams(ParamGroup):
    W_a: Tensor
    U_a: Tensor
    v_a: Tensor
    V_loc: Optional[Tensor] = None

    @classmethod
    def init(cls, rng: np.random.Generator, d_a: int, d_z: int, d_c: int,
             window: Optional[int] = None) -> "AttentionParams":
        if window is not None and window % 2 == 0:
            raise ValueError(f"location window must be odd, got {window}")
        loc = uniform(rng, window, d_a) if window else None
        return cls(uniform(rng, d_a, d_z), uniform(rng, d_a, d_c), uniform(rng, d_a), loc)


@dataclass
class AttentionState:
    scores: Tensor
    weights: Tensor
    readout: Tensor
    mode: str = "soft"
    index: Optional[np.ndarray] = None
    log_prob: Optional[Tensor] = None


def project_contexts(params: AttentionParams, ctx: ContextSet) -> Tensor:
    """``U_a c_j`` for every context; computed once per sequence."""
    return T.linear(ctx.vectors, params.U_a)


def _score(params: AttentionParams, z_prev: Tensor, ctx: ContextSet, keys: Optional[Tensor],
           loc: Optional[Tensor]) -> Tensor:
    if z_prev.ndim != 2 or z_prev.shape[0] != ctx.batch:
        raise ShapeError(f"decoder state {z_prev.shape} does not match context batch {ctx.batch}")
    if keys is None:
        keys = project_contexts(params, ctx)
    pre = T.add(keys, T.expand(T.linear(z_prev, params.W_a), ctx.M))
    if loc is not None:
        pre = T.add(pre, loc)
    return T.matmul(T.tanh(pre), params.v_a)


def score_content(params: AttentionParams, z_prev: Tensor, ctx: ContextSet,
                  keys: Optional[Tensor] = None) -> Tensor:
    """Content-based scores ``[B, M]``."""
    return _score(params, z_prev, ctx, keys, None)


def score_location_aware(params: AttentionParams, z_prev: Tensor, ctx: ContextSet,
                         alpha_prev: Tensor, keys: Optional[Tensor] = None) -> Tensor:
    """Scores that also see a windowed view of the previous attention weights."""
    if params.V_loc is None:
        raise ValueError("location-aware scoring needs a location kernel")
    if alpha_prev.shape != (ctx.batch, ctx.M):
        raise ShapeError(f"previous weights {alpha_prev.shape} do not match contexts ({ctx.batch}, {ctx.M})")
    return _score(params, z_prev, ctx, keys, T.window_conv(alpha_prev, params.V_loc))


def normalize(scores: Tensor, temperature: float = 1.0) -> Tensor:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if temperature != 1.0:
        scores = T.mul(scores, 1.0 / temperature)
    return T.softmax(scores)


def uniform_weights(batch: int, m: int) -> Tensor:
    return Tensor(np.full((batch, m), 1.0 / m))


def read_soft(ctx: ContextSet, alpha: Tensor) -> Tensor:
    """Expected context vector ``sum_i alpha_i c_i``."""
    if alpha.shape != (ctx.batch, ctx.M):
        raise ShapeError(f"weights {alpha.shape} do not match contexts ({ctx.batch}, {ctx.M})")
    return T.weighted_sum(alpha, ctx.vectors)


def read_index(ctx: ContextSet, index) -> Tensor:
    return T.pick(ctx.vectors, index)


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw of one index per row from ``probs`` ``[B, M]``."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    idx = (cdf <= u[:, None]).sum(axis=1)
    # u can land past a cdf that rounds below 1: fall back to the last supported index
    last = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)


def read_hard(ctx: ContextSet, alpha: Tensor, rng: np.random.Generator,
              log_alpha: Optional[Tensor] = None):
    """Sample ``r ~ Cat(alpha)`` per row and read ``c_r``.

    Returns ``(readout, index, log_prob)`` where ``log_prob = log alpha_r`` is a
    graph tensor for the score-function term.  No gradient flows through the
    choice itself.
    """
    index = sample_index(alpha.value, rng)
    return read_index(ctx, index), index, _log_prob_at(alpha, log_alpha, index)


def read_forced(ctx: ContextSet, alpha: Tensor, index, log_alpha: Optional[Tensor] = None):
    """Hard readout at a given index (used to enumerate attention paths)."""
    index = np.asarray(index, dtype=np.int64)
    return read_index(ctx, index), index, _log_prob_at(alpha, log_alpha, index)


def read_hard_argmax(ctx: ContextSet, alpha: Tensor):
    """Deterministic hard readout at the most probable index (lowest on ties)."""
    index = np.argmax(alpha.value, axis=1)
    return read_index(ctx, index), index


def _log_prob_at(alpha: Tensor, log_alpha: Optional[Tensor], index: np.ndarray) -> Tensor:
    if log_alpha is not None:
        return T.pick(log_alpha, index)
    return T.log(T.pick(alpha, index))
