"""Conditional RNN-LM decoder with per-step attention, and its decoding routines.

At step ``t`` the decoder scores the context set against ``z_{t-1}``, reads a
context vector ``c^t`` (soft: weighted sum; hard: one sampled vector), updates
``z_t = GRU(z_{t-1}, [embed(y_{t-1}); c^t])`` and emits
``softmax(O [z_t; c^t; embed(y_{t-1})] + b)``.

The pointer variant instead uses the attention weights themselves as the
output distribution over source positions and feeds the chosen context vector
back as the next input.

All routines are batched: row ``b`` of every tensor belongs to instance ``b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .attention import (AttentionState, normalize, project_contexts, read_forced, read_hard,
                        read_hard_argmax, read_soft, sample_index, score_content,
                        score_location_aware, uniform_weights)
from .cells import gru_step
from .encoders import ContextSet
from .model import Seq2Seq
from .tensor import Tensor

MASK_SCORE = -1e30


@dataclass
class DecoderTrace:
    """Per-step record of a (batched) decoding run.

    ``alphas[t]`` is ``[B, M]``; :meth:`alignment` stacks one row's weights into
    the ``T' x M`` matrix (rows are output steps, columns source positions).
    """

    states: List[np.ndarray] = field(default_factory=list)
    probs: List[np.ndarray] = field(default_factory=list)
    symbols: List[np.ndarray] = field(default_factory=list)
    alphas: List[np.ndarray] = field(default_factory=list)
    indices: List[Optional[np.ndarray]] = field(default_factory=list)
    log_prob: Optional[np.ndarray] = None
    path_log_prob: Optional[Tensor] = None

    def record(self, z: Tensor, probs: np.ndarray, symbols, att: AttentionState) -> None:
        self.states.append(z.value)
        self.probs.append(probs)
        self.symbols.append(np.asarray(symbols))
        self.alphas.append(att.weights.value)
        self.indices.append(att.index)

    def alignment(self, row: int = 0, steps: Optional[int] = None) -> np.ndarray:
        a = np.stack([al[row] for al in self.alphas])
        return a if steps is None else a[:steps]

    def __len__(self) -> int:
        return len(self.alphas)


class DecodeContext:
    """Per-sequence cache: projected contexts and the attention mode."""

    def __init__(self, model: Seq2Seq, ctx: ContextSet, mode: Optional[str] = None):
        self.model = model
        self.ctx = ctx
        self.mode = mode or model.config.attention
        self.keys = project_contexts(model.decoder.attn, ctx)


def _scores(dc: DecodeContext, z_prev: Tensor, alpha_prev: Optional[Tensor]) -> Tensor:
    attn = dc.model.decoder.attn
    if attn.V_loc is not None:
        if alpha_prev is None:
            alpha_prev = uniform_weights(dc.ctx.batch, dc.ctx.M)
        return score_location_aware(attn, z_prev, dc.ctx, alpha_prev, dc.keys)
    return score_content(attn, z_prev, dc.ctx, dc.keys)


def decode_step(model: Seq2Seq, z_prev: Tensor, y_prev, ctx, alpha_prev: Optional[Tensor] = None,
                rng: Optional[np.random.Generator] = None, forced_index=None,
                mode: Optional[str] = None) -> Tuple[Tensor, Tensor, AttentionState]:
    """One decoder step.

    Args:
        model: the encoder-decoder.
        z_prev: ``[B, hidden]`` previous decoder state.
        y_prev: ``[B]`` previous symbols (BOS at the first step).
        ctx: a :class:`ContextSet` or a prepared :class:`DecodeContext`.
        alpha_prev: previous attention weights (location-aware mode only;
            defaults to uniform).
        rng: random generator for hard attention sampling.
        forced_index: fixed hard-attention indices ``[B]`` instead of sampling.
        mode: override of the model's attention mode; ``"argmax"`` selects the
            deterministic hard readout.

    Returns:
        ``(z_t, log_probs [B, V], attention_state)``.
    """
    dc = ctx if isinstance(ctx, DecodeContext) else DecodeContext(model, ctx, mode)
    mode = mode or dc.mode
    dec = model.decoder
    y_prev = np.asarray(y_prev, dtype=np.int64).reshape(-1)
    if y_prev.size and (y_prev.min() < 0 or y_prev.max() >= model.config.tgt_vocab):
        raise ValueError(f"unknown symbol id in {y_prev.tolist()}")
    scores = _scores(dc, z_prev, alpha_prev)
    temp = model.config.temperature
    if mode == "hard" or forced_index is not None:
        log_alpha = T.log_softmax(T.mul(scores, 1.0 / temp) if temp != 1.0 else scores)
        alpha = T.exp(log_alpha)
        if forced_index is not None:
            c_t, idx, lp = read_forced(dc.ctx, alpha, forced_index, log_alpha)
        elif rng is not None:
            c_t, idx, lp = read_hard(dc.ctx, alpha, rng, log_alpha)
        else:
            c_t, idx = read_hard_argmax(dc.ctx, alpha)
            lp = T.pick(log_alpha, idx)
        att = AttentionState(scores, alpha, c_t, "hard", idx, lp)
    elif mode == "argmax":
        alpha = normalize(scores, temp)
        c_t, idx = read_hard_argmax(dc.ctx, alpha)
        att = AttentionState(scores, alpha, c_t, "hard", idx)
    else:
        alpha = normalize(scores, temp)
        att = AttentionState(scores, alpha, read_soft(dc.ctx, alpha))
    e = dec.embed(y_prev)
    z = gru_step(dec.gru, z_prev, T.concat([e, att.readout]))
    logits = T.linear(T.concat([z, att.readout, e]), dec.out_W, dec.out_b)
    return z, T.log_softmax(logits), att


def _check_targets(model: Seq2Seq, targets: np.ndarray) -> np.ndarray:
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    if targets.shape[1] == 0 or np.any(targets[:, -1] != model.config.eos):
        raise ValueError("target sequences must be non-empty and end with EOS")
    if targets.min() < 0 or targets.max() >= model.config.tgt_vocab:
        raise ValueError("target contains ids outside the vocabulary")
    return targets


def teacher_forced_logprob(model: Seq2Seq, ctx: ContextSet, targets, rng=None, forced=None,
                           mode: Optional[str] = None) -> Tuple[Tensor, DecoderTrace]:
    """``log p(y | x) = sum_t log p(y_t | y_<t, x)`` under teacher forcing.

    In hard mode the readout is sampled with ``rng`` (or fixed by ``forced``,
    a ``[B, T']`` index array); the returned value is then ``log p(y | r, x)``
    and ``trace.path_log_prob`` holds ``log p(r | x)`` as a graph tensor.
    """
    targets = _check_targets(model, targets)
    if ctx.batch != targets.shape[0]:
        raise ValueError(f"{targets.shape[0]} targets for a context batch of {ctx.batch}")
    dc = DecodeContext(model, ctx, mode)
    B, steps = targets.shape
    z = model.initial_state(ctx)
    y_prev = np.full(B, model.config.bos)
    alpha = None
    trace = DecoderTrace()
    picked, path = [], []
    for t in range(steps):
        fi = None if forced is None else np.asarray(forced)[:, t]
        z, logp, att = decode_step(model, z, y_prev, dc, alpha, rng=rng, forced_index=fi)
        picked.append(T.pick(logp, targets[:, t]))
        if att.log_prob is not None:
            path.append(att.log_prob)
        trace.record(z, np.exp(logp.value), targets[:, t], att)
        alpha = att.weights
        y_prev = targets[:, t]
    total = T.sum(T.stack(picked, axis=1), axis=1)
    trace.log_prob = total.value.copy()
    if path:
        trace.path_log_prob = T.sum(T.stack(path, axis=1), axis=1)
    return total, trace


def _row_sequences(symbols: List[np.ndarray], eos: int) -> List[Tuple[int, ...]]:
    if not symbols:
        return []
    mat = np.stack(symbols, axis=1)
    out = []
    for row in mat:
        hits = np.flatnonzero(row == eos)
        end = hits[0] + 1 if hits.size else len(row)
        out.append(tuple(int(s) for s in row[:end]))
    return out


def _run_free(model: Seq2Seq, ctx: ContextSet, max_len: int,
              choose: Callable[[np.ndarray], np.ndarray], mode: Optional[str]):
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    dc = DecodeContext(model, ctx, mode)
    if dc.mode == "hard":
        dc.mode = "argmax"
    eos = model.config.eos
    B = ctx.batch
    z = model.initial_state(ctx)
    y = np.full(B, model.config.bos)
    alpha = None
    done = np.zeros(B, dtype=bool)
    total = np.zeros(B)
    trace = DecoderTrace()
    for _ in range(max_len):
        z, logp, att = decode_step(model, z, y, dc, alpha)
        lp = logp.value
        y = choose(lp)
        total = np.where(done, total, total + lp[np.arange(B), y])
        trace.record(z, np.exp(lp), y, att)
        alpha = att.weights
        done |= y == eos
        if done.all():
            break
    trace.log_prob = total
    return _row_sequences(trace.symbols, eos), trace


def greedy_decode(model: Seq2Seq, ctx: ContextSet, max_len: int, mode: Optional[str] = None):
    """Pick the most probable symbol at every step (lowest id on ties).

    Hard-attention models decode with the argmax readout.  Returns
    ``(sequences, trace)``; each sequence includes its EOS if one was emitted.
    """
    return _run_free(model, ctx, max_len, lambda lp: np.argmax(lp, axis=1), mode)


def sample_decode(model: Seq2Seq, ctx: ContextSet, max_len: int, rng: np.random.Generator,
                  mode: Optional[str] = None):
    """Ancestral sampling; returns ``(sequences, log_probs)``."""
    seqs, trace = _run_free(model, ctx, max_len, lambda lp: sample_index(np.exp(lp), rng), mode)
    return seqs, trace.log_prob


def beam_decode(model: Seq2Seq, ctx: ContextSet, beam: int, max_len: int,
                mode: Optional[str] = None) -> List[Tuple[Tuple[int, ...], float]]:
    """Beam search over summed log-probabilities for a single instance.

    Hypotheses that emit EOS retire to a result pool; whatever is still alive
    at ``max_len`` retires there too.  Returns up to ``beam`` results ranked by
    total log-prob, then earlier completion, then symbol order.  No length
    normalisation.

    Each hypothesis is advanced as its own one-row batch, so its score is
    computed by exactly the same floating-point operations whatever the beam
    width (``beam=1`` reproduces :func:`greedy_decode` on that instance bit
    for bit).
    """
    if beam < 1:
        raise ValueError("beam width must be at least 1")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    if ctx.batch != 1:
        raise ValueError("beam_decode works on one instance at a time")
    eos = model.config.eos
    mode = mode or model.config.attention
    dc = DecodeContext(model, ctx, "argmax" if mode == "hard" else mode)
    # (score, seq, z, alpha)
    alive = [(0.0, (), model.initial_state(ctx), None)]
    finished = []
    for step in range(max_len):
        cands = []
        for row, (score, seq, z, alpha) in enumerate(alive):
            prev = seq[-1] if seq else model.config.bos
            z2, logp, att = decode_step(model, z, [prev], dc, alpha)
            lp = logp.value[0]
            for v in range(lp.shape[0]):
                cands.append((-(score + lp[v]), -lp[v], seq + (v,), z2, att.weights))
        cands.sort(key=lambda c: c[:3])
        alive = []
        for neg_total, _, seq, z2, weights in cands[:beam]:
            if seq[-1] == eos:
                finished.append((neg_total, step, seq))
            else:
                alive.append((-neg_total, seq, z2, weights))
        if not alive:
            break
    else:
        finished.extend((-score, max_len, seq) for score, seq, _, _ in alive)
    finished.sort()
    return [(seq, float(-neg)) for neg, _, seq in finished[:beam]]


# ---------------------------------------------------------------------------
# pointer decoding
# ---------------------------------------------------------------------------


def _pointer_run(model: Seq2Seq, ctx: ContextSet, choose, mask_visited: bool,
                 steps: Optional[int] = None):
    dc = DecodeContext(model, ctx, "soft")
    dec = model.decoder
    B, M = ctx.batch, ctx.M
    steps = M if steps is None else steps
    z = model.initial_state(ctx)
    visited = np.zeros((B, M), dtype=bool)
    alpha = None
    picked = []
    chosen = []
    trace = DecoderTrace()
    for t in range(steps):
        scores = _scores(dc, z, alpha)
        if mask_visited and visited.any():
            scores = T.masked_fill(scores, visited, MASK_SCORE)
        log_alpha = T.log_softmax(scores)
        alpha = T.exp(log_alpha)
        idx = np.asarray(choose(t, log_alpha.value), dtype=np.int64)
        picked.append(T.pick(log_alpha, idx))
        chosen.append(idx)
        visited[np.arange(B), idx] = True
        att = AttentionState(scores, alpha, None, "pointer", idx)
        trace.record(z, alpha.value, idx, att)
        if t + 1 < steps:
            z = gru_step(dec.gru, z, T.pick(ctx.vectors, idx))
    total = T.sum(T.stack(picked, axis=1), axis=1)
    trace.log_prob = total.value.copy()
    return np.stack(chosen, axis=1), total, trace


def pointer_logprob(model: Seq2Seq, ctx: ContextSet, targets, mask_visited: bool = True):
    """Log-probability of given index sequences ``[B, T']`` under the pointer decoder."""
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    if targets.shape[0] != ctx.batch or targets.min() < 0 or targets.max() >= ctx.M:
        raise ValueError("pointer targets must index into the context set")
    _, total, trace = _pointer_run(model, ctx, lambda t, _: targets[:, t], mask_visited,
                                   steps=targets.shape[1])
    return total, trace


def pointer_decode(model: Seq2Seq, ctx: ContextSet, mask_visited: bool = True,
                   rng: Optional[np.random.Generator] = None):
    """Emit ``M`` source indices, one per step, using attention as the output distribution.

    With ``mask_visited`` every chosen index is excluded from later steps, so
    the result is always a permutation.  Greedy unless ``rng`` is given.
    Returns ``(indices [B, M], log_probs [B], trace)``.
    """
    if rng is None:
        choose = lambda t, la: np.argmax(la, axis=1)  # noqa: E731
    else:
        choose = lambda t, la: sample_index(np.exp(la), rng)  # noqa: E731
    perm, total, trace = _pointer_run(model, ctx, choose, mask_visited)
    return perm, total.value.copy(), trace
