"""Maximum-likelihood and REINFORCE training, plus exact enumeration oracles.

A batch is a list of instances.  Instances of identical (source, target)
length are evaluated as rows of one batched graph; since every row is
independent, this yields exactly the per-instance losses.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .decoder import pointer_logprob, teacher_forced_logprob
from .model import Seq2Seq
from .tasks import TaskInstance
from .tensor import NumericError, Tensor

logger = logging.getLogger(__name__)

MAX_ENUMERATED_PATHS = 10_000


@dataclass
class TrainConfig:
    lr: float = 0.3
    epochs: int = 30
    grad_clip: float = 5.0
    seed: int = 0
    batch_size: int = 16
    M_samples: int = 4
    baseline_decay: float = 0.9
    variance_norm: bool = False
    baseline: bool = True
    pointer_mask: bool = False
    # leading epochs trained with the visited mask even when pointer_mask is off
    mask_epochs: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.mask_epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.M_samples < 1:
            raise ValueError("M_samples must be at least 1")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("baseline_decay must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive (use inf to disable)")


@dataclass
class BaselineState:
    """Exponential moving average of the reward ``log p(y | r, x)``.

    ``var`` tracks the running mean square of the centred reward for variance
    normalisation.  A disabled baseline stays at zero.
    """

    decay: float = 0.9
    enabled: bool = True
    b: float = 0.0
    var: float = 1.0
    initialized: bool = False

    @property
    def value(self) -> float:
        return self.b if (self.enabled and self.initialized) else 0.0

    @property
    def sd(self) -> float:
        return max(math.sqrt(self.var), 1e-4) if self.initialized else 1.0

    def update(self, rewards: np.ndarray) -> None:
        rewards = np.asarray(rewards, dtype=np.float64)
        if not self.initialized:
            self.b = float(rewards.mean())
            self.var = float(((rewards - self.b) ** 2).mean())
            self.initialized = True
            return
        centred = rewards - self.b
        self.b = self.decay * self.b + (1 - self.decay) * float(rewards.mean())
        self.var = self.decay * self.var + (1 - self.decay) * float((centred ** 2).mean())


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def group_by_shape(batch: Sequence[TaskInstance]) -> "OrderedDict[Tuple[int, int], List[TaskInstance]]":
    groups: "OrderedDict[Tuple[int, int], List[TaskInstance]]" = OrderedDict()
    for inst in batch:
        groups.setdefault(inst.shape_key, []).append(inst)
    return groups


def sources_of(instances: Sequence[TaskInstance]) -> np.ndarray:
    return np.array([inst.source for inst in instances])


def targets_of(instances: Sequence[TaskInstance]) -> np.ndarray:
    return np.array([inst.target for inst in instances], dtype=np.int64)


def group_logprob(model: Seq2Seq, instances: Sequence[TaskInstance], rng=None,
                  pointer_mask: bool = False, mode: Optional[str] = None):
    """Teacher-forced log-probabilities ``[B]`` for same-shape instances, with the trace."""
    ctx = model.encode(sources_of(instances))
    tgt = targets_of(instances)
    if model.config.decoder == "pointer":
        return pointer_logprob(model, ctx, tgt, mask_visited=pointer_mask)
    return teacher_forced_logprob(model, ctx, tgt, rng=rng, mode=mode)


def mle_loss(model: Seq2Seq, batch: Sequence[TaskInstance], pointer_mask: bool = False) -> Tensor:
    """Negative mean teacher-forced log-likelihood of the batch."""
    if not batch:
        raise ValueError("mle_loss: empty batch")
    total = None
    for group in group_by_shape(batch).values():
        lp, _ = group_logprob(model, group, pointer_mask=pointer_mask)
        s = T.sum(lp)
        total = s if total is None else T.add(total, s)
    return T.mul(total, -1.0 / len(batch))


def sgd_step(params: Mapping[str, Tensor], config: TrainConfig) -> float:
    """Clip gradients to a global norm, take one descent step and zero the gradients.

    Returns the pre-clipping gradient norm.
    """
    sq = 0.0
    for name, p in params.items():
        g = p.grad
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        sq += float(np.sum(g * g))
    norm = math.sqrt(sq)
    scale = config.lr
    if norm > config.grad_clip:
        scale *= config.grad_clip / norm
    for p in params.values():
        if p._grad is not None:
            p.value = p.value - scale * p._grad
        p.zero_grad()
    return norm


# ---------------------------------------------------------------------------
# variational training for hard attention
# ---------------------------------------------------------------------------


@dataclass
class ReinforceResult:
    grads: Dict[str, np.ndarray]
    rewards: np.ndarray
    baseline: float
    paths: np.ndarray


def _tiled(model: Seq2Seq, inst: TaskInstance, n: int):
    ctx = model.encode(sources_of([inst]))
    return ctx.repeat(n), np.tile(np.asarray(inst.target, dtype=np.int64), (n, 1))


def reinforce_grad(model: Seq2Seq, instance: TaskInstance, config: TrainConfig,
                   baseline: BaselineState, rng: np.random.Generator) -> ReinforceResult:
    """Monte Carlo estimate of the gradient of the variational lower bound.

    Draws ``config.M_samples`` attention paths ``r`` and averages
    ``grad log p(y|r,x) + w * grad log p(r|x)``.  The weight is the centred
    reward ``w = log p(y|r,x) - b``, divided by the running reward SD when
    variance normalisation is on.  ``grads`` points uphill on the bound; the
    baseline is updated afterwards.
    """
    S = config.M_samples
    ctx, tgt = _tiled(model, instance, S)
    logp_y, trace = teacher_forced_logprob(model, ctx, tgt, rng=rng, mode="hard")
    rewards = logp_y.value.copy()
    b = baseline.value
    w = rewards - b
    if config.variance_norm:
        w = w / baseline.sd
    surrogate = T.mul(T.add(T.sum(logp_y), T.sum(T.mul(trace.path_log_prob, Tensor(w)))), 1.0 / S)
    params = model.parameters()
    for p in params.values():
        p.zero_grad()
    T.backward(surrogate)
    grads = {name: p.grad.copy() for name, p in params.items()}
    for p in params.values():
        p.zero_grad()
    baseline.update(rewards)
    return ReinforceResult(grads, rewards, b, np.stack(trace.indices, axis=1))


@dataclass
class LowerBound:
    bound: Tensor
    log_likelihood: float
    path_log_prob: np.ndarray
    reward: np.ndarray
    paths: np.ndarray


def enumerate_lower_bound(model: Seq2Seq, instance: TaskInstance,
                          max_paths: int = MAX_ENUMERATED_PATHS) -> LowerBound:
    """Exact ``sum_r p(r|x) log p(y|r,x)`` and ``log sum_r p(y, r|x)`` over every path.

    Every attention path is one row of a single batched graph, so the bound
    stays differentiable.
    """
    M = len(instance.source)
    steps = len(instance.target)
    n = M ** steps
    if n > max_paths:
        raise ValueError(f"{n} attention paths exceed the enumeration limit of {max_paths}")
    paths = np.array(list(itertools.product(range(M), repeat=steps)), dtype=np.int64)
    ctx, tgt = _tiled(model, instance, n)
    logp_y, trace = teacher_forced_logprob(model, ctx, tgt, forced=paths, mode="hard")
    lp_r = trace.path_log_prob
    bound = T.sum(T.mul(T.exp(lp_r), logp_y))
    joint = lp_r.value + logp_y.value
    top = joint.max()
    ll = float(top + np.log(np.exp(joint - top).sum()))
    return LowerBound(bound, ll, lp_r.value.copy(), logp_y.value.copy(), paths)


def enumerate_lower_bound_grad(model: Seq2Seq, instance: TaskInstance,
                               max_paths: int = MAX_ENUMERATED_PATHS) -> Dict[str, np.ndarray]:
    """Exact gradient of the lower bound by backpropagating through the enumeration."""
    params = model.parameters()
    for p in params.values():
        p.zero_grad()
    lb = enumerate_lower_bound(model, instance, max_paths)
    T.backward(lb.bound)
    grads = {name: p.grad.copy() for name, p in params.items()}
    for p in params.values():
        p.zero_grad()
    return grads


# ---------------------------------------------------------------------------
# training loop and metrics
# ---------------------------------------------------------------------------


def make_batches(instances: Sequence[TaskInstance], batch_size: int,
                 rng: np.random.Generator) -> List[List[TaskInstance]]:
    """Shuffle within shape buckets, chunk, then shuffle the chunk order."""
    batches = []
    for group in group_by_shape(instances).values():
        order = rng.permutation(len(group))
        for i in range(0, len(group), batch_size):
            batches.append([group[j] for j in order[i:i + batch_size]])
    return [batches[i] for i in rng.permutation(len(batches))]


def _exact_matches(model: Seq2Seq, trace, tgt: np.ndarray) -> np.ndarray:
    """Rows whose teacher-forced argmax equals the target at every step.

    That is exactly the condition for greedy decoding to reproduce the target.
    """
    preds = np.stack([np.argmax(p, axis=1) for p in trace.probs], axis=1)
    return (preds == tgt).all(axis=1), (preds == tgt)


def evaluate(model: Seq2Seq, instances: Sequence[TaskInstance], batch_size: int = 64,
             pointer_mask: bool = True) -> Dict[str, float]:
    """Mean NLL, exact-match accuracy and teacher-forced per-symbol accuracy."""
    if not instances:
        return {"nll": float("nan"), "acc": float("nan"), "symbol_acc": float("nan"), "n": 0}
    nll = 0.0
    exact = 0
    sym_hits = sym_total = 0
    mode = "argmax" if model.config.attention == "hard" else None
    for group in group_by_shape(instances).values():
        for i in range(0, len(group), batch_size):
            chunk = group[i:i + batch_size]
            lp, trace = group_logprob(model, chunk, pointer_mask=pointer_mask, mode=mode)
            tgt = targets_of(chunk)
            rows, cells = _exact_matches(model, trace, tgt)
            nll -= float(lp.value.sum())
            exact += int(rows.sum())
            sym_hits += int(cells.sum())
            sym_total += cells.size
    n = len(instances)
    return {"nll": nll / n, "acc": exact / n, "symbol_acc": sym_hits / sym_total, "n": n}


@dataclass
class EpochRecord:
    epoch: int
    split: str
    nll: float
    acc: float
    seconds: float

    def line(self) -> str:
        return (f"epoch={self.epoch} split={self.split} nll={self.nll:.6f} "
                f"acc={self.acc:.6f} seconds={self.seconds:.3f}")


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)

    def lines(self) -> List[str]:
        return [r.line() for r in self.records]

    def last(self, split: str) -> Optional[EpochRecord]:
        for r in reversed(self.records):
            if r.split == split:
                return r
        return None


def _hard_batch_grads(model, batch, config, baseline, rng) -> float:
    """Store the negated mean REINFORCE gradient (a descent direction); returns minus the summed reward."""
    params = model.parameters()
    acc = {name: np.zeros_like(p.value) for name, p in params.items()}
    reward = 0.0
    for inst in batch:
        res = reinforce_grad(model, inst, config, baseline, rng)
        for name, g in res.grads.items():
            acc[name] += g
        reward += float(res.rewards.mean())
    for name, p in params.items():
        p.grad = -acc[name] / len(batch)
    return -reward


def train(model: Seq2Seq, train_set: Sequence[TaskInstance], config: TrainConfig,
          dev_set: Sequence[TaskInstance] = (),
          on_record: Optional[Callable[[EpochRecord], None]] = None) -> TrainLog:
    """Plain SGD over seeded shuffled batches; one train and one dev record per epoch.

    The train record reports the mean training NLL of the epoch and the
    fraction of instances whose teacher-forced argmax matched the whole
    target; the dev record reports :func:`evaluate` on ``dev_set``.
    """
    rng = np.random.default_rng(config.seed)
    log = TrainLog()
    hard = model.config.attention == "hard"
    baseline = BaselineState(config.baseline_decay, enabled=config.baseline)
    params = model.parameters()
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        nll_sum = 0.0
        exact = 0
        masked = config.pointer_mask or epoch <= config.mask_epochs
        for batch in make_batches(train_set, config.batch_size, rng):
            if hard:
                nll_sum += _hard_batch_grads(model, batch, config, baseline, rng)
            else:
                total = None
                for group in group_by_shape(batch).values():
                    lp, trace = group_logprob(model, group, pointer_mask=masked)
                    exact += int(_exact_matches(model, trace, targets_of(group))[0].sum())
                    s = T.sum(lp)
                    total = s if total is None else T.add(total, s)
                loss = T.mul(total, -1.0 / len(batch))
                T.backward(loss)
                nll_sum -= float(total.value)
            sgd_step(params, config)
        # hard-attention epochs sample their readouts, so no exact-match count
        acc = float("nan") if hard else exact / max(1, len(train_set))
        rec = EpochRecord(epoch, "train", nll_sum / max(1, len(train_set)), acc,
                          time.perf_counter() - start)
        log.records.append(rec)
        if on_record:
            on_record(rec)
        if dev_set:
            start = time.perf_counter()
            m = evaluate(model, dev_set)
            rec = EpochRecord(epoch, "dev", m["nll"], m["acc"], time.perf_counter() - start)
            log.records.append(rec)
            if on_record:
                on_record(rec)
        logger.debug("epoch %d done", epoch)
    return log
