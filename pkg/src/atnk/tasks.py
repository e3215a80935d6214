"""Seeded synthetic tasks with exact answers.

Symbol ids 0, 1, 2 are reserved for PAD, BOS and EOS; content symbols start
at 3.  Pointer tasks (sort, TSP) use 0-based source positions as targets.

Instance text format, one instance per line::

    SRC<TAB>s1 s2 ...<TAB>TGT<TAB>t1 t2 ...
    CITIES<TAB>x1,y1 x2,y2 ...<TAB>OPT<TAB>p1 p2 ...<TAB>LEN<TAB><float>
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

PAD, BOS, EOS = 0, 1, 2
FIRST_SYMBOL = 3
MAX_TSP_CITIES = 9

Range = Union[int, Tuple[int, int]]


@dataclass
class TaskInstance:
    source: tuple
    target: tuple
    oracle: Any = None
    id: int = 0
    seed: int = 0
    pointer: bool = False

    @property
    def shape_key(self) -> Tuple[int, int]:
        return len(self.source), len(self.target)


@dataclass
class TspInstance(TaskInstance):
    pointer: bool = True

    @property
    def cities(self) -> np.ndarray:
        return np.asarray(self.source, dtype=np.float64)

    @property
    def optimal_tour(self) -> Tuple[int, ...]:
        return self.target

    @property
    def optimal_length(self) -> float:
        return self.oracle


def total_vocab(vocab_size: int) -> int:
    """Number of ids needed for ``vocab_size`` content symbols plus the reserved ones."""
    return vocab_size + FIRST_SYMBOL


def _range(r: Range, name: str, lo_min: int) -> Tuple[int, int]:
    lo, hi = (r, r) if isinstance(r, int) else tuple(r)
    if lo < lo_min or hi < lo:
        raise ValueError(f"bad {name} range ({lo}, {hi}); need {lo_min} <= lo <= hi")
    return int(lo), int(hi)


def _symbols(rng: np.random.Generator, vocab_size: int, n: int) -> Tuple[int, ...]:
    return tuple(int(s) for s in rng.integers(FIRST_SYMBOL, FIRST_SYMBOL + vocab_size, size=n))


def gen_copy(seed: int, count: int, vocab_size: int, len_range: Range) -> List[TaskInstance]:
    """Target is the source followed by EOS."""
    if vocab_size < 3:
        raise ValueError("copy task needs at least 3 content symbols")
    lo, hi = _range(len_range, "length", 1)
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        src = _symbols(rng, vocab_size, int(rng.integers(lo, hi + 1)))
        out.append(TaskInstance(src, src + (EOS,), id=i, seed=seed))
    return out


def gen_reverse(seed: int, count: int, vocab_size: int, len_range: Range) -> List[TaskInstance]:
    """Target is the reversed source followed by EOS."""
    if vocab_size < 3:
        raise ValueError("reverse task needs at least 3 content symbols")
    lo, hi = _range(len_range, "length", 1)
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        src = _symbols(rng, vocab_size, int(rng.integers(lo, hi + 1)))
        out.append(TaskInstance(src, src[::-1] + (EOS,), id=i, seed=seed))
    return out


def gen_monotone(seed: int, count: int, n_phones: Range, frames_range: Range = (2, 4),
                 n_types: int = 6, noise: float = 0.1) -> List[TaskInstance]:
    """Frame sequences where each target phone spans a run of noisy frames.

    The target is a phone sequence without immediate repeats (a repeated phone
    would make the segment count unrecoverable) plus EOS.  The source repeats
    each phone's symbol for a random number of frames; each frame is then
    replaced by a different random symbol with probability ``noise``.
    ``oracle["spans"]`` lists the half-open frame span of every phone.
    """
    p_lo, p_hi = _range(n_phones, "phone count", 1)
    f_lo, f_hi = _range(frames_range, "frames-per-phone", 2)
    if n_types < 2:
        raise ValueError("need at least 2 phone types")
    if not 0.0 <= noise < 1.0:
        raise ValueError("noise rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = int(rng.integers(p_lo, p_hi + 1))
        phones = [int(rng.integers(n_types))]
        while len(phones) < n:
            nxt = int(rng.integers(n_types - 1))
            phones.append(nxt + (nxt >= phones[-1]))
        frames, spans = [], []
        for p in phones:
            k = int(rng.integers(f_lo, f_hi + 1))
            spans.append((len(frames), len(frames) + k))
            frames.extend([p] * k)
        hit = rng.random(len(frames)) < noise
        sub = rng.integers(n_types - 1, size=len(frames))
        frames = [int(s + (s >= f)) if h else f for f, h, s in zip(frames, hit, sub)]
        src = tuple(f + FIRST_SYMBOL for f in frames)
        tgt = tuple(p + FIRST_SYMBOL for p in phones) + (EOS,)
        out.append(TaskInstance(src, tgt, oracle={"spans": spans}, id=i, seed=seed))
    return out


def gen_sort(seed: int, count: int, n_range: Range, vocab_size: int = 20) -> List[TaskInstance]:
    """Distinct random symbols; the target lists source positions in ascending symbol order."""
    lo, hi = _range(n_range, "length", 1)
    if hi > vocab_size:
        raise ValueError("sort lengths cannot exceed the number of distinct symbols")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = int(rng.integers(lo, hi + 1))
        vals = rng.choice(vocab_size, size=n, replace=False)
        src = tuple(int(v) + FIRST_SYMBOL for v in vals)
        tgt = tuple(int(j) for j in np.argsort(vals, kind="stable"))
        out.append(TaskInstance(src, tgt, id=i, seed=seed, pointer=True))
    return out


def tour_length(cities, perm: Sequence[int]) -> float:
    """Closed tour length, including the edge back to the first city."""
    pts = np.asarray(cities, dtype=np.float64)
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(len(pts))):
        raise ValueError(f"{perm} is not a permutation of 0..{len(pts) - 1}")
    total = 0.0
    for a, b in zip(perm, perm[1:] + perm[:1]):
        total += math.hypot(pts[a, 0] - pts[b, 0], pts[a, 1] - pts[b, 1])
    return total


def solve_tsp(cities) -> Tuple[Tuple[int, ...], float]:
    """Exhaustive search with city 0 first and direction fixed by ``tour[1] < tour[-1]``."""
    pts = np.asarray(cities, dtype=np.float64)
    n = len(pts)
    if not 2 <= n <= MAX_TSP_CITIES:
        raise ValueError(f"TSP size must be in [2, {MAX_TSP_CITIES}], got {n}")
    best, best_len = None, math.inf
    for rest in itertools.permutations(range(1, n)):
        if len(rest) > 1 and rest[0] > rest[-1]:
            continue
        tour = (0,) + rest
        length = tour_length(pts, tour)
        if length < best_len:
            best, best_len = tour, length
    return best, best_len


def gen_tsp(seed: int, count: int, n: int) -> List[TspInstance]:
    if not 2 <= n <= MAX_TSP_CITIES:
        raise ValueError(f"TSP size must be in [2, {MAX_TSP_CITIES}], got {n}")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        pts = rng.random((n, 2))
        tour, length = solve_tsp(pts)
        src = tuple((float(x), float(y)) for x, y in pts)
        out.append(TspInstance(src, tour, oracle=length, id=i, seed=seed))
    return out


GENERATORS = {
    "copy": gen_copy,
    "reverse": gen_reverse,
    "monotone": gen_monotone,
    "sort": gen_sort,
    "tsp": gen_tsp,
}


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def format_instance(inst: TaskInstance) -> str:
    if isinstance(inst, TspInstance):
        cities = " ".join(f"{x!r},{y!r}" for x, y in inst.source)
        tour = " ".join(str(p) for p in inst.target)
        return f"CITIES\t{cities}\tOPT\t{tour}\tLEN\t{inst.oracle!r}"
    src = " ".join(str(s) for s in inst.source)
    tgt = " ".join(str(t) for t in inst.target)
    return f"SRC\t{src}\tTGT\t{tgt}"


def parse_instance(line: str, index: int = 0, pointer: Optional[bool] = None) -> TaskInstance:
    parts = line.rstrip("\n").split("\t")
    if parts[0] == "CITIES":
        if len(parts) != 6 or parts[2] != "OPT" or parts[4] != "LEN":
            raise ValueError(f"line {index + 1}: malformed TSP record")
        cities = tuple(tuple(float(v) for v in c.split(",")) for c in parts[1].split())
        tour = tuple(int(p) for p in parts[3].split())
        return TspInstance(cities, tour, oracle=float(parts[5]), id=index)
    if parts[0] != "SRC" or len(parts) != 4 or parts[2] != "TGT":
        raise ValueError(f"line {index + 1}: expected SRC<TAB>...<TAB>TGT<TAB>...")
    src = tuple(int(s) for s in parts[1].split())
    tgt = tuple(int(t) for t in parts[3].split())
    if pointer is None:
        pointer = len(tgt) == len(src) and sorted(tgt) == list(range(len(src)))
    return TaskInstance(src, tgt, id=index, pointer=pointer)


def write_instances(path: Union[str, Path], instances: Iterable[TaskInstance]) -> None:
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(format_instance(inst) + "\n")


def read_instances(path: Union[str, Path], pointer: Optional[bool] = None) -> List[TaskInstance]:
    with open(path) as fh:
        return [parse_instance(line, i, pointer) for i, line in enumerate(fh) if line.strip()]
