"""Run configuration: a validated ``key=value`` text file.

Every key has a type and an allowed range; unknown keys are rejected.  The
same keys are accepted as ``--key value`` command-line flags.
"""

from __future__ import annotations

import math
import os
from typing import Dict, List, Mapping, Optional

import numpy as np

from .model import ModelConfig, Seq2Seq
from .tasks import (BOS, EOS, TaskInstance, gen_copy, gen_monotone, gen_reverse, gen_sort, gen_tsp,
                    total_vocab)
from .training import TrainConfig

TASKS = ("copy", "reverse", "monotone", "sort", "tsp")
POINTER_TASKS = ("sort", "tsp")
SEED_ENV = "ATNK_SEED"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def _choice(*options):
    def check(v):
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
    return check


def _between(lo, hi, lo_open=False, hi_open=False):
    def check(v):
        if (v <= lo if lo_open else v < lo) or (v >= hi if hi_open else v > hi):
            left = "(" if lo_open else "["
            right = ")" if hi_open else "]"
            raise ValueError(f"must lie in {left}{lo}, {hi}{right}")
    return check


def _odd(v):
    if v % 2 == 0:
        raise ValueError("must be odd")


# key -> (type, default, validators)
SCHEMA = {
    "task": (str, "copy", [_choice(*TASKS)]),
    "attention": (str, "soft", [_choice("soft", "hard", "location")]),
    "encoder": (str, "birnn", [_choice("birnn", "meanpool")]),
    "hidden": (int, 32, [_between(1, 1024)]),
    "d_emb": (int, 16, [_between(1, 1024)]),
    "d_a": (int, 32, [_between(1, 1024)]),
    "K": (int, 3, [_between(1, 63), _odd]),
    "lr": (float, 0.3, [_between(0.0, 100.0, lo_open=True)]),
    "epochs": (int, 30, [_between(0, 100_000)]),
    "seed": (int, 0, [_between(0, 2 ** 32 - 1)]),
    "beam": (int, 1, [_between(1, 1000)]),
    "M_samples": (int, 4, [_between(1, 1_000_000)]),
    "baseline_decay": (float, 0.9, [_between(0.0, 1.0, hi_open=True)]),
    "variance_norm": (int, 0, [_between(0, 1)]),
    "batch_size": (int, 16, [_between(1, 100_000)]),
    "grad_clip": (float, 5.0, [_between(0.0, math.inf, lo_open=True)]),
    "vocab": (int, 10, [_between(3, 100_000)]),
    "min_len": (int, 1, [_between(1, 1000)]),
    "max_len": (int, 10, [_between(1, 1000)]),
    "min_frames": (int, 2, [_between(2, 100)]),
    "max_frames": (int, 4, [_between(2, 100)]),
    "noise": (float, 0.1, [_between(0.0, 1.0, hi_open=True)]),
    "n_cities": (int, 5, [_between(2, 9)]),
    "n_train": (int, 2000, [_between(1, 10_000_000)]),
    "n_dev": (int, 200, [_between(0, 10_000_000)]),
    "pointer_mask": (int, 0, [_between(0, 1)]),
    "mask_epochs": (int, 0, [_between(0, 100_000)]),
}


def _convert(key: str, raw) -> object:
    if key not in SCHEMA:
        raise ConfigError(key, "unknown key")
    typ, _, checks = SCHEMA[key]
    try:
        if typ is int and isinstance(raw, str):
            value = int(raw.strip())
        elif typ is float and isinstance(raw, str):
            value = float(raw.strip())
        else:
            value = typ(raw.strip() if isinstance(raw, str) else raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot parse {raw!r} as {typ.__name__}") from None
    if typ is float and math.isnan(value):
        raise ConfigError(key, "must not be NaN")
    for check in checks:
        try:
            check(value)
        except ValueError as exc:
            raise ConfigError(key, f"{value!r} {exc}") from None
    return value


class RunConfig:
    """Validated run settings; attribute access per key."""

    def __init__(self, values: Optional[Mapping[str, object]] = None):
        self._values: Dict[str, object] = {k: entry[1] for k, entry in SCHEMA.items()}
        for k, v in (values or {}).items():
            self._values[k] = _convert(k, v)
        self._cross_check()

    def _cross_check(self) -> None:
        v = self._values
        if v["min_len"] > v["max_len"]:
            raise ConfigError("min_len", "must not exceed max_len")
        if v["min_frames"] > v["max_frames"]:
            raise ConfigError("min_frames", "must not exceed max_frames")
        if v["task"] == "sort" and v["max_len"] > v["vocab"]:
            raise ConfigError("max_len", "sort lengths cannot exceed vocab")
        if v["task"] in POINTER_TASKS and v["attention"] == "hard":
            raise ConfigError("attention", "pointer tasks use soft or location attention")
        if v["task"] in POINTER_TASKS and v["encoder"] == "meanpool":
            raise ConfigError("encoder", "pointer tasks need one context per input position")

    def __getattr__(self, key: str):
        try:
            return self.__dict__["_values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self._values == other._values

    def as_dict(self) -> Dict[str, object]:
        return dict(self._values)

    def replace(self, **overrides) -> "RunConfig":
        vals = self.as_dict()
        vals.update(overrides)
        return RunConfig(vals)

    def to_text(self) -> str:
        return "".join(f"{k}={self._values[k]!r}\n" if isinstance(self._values[k], float)
                       else f"{k}={self._values[k]}\n" for k in SCHEMA)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values: Dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(line, f"line {lineno} is not key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(key, "unknown key")
            values[key] = raw
        return cls(values)

    @classmethod
    def load(cls, path, overrides: Optional[Mapping[str, object]] = None,
             env: Optional[Mapping[str, str]] = None) -> "RunConfig":
        """Read ``path`` (if given), then apply ``$ATNK_SEED``, then explicit overrides."""
        text = open(path).read() if path else ""
        base = cls.from_text(text).as_dict()
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            base["seed"] = _convert("seed", env[SEED_ENV])
        base.update(overrides or {})
        return cls(base)

    # -- derived objects ------------------------------------------------------

    @property
    def pointer(self) -> bool:
        return self.task in POINTER_TASKS

    def model_config(self) -> ModelConfig:
        n_ids = total_vocab(self.vocab)
        return ModelConfig(
            tgt_vocab=0 if self.pointer else n_ids,
            src_vocab=0 if self.task == "tsp" else n_ids,
            encoder="point" if self.task == "tsp" else self.encoder,
            decoder="pointer" if self.pointer else "seq",
            attention=self.attention,
            hidden=self.hidden,
            d_emb=self.d_emb,
            d_a=self.d_a,
            K=self.K,
            bos=BOS,
            eos=EOS,
        )

    def build_model(self) -> Seq2Seq:
        return Seq2Seq(self.model_config(), seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            grad_clip=self.grad_clip,
            seed=self.seed,
            batch_size=self.batch_size,
            M_samples=self.M_samples,
            baseline_decay=self.baseline_decay,
            variance_norm=bool(self.variance_norm),
            pointer_mask=bool(self.pointer_mask),
            mask_epochs=self.mask_epochs,
        )

    def split_seed(self, split: str) -> int:
        salt = {"train": 1, "dev": 2, "test": 3}[split]
        return int(np.random.SeedSequence([self.seed, salt]).generate_state(1)[0])

    def generate(self, split: str, count: Optional[int] = None) -> List[TaskInstance]:
        seed = self.split_seed(split)
        if count is None:
            count = self.n_train if split == "train" else self.n_dev
        return generate_task(self, seed, count)


def generate_task(cfg: RunConfig, seed: int, count: int) -> List[TaskInstance]:
    lens = (cfg.min_len, cfg.max_len)
    if cfg.task == "copy":
        return gen_copy(seed, count, cfg.vocab, lens)
    if cfg.task == "reverse":
        return gen_reverse(seed, count, cfg.vocab, lens)
    if cfg.task == "monotone":
        return gen_monotone(seed, count, lens, (cfg.min_frames, cfg.max_frames), n_types=cfg.vocab,
                            noise=cfg.noise)
    if cfg.task == "sort":
        return gen_sort(seed, count, lens, vocab_size=cfg.vocab)
    return gen_tsp(seed, count, cfg.n_cities)
