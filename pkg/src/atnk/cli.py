"""Command-line front end: ``atnk {train,eval,decode,attend,gen}``.

Exit codes: 0 ok, 1 I/O or input-file error, 2 configuration error,
3 numeric failure, 4 corrupt or mismatched checkpoint.
"""

from __future__ import annotations

import argparse
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import SCHEMA, ConfigError, RunConfig
from .decoder import beam_decode, greedy_decode, pointer_decode
from .export import export_attention
from .model import Seq2Seq
from .tasks import TaskInstance, TspInstance, read_instances, tour_length, write_instances
from .tensor import NumericError
from .training import evaluate, sources_of, train

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("run config overrides")
    for key in SCHEMA:
        group.add_argument(f"--{key}", dest=f"cfg_{key}", metavar="VALUE", default=None)


def _overrides(args) -> Dict[str, str]:
    return {k: getattr(args, f"cfg_{k}") for k in SCHEMA if getattr(args, f"cfg_{k}", None) is not None}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="atnk", description="Attention-based encoder-decoder toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on generated task data")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="report nll/acc (and TSP validity/gap) on an instance file")
    p.add_argument("checkpoint")
    p.add_argument("data", help="instance file written by `atnk gen`")
    _add_config_flags(p)

    p = sub.add_parser("decode", help="print decoded outputs, one line per instance")
    p.add_argument("checkpoint")
    p.add_argument("data")
    _add_config_flags(p)

    p = sub.add_parser("attend", help="export attention matrices as CSV and PGM")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--out-prefix", required=True)
    _add_config_flags(p)

    p = sub.add_parser("gen", help="write a task instance file")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--count", type=int, default=None)
    _add_config_flags(p)
    return ap


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _load(args):
    ckpt = load_checkpoint(args.checkpoint)
    run = ckpt.run_config or RunConfig()
    run = RunConfig.load(None, {**run.as_dict(), **_overrides(args)}, env={})
    return ckpt.build_model(), run


def _max_len(inst: TaskInstance) -> int:
    return 2 * len(inst.source) + 2


def _canonical_tour(perm: Sequence[int]) -> tuple:
    p = list(perm)
    k = p.index(0)
    p = p[k:] + p[:k]
    if len(p) > 2 and p[1] > p[-1]:
        p = [p[0]] + p[1:][::-1]
    return tuple(p)


def _shape_groups(instances: Sequence[TaskInstance]) -> Dict[tuple, List[int]]:
    groups: Dict[tuple, List[int]] = {}
    for i, inst in enumerate(instances):
        groups.setdefault(inst.shape_key, []).append(i)
    return groups


def decode_instances(model: Seq2Seq, instances: Sequence[TaskInstance], beam: int = 1,
                     mask_visited: bool = True):
    """Decode every instance in input order.

    Pointer models decode greedily (``beam`` is ignored); sequence models use
    batched greedy search for ``beam == 1`` and per-instance beam search
    otherwise.  Returns ``(outputs, log_probs, alignments)``; alignments come
    from the greedy pass and are ``None`` under beam search.
    """
    n = len(instances)
    outputs: List[tuple] = [()] * n
    logps = np.zeros(n)
    aligns: List[Optional[np.ndarray]] = [None] * n
    pointer = model.config.decoder == "pointer"
    for idx in _shape_groups(instances).values():
        group = [instances[i] for i in idx]
        if not pointer and beam > 1:
            for i, inst in zip(idx, group):
                ctx = model.encode(sources_of([inst]))
                outputs[i], logps[i] = beam_decode(model, ctx, beam, _max_len(inst))[0]
            continue
        ctx = model.encode(sources_of(group))
        if pointer:
            perm, lp, trace = pointer_decode(model, ctx, mask_visited=mask_visited)
            seqs = [tuple(int(v) for v in row) for row in perm]
        else:
            seqs, trace = greedy_decode(model, ctx, _max_len(group[0]))
            lp = trace.log_prob
        for row, i in enumerate(idx):
            outputs[i] = seqs[row]
            logps[i] = lp[row]
            aligns[i] = trace.alignment(row, len(seqs[row]))
    return outputs, logps, aligns


def tsp_report(model: Seq2Seq, instances: Sequence[TspInstance]) -> Dict[str, float]:
    """Greedy tours: ``valid`` is the unmasked valid fraction, ``gap`` the masked mean gap."""
    raw, _, _ = decode_instances(model, instances, mask_visited=False)
    tours, _, _ = decode_instances(model, instances, mask_visited=True)
    valid = np.mean([sorted(t) == list(range(len(t))) for t in raw])
    gaps = [(tour_length(inst.cities, t) - inst.optimal_length) / inst.optimal_length
            for inst, t in zip(instances, tours)]
    return {"valid": float(valid), "gap": float(np.mean(gaps))}


def seq_accuracy(model: Seq2Seq, instances: Sequence[TaskInstance], beam: int) -> float:
    outputs, _, _ = decode_instances(model, instances, beam=beam)
    if model.config.decoder == "pointer" and all(isinstance(i, TspInstance) for i in instances):
        hits = [_canonical_tour(o) == _canonical_tour(i.target) for o, i in zip(outputs, instances)]
    else:
        hits = [tuple(o) == tuple(i.target) for o, i in zip(outputs, instances)]
    return float(np.mean(hits)) if hits else float("nan")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    run = RunConfig.load(args.config, _overrides(args))
    train_set = run.generate("train")
    dev_set = run.generate("dev")
    model = run.build_model()
    train(model, train_set, run.train_config(), dev_set,
          on_record=lambda rec: print(rec.line(), flush=True))
    save_checkpoint(args.out, model, run)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, run = _load(args)
    data = read_instances(args.data)
    m = evaluate(model, data)
    acc = seq_accuracy(model, data, run.beam)
    print(f"nll={m['nll']:.6f} acc={acc:.6f} n={m['n']}")
    tsp = [d for d in data if isinstance(d, TspInstance)]
    if tsp and model.config.encoder == "point":
        r = tsp_report(model, tsp)
        print(f"valid={r['valid']:.6f} gap={r['gap']:.6f}")
    return EXIT_OK


def cmd_decode(args) -> int:
    model, run = _load(args)
    data = read_instances(args.data)
    outputs, logps, _ = decode_instances(model, data, beam=run.beam)
    for i, (out, lp) in enumerate(zip(outputs, logps)):
        symbols = " ".join(str(v) for v in out)
        print(f"{i}\t{symbols}\t{lp:.6f}")
    return EXIT_OK


def cmd_attend(args) -> int:
    model, _ = _load(args)
    data = read_instances(args.data)
    _, _, aligns = decode_instances(model, data)
    for i, a in enumerate(aligns):
        export_attention(args.out_prefix, i, a)
    print(f"wrote {len(aligns)} attention matrices to {args.out_prefix}-*.csv/.pgm")
    return EXIT_OK


def cmd_gen(args) -> int:
    run = RunConfig.load(args.config, _overrides(args))
    if args.count is not None and args.count < 0:
        raise ConfigError("count", "must be non-negative")
    data = run.generate(args.split, args.count)
    write_instances(args.out, data)
    print(f"wrote {len(data)} {run.task} instances to {args.out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "decode": cmd_decode,
            "attend": cmd_attend, "gen": cmd_gen}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"checkpoint error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
