"""Binary checkpoint format.

Layout (all integers little-endian ``u32``)::

    b"ATNK" | version | config length | config JSON (utf-8)
    | record count | records... | CRC-32 of everything before it

Each record is ``name length | name | rank | dims... | float64 LE payload``.
The config block holds the model config (enough to rebuild the parameter
layout) and, optionally, the run config that produced it.
"""

from __future__ import annotations

import json
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .config import ConfigError, RunConfig
from .model import ModelConfig, Seq2Seq

MAGIC = b"ATNK"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(Exception):
    """Base class for every checkpoint failure."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class CrcError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ConfigBlockError(CheckpointError):
    pass


class ParameterNameError(CheckpointError):
    pass


class ParameterShapeError(CheckpointError):
    def __init__(self, name: str, expected, found):
        super().__init__(f"parameter {name!r}: expected shape {tuple(expected)}, file has {tuple(found)}")
        self.name = name


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    run_config: Optional[RunConfig] = None
    version: int = VERSION

    def build_model(self) -> Seq2Seq:
        model = Seq2Seq(self.model_config)
        for name, p in model.named_parameters():
            p.value = self.params[name].copy()
        return model


def encode_checkpoint(model: Seq2Seq, run_config: Optional[RunConfig] = None) -> bytes:
    block = {"model": model.config.to_dict(),
             "run": None if run_config is None else run_config.to_text()}
    cfg = json.dumps(block, sort_keys=True).encode()
    params = list(model.named_parameters())
    out = bytearray(MAGIC)
    out += _U32.pack(VERSION)
    out += _U32.pack(len(cfg)) + cfg
    out += _U32.pack(len(params))
    for name, p in params:
        raw = name.encode()
        out += _U32.pack(len(raw)) + raw
        out += _U32.pack(p.value.ndim)
        for d in p.value.shape:
            out += _U32.pack(d)
        out += np.ascontiguousarray(p.value, dtype="<f8").tobytes()
    out += _U32.pack(zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


def save_checkpoint(path: Union[str, Path], model: Seq2Seq,
                    run_config: Optional[RunConfig] = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, run_config))


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data, self.pos, self.end = data, 0, end

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedError(f"checkpoint ends inside {what} (offset {self.pos})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_checkpoint(data: bytes) -> Checkpoint:
    """Parse and validate checkpoint bytes.

    Raises:
        BadMagicError, VersionError, CrcError, TruncatedError,
        ConfigBlockError, ParameterNameError, ParameterShapeError.
    """
    if len(data) < 8:
        raise TruncatedError(f"checkpoint is only {len(data)} bytes")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version = _U32.unpack(data[4:8])[0]
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}, this build reads {VERSION}")
    if len(data) < 12:
        raise TruncatedError("checkpoint has no CRC trailer")
    stored = _U32.unpack(data[-4:])[0]
    actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise CrcError(f"CRC mismatch: stored {stored:08x}, computed {actual:08x}")

    rd = _Reader(data, len(data) - 4)
    rd.pos = 8
    cfg_len = rd.u32("config length")
    try:
        block = json.loads(rd.take(cfg_len, "config block").decode())
        model_config = ModelConfig.from_dict(block["model"])
        run_config = None if block.get("run") is None else RunConfig.from_text(block["run"])
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise ConfigBlockError(f"invalid config block: {exc}") from None

    expected = OrderedDict((n, p.shape) for n, p in Seq2Seq(model_config).named_parameters())
    count = rd.u32("record count")
    if count != len(expected):
        raise ParameterNameError(f"checkpoint has {count} parameters, config implies {len(expected)}")
    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for want in expected:
        name = rd.take(rd.u32("name length"), "parameter name").decode(errors="replace")
        if name != want:
            raise ParameterNameError(f"expected parameter {want!r}, found {name!r}")
        rank = rd.u32(f"rank of {name}")
        dims = tuple(rd.u32(f"dims of {name}") for _ in range(rank))
        if dims != tuple(expected[name]):
            raise ParameterShapeError(name, expected[name], dims)
        n = int(np.prod(dims, dtype=np.int64))
        payload = rd.take(8 * n, f"payload of {name}")
        params[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if rd.pos != rd.end:
        raise TruncatedError(f"{rd.end - rd.pos} unexpected bytes after the last parameter")
    return Checkpoint(model_config, params, run_config, version)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def load_model(path: Union[str, Path]) -> Tuple[Seq2Seq, Optional[RunConfig]]:
    ckpt = load_checkpoint(path)
    return ckpt.build_model(), ckpt.run_config
