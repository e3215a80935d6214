"""Model configuration and parameter assembly for the encoder-decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import tensor as T
from .attention import AttentionParams
from .cells import GruParams, ParamGroup, uniform, zeros
from .encoders import (BiRNNParams, ContextSet, Embedding, MeanPoolParams, PointLift, birnn_encode,
                       embed_tokens, meanpool_encode, point_encode)
from .tensor import Tensor

ENCODERS = ("birnn", "meanpool", "point")
DECODERS = ("seq", "pointer")
ATTENTION = ("soft", "hard", "location")


@dataclass
class ModelConfig:
    tgt_vocab: int = 0
    src_vocab: int = 0
    encoder: str = "birnn"
    decoder: str = "seq"
    attention: str = "soft"
    hidden: int = 32
    d_emb: int = 16
    d_a: int = 32
    K: int = 3
    bos: int = 1
    eos: int = 2
    temperature: float = 1.0

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder {self.decoder!r}")
        if self.attention not in ATTENTION:
            raise ValueError(f"unknown attention mode {self.attention!r}")
        if self.attention == "location" and self.K % 2 == 0:
            raise ValueError(f"K must be odd for location-aware attention, got {self.K}")
        if self.decoder == "seq":
            if self.tgt_vocab < 2:
                raise ValueError("target vocabulary needs at least 2 symbols")
            if not (0 <= self.bos < self.tgt_vocab and 0 <= self.eos < self.tgt_vocab):
                raise ValueError("bos/eos ids must lie inside the target vocabulary")
        if self.encoder != "point" and self.src_vocab < 1:
            raise ValueError("token encoders need a source vocabulary")
        for name in ("hidden", "d_emb", "d_a"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def d_c(self) -> int:
        return self.hidden if self.encoder == "meanpool" else 2 * self.hidden

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, object]) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise KeyError(k)
            default = getattr(cls, k)
            out[k] = type(default)(v)
        return cls(**out)


@dataclass
class DecoderParams(ParamGroup):
    gru: GruParams
    init_W: Tensor
    init_b: Tensor
    attn: AttentionParams
    embed: Optional[Embedding] = None
    out_W: Optional[Tensor] = None
    out_b: Optional[Tensor] = None


class Seq2Seq:
    """Attention-based encoder-decoder with all parameters in float64 tensors.

    Parameter order (and therefore the random initialisation) is fixed by the
    config, so the same ``(config, seed)`` always yields identical weights.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        c = config
        rng = np.random.default_rng(seed)
        self.src_embed: Optional[Embedding] = None
        self.lift: Optional[PointLift] = None
        if c.encoder == "point":
            self.lift = PointLift.init(rng, c.d_emb)
        else:
            self.src_embed = Embedding.init(rng, c.src_vocab, c.d_emb)
        if c.encoder == "meanpool":
            self.encoder = MeanPoolParams.init(rng, c.hidden, c.d_emb)
        else:
            self.encoder = BiRNNParams.init(rng, c.hidden, c.d_emb)
        window = c.K if c.attention == "location" else None
        attn = AttentionParams.init(rng, c.d_a, c.hidden, c.d_c, window)
        if c.decoder == "seq":
            self.decoder = DecoderParams(
                gru=GruParams.init(rng, c.hidden, c.d_emb + c.d_c),
                init_W=uniform(rng, c.hidden, c.d_c),
                init_b=zeros(c.hidden),
                attn=attn,
                embed=Embedding.init(rng, c.tgt_vocab, c.d_emb),
                out_W=uniform(rng, c.tgt_vocab, c.hidden + c.d_c + c.d_emb),
                out_b=zeros(c.tgt_vocab),
            )
        else:
            self.decoder = DecoderParams(
                gru=GruParams.init(rng, c.hidden, c.d_c),
                init_W=uniform(rng, c.hidden, c.d_c),
                init_b=zeros(c.hidden),
                attn=attn,
            )

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        if self.src_embed is not None:
            yield from self.src_embed.named_parameters("src_embed.")
        if self.lift is not None:
            yield from self.lift.named_parameters("lift.")
        yield from self.encoder.named_parameters("encoder.")
        yield from self.decoder.named_parameters("decoder.")

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def encode(self, sources) -> ContextSet:
        """Encode a batch of equal-length sources.

        Token models take a ``[B, T]`` int array; the point encoder takes
        ``[B, n, 2]`` coordinates.
        """
        if self.config.encoder == "point":
            return point_encode(sources, self.lift, self.encoder)
        inputs, positions = embed_tokens(self.src_embed, np.atleast_2d(sources))
        if self.config.encoder == "meanpool":
            return meanpool_encode(self.encoder, inputs, positions)
        return birnn_encode(self.encoder, inputs, positions)

    def initial_state(self, ctx: ContextSet) -> Tensor:
        """``z_0 = tanh(W mean(c) + b)``."""
        return T.tanh(T.linear(ctx.mean(), self.decoder.init_W, self.decoder.init_b))

    def copy_from(self, other: "Seq2Seq") -> None:
        mine = self.parameters()
        for name, p in other.parameters().items():
            mine[name].value = p.value.copy()

    def num_parameters(self) -> int:
        return int(np.sum([p.value.size for p in self.parameters().values()]))
