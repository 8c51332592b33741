"""Reusable network blocks: conv-BN-act, residual encoder, FPN decoder, head.

Blocks are functional: parameters live in a ParamStore under a name
prefix, created once by the matching ``init_*`` helper and fetched by
name at call time. Same-size spatial behavior everywhere comes from
padding = dilation * (kernel - 1) / 2, which is why kernels must be odd.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from salfuse.errors import GeometryError, ShapeError
from salfuse.params import ParamStore, init_bn, init_conv
from salfuse.tensor import (Tensor, activation, add, batchnorm2d, conv2d,
                            sigmoid, upsample_bilinear)

_ACTS = ("relu", "sigmoid", "none")


def init_cbr(store: ParamStore, name: str, cin: int, cout: int, kernel: int,
             rng: np.random.Generator) -> None:
    init_conv(store, f"{name}.conv", cout, cin, kernel, rng, bias=False)
    init_bn(store, f"{name}.bn", cout)


def cbr(x: Tensor, store: ParamStore, name: str, *, kernel: int = 3,
        stride: int = 1, dilation: int = 1, act: str = "relu",
        training: bool = False) -> Tensor:
    """conv (no bias) -> batchnorm -> activation, spatial-size preserving
    at stride 1 for any odd kernel/dilation combination."""
    if kernel % 2 == 0:
        raise ValueError(f"cbr kernel must be odd, got {kernel}")
    if act not in _ACTS:
        raise ValueError(f"cbr activation must be one of {_ACTS}, got {act!r}")
    padding = dilation * (kernel - 1) // 2
    y = conv2d(x, store[f"{name}.conv.w"], stride=stride, padding=padding,
               dilation=dilation)
    y = batchnorm2d(y, store[f"{name}.bn.gamma"], store[f"{name}.bn.beta"],
                    store[f"{name}.bn.running_mean"], store[f"{name}.bn.running_var"],
                    training=training)
    if act == "none":
        return y
    return activation(y, act)


# ---------------------------------------------------------------------------
# residual encoder

STAGE_STRIDES = (2, 4, 8, 16, 32)


@dataclass(frozen=True)
class EncoderConfig:
    input_channels: int = 3
    stage_channels: tuple = (8, 16, 32, 64, 64)
    blocks_per_stage: tuple = (1, 1, 1, 1, 1)
    skip_stages: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.stage_channels) != 5 or len(self.blocks_per_stage) != 5:
            raise ValueError("encoder configs describe exactly 5 stages")
        if any(c < 1 for c in self.stage_channels) or \
           any(b < 1 for b in self.blocks_per_stage):
            raise ValueError("stage channels and block counts must be >= 1")
        skips = frozenset(self.skip_stages)
        if not skips <= {1, 2}:
            raise ValueError(f"only stages 1 and 2 can be skipped, got {sorted(skips)}")
        object.__setattr__(self, "skip_stages", skips)

    @property
    def stages(self) -> list[int]:
        return [s for s in range(1, 6) if s not in self.skip_stages]

    def stage_in_channels(self, stage: int) -> int:
        if stage == self.stages[0]:
            return self.input_channels
        return self.stage_channels[stage - 2]


def init_residual_block(store: ParamStore, name: str, cin: int, cout: int,
                        rng: np.random.Generator, projection: bool) -> None:
    init_cbr(store, f"{name}.conv1", cin, cout, 3, rng)
    init_cbr(store, f"{name}.conv2", cout, cout, 3, rng)
    if projection:
        init_conv(store, f"{name}.proj.conv", cout, cin, 1, rng, bias=False)
        init_bn(store, f"{name}.proj.bn", cout)


def residual_block(x: Tensor, store: ParamStore, name: str, *, stride: int = 1,
                   training: bool = False) -> Tensor:
    """branch(x) + shortcut(x); the shortcut is a 1x1 conv-BN projection
    whenever stride or channel count changes, identity otherwise."""
    branch = cbr(x, store, f"{name}.conv1", kernel=3, stride=stride,
                 training=training)
    branch = cbr(branch, store, f"{name}.conv2", kernel=3, training=training)
    if f"{name}.proj.conv.w" in store:
        short = conv2d(x, store[f"{name}.proj.conv.w"], stride=stride)
        short = batchnorm2d(short, store[f"{name}.proj.bn.gamma"],
                            store[f"{name}.proj.bn.beta"],
                            store[f"{name}.proj.bn.running_mean"],
                            store[f"{name}.proj.bn.running_var"],
                            training=training)
    else:
        if stride != 1 or branch.dims[1] != x.dims[1]:
            raise ShapeError(f"block {name} needs a projection shortcut")
        short = x
    return add(branch, short)


def init_encoder(store: ParamStore, prefix: str, cfg: EncoderConfig,
                 rng: np.random.Generator) -> None:
    for stage in cfg.stages:
        cout = cfg.stage_channels[stage - 1]
        cin = cfg.stage_in_channels(stage)
        for b in range(cfg.blocks_per_stage[stage - 1]):
            name = f"{prefix}.stage{stage}.block{b}"
            init_residual_block(store, name, cin if b == 0 else cout, cout, rng,
                                projection=(b == 0))


def encoder_stage(x: Tensor, store: ParamStore, prefix: str, stage: int,
                  cfg: EncoderConfig, *, training: bool = False) -> Tensor:
    """One stage: a stride-2 projection block then identity blocks."""
    h, w = x.dims[2], x.dims[3]
    if h % 2 or w % 2:
        raise GeometryError(f"stage {stage} input {h}x{w} is not divisible by 2")
    y = x
    for b in range(cfg.blocks_per_stage[stage - 1]):
        y = residual_block(y, store, f"{prefix}.stage{stage}.block{b}",
                           stride=2 if b == 0 else 1, training=training)
    return y


def encoder_forward(x: Tensor, store: ParamStore, prefix: str,
                    cfg: EncoderConfig, *, training: bool = False) -> dict[int, Tensor]:
    """Run all configured stages; returns {stage: side output}.

    The input must be cleanly divisible by the remaining downsampling
    factor (32 for a full 5-stage encoder) so every stage halves exactly.
    """
    if x.dims[1] != cfg.input_channels:
        raise ShapeError(f"encoder {prefix} expects {cfg.input_channels} input "
                         f"channels, got {x.dims[1]}")
    divisor = 2 ** len(cfg.stages)
    h, w = x.dims[2], x.dims[3]
    if h % divisor or w % divisor:
        raise GeometryError(f"input {h}x{w} is not a multiple of {divisor}")
    sides: dict[int, Tensor] = {}
    y = x
    for stage in cfg.stages:
        y = encoder_stage(y, store, prefix, stage, cfg, training=training)
        sides[stage] = y
    return sides


# ---------------------------------------------------------------------------
# FPN decoder

FPN_WIDTH = 64


def init_fpn(store: ParamStore, prefix: str, side_channels: dict[int, int],
             rng: np.random.Generator, width: int = FPN_WIDTH) -> None:
    for k in (2, 3, 4, 5):
        init_cbr(store, f"{prefix}.lateral{k}", side_channels[k], width, 1, rng)
    for k in (4, 3, 2):
        init_cbr(store, f"{prefix}.merge{k}", width, width, 3, rng)


def fpn_decode(sides: dict[int, Tensor], store: ParamStore, prefix: str, *,
               training: bool = False) -> tuple[Tensor, Tensor, Tensor]:
    """Top-down pyramid over side outputs s2..s5 (strides 4..32).

    Returns (F4_fpn, F3_fpn, F): merged maps at strides 16, 8 and 4.
    """
    missing = [k for k in (2, 3, 4, 5) if k not in sides]
    if missing:
        raise ShapeError(f"fpn_decode needs side outputs 2..5, missing {missing}")
    lat = {k: cbr(sides[k], store, f"{prefix}.lateral{k}", kernel=1,
                  training=training) for k in (2, 3, 4, 5)}
    f4 = cbr(add(lat[4], upsample_bilinear(lat[5], 2)), store,
             f"{prefix}.merge4", training=training)
    f3 = cbr(add(lat[3], upsample_bilinear(f4, 2)), store,
             f"{prefix}.merge3", training=training)
    f = cbr(add(lat[2], upsample_bilinear(f3, 2)), store,
            f"{prefix}.merge2", training=training)
    return f4, f3, f


# ---------------------------------------------------------------------------
# prediction head

def init_head(store: ParamStore, prefix: str, cin: int,
              rng: np.random.Generator) -> None:
    init_conv(store, f"{prefix}.conv", 1, cin, 1, rng, bias=True)


def prediction_head(x: Tensor, store: ParamStore, prefix: str,
                    target_hw: tuple[int, int]) -> Tensor:
    """1x1 conv to one channel, bilinear x4, sigmoid. Emits the saliency
    map at the input image's resolution."""
    h, w = x.dims[2], x.dims[3]
    if (h * 4, w * 4) != tuple(target_hw):
        raise GeometryError(f"head input {h}x{w} cannot reach target "
                            f"{target_hw} with a x4 upsample")
    y = conv2d(x, store[f"{prefix}.conv.w"], store[f"{prefix}.conv.b"])
    y = upsample_bilinear(y, 4)
    return sigmoid(y)
