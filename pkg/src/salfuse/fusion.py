"""Gate-regulated two-phase RGB-D fusion network.

Phase 1 runs separate RGB and depth encoder-decoder streams (residual
encoders + FPN decoders + type-based attention) and produces saliency
maps sal_r and sal_d. Phase 2 re-encodes a fused stream: a credibility
gate unit compares the two deepest encoder features and emits six
scalars in (0, 1) (three per modality, one per fused stage); each fused
stage input concatenates the running fused feature with gate-scaled
guidance features tapped from the phase-1 decoders. A third FPN decoder
plus attention and head yield sal_f.

sal_r depends only on the RGB stream, sal_d only on the depth stream;
only sal_f sees both. Gate scalars multiply whole feature maps, so
forcing a gate to zero removes its guidance stream exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from salfuse.attention import TamResult, init_tam, tam_forward
from salfuse.blocks import (EncoderConfig, cbr, encoder_forward, encoder_stage,
                            fpn_decode, init_cbr, init_encoder, init_fpn,
                            init_head, prediction_head)
from salfuse.errors import GeometryError, ShapeError
from salfuse.params import ParamStore, init_bn, init_conv
from salfuse.tensor import (Tensor, batchnorm2d, column, concat_channels,
                            conv2d, gap_spatial, reshape, scale_rows, sigmoid)

WIDTH = 64

GATE_NAMES = ("G1r", "G2r", "G3r", "G1d", "G2d", "G3d")


@dataclass(frozen=True)
class GateMode:
    """Gate source: learned from the stage-5 features, or forced constants."""

    kind: str
    values: tuple[float, ...] | None = None

    @classmethod
    def learned(cls) -> "GateMode":
        return cls(kind="learned")

    @classmethod
    def forced(cls, values) -> "GateMode":
        vals = tuple(float(v) for v in values)
        if len(vals) != 6:
            raise ValueError(f"forced gates need 6 values "
                             f"({', '.join(GATE_NAMES)}), got {len(vals)}")
        if any(v < 0.0 or v > 1.0 for v in vals):
            raise ValueError(f"forced gate values must lie in [0, 1], got {vals}")
        return cls(kind="forced", values=vals)


@dataclass
class GateWeights:
    """Per-image gate scalars: g_r and g_d are (N, 3) tensors ordered by stage."""

    g_r: Tensor
    g_d: Tensor

    def as_array(self) -> np.ndarray:
        """(N, 6) array ordered G1r, G2r, G3r, G1d, G2d, G3d."""
        return np.concatenate([self.g_r.data, self.g_d.data], axis=1)


@dataclass
class ResinResOutput:
    sal_r: Tensor
    sal_d: Tensor
    sal_f: Tensor
    gates: GateWeights
    tam_gates: dict[str, list[Tensor]]
    intermediates: dict[str, Tensor] = field(default_factory=dict)


def rgb_encoder_config() -> EncoderConfig:
    return EncoderConfig(input_channels=3)


def depth_encoder_config() -> EncoderConfig:
    return EncoderConfig(input_channels=1)


def fused_encoder_config() -> EncoderConfig:
    # stages 1-2 removed; stage 3 consumes the reduced stride-4 fusion input
    return EncoderConfig(input_channels=16, skip_stages=frozenset({1, 2}))


# ---------------------------------------------------------------------------
# gate unit


def init_gate_unit(store: ParamStore, prefix: str, in_channels: int,
                   rng: np.random.Generator) -> None:
    """Two independently parameterized conv-BN heads over Cat(S5_r, S5_d)."""
    for head in ("head_r", "head_d"):
        init_conv(store, f"{prefix}.{head}.conv", 3, in_channels, 3, rng)
        init_bn(store, f"{prefix}.{head}.bn", 3)


def gate_compute(s5_r: Tensor, s5_d: Tensor, store: ParamStore, prefix: str, *,
                 training: bool = False) -> GateWeights:
    """Credibility gates from the deepest features of both streams.

    Each head maps the concatenation to 3 channels (conv-BN), squashes
    through a sigmoid and spatially averages, giving one scalar in (0, 1)
    per fused stage per image. Differentiable end to end.
    """
    if s5_r.dims != s5_d.dims:
        raise ShapeError(f"stage-5 features disagree: {s5_r.dims} vs {s5_d.dims}")
    x = concat_channels([s5_r, s5_d])
    n = x.dims[0]
    cols = []
    for head in ("head_r", "head_d"):
        h = conv2d(x, store[f"{prefix}.{head}.conv.w"], padding=1)
        h = batchnorm2d(h, store[f"{prefix}.{head}.bn.gamma"],
                        store[f"{prefix}.{head}.bn.beta"],
                        store[f"{prefix}.{head}.bn.running_mean"],
                        store[f"{prefix}.{head}.bn.running_var"],
                        training=training)
        cols.append(reshape(gap_spatial(sigmoid(h)), (n, 3)))
    return GateWeights(g_r=cols[0], g_d=cols[1])


def forced_gates(values: tuple[float, ...], n: int, dtype) -> GateWeights:
    arr = np.asarray(values, dtype=dtype)
    g_r = Tensor(np.tile(arr[:3], (n, 1)))
    g_d = Tensor(np.tile(arr[3:], (n, 1)))
    return GateWeights(g_r=g_r, g_d=g_d)


# ---------------------------------------------------------------------------
# stage assembly


def assemble_stage_inputs(f2: Tensor, r: Tensor, d: Tensor, r3p: Tensor,
                          d3p: Tensor, r4p: Tensor, d4p: Tensor, f3: Tensor,
                          f4: Tensor, gates: GateWeights) \
        -> tuple[Tensor, Tensor, Tensor]:
    """Gated concatenations feeding the fused encoder stages:

        I1 = Cat(f2,  r * G1r,   d * G1d)    stride 4
        I2 = Cat(f3,  r3p * G2r, d3p * G2d)  stride 8
        I3 = Cat(f4,  r4p * G3r, d4p * G3d)  stride 16

    The base feature always enters at unit weight. A 1x1 cbr (applied by
    the caller) then reduces each Ik to the stage input width.
    """
    def gate_cat(base, rf, df, stage_idx):
        return concat_channels([
            base,
            scale_rows(rf, column(gates.g_r, stage_idx)),
            scale_rows(df, column(gates.g_d, stage_idx)),
        ])

    i1 = gate_cat(f2, r, d, 0)
    i2 = gate_cat(f3, r3p, d3p, 1)
    i3 = gate_cat(f4, r4p, d4p, 2)
    return i1, i2, i3


# ---------------------------------------------------------------------------
# full model


def build_model(seed: int = 0) -> ParamStore:
    """Create every parameter of the toy network in a fixed order."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    cfg_r, cfg_d, cfg_f = rgb_encoder_config(), depth_encoder_config(), \
        fused_encoder_config()
    init_encoder(store, "enc_r", cfg_r, rng)
    init_encoder(store, "enc_d", cfg_d, rng)
    side_ch = {k: cfg_r.stage_channels[k - 1] for k in (2, 3, 4, 5)}
    init_fpn(store, "dec_r", side_ch, rng)
    init_fpn(store, "dec_d", side_ch, rng)
    init_tam(store, "tam_r", rng)
    init_tam(store, "tam_d", rng)
    init_head(store, "head_r", WIDTH, rng)
    init_head(store, "head_d", WIDTH, rng)
    # sigmoid adapters producing the six gated guidance features
    for name in ("guide_r1", "guide_d1", "guide_r2", "guide_d2",
                 "guide_r3", "guide_d3"):
        init_cbr(store, name, WIDTH, WIDTH, 1, rng)
    init_cbr(store, "f2_fuse", 2 * WIDTH, WIDTH, 3, rng)
    init_gate_unit(store, "gate", 2 * cfg_r.stage_channels[4], rng)
    ch = cfg_f.stage_channels
    init_cbr(store, "reduce1", WIDTH + 2 * WIDTH, cfg_f.input_channels, 1, rng)
    init_cbr(store, "reduce2", ch[2] + 2 * WIDTH, ch[2], 1, rng)
    init_cbr(store, "reduce3", ch[3] + 2 * WIDTH, ch[3], 1, rng)
    init_encoder(store, "enc_f", cfg_f, rng)
    init_fpn(store, "dec_f", {2: WIDTH, 3: ch[2], 4: ch[3], 5: ch[4]}, rng)
    init_tam(store, "tam_f", rng)
    init_head(store, "head_f", WIDTH, rng)
    return store


def _guide(x: Tensor, store: ParamStore, name: str, training: bool,
           zero: bool) -> Tensor:
    if zero:
        return Tensor(np.zeros((x.dims[0], WIDTH, x.dims[2], x.dims[3]),
                               dtype=x.dtype))
    return cbr(x, store, name, kernel=1, act="sigmoid", training=training)


def resinres_forward(rgb: Tensor, depth: Tensor, store: ParamStore, *,
                     training: bool = False,
                     gate_mode: GateMode | None = None,
                     tam_gate_override: np.ndarray | None = None,
                     zero_guidance: bool = False) -> ResinResOutput:
    """Run the full two-phase network.

    ``zero_guidance`` replaces the six gated guidance features with zero
    tensors before gating (ablation/testing hook). ``tam_gate_override``
    is forwarded to all three attention blocks.
    """
    if rgb.data.ndim != 4 or rgb.dims[1] != 3:
        raise ShapeError(f"rgb input must be (N, 3, H, W), got {rgb.dims}")
    if depth.data.ndim != 4 or depth.dims[1] != 1:
        raise ShapeError(f"depth input must be (N, 1, H, W), got {depth.dims}")
    n, _, h, w = rgb.dims
    if depth.dims[0] != n or depth.dims[2:] != (h, w):
        raise ShapeError(f"rgb {rgb.dims} and depth {depth.dims} disagree")
    if h % 32 or w % 32:
        raise GeometryError(f"input {h}x{w} is not a multiple of 32")
    gate_mode = gate_mode or GateMode.learned()
    cfg_r, cfg_d, cfg_f = rgb_encoder_config(), depth_encoder_config(), \
        fused_encoder_config()

    # phase 1: independent streams
    sides_r = encoder_forward(rgb, store, "enc_r", cfg_r, training=training)
    sides_d = encoder_forward(depth, store, "enc_d", cfg_d, training=training)
    r4p, r3p, r2p = fpn_decode(sides_r, store, "dec_r", training=training)
    d4p, d3p, d2p = fpn_decode(sides_d, store, "dec_d", training=training)
    tam_r = tam_forward(r2p, store, "tam_r", training=training,
                        gate_override=tam_gate_override)
    tam_d = tam_forward(d2p, store, "tam_d", training=training,
                        gate_override=tam_gate_override)
    sal_r = prediction_head(tam_r.output, store, "head_r", (h, w))
    sal_d = prediction_head(tam_d.output, store, "head_d", (h, w))

    # phase 2: gated fusion stream
    f2 = cbr(concat_channels([r2p, d2p]), store, "f2_fuse", kernel=3,
             training=training)
    if gate_mode.kind == "learned":
        gates = gate_compute(sides_r[5], sides_d[5], store, "gate",
                             training=training)
    else:
        gates = forced_gates(gate_mode.values, n, rgb.dtype)

    guide = {
        "Rg1": _guide(tam_r.output, store, "guide_r1", training, zero_guidance),
        "Dg1": _guide(tam_d.output, store, "guide_d1", training, zero_guidance),
        "Rg2": _guide(r3p, store, "guide_r2", training, zero_guidance),
        "Dg2": _guide(d3p, store, "guide_d2", training, zero_guidance),
        "Rg3": _guide(r4p, store, "guide_r3", training, zero_guidance),
        "Dg3": _guide(d4p, store, "guide_d3", training, zero_guidance),
    }

    def gate_cat(base, rf, df, stage_idx):
        return concat_channels([
            base,
            scale_rows(rf, column(gates.g_r, stage_idx)),
            scale_rows(df, column(gates.g_d, stage_idx)),
        ])

    i1 = gate_cat(f2, guide["Rg1"], guide["Dg1"], 0)
    x = cbr(i1, store, "reduce1", kernel=1, training=training)
    f3 = encoder_stage(x, store, "enc_f", 3, cfg_f, training=training)
    i2 = gate_cat(f3, guide["Rg2"], guide["Dg2"], 1)
    x = cbr(i2, store, "reduce2", kernel=1, training=training)
    f4 = encoder_stage(x, store, "enc_f", 4, cfg_f, training=training)
    i3 = gate_cat(f4, guide["Rg3"], guide["Dg3"], 2)
    x = cbr(i3, store, "reduce3", kernel=1, training=training)
    f5 = encoder_stage(x, store, "enc_f", 5, cfg_f, training=training)

    ff4, ff3, ff = fpn_decode({2: f2, 3: f3, 4: f4, 5: f5}, store, "dec_f",
                              training=training)
    tam_f = tam_forward(ff, store, "tam_f", training=training,
                        gate_override=tam_gate_override)
    sal_f = prediction_head(tam_f.output, store, "head_f", (h, w))

    intermediates = {
        "F2": f2, "F3": f3, "F4": f4, "F5": f5,
        "R": tam_r.output, "D": tam_d.output,
        "R2p": r2p, "R3p": r3p, "R4p": r4p,
        "D2p": d2p, "D3p": d3p, "D4p": d4p,
        "I1": i1, "I2": i2, "I3": i3,
        "F_f": tam_f.output,
        **guide,
    }
    return ResinResOutput(sal_r=sal_r, sal_d=sal_d, sal_f=sal_f, gates=gates,
                          tam_gates={"r": tam_r.gates, "d": tam_d.gates,
                                     "f": tam_f.gates},
                          intermediates=intermediates)


def gates_csv_row(stem: str, gates: GateWeights, image_index: int = 0) -> str:
    vals = gates.as_array()[image_index]
    return ",".join([stem] + [f"{v:.6f}" for v in vals])
