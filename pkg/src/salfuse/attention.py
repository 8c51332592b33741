"""Type-based attention: five typed conv branches, per-branch learned
scalar gates, spatial attention, residual output.

Branch types over a 64-channel input, all width-preserving:
  1: 1x1 conv-BN-relu          2: 3x3 conv-BN-relu
  3/4/5: 3x3 conv-BN-sigmoid at dilations 3/5/7
Each branch feeds its own tiny 64-4-1 MLP (relu hidden, sigmoid out) on
the branch's spatial average, producing one gate scalar per image. The
gated branches are concatenated (320 channels), fused back to 64, passed
through channel-mean/channel-max spatial attention, and added back to
the block input before a final 3x3 conv-BN-relu.

Forcing all five gates to 1 reproduces the ungated concat path exactly;
forcing gate i to 0 makes the output bit-invariant to branch i (branch
outputs are non-negative, so 0.0 * x == +0.0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from salfuse.blocks import cbr, init_cbr
from salfuse.params import ParamStore, init_conv, init_linear
from salfuse.tensor import (Tensor, add, concat_channels, conv2d, gap_channel,
                            gap_spatial, gmp_channel, linear, relu, reshape,
                            scale_rows, scale_spatial, sigmoid)

TAM_WIDTH = 64
_BRANCHES = (
    ("branch1", 1, 1, "relu"),
    ("branch2", 3, 1, "relu"),
    ("branch3", 3, 3, "sigmoid"),
    ("branch4", 3, 5, "sigmoid"),
    ("branch5", 3, 7, "sigmoid"),
)


@dataclass
class TamResult:
    output: Tensor
    gates: list[Tensor]  # five (N,) tensors, one per branch


def init_tam(store: ParamStore, prefix: str, rng: np.random.Generator,
             width: int = TAM_WIDTH) -> None:
    for name, kernel, _, _ in _BRANCHES:
        init_cbr(store, f"{prefix}.{name}", width, width, kernel, rng)
    for i in range(1, 6):
        init_linear(store, f"{prefix}.mlp{i}.fc1", 4, width, rng)
        init_linear(store, f"{prefix}.mlp{i}.fc2", 1, 4, rng)
    init_cbr(store, f"{prefix}.fuse", 5 * width, width, 3, rng)
    init_conv(store, f"{prefix}.spatial", 1, 2, 3, rng, bias=True)
    init_cbr(store, f"{prefix}.out", width, width, 3, rng)


def _branch_gate(feat: Tensor, store: ParamStore, name: str) -> Tensor:
    n, c = feat.dims[0], feat.dims[1]
    v = reshape(gap_spatial(feat), (n, c))
    v = relu(linear(v, store[f"{name}.fc1.w"], store[f"{name}.fc1.b"]))
    v = sigmoid(linear(v, store[f"{name}.fc2.w"], store[f"{name}.fc2.b"]))
    return reshape(v, (n,))


def tam_forward(x: Tensor, store: ParamStore, prefix: str, *,
                training: bool = False,
                gate_override: np.ndarray | None = None) -> TamResult:
    """Apply the attention block. ``gate_override`` replaces the five
    learned gates with fixed scalars in [0, 1] (broadcast over the batch);
    all-ones is the ungated ablation mode."""
    if gate_override is not None:
        gate_override = np.asarray(gate_override, dtype=np.float64)
        if gate_override.shape != (5,):
            raise ValueError(f"gate_override must hold 5 scalars, "
                             f"got shape {gate_override.shape}")
        if np.any(gate_override < 0) or np.any(gate_override > 1):
            raise ValueError(f"gate_override values must lie in [0, 1], "
                             f"got {gate_override.tolist()}")
    n = x.dims[0]
    gates: list[Tensor] = []
    gated: list[Tensor] = []
    for i, (name, kernel, dilation, act) in enumerate(_BRANCHES):
        feat = cbr(x, store, f"{prefix}.{name}", kernel=kernel,
                   dilation=dilation, act=act, training=training)
        if gate_override is None:
            g = _branch_gate(feat, store, f"{prefix}.mlp{i + 1}")
        else:
            g = Tensor(np.full(n, gate_override[i], dtype=x.dtype))
        gates.append(g)
        gated.append(scale_rows(feat, g))
    fused = cbr(concat_channels(gated), store, f"{prefix}.fuse",
                training=training)
    att_in = concat_channels([gap_channel(fused), gmp_channel(fused)])
    att = sigmoid(conv2d(att_in, store[f"{prefix}.spatial.w"],
                         store[f"{prefix}.spatial.b"], padding=1))
    attended = scale_spatial(fused, att)
    out = cbr(add(x, attended), store, f"{prefix}.out", training=training)
    return TamResult(output=out, gates=gates)
