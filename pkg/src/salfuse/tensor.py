"""Minimal reverse-mode autodiff over numpy arrays.

A ``Tensor`` wraps a rank-<=4 float array (N x C x H x W layout for
feature maps). Running an op inside a ``Tape`` context records one node
per op in execution order; ``backward`` walks the nodes in reverse,
accumulating gradients additively across fan-out. float32 is the
working precision; passing float64 arrays switches the whole graph to
64-bit, which is what the gradient checker uses.

Ops outside any ``Tape`` context skip recording entirely (inference mode).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from salfuse import kernels
from salfuse.errors import GeometryError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

# When enabled every op asserts its output is finite. Off by default
# (it costs a full pass over each result); the test suite turns it on.
debug_checks = False


def set_debug_checks(flag: bool) -> None:
    global debug_checks
    debug_checks = bool(flag)


class Tensor:
    """Array container with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of 4")
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"zero-sized dimension in shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class Tape:
    """Execution-ordered op record. Nodes are (output, inputs, backward_fn)."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []


def make_op(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording it on the active tape if any.

    ``backward_fn(g)`` must return one gradient array (or None) per input,
    positionally. This is the extension point loss functions use.
    """
    out = Tensor(data)
    if debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an op")
    if _TAPE_STACK and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE_STACK[-1].nodes.append((out, tuple(inputs), backward_fn))
    return out


def backward(tape: Tape, loss: Tensor, params=None) -> dict[str, np.ndarray]:
    """Reverse pass over ``tape`` seeded at scalar ``loss``.

    Returns a name-keyed gradient map. With a ParamStore in ``params``
    every trainable parameter gets an entry, zeros if the loss does not
    depend on it; otherwise the map covers named tensors reached by the
    walk. ``.grad`` is set on every requires_grad tensor encountered.
    An empty tape is a no-op (all-zero map).
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    seen: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        seen.pop(id(out), None)
        if g is None:
            continue
        in_grads = fn(g)
        for t, ig in zip(inputs, in_grads):
            if ig is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
                seen[key] = t
    for key, t in seen.items():
        if t.requires_grad:
            t.grad = grads[key]
    if params is not None:
        return {name: (grads[id(p)] if id(p) in grads else np.zeros_like(p.data))
                for name, p in params.items() if p.requires_grad}
    return {t.name: grads[key] for key, t in seen.items()
            if t.name is not None and t.requires_grad}


def _require_rank(t: Tensor, rank: int, what: str) -> None:
    if t.data.ndim != rank:
        raise ShapeError(f"{what} must have rank {rank}, got shape {t.data.shape}")


def _common_dtype(*ts: Tensor):
    dt = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != dt:
            raise ShapeError(f"mixed dtypes {dt} and {t.data.dtype}")
    return dt


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, *,
           stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """Cross-correlation of NCHW input with an (out, in, kh, kw) kernel."""
    _require_rank(x, 4, "conv2d input")
    _require_rank(kernel, 4, "conv2d kernel")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError(f"bad conv geometry: stride={stride} padding={padding} "
                         f"dilation={dilation}")
    n, cin, h, w = x.data.shape
    cout, kc, kh, kw = kernel.data.shape
    if kc != cin:
        raise ShapeError(f"kernel expects {kc} input channels, input has {cin}")
    _common_dtype(x, kernel)
    out_h = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    out_w = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    if out_h < 1 or out_w < 1:
        raise GeometryError(f"conv output {out_h}x{out_w} is empty for input "
                            f"{h}x{w}, kernel {kh}x{kw}")
    y = kernels.conv2d_forward(x.data, kernel.data, stride, padding, dilation,
                               out_h, out_w)
    if bias is not None:
        _require_rank(bias, 1, "conv2d bias")
        if bias.data.shape[0] != cout:
            raise ShapeError(f"bias length {bias.data.shape[0]} != {cout} channels")
        y = y + bias.data[None, :, None, None]

    def bwd(g: np.ndarray):
        gx = gw = gb = None
        if x.requires_grad:
            gx = kernels.conv2d_backward_input(g, kernel.data, x.data.shape,
                                               stride, padding, dilation)
        if kernel.requires_grad:
            gw = kernels.conv2d_backward_kernel(g, x.data, kernel.data.shape,
                                                stride, padding, dilation)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_op(y, (x, kernel) if bias is None else (x, kernel, bias), bwd)


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor,
                running_var: Tensor, *, training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel normalization. Population variance on both paths.

    ``running_mean``/``running_var`` are non-trainable buffers, updated
    in place when ``training`` is true.
    """
    _require_rank(x, 4, "batchnorm input")
    n, c, h, w = x.data.shape
    for t, what in ((gamma, "gamma"), (beta, "beta"),
                    (running_mean, "running_mean"), (running_var, "running_var")):
        _require_rank(t, 1, f"batchnorm {what}")
        if t.data.shape[0] != c:
            raise ShapeError(f"batchnorm {what} has {t.data.shape[0]} entries "
                             f"for {c} channels")
    m = n * h * w
    if m < 1:
        raise GeometryError("batchnorm over an empty batch/spatial extent")
    if training and m < 2:
        # one value per channel: batch variance is 0 and the normalized
        # output collapses to beta with dead gradients everywhere
        raise GeometryError("training-mode batchnorm needs more than one "
                            "value per channel")
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean.data[...] = (1 - momentum) * running_mean.data + momentum * mean
        running_var.data[...] = (1 - momentum) * running_var.data + momentum * var
    else:
        mean = running_mean.data
        var = running_var.data
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(g: np.ndarray):
        dgamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        dbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            gw = gamma.data[None, :, None, None] * inv_std[None, :, None, None]
            if training:
                sum_g = g.sum(axis=(0, 2, 3), keepdims=True)
                sum_gx = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = gw * (g - sum_g / m - xhat * sum_gx / m)
            else:
                dx = gw * g
        return dx, dgamma, dbeta, None, None

    return make_op(y, (x, gamma, beta, running_mean, running_var), bwd)


# ---------------------------------------------------------------------------
# activations


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep the image strictly inside (0, 1) even where exp saturates
    fi = np.finfo(z.dtype)
    return np.clip(out, fi.tiny, 1.0 - fi.epsneg)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        y = np.maximum(x.data, 0)
        mask = x.data > 0

        def bwd(g):
            return (g * mask,)
    elif kind == "sigmoid":
        y = _stable_sigmoid(x.data)
        s = y

        def bwd(g):
            return (g * s * (1.0 - s),)
    elif kind == "none":
        y = x.data.copy()

        def bwd(g):
            return (g,)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return make_op(y, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


# ---------------------------------------------------------------------------
# pooling


def pool(x: Tensor, kind: str) -> Tensor:
    _require_rank(x, 4, "pool input")
    n, c, h, w = x.data.shape
    if kind == "gap_spatial":
        y = x.data.mean(axis=(2, 3), keepdims=True)

        def bwd(g):
            return (np.broadcast_to(g / (h * w), x.data.shape).copy(),)
    elif kind == "gap_channel":
        y = x.data.mean(axis=1, keepdims=True)

        def bwd(g):
            return (np.broadcast_to(g / c, x.data.shape).copy(),)
    elif kind == "gmp_channel":
        # ties deterministically take the lowest channel index
        idx = np.argmax(x.data, axis=1, keepdims=True)
        y = np.take_along_axis(x.data, idx, axis=1)

        def bwd(g):
            dx = np.zeros_like(x.data)
            np.put_along_axis(dx, idx, g, axis=1)
            return (dx,)
    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    return make_op(y, (x,), bwd)


def gap_spatial(x: Tensor) -> Tensor:
    return pool(x, "gap_spatial")


def gap_channel(x: Tensor) -> Tensor:
    return pool(x, "gap_channel")


def gmp_channel(x: Tensor) -> Tensor:
    return pool(x, "gmp_channel")


# ---------------------------------------------------------------------------
# bilinear resizing


_INTERP_CACHE: dict[tuple, np.ndarray] = {}


def interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-stochastic 1-D bilinear interpolation matrix (half-pixel centers,
    align_corners=False). ``y = M @ x`` resamples length n_in to n_out."""
    key = (n_in, n_out, np.dtype(dtype).str)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        i0 = int(np.floor(src))
        frac = src - i0
        lo = min(max(i0, 0), n_in - 1)
        hi = min(max(i0 + 1, 0), n_in - 1)
        m[o, lo] += 1.0 - frac
        m[o, hi] += frac
    m = m.astype(dtype)
    _INTERP_CACHE[key] = m
    return m


def resize_bilinear(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Bilinear resample of an NCHW tensor to an arbitrary target size."""
    _require_rank(x, 4, "resize input")
    out_h, out_w = out_hw
    if out_h < 1 or out_w < 1:
        raise GeometryError(f"resize target {out_h}x{out_w} is empty")
    _, _, h, w = x.data.shape
    mh = interp_matrix(h, out_h, x.data.dtype)
    mw = interp_matrix(w, out_w, x.data.dtype)
    tmp = np.tensordot(x.data, mh, axes=([2], [1]))   # (N, C, W, out_h)
    y = np.tensordot(tmp, mw, axes=([2], [1]))        # (N, C, out_h, out_w)
    y = np.ascontiguousarray(y)

    def bwd(g):
        t = np.tensordot(g, mh, axes=([2], [0]))      # (N, C, out_w, H)
        dx = np.tensordot(t, mw, axes=([2], [0]))     # (N, C, H, W)
        return (np.ascontiguousarray(dx),)

    return make_op(y, (x,), bwd)


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsample factor must be an integer >= 1, got {factor}")
    if factor == 1:
        def bwd(g):
            return (g,)
        return make_op(x.data.copy(), (x,), bwd)
    _, _, h, w = x.data.shape
    return resize_bilinear(x, (h * factor, w * factor))


# ---------------------------------------------------------------------------
# structure ops


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    if len(tensors) == 0:
        raise ValueError("concat_channels needs at least one tensor")
    for t in tensors:
        _require_rank(t, 4, "concat input")
    first = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if (s[0], s[2], s[3]) != (first[0], first[2], first[3]):
            raise ShapeError(f"concat operand {s} disagrees with {first} outside "
                             "the channel axis")
    _common_dtype(*tensors)
    y = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.data.shape[1] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(part) for part in np.split(g, splits, axis=1))

    return make_op(y, tuple(tensors), bwd)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _require_rank(x, 4, "slice input")
    c = x.data.shape[1]
    if not (0 <= start < stop <= c):
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for C={c}")
    y = x.data[:, start:stop].copy()

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:, start:stop] = g
        return (dx,)

    return make_op(y, (x,), bwd)


def reshape(x: Tensor, dims: tuple) -> Tensor:
    if int(np.prod(dims)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.data.shape} to {dims}")
    y = x.data.reshape(dims).copy()

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return make_op(y, (x,), bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map. x is (N, in) or a flat (in,) vector; weight is (out, in)."""
    _require_rank(weight, 2, "linear weight")
    if x.data.ndim not in (1, 2):
        raise ShapeError(f"linear input must be rank 1 or 2, got {x.data.shape}")
    in_features = x.data.shape[-1]
    if weight.data.shape[1] != in_features:
        raise ShapeError(f"linear expects {weight.data.shape[1]} features, "
                         f"got {in_features}")
    _common_dtype(x, weight)
    y = x.data @ weight.data.T
    if bias is not None:
        if bias.data.shape != (weight.data.shape[0],):
            raise ShapeError(f"linear bias shape {bias.data.shape} != "
                             f"({weight.data.shape[0]},)")
        y = y + bias.data

    def bwd(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = g @ weight.data
        if weight.requires_grad:
            if x.data.ndim == 1:
                gw = np.outer(g, x.data)
            else:
                gw = g.T @ x.data
        if bias is not None and bias.requires_grad:
            gb = g if g.ndim == 1 else g.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_op(y, (x, weight) if bias is None else (x, weight, bias), bwd)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.data.shape != y.data.shape:
        raise ShapeError(f"add of {x.data.shape} and {y.data.shape}")
    _common_dtype(x, y)

    def bwd(g):
        return g, g

    return make_op(x.data + y.data, (x, y), bwd)


def mul(x: Tensor, y: Tensor) -> Tensor:
    if x.data.shape != y.data.shape:
        raise ShapeError(f"mul of {x.data.shape} and {y.data.shape}")
    _common_dtype(x, y)

    def bwd(g):
        return (g * y.data if x.requires_grad else None,
                g * x.data if y.requires_grad else None)

    return make_op(x.data * y.data, (x, y), bwd)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each batch item of a rank-4 tensor by its own scalar."""
    _require_rank(x, 4, "scale_rows input")
    _require_rank(s, 1, "scale_rows scalars")
    if s.data.shape[0] != x.data.shape[0]:
        raise ShapeError(f"{s.data.shape[0]} scalars for batch of {x.data.shape[0]}")
    _common_dtype(x, s)
    sb = s.data[:, None, None, None]

    def bwd(g):
        gx = g * sb if x.requires_grad else None
        gs = (g * x.data).sum(axis=(1, 2, 3)) if s.requires_grad else None
        return gx, gs

    return make_op(x.data * sb, (x, s), bwd)


def scale_spatial(x: Tensor, att: Tensor) -> Tensor:
    """Multiply an NCHW tensor by a per-pixel N x 1 x H x W attention map."""
    _require_rank(x, 4, "scale_spatial input")
    _require_rank(att, 4, "attention map")
    n, c, h, w = x.data.shape
    if att.data.shape != (n, 1, h, w):
        raise ShapeError(f"attention map {att.data.shape} does not match "
                         f"({n}, 1, {h}, {w})")
    _common_dtype(x, att)

    def bwd(g):
        gx = g * att.data if x.requires_grad else None
        ga = (g * x.data).sum(axis=1, keepdims=True) if att.requires_grad else None
        return gx, ga

    return make_op(x.data * att.data, (x, att), bwd)


def column(x: Tensor, j: int) -> Tensor:
    """Extract column j of a rank-2 tensor as a rank-1 tensor."""
    _require_rank(x, 2, "column input")
    if not 0 <= j < x.data.shape[1]:
        raise ShapeError(f"column {j} out of range for shape {x.data.shape}")
    y = x.data[:, j].copy()

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:, j] = g
        return (dx,)

    return make_op(y, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    def bwd(g):
        return (np.broadcast_to(g, x.data.shape).copy().astype(x.data.dtype),)

    return make_op(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), bwd)
