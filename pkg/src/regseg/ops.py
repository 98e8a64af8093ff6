"""Numerical layer vocabulary: convolutions, batch norm, SE, poolings, upsampling.

All ops are pure functions over Tensors. Two convolution paths exist:

* ``conv2d_direct``: a literal seven-loop scalar convolution with a fixed
  accumulation order over (in-channel, kernel-row, kernel-col). Slow, used
  as the reference the optimized path is checked against.
* ``conv2d_fast``: patch-gathering (im2col) plus float32 matrix multiply.
  Must agree with the direct path within 1e-4 max-abs for inputs in
  [-10, 10].

Padding is implied by the layer spec: "same" padding dilation*(k-1)/2 for
stride-1 convs, and 1 for stride-2 3x3 convs so even extents halve exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ShapeError, SpecError
from .tensor import Tensor, concat_channels, slice_channels

__all__ = [
    "ConvSpec",
    "conv2d_direct",
    "conv2d_fast",
    "multi_dilation_group_conv",
    "batchnorm_infer",
    "relu",
    "sigmoid",
    "add",
    "avgpool2x2",
    "global_avg_pool",
    "se_block",
    "bilinear_upsample",
]

# Cap on the scratch patch matrix built by conv2d_fast, in float32 elements.
# Larger convolutions are processed in output-row bands of this size; the
# band split is a pure function of the shapes, so results stay deterministic.
_IM2COL_BUDGET = 32 * 1024 * 1024


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    bias: bool = False

    def __post_init__(self):
        if self.kernel not in (1, 3):
            raise SpecError(f"kernel must be 1 or 3, got {self.kernel}")
        if self.stride not in (1, 2):
            raise SpecError(f"stride must be 1 or 2, got {self.stride}")
        if self.dilation < 1:
            raise SpecError(f"dilation must be >= 1, got {self.dilation}")
        if self.groups < 1:
            raise SpecError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise SpecError(
                f"groups={self.groups} must divide in={self.in_channels} "
                f"and out={self.out_channels} channels"
            )

    @property
    def padding(self) -> int:
        if self.stride == 1:
            return self.dilation * (self.kernel - 1) // 2
        return 1 if self.kernel == 3 else 0

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        """Output spatial extents for an (h, w) input."""
        span = self.dilation * (self.kernel - 1)
        oh = (h + 2 * self.padding - span - 1) // self.stride + 1
        ow = (w + 2 * self.padding - span - 1) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"input {h}x{w} too small for {self}")
        return oh, ow

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (
            self.out_channels,
            self.in_channels // self.groups,
            self.kernel,
            self.kernel,
        )


def _as_array(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.ascontiguousarray(arr, dtype=np.float32)


def _check_conv_args(x: Tensor, weights: np.ndarray, bias, spec: ConvSpec) -> None:
    if x.c != spec.in_channels:
        raise ShapeError(f"input has {x.c} channels, spec expects {spec.in_channels}")
    if tuple(weights.shape) != spec.weight_shape:
        raise ShapeError(
            f"weights shape {tuple(weights.shape)} != expected {spec.weight_shape}"
        )
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(
            f"bias shape {bias.shape} != ({spec.out_channels},)"
        )


def conv2d_direct(x: Tensor, weights, bias=None, spec: ConvSpec | None = None) -> Tensor:
    """Reference convolution: explicit loops over every output element.

    Accumulation runs over (in-channel, kernel-row, kernel-col) in scalar
    double precision, rounded to float32 at the end. Intended for small
    inputs; the production path is conv2d_fast.
    """
    if spec is None:
        raise SpecError("conv2d_direct requires a ConvSpec")
    w = _as_array(weights)
    b = None if bias is None else _as_array(bias).ravel()
    _check_conv_args(x, w, b, spec)

    n, c, h, ww = x.shape
    k, s, r, p = spec.kernel, spec.stride, spec.dilation, spec.padding
    oh, ow = spec.out_hw(h, ww)
    icg = spec.in_channels // spec.groups
    ocg = spec.out_channels // spec.groups
    xd = x.data
    out = np.zeros((n, spec.out_channels, oh, ow), dtype=np.float32)

    for ni in range(n):
        for oc in range(spec.out_channels):
            g = oc // ocg
            cbase = g * icg
            for oy in range(oh):
                iy0 = oy * s - p
                for ox in range(ow):
                    ix0 = ox * s - p
                    acc = 0.0
                    for ic in range(icg):
                        for ky in range(k):
                            iy = iy0 + ky * r
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(k):
                                ix = ix0 + kx * r
                                if ix < 0 or ix >= ww:
                                    continue
                                acc += float(w[oc, ic, ky, kx]) * float(
                                    xd[ni, cbase + ic, iy, ix]
                                )
                    if b is not None:
                        acc += float(b[oc])
                    out[ni, oc, oy, ox] = acc
    return Tensor(out)


def _im2col_band(xp: np.ndarray, k: int, s: int, r: int, oy0: int, oy1: int, ow: int) -> np.ndarray:
    """Gather (n, c, k*k, band, ow) patches for output rows [oy0, oy1)."""
    n, c = xp.shape[:2]
    band = oy1 - oy0
    cols = np.empty((n, c, k * k, band, ow), dtype=np.float32)
    for ky in range(k):
        y0 = oy0 * s + ky * r
        y1 = y0 + (band - 1) * s + 1
        for kx in range(k):
            x0 = kx * r
            x1 = x0 + (ow - 1) * s + 1
            cols[:, :, ky * k + kx] = xp[:, :, y0:y1:s, x0:x1:s]
    return cols


def conv2d_fast(x: Tensor, weights, bias=None, spec: ConvSpec | None = None) -> Tensor:
    """Optimized convolution: im2col patches + grouped float32 GEMM."""
    if spec is None:
        raise SpecError("conv2d_fast requires a ConvSpec")
    w = _as_array(weights)
    b = None if bias is None else _as_array(bias).ravel()
    _check_conv_args(x, w, b, spec)

    n, c, h, ww = x.shape
    k, s, r, p = spec.kernel, spec.stride, spec.dilation, spec.padding
    oh, ow = spec.out_hw(h, ww)
    G = spec.groups
    icg = c // G
    ocg = spec.out_channels // G
    wm = w.reshape(G, ocg, icg * k * k)

    if k == 1 and s == 1:
        # 1x1 stride-1 convs dominate the block structure; skip the copy.
        cols = x.data.reshape(n, G, icg, oh * ow)
        out = np.matmul(wm, cols).reshape(n, spec.out_channels, oh, ow)
    else:
        xp = x.data if p == 0 else np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
        per_row = n * c * k * k * ow
        band = max(1, min(oh, _IM2COL_BUDGET // max(1, per_row)))
        out = np.empty((n, spec.out_channels, oh, ow), dtype=np.float32)
        for oy0 in range(0, oh, band):
            oy1 = min(oy0 + band, oh)
            cols = _im2col_band(xp, k, s, r, oy0, oy1, ow)
            cols = cols.reshape(n, G, icg * k * k, (oy1 - oy0) * ow)
            out[:, :, oy0:oy1] = np.matmul(wm, cols).reshape(
                n, spec.out_channels, oy1 - oy0, ow
            )
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    return Tensor(out)


def multi_dilation_group_conv(
    x: Tensor,
    branch_weights: Sequence[np.ndarray],
    branch_dilations: Sequence[int],
    spec: ConvSpec,
    bias=None,
    force_split: bool = False,
) -> Tensor:
    """Group conv where channel branches run at different dilation rates.

    The input splits channel-wise into ``b`` equal parts; part i is convolved
    with groups/b groups at branch_dilations[i]; outputs are concatenated.
    When every branch shares one dilation rate the split is skipped and the
    branches run as a single fused group conv (bit-identical result);
    ``force_split`` keeps the manual split for latency measurements.
    """
    nb = len(branch_dilations)
    if nb == 0 or len(branch_weights) != nb:
        raise SpecError("need one weight tensor per branch dilation")
    if spec.groups % nb or spec.in_channels % nb or spec.out_channels % nb:
        raise SpecError(
            f"{nb} branches must evenly divide groups={spec.groups} and channels "
            f"{spec.in_channels}->{spec.out_channels}"
        )
    b = None if bias is None else _as_array(bias).ravel()

    if not force_split and len(set(branch_dilations)) == 1:
        wfull = np.concatenate([_as_array(bw) for bw in branch_weights], axis=0)
        return conv2d_fast(x, wfull, b, replace(spec, dilation=branch_dilations[0]))

    ic_b = spec.in_channels // nb
    oc_b = spec.out_channels // nb
    parts = []
    for i, (bw, d) in enumerate(zip(branch_weights, branch_dilations)):
        bspec = replace(
            spec,
            in_channels=ic_b,
            out_channels=oc_b,
            groups=spec.groups // nb,
            dilation=d,
        )
        xi = slice_channels(x, i * ic_b, (i + 1) * ic_b)
        bi = None if b is None else b[i * oc_b : (i + 1) * oc_b]
        parts.append(conv2d_fast(xi, _as_array(bw), bi, bspec))
    return concat_channels(parts)


def batchnorm_infer(x: Tensor, gamma, beta, mean, var, eps: float = 1e-5) -> Tensor:
    """Inference-mode batch norm: gamma*(x-mean)/sqrt(var+eps) + beta."""
    gamma, beta, mean, var = (np.asarray(v, dtype=np.float64).ravel() for v in (gamma, beta, mean, var))
    for name, v in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if v.shape != (x.c,):
            raise ShapeError(f"batchnorm {name} has length {v.size}, expected {x.c}")
    if np.any(var < 0):
        raise ShapeError("batchnorm variance must be non-negative")
    scale = gamma / np.sqrt(var + float(eps))
    shift = beta - mean * scale
    scale32 = scale.astype(np.float32).reshape(1, -1, 1, 1)
    shift32 = shift.astype(np.float32).reshape(1, -1, 1, 1)
    return Tensor(x.data * scale32 + shift32)


def relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.data, np.float32(0.0)))


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        return Tensor(1.0 / (1.0 + np.exp(-x.data, dtype=np.float32)))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add requires identical shapes, got {a.shape} vs {b.shape}")
    return Tensor(a.data + b.data)


def avgpool2x2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; a trailing odd row/col is dropped."""
    oh = (x.h - 2) // 2 + 1
    ow = (x.w - 2) // 2 + 1
    if x.h < 2 or x.w < 2:
        raise ShapeError(f"avgpool2x2 needs extents >= 2, got {x.h}x{x.w}")
    d = x.data
    s = (
        d[:, :, 0 : 2 * oh : 2, 0 : 2 * ow : 2]
        + d[:, :, 1 : 2 * oh : 2, 0 : 2 * ow : 2]
        + d[:, :, 0 : 2 * oh : 2, 1 : 2 * ow : 2]
        + d[:, :, 1 : 2 * oh : 2, 1 : 2 * ow : 2]
    )
    return Tensor(s * np.float32(0.25))


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, shape (n, c, 1, 1)."""
    return Tensor(x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float32))


def se_block(x: Tensor, w1, b1, w2, b2) -> Tensor:
    """Squeeze-and-excitation gate: pooled bottleneck, sigmoid channel scale."""
    w1, b1, w2, b2 = (_as_array(v) for v in (w1, b1, w2, b2))
    c = x.c
    cr = w1.shape[0]
    if w1.shape != (cr, c) or w2.shape != (c, cr):
        raise ShapeError(
            f"SE matrices must be ({cr},{c}) and ({c},{cr}); "
            f"got {w1.shape} and {w2.shape}"
        )
    if b1.ravel().shape != (cr,) or b2.ravel().shape != (c,):
        raise ShapeError("SE bias lengths must match the matrix widths")
    pooled = global_avg_pool(x).data.reshape(x.n, c)
    hidden = np.maximum(pooled @ w1.T + b1.ravel(), np.float32(0.0))
    with np.errstate(over="ignore"):
        gate = 1.0 / (1.0 + np.exp(-(hidden @ w2.T + b2.ravel()), dtype=np.float32))
    return Tensor(x.data * gate.reshape(x.n, c, 1, 1))


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling with half-pixel centers, clamped at borders.

    Source coordinate for destination index d is (d + 0.5)/factor - 0.5.
    """
    if factor not in (2, 4):
        raise SpecError(f"upsample factor must be 2 or 4, got {factor}")

    def axis_coords(n_in: int):
        src = (np.arange(n_in * factor, dtype=np.float32) + np.float32(0.5)) / np.float32(
            factor
        ) - np.float32(0.5)
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(np.float32)
        return lo, hi, frac

    y0, y1, fy = axis_coords(x.h)
    x0, x1, fx = axis_coords(x.w)
    d = x.data
    rows = d[:, :, y0, :] * (1.0 - fy).reshape(1, 1, -1, 1) + d[:, :, y1, :] * fy.reshape(
        1, 1, -1, 1
    )
    out = rows[:, :, :, x0] * (1.0 - fx) + rows[:, :, :, x1] * fx
    return Tensor(out)
