"""Array primitives for the gating and classifier paths, with hand VJPs.

Every forward here is a plain numpy computation; each has a matching
``*_vjp`` that implements the exact transpose/chain rule. Inputs are
batched as ``(B, C, H, W)`` unless noted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_output_size(n: int, kernel: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - kernel) // stride + 1


def pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the two trailing axes (faster than np.pad for this case)."""
    if pad == 0:
        return x
    out = np.zeros(x.shape[:-2] + (x.shape[-2] + 2 * pad, x.shape[-1] + 2 * pad))
    out[..., pad:-pad, pad:-pad] = x
    return out


def _windows(xp: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def depthwise_conv2d(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int, pad: int
) -> np.ndarray:
    """Per-channel convolution: x (B,C,H,W), weight (C,k,k), bias (C,)."""
    out, _ = depthwise_conv2d_cached(x, weight, bias, stride, pad)
    return out


def depthwise_conv2d_cached(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray]:
    """Forward pass returning (output, padded input) for reuse in the VJP."""
    xp = pad2d(x, pad)
    win = _windows(xp, weight.shape[-1], stride)
    out = np.einsum("bcyxij,cij->bcyx", win, weight, optimize=True)
    return out + bias[None, :, None, None], xp


def depthwise_conv2d_vjp(
    xp: np.ndarray,
    weight: np.ndarray,
    stride: int,
    pad: int,
    gout: np.ndarray,
    need_input_grad: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Backward from the PADDED input; returns (d_input, d_weight, d_bias)."""
    k = weight.shape[-1]
    win = _windows(xp, k, stride)
    d_weight = np.einsum("bcyxij,bcyx->cij", win, gout, optimize=True)
    d_bias = gout.sum(axis=(0, 2, 3))
    d_input = None
    if need_input_grad:
        ho, wo = gout.shape[2], gout.shape[3]
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                    gout * weight[None, :, i, j, None, None]
                )
        d_input = gxp if pad == 0 else gxp[:, :, pad:-pad, pad:-pad]
    return d_input, d_weight, d_bias


def conv2d(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int, pad: int
) -> np.ndarray:
    """Dense convolution: x (B,C,H,W), weight (O,C,k,k), bias (O,)."""
    xp = pad2d(x, pad)
    win = _windows(xp, weight.shape[-1], stride)
    out = np.einsum("bcyxij,ocij->boyx", win, weight, optimize=True)
    return out + bias[None, :, None, None]


def conv2d_vjp(
    x: np.ndarray,
    weight: np.ndarray,
    stride: int,
    pad: int,
    gout: np.ndarray,
    need_input_grad: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    k = weight.shape[-1]
    xp = pad2d(x, pad)
    win = _windows(xp, k, stride)
    d_weight = np.einsum("bcyxij,boyx->ocij", win, gout, optimize=True)
    d_bias = gout.sum(axis=(0, 2, 3))
    d_input = None
    if need_input_grad:
        ho, wo = gout.shape[2], gout.shape[3]
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                    np.einsum("boyx,oc->bcyx", gout, weight[:, :, i, j], optimize=True)
                )
        d_input = gxp if pad == 0 else gxp[:, :, pad:-pad, pad:-pad]
    return d_input, d_weight, d_bias


@dataclass(frozen=True)
class ResizePlan:
    """Precomputed bilinear interpolation indices (align-corners mapping)."""

    in_shape: tuple[int, int]
    out_shape: tuple[int, int]
    r0: np.ndarray
    r1: np.ndarray
    wr: np.ndarray
    c0: np.ndarray
    c1: np.ndarray
    wc: np.ndarray


def _axis_plan(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_in == 1 or n_out == 1:
        src = np.zeros(n_out)
    else:
        src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.floor(src).astype(int)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def make_resize_plan(in_shape: tuple[int, int], out_shape: tuple[int, int]) -> ResizePlan:
    r0, r1, wr = _axis_plan(in_shape[0], out_shape[0])
    c0, c1, wc = _axis_plan(in_shape[1], out_shape[1])
    return ResizePlan(tuple(in_shape), tuple(out_shape), r0, r1, wr, c0, c1, wc)


def resize_bilinear(x: np.ndarray, plan: ResizePlan) -> np.ndarray:
    """x (..., h, w) -> (..., H, W)."""
    top = x[..., plan.r0, :]
    bot = x[..., plan.r1, :]
    rows = top + (bot - top) * plan.wr[:, None]
    left = rows[..., plan.c0]
    right = rows[..., plan.c1]
    return left + (right - left) * plan.wc


def resize_bilinear_vjp(gout: np.ndarray, plan: ResizePlan) -> np.ndarray:
    """Transpose of the interpolation (scatter-add back to source cells)."""
    lead = gout.shape[:-2]
    h, w = plan.in_shape
    big_h, _ = plan.out_shape
    g = gout.reshape((-1,) + gout.shape[-2:])
    grows = np.zeros((g.shape[0], big_h, w))
    np.add.at(grows, (slice(None), slice(None), plan.c0), g * (1.0 - plan.wc))
    np.add.at(grows, (slice(None), slice(None), plan.c1), g * plan.wc)
    gin = np.zeros((g.shape[0], h, w))
    np.add.at(gin, (slice(None), plan.r0), grows * (1.0 - plan.wr)[:, None])
    np.add.at(gin, (slice(None), plan.r1), grows * plan.wr[:, None])
    return gin.reshape(lead + (h, w))


def _pool_bins(n_in: int, n_out: int) -> list[tuple[int, int]]:
    return [
        (int(np.floor(i * n_in / n_out)), max(int(np.ceil((i + 1) * n_in / n_out)), 1))
        for i in range(n_out)
    ]


def adaptive_avg_pool(x: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """x (..., h, w) -> (..., H, W) by averaging over torch-style bins."""
    rb = _pool_bins(x.shape[-2], out_shape[0])
    cb = _pool_bins(x.shape[-1], out_shape[1])
    out = np.empty(x.shape[:-2] + out_shape)
    for i, (r0, r1) in enumerate(rb):
        for j, (c0, c1) in enumerate(cb):
            out[..., i, j] = x[..., r0:r1, c0:c1].mean(axis=(-2, -1))
    return out


def adaptive_avg_pool_vjp(
    gout: np.ndarray, in_shape: tuple[int, int], out_shape: tuple[int, int]
) -> np.ndarray:
    rb = _pool_bins(in_shape[0], out_shape[0])
    cb = _pool_bins(in_shape[1], out_shape[1])
    gin = np.zeros(gout.shape[:-2] + in_shape)
    for i, (r0, r1) in enumerate(rb):
        for j, (c0, c1) in enumerate(cb):
            count = (r1 - r0) * (c1 - c0)
            gin[..., r0:r1, c0:c1] += (gout[..., i, j] / count)[..., None, None]
    return gin


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
