"""Wedge-level attention gating: depthwise squeeze, MLP excite, binary gates.

The squeeze path resamples every wedge magnitude to the image grid and runs
a six-layer depthwise convolution chain (kernels 5,5,3,3,3,3; stride 2;
zero padding 1,1,1,1,0,0). On a 299x299 grid the chain lands on 4x4
exactly; for smaller grids the chain stops once the spatial size drops
below 8 and an adaptive average pool finishes the job. Global average
pooling yields one scalar per wedge, a two-layer MLP maps the scalars to
sigmoid scores, and thresholding at 0.5 produces hard 0/1 gates.

Gating multiplies each wedge magnitude by its gate at native resolution;
the resampled copies exist only on the squeeze path. The backward pass
uses a straight-through estimator across the binarization (d gate /
d score = 1) and the exact chain rule everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curvelet import CurveletGeometry
from .errors import MissingForwardCache, ShapeMismatch
from .nnops import (
    adaptive_avg_pool,
    adaptive_avg_pool_vjp,
    conv_output_size,
    depthwise_conv2d_cached,
    depthwise_conv2d_vjp,
    kaiming_uniform,
    make_resize_plan,
    resize_bilinear,
    resize_bilinear_vjp,
    sigmoid,
)

KERNELS = (5, 5, 3, 3, 3, 3)
STRIDES = (2, 2, 2, 2, 2, 2)
PADS = (1, 1, 1, 1, 0, 0)
MIN_CONV_INPUT = 8
POOLED_SIDE = 4


@dataclass
class SqueezeStack:
    """Six depthwise convolution layers, one filter per wedge channel."""

    weights: list[np.ndarray]  # each (num_wedges, k, k)
    biases: list[np.ndarray]  # each (num_wedges,)

    @classmethod
    def create(cls, num_wedges: int, rng: np.random.Generator) -> "SqueezeStack":
        weights = [
            kaiming_uniform(rng, (num_wedges, k, k), fan_in=k * k) for k in KERNELS
        ]
        biases = [np.zeros(num_wedges) for _ in KERNELS]
        return cls(weights=weights, biases=biases)

    @property
    def num_wedges(self) -> int:
        return self.weights[0].shape[0]


@dataclass
class ExciteMLP:
    """wedges -> hidden -> wedges with ReLU inside and sigmoid at the end."""

    w1: np.ndarray  # (hidden, num_wedges)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (num_wedges, hidden)
    b2: np.ndarray  # (num_wedges,)

    @classmethod
    def create(
        cls, num_wedges: int, hidden: int, rng: np.random.Generator
    ) -> "ExciteMLP":
        # w2 starts at zero so every initial score is exactly sigmoid(0) = 0.5
        # and all gates open; w1 is random to break hidden-unit symmetry.
        return cls(
            w1=kaiming_uniform(rng, (hidden, num_wedges), fan_in=num_wedges),
            b1=np.zeros(hidden),
            w2=np.zeros((num_wedges, hidden)),
            b2=np.zeros(num_wedges),
        )

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]


@dataclass
class GateVector:
    """Continuous scores in (0, 1) and their thresholded 0/1 gates."""

    scores: np.ndarray  # (..., num_wedges)
    gates: np.ndarray  # (..., num_wedges), values in {0.0, 1.0}


def binary_threshold(scores: np.ndarray) -> np.ndarray:
    """1 where score >= 0.5, else 0."""
    return (np.asarray(scores) >= 0.5).astype(float)


def conv_chain_sizes(height: int, width: int) -> list[tuple[int, int]]:
    """Spatial sizes after each applied layer under the >= 8 input rule."""
    sizes = []
    h, w = height, width
    for k, s, p in zip(KERNELS, STRIDES, PADS):
        if min(h, w) < MIN_CONV_INPUT:
            break
        h = conv_output_size(h, k, s, p)
        w = conv_output_size(w, k, s, p)
        sizes.append((h, w))
    return sizes


@dataclass
class SqueezeCache:
    padded_inputs: list[np.ndarray]  # per applied layer, already zero-padded
    applied: int
    pre_pool_shape: tuple[int, int]
    pooled_from_adaptive: bool
    plans: list
    squeezed_batch: bool


def _as_batched(mags: list[np.ndarray]) -> tuple[list[np.ndarray], bool]:
    if mags[0].ndim == 2:
        return [m[None] for m in mags], True
    return list(mags), False


def _squeeze_forward(
    mags: list[np.ndarray], stack: SqueezeStack, geometry: CurveletGeometry
) -> tuple[np.ndarray, SqueezeCache]:
    if len(mags) != geometry.num_wedges:
        raise ShapeMismatch(
            f"{len(mags)} magnitude arrays for {geometry.num_wedges} wedges"
        )
    batched, squeezed = _as_batched(mags)
    target = (geometry.height, geometry.width)
    plans = [make_resize_plan(w.shape, target) for w in geometry.wedges]
    for m, info in zip(batched, geometry.wedges):
        if m.shape[-2:] != info.shape:
            raise ShapeMismatch(
                f"magnitude shape {m.shape[-2:]} vs wedge support {info.shape}"
            )
    resized = np.empty((batched[0].shape[0], len(batched)) + target)
    for i, (m, p) in enumerate(zip(batched, plans)):
        resized[:, i] = resize_bilinear(m, p)
    sizes = conv_chain_sizes(*target)
    h = resized
    padded_inputs = []
    for layer in range(len(sizes)):
        h, xp = depthwise_conv2d_cached(
            h, stack.weights[layer], stack.biases[layer], STRIDES[layer], PADS[layer]
        )
        padded_inputs.append(xp)
    pre_pool_shape = h.shape[-2:]
    pooled_from_adaptive = pre_pool_shape != (POOLED_SIDE, POOLED_SIDE)
    if pooled_from_adaptive:
        h = adaptive_avg_pool(h, (POOLED_SIDE, POOLED_SIDE))
    pooled = h.mean(axis=(-2, -1))
    cache = SqueezeCache(
        padded_inputs=padded_inputs,
        applied=len(sizes),
        pre_pool_shape=pre_pool_shape,
        pooled_from_adaptive=pooled_from_adaptive,
        plans=plans,
        squeezed_batch=squeezed,
    )
    return pooled, cache


def _squeeze_vjp(
    cache: SqueezeCache,
    stack: SqueezeStack,
    d_pooled: np.ndarray,
    need_input_grads: bool,
) -> tuple[list[np.ndarray] | None, list[np.ndarray], list[np.ndarray]]:
    g = np.broadcast_to(
        d_pooled[..., None, None] / (POOLED_SIDE * POOLED_SIDE),
        d_pooled.shape + (POOLED_SIDE, POOLED_SIDE),
    )
    if cache.pooled_from_adaptive:
        g = adaptive_avg_pool_vjp(g, cache.pre_pool_shape, (POOLED_SIDE, POOLED_SIDE))
    else:
        g = np.array(g)
    d_weights = [np.zeros_like(w) for w in stack.weights]
    d_biases = [np.zeros_like(b) for b in stack.biases]
    for layer in range(cache.applied - 1, -1, -1):
        need = need_input_grads or layer > 0
        d_in, d_w, d_b = depthwise_conv2d_vjp(
            cache.padded_inputs[layer],
            stack.weights[layer],
            STRIDES[layer],
            PADS[layer],
            g,
            need_input_grad=need,
        )
        d_weights[layer] = d_w
        d_biases[layer] = d_b
        g = d_in if need else None
    d_mags = None
    if need_input_grads:
        d_mags = [
            resize_bilinear_vjp(g[:, i], plan)
            for i, plan in enumerate(cache.plans)
        ]
        if cache.squeezed_batch:
            d_mags = [m[0] for m in d_mags]
    return d_mags, d_weights, d_biases


def squeeze(
    wedge_mags: list[np.ndarray], stack: SqueezeStack, geometry: CurveletGeometry
) -> np.ndarray:
    """Reduce each wedge magnitude to one scalar; shape (..., num_wedges)."""
    pooled, cache = _squeeze_forward(wedge_mags, stack, geometry)
    return pooled[0] if cache.squeezed_batch else pooled


@dataclass
class ExciteCache:
    pooled: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    scores: np.ndarray


def _excite_forward(pooled: np.ndarray, mlp: ExciteMLP) -> tuple[GateVector, ExciteCache]:
    z1 = pooled @ mlp.w1.T + mlp.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ mlp.w2.T + mlp.b2
    scores = sigmoid(z2)
    gates = binary_threshold(scores)
    return GateVector(scores=scores, gates=gates), ExciteCache(
        pooled=pooled, z1=z1, a1=a1, scores=scores
    )


def excite(pooled: np.ndarray, mlp: ExciteMLP) -> GateVector:
    """Map pooled wedge scalars to sigmoid scores and 0/1 gates."""
    gv, _ = _excite_forward(np.asarray(pooled, dtype=float), mlp)
    return gv


def apply_gates(
    wedge_mags: list[np.ndarray], gates: GateVector | np.ndarray
) -> list[np.ndarray]:
    """Multiply wedge i by its gate scalar, at native wedge resolution."""
    values = gates.gates if isinstance(gates, GateVector) else np.asarray(gates)
    if values.shape[-1] != len(wedge_mags):
        raise ShapeMismatch(
            f"{values.shape[-1]} gates for {len(wedge_mags)} wedge arrays"
        )
    return [
        m * values[..., i, None, None] if values.ndim > 1 else m * values[i]
        for i, m in enumerate(wedge_mags)
    ]


@dataclass
class GateCache:
    """Forward state needed by :func:`gate_vjp`."""

    mags: list[np.ndarray]
    squeeze: SqueezeCache
    excite: ExciteCache
    gate_values: np.ndarray  # values actually multiplied in (hard or soft)
    stack: SqueezeStack
    mlp: ExciteMLP
    mode: str


@dataclass
class GateGrads:
    d_magnitudes: list[np.ndarray] | None
    d_conv_weights: list[np.ndarray]
    d_conv_biases: list[np.ndarray]
    d_w1: np.ndarray
    d_b1: np.ndarray
    d_w2: np.ndarray
    d_b2: np.ndarray
    d_scores: np.ndarray


def gate_forward(
    wedge_mags: list[np.ndarray],
    stack: SqueezeStack,
    mlp: ExciteMLP,
    geometry: CurveletGeometry,
    mode: str = "hard",
) -> tuple[GateVector, list[np.ndarray], GateCache]:
    """Squeeze + excite + gate application with a cache for the VJP.

    ``mode`` is "hard" (thresholded gates; straight-through backward) or
    "soft" (gates = scores; used to finite-difference-validate the chain
    rule, since the straight-through backward is exact for this relaxed
    forward).
    """
    if mode not in ("hard", "soft"):
        raise ValueError(f"unknown gate mode {mode!r}")
    batched, squeezed = _as_batched(wedge_mags)
    pooled, sq_cache = _squeeze_forward(batched, stack, geometry)
    gv, ex_cache = _excite_forward(pooled, mlp)
    values = gv.gates if mode == "hard" else gv.scores
    gated = [m * values[:, i, None, None] for i, m in enumerate(batched)]
    if squeezed:
        gv = GateVector(scores=gv.scores[0], gates=gv.gates[0])
        gated = [m[0] for m in gated]
    cache = GateCache(
        mags=batched,
        squeeze=sq_cache,
        excite=ex_cache,
        gate_values=values,
        stack=stack,
        mlp=mlp,
        mode=mode,
    )
    return gv, gated, cache


def gate_vjp(
    cache: GateCache | None,
    upstream: list[np.ndarray],
    extra_score_grad: np.ndarray | None = None,
    need_mag_grads: bool = True,
) -> GateGrads:
    """Backward through gating given gradients w.r.t. the gated magnitudes.

    ``extra_score_grad`` lets a caller (the sparsity regularizer) inject an
    additional gradient on the continuous scores before the excite/squeeze
    chain runs backward.
    """
    if cache is None:
        raise MissingForwardCache("gate_vjp called without a forward cache")
    ups, squeezed = _as_batched([np.asarray(u) for u in upstream])
    if len(ups) != len(cache.mags):
        raise ShapeMismatch(f"{len(ups)} upstream arrays for {len(cache.mags)} wedges")

    values = cache.gate_values
    d_mags_direct = [u * values[:, i, None, None] for i, u in enumerate(ups)]
    # Straight-through: gradient w.r.t. the gate passes to the score as-is.
    d_scores = np.stack(
        [np.sum(u * m, axis=(-2, -1)) for u, m in zip(ups, cache.mags)], axis=-1
    )
    if extra_score_grad is not None:
        extra = np.asarray(extra_score_grad)
        d_scores = d_scores + (extra[None] if extra.ndim == 1 else extra)

    ex = cache.excite
    mlp = cache.mlp
    d_z2 = d_scores * ex.scores * (1.0 - ex.scores)
    d_w2 = np.einsum("bn,bh->nh", d_z2, ex.a1)
    d_b2 = d_z2.sum(axis=0)
    d_a1 = d_z2 @ mlp.w2
    d_z1 = d_a1 * (ex.z1 > 0.0)
    d_w1 = np.einsum("bh,bn->hn", d_z1, ex.pooled)
    d_b1 = d_z1.sum(axis=0)
    d_pooled = d_z1 @ mlp.w1

    d_mags_squeeze, d_weights, d_biases = _squeeze_vjp(
        cache.squeeze, cache.stack, d_pooled, need_input_grads=need_mag_grads
    )
    d_mags = None
    if need_mag_grads:
        d_mags = [a + b for a, b in zip(d_mags_direct, d_mags_squeeze)]
        if squeezed:
            d_mags = [m[0] for m in d_mags]
    return GateGrads(
        d_magnitudes=d_mags,
        d_conv_weights=d_weights,
        d_conv_biases=d_biases,
        d_w1=d_w1,
        d_b1=d_b1,
        d_w2=d_w2,
        d_b2=d_b2,
        d_scores=d_scores if not squeezed else d_scores[0],
    )
