"""Per-channel enhancement and assembly of the 12-channel stack.

One colour channel flows through: forward curvelet transform, magnitude /
phase split, squeeze-excite gating of the magnitudes, then four parallel
band modulations, each recombined with the original phase and inverted
back to the image grid. Three channels times four bands gives a 12xHxW
tensor ordered channel-major: [R b1..b4, G b1..b4, B b1..b4].
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .curvelet import CurveletCoeffs, CurveletGeometry, fdct_forward, fdct_inverse
from .errors import BadChannelCount, ShapeMismatch
from .gating import (
    ExciteMLP,
    GateCache,
    GateGrads,
    GateVector,
    SqueezeStack,
    gate_forward,
    gate_vjp,
)
from .masks import MaskSet, ModulateCache, _modulate_forward, build_bands, mask_vjp

NUM_BANDS = 4
NUM_CHANNELS = 3
BAND_REPLICATION = 4  # each RGB filter is duplicated once per band


@dataclass
class WedgeGateParams:
    """A squeeze stack and excite MLP pair."""

    stack: SqueezeStack
    mlp: ExciteMLP


@dataclass
class EnhanceParams:
    """Everything the enhancement pipeline needs for one geometry.

    ``gates`` holds one entry shared across RGB (default) or three
    per-channel entries.
    """

    geometry: CurveletGeometry
    gates: tuple[WedgeGateParams, ...]
    masks: MaskSet

    def gate_for(self, channel: int) -> WedgeGateParams:
        return self.gates[0] if len(self.gates) == 1 else self.gates[channel]


def neutral_params(
    geometry: CurveletGeometry,
    hidden: int = 16,
    seed: int = 0,
    per_channel_gates: bool = False,
) -> EnhanceParams:
    """Freshly initialized parameters: all gates open, all masks neutral."""
    rng = np.random.default_rng(seed)
    n = geometry.num_wedges
    count = NUM_CHANNELS if per_channel_gates else 1
    gates = tuple(
        WedgeGateParams(
            stack=SqueezeStack.create(n, rng), mlp=ExciteMLP.create(n, hidden, rng)
        )
        for _ in range(count)
    )
    return EnhanceParams(geometry=geometry, gates=gates, masks=build_bands(geometry))


@dataclass
class ChannelCache:
    """Forward state of one channel's enhancement, for the backward pass."""

    mags: list[np.ndarray]
    units: list[np.ndarray]  # e^{i phase} per wedge
    gate_cache: GateCache
    band_caches: list[ModulateCache]
    geometry: CurveletGeometry
    squeezed_batch: bool


@dataclass
class ChannelGrads:
    gate: GateGrads
    d_mask_params: list[list[np.ndarray]]  # [band][wedge]


def _polar_split(coeffs: CurveletCoeffs) -> tuple[list[np.ndarray], list[np.ndarray]]:
    mags = []
    units = []
    for z in coeffs.wedges:
        mag = np.abs(z)
        safe = np.where(mag == 0.0, 1.0, mag)
        units.append(np.where(mag == 0.0, 1.0 + 0.0j, z / safe))
        mags.append(mag)
    return mags, units


def _enhance_channel_forward(
    channel: np.ndarray,
    params: EnhanceParams,
    channel_index: int = 0,
    gate_mode: str = "hard",
) -> tuple[np.ndarray, GateVector, ChannelCache]:
    x = np.asarray(channel, dtype=float)
    squeezed = x.ndim == 2
    if squeezed:
        x = x[None]
    g = params.geometry
    coeffs = fdct_forward(x, g)
    mags, units = _polar_split(coeffs)
    gp = params.gate_for(channel_index)
    gv, gated, gate_cache = gate_forward(mags, gp.stack, gp.mlp, g, mode=gate_mode)
    maps = []
    band_caches = []
    for band in range(1, NUM_BANDS + 1):
        modulated, mcache = _modulate_forward(gated, params.masks, band)
        band_caches.append(mcache)
        recombined = CurveletCoeffs(
            g, [m * u for m, u in zip(modulated, units)]
        )
        maps.append(fdct_inverse(recombined))
    out = np.stack(maps, axis=-3)
    cache = ChannelCache(
        mags=mags,
        units=units,
        gate_cache=gate_cache,
        band_caches=band_caches,
        geometry=g,
        squeezed_batch=squeezed,
    )
    if squeezed:
        out = out[0]
        gv = GateVector(scores=gv.scores[0], gates=gv.gates[0])
    return out, gv, cache


def _enhance_channel_vjp(
    cache: ChannelCache,
    d_maps: np.ndarray,
    extra_score_grad: np.ndarray | None = None,
    need_mag_grads: bool = False,
) -> ChannelGrads:
    g = cache.geometry
    d = np.asarray(d_maps, dtype=float)
    if cache.squeezed_batch:
        d = d[None]
    if d.shape[-3] != NUM_BANDS:
        raise ShapeMismatch(f"expected {NUM_BANDS} band maps, got {d.shape[-3]}")
    d_gated_total = None
    d_mask_params: list[list[np.ndarray]] = []
    for band in range(1, NUM_BANDS + 1):
        # Gradient of fdct_inverse is fdct_forward (tight frame); gradient
        # through the phase recombination is Re(e^{-i theta} * upstream).
        dz = fdct_forward(d[..., band - 1, :, :], g)
        d_mod = [
            (t * np.conj(u)).real for t, u in zip(dz.wedges, cache.units)
        ]
        d_params, d_gated = mask_vjp(cache.band_caches[band - 1], d_mod)
        d_mask_params.append(d_params)
        if d_gated_total is None:
            d_gated_total = d_gated
        else:
            d_gated_total = [a + b for a, b in zip(d_gated_total, d_gated)]
    gate_grads = gate_vjp(
        cache.gate_cache,
        d_gated_total,
        extra_score_grad=extra_score_grad,
        need_mag_grads=need_mag_grads,
    )
    return ChannelGrads(gate=gate_grads, d_mask_params=d_mask_params)


def enhance_channel(
    channel: np.ndarray, params: EnhanceParams, channel_index: int = 0
) -> np.ndarray:
    """Four band-enhanced maps for one channel; shape (..., 4, H, W)."""
    out, _, _ = _enhance_channel_forward(channel, params, channel_index)
    return out


def enhance_image(
    rgb: np.ndarray, params: EnhanceParams, threads: int = 1
) -> np.ndarray:
    """12-channel enhanced stack for an RGB image.

    Input shape (..., 3, H, W); output (..., 12, H, W) ordered
    [R b1..b4, G b1..b4, B b1..b4]. Channels are independent, so they may
    be processed by a small thread pool (results are assembled in channel
    order either way).
    """
    x = np.asarray(rgb, dtype=float)
    if x.ndim < 3 or x.shape[-3] != NUM_CHANNELS:
        raise BadChannelCount(f"expected a (..., 3, H, W) image, got {x.shape}")

    def one(c: int) -> np.ndarray:
        return enhance_channel(x[..., c, :, :], params, channel_index=c)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, NUM_CHANNELS)) as pool:
            maps = list(pool.map(one, range(NUM_CHANNELS)))
    else:
        maps = [one(c) for c in range(NUM_CHANNELS)]
    return np.concatenate(maps, axis=-3)


def inflate_first_conv(weights: np.ndarray) -> np.ndarray:
    """Expand a (Cout, 3, k, k) filter bank to 12 input channels.

    Each RGB slice is duplicated four times in place, giving input order
    [R,R,R,R,G,G,G,G,B,B,B,B] to match the enhanced-stack layout.
    """
    w = np.asarray(weights)
    if w.ndim != 4 or w.shape[1] != NUM_CHANNELS:
        raise BadChannelCount(
            f"expected weights shaped (Cout, 3, k, k), got {w.shape}"
        )
    return np.repeat(w, BAND_REPLICATION, axis=1)
