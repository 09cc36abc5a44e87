"""Scale-band masking: fixed base masks plus learnable spatial masks.

Wedges are grouped into four bands by curvelet scale: band 1 covers scales
1-2, band 2 covers scale 3, band 3 covers scales 4 through the finest, and
band 4 covers everything. Each band keeps, for every wedge, a constant 0/1
base mask (1 inside the band) and a learnable pre-activation array at the
wedge's native resolution. The final mask is

    C = 2*sigmoid(M) - 1 + B

so in-band values range over (0, 2) and out-of-band values over (-1, 1):
a band can attenuate its own wedges or re-admit foreign ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .curvelet import CurveletCoeffs, CurveletGeometry
from .errors import GeometryTooShallow, MissingForwardCache, ShapeMismatch
from .nnops import sigmoid
from .spectral import recompose

NUM_BANDS = 4


@dataclass(frozen=True)
class ScaleBandSpec:
    """One band: its index (1..4) and member wedge flat indices (0-based)."""

    band: int
    wedge_indices: tuple[int, ...]


def scaled_sigmoid(x: np.ndarray) -> np.ndarray:
    """2*sigmoid(x) - 1, mapping R onto (-1, 1)."""
    return 2.0 * sigmoid(np.asarray(x, dtype=float)) - 1.0


def scaled_sigmoid_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(np.asarray(x, dtype=float))
    return 2.0 * s * (1.0 - s)


def band_scale_ranges(num_scales: int) -> list[tuple[int, int]]:
    """Inclusive curvelet-scale range per band (band 4 = all scales)."""
    if num_scales < 3:
        raise GeometryTooShallow(f"band mapping needs >= 3 scales, got {num_scales}")
    return [(1, 2), (3, 3), (4, num_scales), (1, num_scales)]


@dataclass
class MaskSet:
    """Per-band base-mask membership and learnable mask parameters."""

    geometry: CurveletGeometry
    bands: tuple[ScaleBandSpec, ...]
    params: list[list[np.ndarray]]  # params[band-1][wedge] at native resolution

    def in_band(self, band: int, wedge: int) -> bool:
        return wedge in self.bands[band - 1].wedge_indices

    def base_value(self, band: int, wedge: int) -> float:
        return 1.0 if self.in_band(band, wedge) else 0.0

    def final_mask(self, band: int, wedge: int) -> np.ndarray:
        """C = scaled_sigmoid(M) + B for one wedge."""
        return scaled_sigmoid(self.params[band - 1][wedge]) + self.base_value(band, wedge)


def build_bands(geometry: CurveletGeometry) -> MaskSet:
    """Band specs plus zero-initialized learnable masks (so C = B at init)."""
    ranges = band_scale_ranges(geometry.num_scales)
    bands = []
    for k, (lo, hi) in enumerate(ranges, start=1):
        members = tuple(
            i for i, w in enumerate(geometry.wedges) if lo <= w.scale <= hi
        )
        bands.append(ScaleBandSpec(band=k, wedge_indices=members))
    params = [
        [np.zeros(w.shape) for w in geometry.wedges] for _ in range(NUM_BANDS)
    ]
    return MaskSet(geometry=geometry, bands=tuple(bands), params=params)


@dataclass
class ModulateCache:
    band: int
    gated: list[np.ndarray]
    final_masks: list[np.ndarray]
    mask_grads: list[np.ndarray]  # d C / d M, elementwise


def _modulate_forward(
    gated_mags: list[np.ndarray], masks: MaskSet, band: int
) -> tuple[list[np.ndarray], ModulateCache]:
    g = masks.geometry
    if len(gated_mags) != g.num_wedges:
        raise ShapeMismatch(
            f"{len(gated_mags)} magnitude arrays for {g.num_wedges} wedges"
        )
    out = []
    finals = []
    grads = []
    for i, (mag, info) in enumerate(zip(gated_mags, g.wedges)):
        mag = np.asarray(mag, dtype=float)
        if mag.shape[-2:] != info.shape:
            raise ShapeMismatch(
                f"wedge {i} magnitude shape {mag.shape[-2:]} vs support {info.shape}"
            )
        m = masks.params[band - 1][i]
        c = scaled_sigmoid(m) + masks.base_value(band, i)
        finals.append(c)
        grads.append(scaled_sigmoid_grad(m))
        out.append(mag * c)
    cache = ModulateCache(
        band=band, gated=[np.asarray(m, dtype=float) for m in gated_mags],
        final_masks=finals, mask_grads=grads,
    )
    return out, cache


def modulate(
    gated_mags: list[np.ndarray], masks: MaskSet, band: int
) -> list[np.ndarray]:
    """Elementwise product of each wedge with its final band mask."""
    out, _ = _modulate_forward(gated_mags, masks, band)
    return out


def mask_vjp(
    cache: ModulateCache | None, upstream: list[np.ndarray]
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients (d_mask_params, d_gated_mags) for one band's modulation.

    Batched upstream arrays are reduced over leading axes for the mask
    parameters (which are shared across the batch).
    """
    if cache is None:
        raise MissingForwardCache("mask_vjp called without a forward cache")
    if len(upstream) != len(cache.gated):
        raise ShapeMismatch(
            f"{len(upstream)} upstream arrays for {len(cache.gated)} wedges"
        )
    d_params = []
    d_gated = []
    for u, mag, c, dc in zip(upstream, cache.gated, cache.final_masks, cache.mask_grads):
        u = np.asarray(u, dtype=float)
        if u.shape != mag.shape:
            raise ShapeMismatch(f"upstream shape {u.shape} vs cached {mag.shape}")
        d_c = u * mag
        if d_c.ndim > 2:
            d_c = d_c.sum(axis=tuple(range(d_c.ndim - 2)))
        d_params.append(d_c * dc)
        d_gated.append(u * c)
    return d_params, d_gated


def recompose_band(
    modulated_mags: list[np.ndarray],
    phases: list[np.ndarray],
    geometry: CurveletGeometry,
    band: int,
) -> CurveletCoeffs:
    """Recombine one band's modulated magnitudes with the original phases.

    All wedges are carried (out-of-band wedges hold their attenuated
    values), so the result feeds :func:`curvefeat.curvelet.fdct_inverse`
    directly. ``band`` is recorded for provenance only; the arithmetic is
    identical across bands.
    """
    if not 1 <= band <= NUM_BANDS:
        raise ValueError(f"band must be in 1..{NUM_BANDS}, got {band}")
    return recompose(modulated_mags, phases, geometry)


def write_band_mask_pgms(masks: MaskSet, band: int, out_dir: str | Path) -> list[Path]:
    """Export one band's final masks as 8-bit PGM heatmaps.

    The mask range (-1, 2) maps linearly onto 0..255.
    """
    from .imageio import write_pgm

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, info in enumerate(masks.geometry.wedges):
        c = masks.final_mask(band, i)
        gray = np.clip((c + 1.0) / 3.0 * 255.0, 0.0, 255.0).astype(np.uint8)
        path = out_dir / f"band{band}_wedge{i + 1:02d}_s{info.scale}a{info.angle}.pgm"
        write_pgm(path, gray)
        paths.append(path)
    return paths
