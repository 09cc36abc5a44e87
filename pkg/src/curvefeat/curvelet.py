"""Tight-frame 2D discrete curvelet transform via frequency-wedge wrapping.

The frequency plane is tiled into dyadic coronae (concentric max-norm
squares) and each intermediate corona is split into angular wedges. Every
wedge carries a smooth real window; the squared windows sum to exactly 1
over the whole FFT grid, so the analysis operator is a tight frame and the
adjoint is a numerically exact inverse.

Forward transform of one wedge: unitary 2D FFT of the image, multiply by
the wedge window, wrap the windowed spectrum onto the wedge's support
rectangle (periodic index extraction), unitary inverse FFT of the tile.
The inverse scatters each tile's spectrum back onto the grid through the
same window and sums.

All windows are built from the smooth step v(t) = t^4(35 - 84t + 70t^2 -
20t^3) mapped through sin/cos half-windows, which makes the partition of
unity hold to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadAngleCount, DimensionTooSmall, GeometryTooShallow, ShapeMismatch

_SNAP = 1e-15  # window samples below this are treated as exact zeros


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C^3 step on [0, 1]: 0 at 0, 1 at 1, flat derivatives at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 4 * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)))


def per_scale_angle_counts(num_scales: int, angles_at_scale2: int) -> tuple[int, ...]:
    """Wedges per scale: [1, A, 2A, 2A, 4A, ...] with a single finest wedge.

    The angular count doubles every other intermediate scale; the coarsest
    and finest scales are isotropic (one wedge each).
    """
    counts = [1]
    for j in range(2, num_scales):
        counts.append(angles_at_scale2 * 2 ** ((j - 1) // 2))
    counts.append(1)
    return tuple(counts)


@dataclass(frozen=True)
class WedgeInfo:
    """Frequency support and window table of one wedge.

    ``corner`` is the unshifted FFT-grid index of the support rectangle's
    top-left cell; ``rows``/``cols`` are the precomputed (wrapped) grid
    indices covered by the rectangle. ``window`` holds the real window
    samples on the rectangle.
    """

    scale: int  # 1-based curvelet scale
    angle: int  # 0-based orientation within the scale, CCW from +x
    corner: tuple[int, int]
    shape: tuple[int, int]
    window: np.ndarray = field(repr=False)
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class CurveletGeometry:
    """Immutable frequency-tiling plan for one image size.

    Wedges are stored flat in scale-major order; within a scale they run
    counter-clockwise starting from the wedge whose center direction lies
    on the +x frequency axis.
    """

    height: int
    width: int
    num_scales: int
    angles_at_scale2: int
    per_scale_angles: tuple[int, ...]
    wedges: tuple[WedgeInfo, ...] = field(repr=False)

    @property
    def num_wedges(self) -> int:
        return len(self.wedges)

    def wedge_index(self, scale: int, angle: int) -> int:
        """Flat 0-based index of wedge ``angle`` at 1-based ``scale``."""
        return sum(self.per_scale_angles[: scale - 1]) + angle

    def scale_slice(self, scale: int) -> slice:
        """Flat index range occupied by one 1-based scale."""
        start = sum(self.per_scale_angles[: scale - 1])
        return slice(start, start + self.per_scale_angles[scale - 1])

    def squared_window_sum(self) -> np.ndarray:
        """Accumulate all squared window tables onto the full FFT grid."""
        total = np.zeros((self.height, self.width))
        for w in self.wedges:
            total[w.rows[:, None], w.cols[None, :]] += w.window ** 2
        return total

    def partition_deviation(self) -> float:
        """Max absolute deviation of the squared-window sum from 1."""
        return float(np.max(np.abs(self.squared_window_sum() - 1.0)))


class CurveletCoeffs:
    """Jagged collection of complex wedge arrays for one channel.

    ``wedges[i]`` has shape ``(..., h_i, w_i)`` where the trailing extents
    come from the geometry; leading axes (if any) are batch dimensions and
    must agree across wedges.
    """

    __slots__ = ("geometry", "wedges")

    def __init__(self, geometry: CurveletGeometry, wedges: list[np.ndarray]):
        if len(wedges) != geometry.num_wedges:
            raise ShapeMismatch(
                f"expected {geometry.num_wedges} wedge arrays, got {len(wedges)}"
            )
        lead = np.asarray(wedges[0]).shape[:-2]
        checked = []
        for arr, info in zip(wedges, geometry.wedges):
            arr = np.asarray(arr)
            if arr.shape[-2:] != info.shape or arr.shape[:-2] != lead:
                raise ShapeMismatch(
                    f"wedge (scale {info.scale}, angle {info.angle}) has shape "
                    f"{arr.shape}, expected {lead + info.shape}"
                )
            checked.append(arr)
        self.geometry = geometry
        self.wedges = checked

    def energy(self) -> float:
        """Total squared modulus across all wedges."""
        return float(sum(np.sum(np.abs(w) ** 2) for w in self.wedges))

    def scaled(self, factor: complex) -> "CurveletCoeffs":
        return CurveletCoeffs(self.geometry, [factor * w for w in self.wedges])


def build_geometry(
    height: int,
    width: int,
    num_scales: int = 5,
    angles_at_scale2: int = 8,
    transition_octaves: float = 0.25,
) -> CurveletGeometry:
    """Construct the wedge tiling for an ``height x width`` image.

    Parameters
    ----------
    height, width : int
        Image dimensions; each must be at least ``2 ** num_scales``.
    num_scales : int
        Total scales including the isotropic coarsest and finest (>= 3).
    angles_at_scale2 : int
        Angular wedge count at the second scale; positive multiple of 4.
    transition_octaves : float
        Width of each radial rise/fall zone as a fraction of an octave, in
        (0, 1]. 1 gives classic fully-overlapping coronae; the 0.25
        default leaves every corona a wide exclusive flat region, which
        keeps scale bands spectrally distinct. The partition of unity is
        exact either way.

    Raises
    ------
    DimensionTooSmall, BadAngleCount, GeometryTooShallow
    """
    if num_scales < 3:
        raise GeometryTooShallow(f"need at least 3 scales, got {num_scales}")
    if angles_at_scale2 <= 0 or angles_at_scale2 % 4 != 0:
        raise BadAngleCount(
            f"angles_at_scale2 must be a positive multiple of 4, got {angles_at_scale2}"
        )
    if height < 2 ** num_scales or width < 2 ** num_scales:
        raise DimensionTooSmall(
            f"{height}x{width} too small for {num_scales} scales "
            f"(need >= {2 ** num_scales})"
        )
    if not 0.0 < transition_octaves <= 1.0:
        raise ValueError("transition_octaves must lie in (0, 1]")

    counts = per_scale_angle_counts(num_scales, angles_at_scale2)

    # Centered frequency coordinates; max-norm pseudo-radius in [0, 1] and
    # angular position in turns, measured CCW from the +x (column) axis.
    k1 = np.arange(height) - height // 2
    k2 = np.arange(width) - width // 2
    rr = np.maximum(
        np.abs(k1)[:, None] / max(height // 2, 1),
        np.abs(k2)[None, :] / max(width // 2, 1),
    )
    tau = np.mod(
        np.arctan2(k1[:, None].astype(float), k2[None, :].astype(float))
        / (2.0 * np.pi),
        1.0,
    )

    # Radial rise/fall pairs share one step evaluation per transition so
    # that sin^2 + cos^2 cancels exactly at every grid point.
    rises: list[np.ndarray] = []
    falls: list[np.ndarray] = []
    for m in range(1, num_scales):
        hi = 2.0 ** (m - num_scales)
        lo = hi * 2.0 ** (-transition_octaves)
        arg = 0.5 * np.pi * _smooth_step((rr - lo) / (hi - lo))
        rises.append(np.sin(arg))
        falls.append(np.cos(arg))

    def radial(scale: int) -> np.ndarray:
        if scale == 1:
            return falls[0]
        if scale == num_scales:
            return rises[-1]
        return rises[scale - 2] * falls[scale - 1]

    wedges: list[WedgeInfo] = []
    for scale in range(1, num_scales + 1):
        n_ang = counts[scale - 1]
        rad = radial(scale)
        if n_ang == 1:
            angular = [np.ones_like(rad)]
        else:
            u = tau * n_ang
            base = np.floor(u)
            frac = u - base
            owner = base.astype(int) % n_ang
            arg = 0.5 * np.pi * _smooth_step(frac)
            w_lo = np.cos(arg)  # weight toward wedge `owner`
            w_hi = np.sin(arg)  # weight toward wedge `owner + 1`
            angular = [
                np.where(owner == a, w_lo, 0.0)
                + np.where((owner + 1) % n_ang == a, w_hi, 0.0)
                for a in range(n_ang)
            ]
        for angle, ang in enumerate(angular):
            win = rad * ang
            win[np.abs(win) < _SNAP] = 0.0
            nz_rows = np.nonzero(win.any(axis=1))[0]
            nz_cols = np.nonzero(win.any(axis=0))[0]
            if nz_rows.size == 0:
                raise DimensionTooSmall(
                    f"{height}x{width} grid leaves wedge (scale {scale}, "
                    f"angle {angle}) with empty support"
                )
            r0, r1 = int(nz_rows[0]), int(nz_rows[-1])
            c0, c1 = int(nz_cols[0]), int(nz_cols[-1])
            table = np.ascontiguousarray(win[r0 : r1 + 1, c0 : c1 + 1])
            table.setflags(write=False)
            rows = (r0 - height // 2 + np.arange(r1 - r0 + 1)) % height
            cols = (c0 - width // 2 + np.arange(c1 - c0 + 1)) % width
            rows.setflags(write=False)
            cols.setflags(write=False)
            wedges.append(
                WedgeInfo(
                    scale=scale,
                    angle=angle,
                    corner=(int(rows[0]), int(cols[0])),
                    shape=table.shape,
                    window=table,
                    rows=rows,
                    cols=cols,
                )
            )

    return CurveletGeometry(
        height=height,
        width=width,
        num_scales=num_scales,
        angles_at_scale2=angles_at_scale2,
        per_scale_angles=counts,
        wedges=tuple(wedges),
    )


def fdct_forward(image_channel: np.ndarray, geometry: CurveletGeometry) -> CurveletCoeffs:
    """Analyze a real image channel into complex wedge coefficients.

    Accepts leading batch axes: shape ``(..., H, W)``.
    """
    x = np.asarray(image_channel, dtype=float)
    if x.shape[-2:] != (geometry.height, geometry.width):
        raise ShapeMismatch(
            f"input shape {x.shape[-2:]} does not match geometry "
            f"{(geometry.height, geometry.width)}"
        )
    spec = np.fft.fft2(x, norm="ortho")
    wedges = [
        np.fft.ifft2(spec[..., w.rows[:, None], w.cols[None, :]] * w.window, norm="ortho")
        for w in geometry.wedges
    ]
    return CurveletCoeffs(geometry, wedges)


def fdct_inverse(coeffs: CurveletCoeffs) -> np.ndarray:
    """Adjoint of :func:`fdct_forward`; exact inverse for a tight frame."""
    g = coeffs.geometry
    lead = coeffs.wedges[0].shape[:-2]
    spec = np.zeros(lead + (g.height, g.width), dtype=complex)
    for info, c in zip(g.wedges, coeffs.wedges):
        tile = np.fft.fft2(np.asarray(c, dtype=complex), norm="ortho") * info.window
        spec[..., info.rows[:, None], info.cols[None, :]] += tile
    return np.fft.ifft2(spec, norm="ortho").real


def adjoint_check(geometry: CurveletGeometry, seed: int) -> float:
    """Normalized adjoint discrepancy |<Fx, y> - <x, F*y>| / (|x| |y|).

    Uses the real inner product (complex arrays treated as stacked
    real/imaginary parts), matching how gradients traverse the transform.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((geometry.height, geometry.width))
    y = CurveletCoeffs(
        geometry,
        [
            rng.standard_normal(w.shape) + 1j * rng.standard_normal(w.shape)
            for w in geometry.wedges
        ],
    )
    fx = fdct_forward(x, geometry)
    fty = fdct_inverse(y)
    lhs = sum(
        float(np.sum(a.real * b.real + a.imag * b.imag))
        for a, b in zip(fx.wedges, y.wedges)
    )
    rhs = float(np.sum(x * fty))
    num = abs(lhs - rhs)
    if num == 0.0:
        return 0.0
    den = float(np.linalg.norm(x)) * np.sqrt(y.energy())
    return num / den
