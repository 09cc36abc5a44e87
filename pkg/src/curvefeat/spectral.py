"""Magnitude/phase decomposition and recomposition of wedge coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curvelet import CurveletCoeffs, CurveletGeometry
from .errors import ShapeMismatch


@dataclass(frozen=True)
class MagPhasePair:
    """Polar form of one wedge: modulus >= 0 and phase in (-pi, pi].

    Where the modulus is zero the phase is 0 by convention.
    """

    magnitude: np.ndarray
    phase: np.ndarray


def decompose(coeffs: CurveletCoeffs) -> list[MagPhasePair]:
    """Split each complex wedge into magnitude and phase arrays."""
    out = []
    for z in coeffs.wedges:
        mag = np.abs(z)
        phase = np.angle(z)
        # np.angle yields -pi for (-x - 0j); fold onto the (-pi, pi] convention
        # and pin the phase of exact zeros.
        phase = np.where(phase == -np.pi, np.pi, phase)
        phase = np.where(mag == 0.0, 0.0, phase)
        out.append(MagPhasePair(magnitude=mag, phase=phase))
    return out


def recompose(
    magnitudes: list[np.ndarray],
    phases: list[np.ndarray],
    geometry: CurveletGeometry,
) -> CurveletCoeffs:
    """Rebuild complex coefficients as mag * (cos(phase) + i sin(phase)).

    Magnitudes may be negative (a modulated magnitude is not clamped; a
    negative value acts as a pi phase flip).
    """
    if len(magnitudes) != len(phases):
        raise ShapeMismatch(
            f"{len(magnitudes)} magnitude arrays vs {len(phases)} phase arrays"
        )
    wedges = []
    for mag, phase in zip(magnitudes, phases):
        mag = np.asarray(mag, dtype=float)
        phase = np.asarray(phase, dtype=float)
        if mag.shape != phase.shape:
            raise ShapeMismatch(
                f"magnitude shape {mag.shape} vs phase shape {phase.shape}"
            )
        wedges.append(mag * np.exp(1j * phase))
    return CurveletCoeffs(geometry, wedges)


def unit_phasors(coeffs: CurveletCoeffs) -> list[np.ndarray]:
    """Per-wedge e^{i phase} with the zero-magnitude convention e^{i0} = 1.

    Cheaper than going through angles when the phase itself is not needed.
    """
    out = []
    for z in coeffs.wedges:
        mag = np.abs(z)
        out.append(np.where(mag == 0.0, 1.0 + 0.0j, z / np.where(mag == 0.0, 1.0, mag)))
    return out
