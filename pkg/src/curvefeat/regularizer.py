"""Loss-adaptive, progressively intensified L1 gate regularization.

The sparsity term penalizes the mean absolute deviation between each
channel's summed gate scores and a per-channel target T = M/3, weighted by
a step schedule that starts at 2.5e-4 and grows by half the initial value
every 5 epochs. A second term adds a clamped, rescaled copy of the
classification loss so the overall regularization relaxes while the
classifier is still struggling.

Continuous sigmoid scores stand in for hard gate counts inside the
penalty: binarized counts have zero gradient everywhere, while the
straight-through forward keeps the two close.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RegConfig:
    """Knobs for the regularization schedule.

    ``lambda_l1_constant`` switches the schedule off in favour of a flat
    coefficient (the 0.01 variant); leave it None for the stepped default.
    """

    loss_min: float = 0.2
    loss_max: float = 0.5
    lambda_max: float = 0.25
    lambda_cls: float = 0.1
    lambda_l1_base: float = 2.5e-4
    lambda_l1_increment: float = 1.25e-4
    increment_every: int = 5
    total_active_target: float = 63.0  # allowed active gates across RGB
    lambda_l1_constant: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_min < self.loss_max:
            raise ValueError("need 0 <= loss_min < loss_max")
        if self.lambda_max <= 0.0:
            raise ValueError("lambda_max must be positive")
        if self.total_active_target <= 0.0:
            raise ValueError("total_active_target must be positive")

    @property
    def target_per_channel(self) -> float:
        return self.total_active_target / 3.0


def lambda_l1_at(epoch: int, cfg: RegConfig) -> float:
    """Sparsity weight in effect during ``epoch`` (0-based)."""
    if cfg.lambda_l1_constant is not None:
        return cfg.lambda_l1_constant
    return cfg.lambda_l1_base + (epoch // cfg.increment_every) * cfg.lambda_l1_increment


def normalized_cls_loss(l_cls: float, cfg: RegConfig) -> float:
    """Classification loss rescaled and clamped into [0, lambda_max]."""
    scaled = (l_cls - cfg.loss_min) / (cfg.loss_max - cfg.loss_min) * cfg.lambda_max
    return float(np.clip(scaled, 0.0, cfg.lambda_max))


def normalized_cls_loss_grad(l_cls: float, cfg: RegConfig) -> float:
    """d normalized / d l_cls (zero outside the clamp's active band)."""
    if cfg.loss_min < l_cls < cfg.loss_max:
        return cfg.lambda_max / (cfg.loss_max - cfg.loss_min)
    return 0.0


def reg_loss(
    gate_l1_per_channel: np.ndarray,
    l_cls: float,
    epoch: int,
    cfg: RegConfig,
) -> float:
    """Total regularization for one sample (or one batch-mean of sums).

    ``gate_l1_per_channel`` holds the summed continuous gate scores for
    each colour channel.
    """
    sums = np.asarray(gate_l1_per_channel, dtype=float)
    sparsity = float(np.mean(np.abs(sums - cfg.target_per_channel)))
    return sparsity * lambda_l1_at(epoch, cfg) + cfg.lambda_cls * normalized_cls_loss(
        l_cls, cfg
    )


def reg_vjp(scores: np.ndarray, epoch: int, cfg: RegConfig) -> np.ndarray:
    """Gradient of the sparsity term w.r.t. every gate score.

    ``scores`` has shape (..., channels, wedges); the per-channel sum runs
    over the last axis. Each score in channel c receives
    sign(sum_c - T) * lambda_l1 / channels, with subgradient 0 at the tie.
    """
    scores = np.asarray(scores, dtype=float)
    sums = scores.sum(axis=-1)
    sign = np.sign(sums - cfg.target_per_channel)
    lam = lambda_l1_at(epoch, cfg)
    n_channels = scores.shape[-2]
    return np.broadcast_to(
        (sign * lam / n_channels)[..., None], scores.shape
    ).copy()
