"""Shared test utilities: finite-difference checks and tiny fixtures."""

from __future__ import annotations

import numpy as np


def directional_fd(loss_fn, arr: np.ndarray, direction: np.ndarray, eps: float = 1e-5) -> float:
    """Central finite difference of loss_fn along a direction of one tensor."""
    arr += eps * direction
    lp = loss_fn()
    arr -= 2.0 * eps * direction
    lm = loss_fn()
    arr += eps * direction
    return (lp - lm) / (2.0 * eps)


def check_tensor_grad(
    loss_fn,
    arr: np.ndarray,
    analytic: np.ndarray,
    rng: np.random.Generator,
    eps: float = 1e-5,
) -> float:
    """Relative error between a random directional derivative and its VJP."""
    direction = rng.standard_normal(arr.shape)
    norm = np.linalg.norm(direction.reshape(-1))
    if norm > 0:
        direction /= norm
    fd = directional_fd(loss_fn, arr, direction, eps)
    an = float(np.sum(np.asarray(analytic) * direction))
    return abs(fd - an) / max(abs(fd), abs(an), 1e-8)


def entry_fd(loss_fn, arr: np.ndarray, index, eps: float = 1e-5) -> float:
    """Central finite difference for a single tensor entry."""
    orig = arr[index]
    arr[index] = orig + eps
    lp = loss_fn()
    arr[index] = orig - eps
    lm = loss_fn()
    arr[index] = orig
    return (lp - lm) / (2.0 * eps)


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
