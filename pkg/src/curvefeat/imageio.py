"""Image input/output: 8-bit PNG/PPM in, PNG/PGM/tensor-container out.

Loaded images are normalized to [0, 1] by dividing by 255. A CFT tensor
file may also serve as image input (float payload already in [0, 1]),
which gives callers a lossless path around 8-bit quantization.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .container import read_archive, write_archive
from .errors import BadChannelCount


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def read_image(path: str | Path) -> np.ndarray:
    """Load an image as a (3, H, W) float64 array in [0, 1].

    Grayscale inputs are replicated to three channels with a warning.
    """
    path = Path(path)
    if path.suffix.lower() == ".cft":
        return _read_cft_image(path)
    from PIL import Image

    with Image.open(path) as img:
        if img.mode == "L":
            _warn(f"{path}: grayscale input replicated to 3 channels")
            arr = np.asarray(img, dtype=np.float64) / 255.0
            return np.stack([arr, arr, arr])
        if img.mode != "RGB":
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return np.moveaxis(arr, -1, 0)


def _read_cft_image(path: Path) -> np.ndarray:
    records = read_archive(path)
    if not records:
        raise BadChannelCount(f"{path}: empty tensor container")
    arr, _ = records[0]
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        _warn(f"{path}: single-channel tensor replicated to 3 channels")
        return np.stack([arr, arr, arr])
    if arr.ndim == 3 and arr.shape[0] == 3:
        return arr
    raise BadChannelCount(f"{path}: expected (H, W) or (3, H, W), got {arr.shape}")


def write_image_cft(path: str | Path, image: np.ndarray, metadata: dict | None = None) -> None:
    meta = {"kind": "image"}
    meta.update({k: str(v) for k, v in (metadata or {}).items()})
    write_archive(path, [(np.asarray(image, dtype=np.float64), meta)])


def write_png(path: str | Path, image: np.ndarray) -> None:
    """Write a (3, H, W) or (H, W) array in [0, 1] as an 8-bit PNG."""
    from PIL import Image

    arr = np.asarray(image, dtype=np.float64)
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if quantized.ndim == 3:
        Image.fromarray(np.moveaxis(quantized, 0, -1), mode="RGB").save(path)
    else:
        Image.fromarray(quantized, mode="L").save(path)


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    """Binary (P5) 8-bit PGM."""
    arr = np.asarray(gray)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    if arr.ndim != 2:
        raise BadChannelCount(f"PGM needs a 2D array, got shape {arr.shape}")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; inf if equal."""
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)
