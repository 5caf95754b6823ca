"""PNG and raw float image I/O. Values map linearly between [0, 1] and code values."""

from __future__ import annotations

import re
from pathlib import Path

import cv2
import numpy as np


def read_png(path: str | Path) -> np.ndarray:
    """Load an 8- or 16-bit PNG as float64 ``(H, W)`` or RGB ``(H, W, 3)``."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"cannot read image {path}")
    if img.dtype == np.uint8:
        scale = 255.0
    elif img.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValueError(f"{path}: unsupported PNG dtype {img.dtype}")
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = img[..., :3]
        img = img[..., ::-1]
    return img.astype(np.float64) / scale


def write_png(path: str | Path, image: np.ndarray, bits: int = 8) -> None:
    if bits == 8:
        dtype, scale = np.uint8, 255.0
    elif bits == 16:
        dtype, scale = np.uint16, 65535.0
    else:
        raise ValueError("bits must be 8 or 16")
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    code = np.rint(np.clip(arr, 0.0, 1.0) * scale).astype(dtype)
    if code.ndim == 3:
        code = np.ascontiguousarray(code[..., ::-1])
    if not cv2.imwrite(str(path), code):
        raise OSError(f"cannot write image {path}")


def quantize(image: np.ndarray, bits: int = 8) -> np.ndarray:
    """What :func:`write_png` followed by :func:`read_png` returns, without the disk."""
    scale = float((1 << bits) - 1)
    return np.rint(np.clip(image, 0.0, 1.0) * scale) / scale


def write_float_dump(path: str | Path, image: np.ndarray) -> None:
    """Raw little-endian float32, channel-planar (C, H, W), no header."""
    arr = np.asarray(image, dtype="<f4")
    if arr.ndim == 3:
        arr = np.moveaxis(arr, 2, 0)
    Path(path).write_bytes(np.ascontiguousarray(arr).tobytes())


def read_float_dump(path: str | Path, width: int, height: int, channels: int = 1) -> np.ndarray:
    arr = np.fromfile(path, dtype="<f4")
    if arr.size != width * height * channels:
        raise ValueError(f"{path}: {arr.size} floats, expected {width}x{height}x{channels}")
    arr = arr.reshape(channels, height, width).astype(np.float64)
    return arr[0] if channels == 1 else np.moveaxis(arr, 0, 2)


def _natural_key(path: Path):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", path.name)]


def list_frames(directory: str | Path) -> list[Path]:
    """PNG files in ``directory`` in natural (numeric-aware) order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory {directory} does not exist")
    return sorted(directory.glob("*.png"), key=_natural_key)


def read_frames(directory: str | Path) -> np.ndarray:
    paths = list_frames(directory)
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    frames = [read_png(p) for p in paths]
    shape = frames[0].shape
    for p, f in zip(paths, frames):
        if f.shape != shape:
            raise ValueError(f"{p.name}: shape {f.shape} differs from {shape}")
    return np.stack(frames)
