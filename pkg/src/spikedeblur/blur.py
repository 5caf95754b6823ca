"""Blur synthesis, grayscale conversion and channel-ratio diagnostics.

Images are float arrays in [0, 1] of shape ``(H, W)`` or ``(H, W, 3)``; a frame
sequence is anything stackable to ``(M, H, W[, 3])``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GrayscaleWeights:
    w_r: float = 0.299
    w_gre: float = 0.587
    w_b: float = 0.114

    def __post_init__(self):
        if min(self.w_r, self.w_gre, self.w_b) < 0:
            raise ValueError("grayscale weights must be non-negative")
        if abs(self.w_r + self.w_gre + self.w_b - 1.0) > 1e-12:
            raise ValueError("grayscale weights must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_r, self.w_gre, self.w_b])


LUMA = GrayscaleWeights()


def check_image(image, name: str = "image") -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if not (arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 3)):
        raise ValueError(f"{name} must be (H, W) or (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def stack_frames(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        arr = frames.astype(np.float64, copy=False)
    else:
        frames = list(frames)
        if not frames:
            raise ValueError("empty frame sequence")
        shapes = {np.shape(f) for f in frames}
        if len(shapes) != 1:
            raise ValueError(f"frames differ in shape: {sorted(shapes)}")
        arr = np.stack([np.asarray(f, dtype=np.float64) for f in frames])
    if arr.shape[0] == 0:
        raise ValueError("empty frame sequence")
    return arr


def synthesize_blur(frames, start: int = 0, length: int | None = None) -> np.ndarray:
    """Mean of ``frames[start:start + length]``, i.e. a box-exposure blur."""
    arr = stack_frames(frames)
    if length is None:
        length = arr.shape[0] - start
    if length < 1:
        raise ValueError("blur range is empty")
    if start < 0 or start + length > arr.shape[0]:
        raise ValueError(f"range [{start}, {start + length}) outside {arr.shape[0]} frames")
    seg = arr[start : start + length]
    # offset from the first frame so a static trajectory reproduces it bit-exactly
    out = seg[0] + (seg - seg[0]).mean(axis=0)
    return np.clip(out, seg.min(axis=0), seg.max(axis=0))


def to_grayscale(image, weights: GrayscaleWeights = LUMA) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim < 3 or arr.shape[-1] != 3:
        raise ValueError(f"to_grayscale needs 3 channels, got shape {arr.shape}")
    return arr[..., 0] * weights.w_r + arr[..., 1] * weights.w_gre + arr[..., 2] * weights.w_b


def downsample_area(image, factor: int) -> np.ndarray:
    """Block-mean downsampling by an integer factor (works on trailing-channel stacks too)."""
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    arr = np.asarray(image, dtype=np.float64)
    h, w = arr.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"{w}x{h} not divisible by {factor}")
    if factor == 1:
        return arr.copy()
    rest = arr.shape[2:]
    blocks = arr.reshape(h // factor, factor, w // factor, factor, *rest)
    return blocks.mean(axis=(1, 3))


@dataclass
class ChannelRatioReport:
    k1_blurry: np.ndarray
    k2_blurry: np.ndarray
    k1_short: np.ndarray
    k2_short: np.ndarray
    alpha_blurry: np.ndarray  # (H, W, 3): gray / channel
    alpha_short: np.ndarray
    deviation: np.ndarray  # max over channels of |alpha_blurry - alpha_short|, 0 off-mask
    valid_mask: np.ndarray
    max_abs_deviation: float


def channel_ratio_consistency(
    blurry, short_exposure, eps: float = 1e-3, weights: GrayscaleWeights = LUMA
) -> ChannelRatioReport:
    """Measure how far two RGB images depart from sharing per-pixel color.

    Blurry and short-exposure images with the same hue at a pixel have equal
    gray-to-channel ratios there, which is what lets the reconstruction apply
    one spike-derived gain to all three channels.
    """
    b = np.asarray(blurry, dtype=np.float64)
    e = np.asarray(short_exposure, dtype=np.float64)
    if b.shape != e.shape:
        raise ValueError(f"shape mismatch {b.shape} vs {e.shape}")
    if b.ndim != 3 or b.shape[2] != 3:
        raise ValueError("channel ratios need 3-channel images")
    if not eps > 0:
        raise ValueError("eps must be > 0")
    valid = np.all(b > eps, axis=2) & np.all(e > eps, axis=2)

    def ratios(img):
        safe = np.where(valid[..., None], img, 1.0)
        k1 = safe[..., 0] / safe[..., 1]
        k2 = safe[..., 0] / safe[..., 2]
        alpha = to_grayscale(safe, weights)[..., None] / safe
        return k1, k2, alpha

    k1b, k2b, ab = ratios(b)
    k1e, k2e, ae = ratios(e)
    dev = np.where(valid, np.abs(ab - ae).max(axis=2), 0.0)
    return ChannelRatioReport(
        k1b, k2b, k1e, k2e, ab, ae, dev, valid,
        float(dev.max()) if valid.any() else 0.0,
    )
