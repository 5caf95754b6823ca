"""Closed-form spike-guided deblurring.

A blurry frame ``B`` integrates the scene over an exposure of ``K`` spike
frames. The spike count over the whole exposure and over a short window of
``K'`` frames around time ``t`` give a per-pixel gain

    R = (N_short / N_full) * (K / K')

and the latent frame is ``L(t) = B * R``, applied identically to every color
channel. The unknown firing threshold cancels in the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .blur import check_image, synthesize_blur
from .spike_stream import SpikeCountMap, SpikeStream, WindowSpec, accumulate_window

PLACEMENTS = ("centered_shifted",)
INTERPOLATE = ("ratio", "counts")


def default_timestamps(num_frames: int, num_outputs: int) -> list[int]:
    """Frame offsets of ``num_outputs`` evenly spaced instants in an exposure.

    Instant m (1-based) sits at ``(m - 0.5) * K / M`` frames; the returned
    offset is the frame whose interval ``(i, i + 1]`` contains it. When
    ``M * K' == K`` the centered short windows then tile the exposure exactly.
    """
    if num_frames < 1 or num_outputs < 1:
        raise ValueError("num_frames and num_outputs must be >= 1")
    out = []
    for m in range(1, num_outputs + 1):
        num = (2 * m - 1) * num_frames
        out.append(max(0, -(-num // (2 * num_outputs)) - 1))
    return out


def default_short_len(num_frames: int) -> int:
    """K/8 rounded to an odd count, within [1, K]."""
    k = 2 * int(num_frames / 16.0) + 1
    return max(1, min(k, num_frames))


@dataclass(frozen=True)
class ExposureSpec:
    """Exposure geometry in spike frames.

    ``timestamps`` are absolute stream frame indices; by default they are the
    evenly spaced instants from :func:`default_timestamps`.
    """

    window: WindowSpec
    short_len: int
    num_outputs: int = 7
    timestamps: tuple[int, ...] | None = None

    def __post_init__(self):
        if not 1 <= self.short_len <= self.window.len_frames:
            raise ValueError(
                f"short_len must lie in [1, {self.window.len_frames}], got {self.short_len}"
            )
        if self.num_outputs < 1:
            raise ValueError("num_outputs must be >= 1")
        if self.timestamps is None:
            ts = tuple(self.window.start_frame + t
                       for t in default_timestamps(self.window.len_frames, self.num_outputs))
            object.__setattr__(self, "timestamps", ts)
        else:
            ts = tuple(int(t) for t in self.timestamps)
            object.__setattr__(self, "timestamps", ts)
            object.__setattr__(self, "num_outputs", len(ts))
        for t in self.timestamps:
            self._check_t(t)

    def _check_t(self, t: int) -> None:
        if not self.window.start_frame <= t < self.window.stop_frame:
            raise ValueError(
                f"timestamp {t} outside exposure [{self.window.start_frame}, {self.window.stop_frame})"
            )

    @property
    def exposure_ratio(self) -> float:
        """T / T'."""
        return self.window.len_frames / self.short_len

    def short_window(self, t: int) -> WindowSpec:
        """Window of ``short_len`` frames centered on frame ``t``, shifted to stay inside."""
        self._check_t(t)
        start = t - (self.short_len - 1) // 2
        lo = self.window.start_frame
        hi = self.window.stop_frame - self.short_len
        return WindowSpec(min(max(start, lo), hi), self.short_len)


@dataclass(frozen=True)
class ReconstructionConfig:
    clamp_output: bool = True
    count_eps: float = 1e-12
    upsample_factor: int = 4
    window_placement: str = "centered_shifted"
    interpolate: str = "ratio"

    def __post_init__(self):
        if self.upsample_factor < 1:
            raise ValueError("upsample_factor must be >= 1")
        if not self.count_eps > 0:
            raise ValueError("count_eps must be > 0")
        if self.window_placement not in PLACEMENTS:
            raise ValueError(f"window_placement must be one of {PLACEMENTS}")
        if self.interpolate not in INTERPOLATE:
            raise ValueError(f"interpolate must be one of {INTERPOLATE}")


def upsample_bilinear(field: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear upsampling with half-pixel centers and replicated edges.

    Output sample ``i`` reads source coordinate ``(i + 0.5) / factor - 0.5``.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    src = np.asarray(field, dtype=np.float64)
    if factor == 1:
        return src.copy()

    def weights(n):
        pos = (np.arange(n * factor) + 0.5) / factor - 0.5
        pos = np.clip(pos, 0.0, n - 1)
        i0 = np.floor(pos).astype(np.intp)
        i1 = np.minimum(i0 + 1, n - 1)
        return i0, i1, pos - i0

    h, w = src.shape[:2]
    r0, r1, fy = weights(h)
    c0, c1, fx = weights(w)
    extra = (None,) * (src.ndim - 2)
    fy = fy[(slice(None), None, *extra)]
    rows = src[r0] * (1.0 - fy) + src[r1] * fy
    fx = fx[(None, slice(None), *extra)]
    return rows[:, c0] * (1.0 - fx) + rows[:, c1] * fx


def tfp_reconstruct(stream: SpikeStream, window: WindowSpec, threshold: float = 1.0) -> np.ndarray:
    """Windowed firing-rate image ``C * N / (len * dt)``; not clamped."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    counts = accumulate_window(stream, window).counts
    return threshold * counts.astype(np.float64) / (window.len_frames * stream.frame_duration)


def ratio_map(full: np.ndarray, short: np.ndarray, full_len: int, short_len: int,
              eps: float = 1e-12) -> np.ndarray:
    """Gain ``(short / full) * (full_len / short_len)``, zero where ``full`` is zero.

    Evaluated as ``(short * full_len) / (full * short_len)`` so integer counts
    with equal rates give exactly 1.
    """
    full = np.asarray(full, dtype=np.float64)
    short = np.asarray(short, dtype=np.float64)
    r = (short * full_len) / np.maximum(full * short_len, eps)
    r[full == 0] = 0.0
    return r


def _check_geometry(blurry: np.ndarray, stream: SpikeStream, factor: int) -> None:
    want = (stream.height * factor, stream.width * factor)
    if blurry.shape[:2] != want:
        raise ValueError(
            f"blurry image is {blurry.shape[1]}x{blurry.shape[0]}, expected "
            f"{want[1]}x{want[0]} (spikes {stream.width}x{stream.height} x{factor})"
        )


def _gain(stream, exposure, t_index, cfg, full_counts) -> np.ndarray:
    short = accumulate_window(stream, exposure.short_window(t_index)).counts
    f = cfg.upsample_factor
    if cfg.interpolate == "counts" and f > 1:
        full_up = upsample_bilinear(full_counts, f)
        return ratio_map(full_up, upsample_bilinear(short, f),
                         exposure.window.len_frames, exposure.short_len, cfg.count_eps)
    r = ratio_map(full_counts, short, exposure.window.len_frames, exposure.short_len, cfg.count_eps)
    return upsample_bilinear(r, f)


def full_exposure_counts(stream: SpikeStream, exposure: ExposureSpec) -> SpikeCountMap:
    return accumulate_window(stream, exposure.window)


def sdm_reconstruct_frame(
    blurry,
    stream: SpikeStream,
    exposure: ExposureSpec,
    t_index: int,
    cfg: ReconstructionConfig = ReconstructionConfig(),
    full_counts: np.ndarray | None = None,
) -> np.ndarray:
    """Latent frame at spike frame ``t_index``.

    ``full_counts`` may carry a precomputed exposure count map to skip
    recounting when reconstructing several instants.
    """
    b = check_image(blurry, "blurry")
    exposure.window.check(stream)
    _check_geometry(b, stream, cfg.upsample_factor)
    if full_counts is None:
        full_counts = full_exposure_counts(stream, exposure).counts
    gain = _gain(stream, exposure, t_index, cfg, full_counts)
    out = b * (gain[..., None] if b.ndim == 3 else gain)
    if cfg.clamp_output:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def sdm_reconstruct_sequence(
    blurry,
    stream: SpikeStream,
    exposure: ExposureSpec,
    cfg: ReconstructionConfig = ReconstructionConfig(),
) -> np.ndarray:
    """Latent frames at every exposure timestamp, stacked as ``(M, H, W[, 3])``."""
    b = check_image(blurry, "blurry")
    exposure.window.check(stream)
    _check_geometry(b, stream, cfg.upsample_factor)
    full = full_exposure_counts(stream, exposure).counts
    return np.stack([
        sdm_reconstruct_frame(b, stream, exposure, t, cfg, full_counts=full)
        for t in exposure.timestamps
    ])


def reblur(sequence: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Re-synthesized blurry image: the mean of reconstructed frames."""
    return synthesize_blur(sequence)
