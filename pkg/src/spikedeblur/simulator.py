"""Integrate-and-fire spike simulation from intensity video.

Each pixel integrates ``L * dt + dark_current`` per readout step and emits one
spike bit when the accumulator reaches the threshold. All randomness comes from
a counter-based hash of ``(seed, tag, frame, y, x)``, so results never depend
on iteration order or on how a video is split into chained segments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .spike_stream import SpikeStream, from_dense

logger = logging.getLogger(__name__)

RESET_MODES = ("reset_to_zero", "reset_subtract")
INITIAL_MODES = ("zeros", "uniform_random")

# stream tags for the hash RNG
_TAG_INIT = 1
_TAG_SPURIOUS = 2
_TAG_DROP = 3

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_uniform(seed: int, tag: int, frame: int, height: int, width: int) -> np.ndarray:
    """Uniform [0, 1) variates for every pixel of one frame, keyed by position."""
    with np.errstate(over="ignore"):
        base = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN * np.uint64(tag))
        base = _mix(base ^ np.uint64(frame & 0xFFFFFFFFFFFFFFFF))
        ys = _mix(base + np.arange(height, dtype=np.uint64) * _GOLDEN)
        h = _mix(ys[:, None] ^ (np.arange(width, dtype=np.uint64)[None, :] * _M2))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class SimulatorConfig:
    """Spike sensor parameters.

    ``threshold`` is the firing level C; the V_th multiplier used in threshold
    sweeps maps to ``threshold = v_th * 1.0``. ``supersample`` emits that many
    spike frames per input frame, each integrating ``frame_duration / supersample``.
    """

    threshold: float = 1.0
    reset_mode: str = "reset_to_zero"
    dark_current: float = 0.0
    spurious_spike_prob: float = 0.0
    seed: int = 0
    initial_accumulator: str = "zeros"
    frame_duration: float = 1.0
    supersample: int = 1

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")
        if self.reset_mode not in RESET_MODES:
            raise ValueError(f"reset_mode must be one of {RESET_MODES}, got {self.reset_mode!r}")
        if self.initial_accumulator not in INITIAL_MODES:
            raise ValueError(f"initial_accumulator must be one of {INITIAL_MODES}")
        if self.dark_current < 0:
            raise ValueError("dark_current must be >= 0")
        if not 0.0 <= self.spurious_spike_prob <= 1.0:
            raise ValueError("spurious_spike_prob must lie in [0, 1]")
        if not self.frame_duration > 0:
            raise ValueError("frame_duration must be > 0")
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")

    @property
    def step_duration(self) -> float:
        return self.frame_duration / self.supersample


@dataclass
class IntegratorState:
    """Per-pixel accumulator carried between chained simulation calls.

    ``step`` is the global index of the next spike frame; it keys the noise RNG
    so a split simulation reproduces the unsplit one bit for bit.
    """

    accumulator: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, shape: tuple[int, int], config: SimulatorConfig) -> "IntegratorState":
        if config.initial_accumulator == "zeros":
            acc = np.zeros(shape, np.float64)
        else:
            acc = config.threshold * hash_uniform(config.seed, _TAG_INIT, 0, *shape)
        return cls(acc)

    def copy(self) -> "IntegratorState":
        return IntegratorState(self.accumulator.copy(), self.step)


def _as_gray_frames(frames) -> np.ndarray:
    arr = np.asarray(frames, dtype=np.float64) if not isinstance(frames, np.ndarray) else frames
    if arr.ndim == 4 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if arr.ndim != 3:
        raise ValueError(f"frames must be single-channel (K, H, W), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("empty frame sequence")
    arr = arr.astype(np.float64, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError("frame intensities must be finite")
    if np.any(arr < 0):
        raise ValueError("frame intensities must be >= 0")
    return arr


def simulate_spikes(
    frames: Sequence[np.ndarray] | np.ndarray,
    config: SimulatorConfig,
    state: IntegratorState | None = None,
    start_time: float | None = None,
) -> tuple[SpikeStream, IntegratorState]:
    """Run the integrate-and-fire sensor over a grayscale video.

    Parameters
    ----------
    frames : array_like
      Intensities, shape ``(K, H, W)``, finite and non-negative.
    config : SimulatorConfig
      Sensor parameters.
    state : IntegratorState, optional
      State returned by a previous call; omitted means a fresh sensor.
    start_time : float, optional
      Time stamp of the first emitted frame; defaults to
      ``state.step * step_duration``.

    Returns
    -------
    stream : SpikeStream
      ``K * supersample`` spike frames.
    state : IntegratorState
      Updated state for chaining; the input state is not modified.
    """
    arr = _as_gray_frames(frames)
    k, h, w = arr.shape
    state = IntegratorState.initial((h, w), config) if state is None else state.copy()
    if state.accumulator.shape != (h, w):
        raise ValueError(f"state shape {state.accumulator.shape} != frame shape {(h, w)}")

    c = config.threshold
    dt = config.step_duration
    subtract = config.reset_mode == "reset_subtract"
    acc = state.accumulator
    bits = np.zeros((k * config.supersample, h, w), dtype=bool)
    if start_time is None:
        start_time = state.step * dt

    out = 0
    for i in range(k):
        charge = arr[i] * dt + config.dark_current
        for _ in range(config.supersample):
            acc += charge
            fire = acc >= c
            if subtract:
                acc[fire] -= c
            else:
                acc[fire] = 0.0
            if config.spurious_spike_prob > 0:
                fire |= hash_uniform(config.seed, _TAG_SPURIOUS, state.step, h, w) < config.spurious_spike_prob
            bits[out] = fire
            out += 1
            state.step += 1

    stream = from_dense(bits, frame_duration=dt, start_time=start_time)
    return stream, state


def inject_noise_profile(
    stream: SpikeStream,
    spurious_spike_prob: float = 0.0,
    drop_prob: float = 0.0,
    seed: int = 0,
) -> SpikeStream:
    """Flip bits independently: 0->1 with ``spurious_spike_prob``, 1->0 with ``drop_prob``.

    The draw for each bit is a pure function of ``(seed, frame, y, x)``.
    """
    for name, p in (("spurious_spike_prob", spurious_spike_prob), ("drop_prob", drop_prob)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {p}")
    if spurious_spike_prob == 0 and drop_prob == 0:
        return stream
    dense = stream.to_dense().astype(bool)
    h, w = stream.height, stream.width
    for i in range(stream.num_frames):
        frame = dense[i]
        on = hash_uniform(seed, _TAG_SPURIOUS, i, h, w) < spurious_spike_prob
        off = hash_uniform(seed, _TAG_DROP, i, h, w) < drop_prob
        dense[i] = np.where(frame, ~off, on)
    return from_dense(dense, stream.frame_duration, stream.start_time)
