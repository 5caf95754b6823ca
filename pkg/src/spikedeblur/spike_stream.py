"""Bit-packed binary spike streams.

Layout: frame-major, row-major within a frame, least-significant bit first
within each byte. Every frame is padded to a whole number of bytes, so
``bytes_per_frame = ceil(width * height / 8)`` and a single frame is one
contiguous slab of the payload. Padding bits are always zero.

The SPK1 container is a 36-byte little-endian header followed by the payload::

    magic        4s   b"SPK1"
    width        u32
    height       u32
    num_frames   u32
    frame_dur    f64
    start_time   f64
    flags        u32  (must be 0)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"SPK1"
HEADER = struct.Struct("<4sIIIddI")

_BIT_REVERSE = np.array(
    [int(f"{b:08b}"[::-1], 2) for b in range(256)], dtype=np.uint8
)


class SpikeFormatError(ValueError):
    """Malformed or inconsistent SPK1 data."""


class BadMagicError(SpikeFormatError):
    pass


class TruncatedPayloadError(SpikeFormatError):
    pass


def bytes_per_frame(width: int, height: int) -> int:
    return (width * height + 7) // 8


@dataclass(frozen=True)
class WindowSpec:
    """Half-open frame range ``[start_frame, start_frame + len_frames)``."""

    start_frame: int
    len_frames: int

    def __post_init__(self):
        if self.start_frame < 0:
            raise ValueError(f"start_frame must be >= 0, got {self.start_frame}")
        if self.len_frames < 1:
            raise ValueError(f"len_frames must be >= 1, got {self.len_frames}")

    @property
    def stop_frame(self) -> int:
        return self.start_frame + self.len_frames

    def check(self, stream: "SpikeStream") -> None:
        if self.stop_frame > stream.num_frames:
            raise ValueError(
                f"window [{self.start_frame}, {self.stop_frame}) exceeds "
                f"stream of {stream.num_frames} frames"
            )

    def split(self, at: int) -> tuple["WindowSpec", "WindowSpec"]:
        """Split into two adjacent windows, the first ``at`` frames long."""
        if not 0 < at < self.len_frames:
            raise ValueError(f"split point {at} outside (0, {self.len_frames})")
        return (
            WindowSpec(self.start_frame, at),
            WindowSpec(self.start_frame + at, self.len_frames - at),
        )


@dataclass(frozen=True)
class SpikeCountMap:
    """Per-pixel spike counts (uint32, shape ``(height, width)``) over a window."""

    counts: np.ndarray
    window: WindowSpec

    @property
    def height(self) -> int:
        return self.counts.shape[0]

    @property
    def width(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True, eq=False)
class SpikeStream:
    """Immutable K x H x W binary spike tensor in packed form.

    ``data`` is a read-only ``uint8`` array of shape
    ``(num_frames, bytes_per_frame)``.
    """

    width: int
    height: int
    num_frames: int
    frame_duration: float
    start_time: float
    data: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.num_frames < 1:
            raise ValueError("width, height and num_frames must all be >= 1")
        if not self.frame_duration > 0:
            raise ValueError(f"frame_duration must be > 0, got {self.frame_duration}")
        data = np.asarray(self.data, dtype=np.uint8)
        expected = (self.num_frames, bytes_per_frame(self.width, self.height))
        if data.shape != expected:
            data = data.reshape(-1)
            if data.size != expected[0] * expected[1]:
                raise ValueError(
                    f"payload has {data.size} bytes, expected {expected[0] * expected[1]}"
                )
            data = data.reshape(expected)
        if data.flags.writeable:
            data = data.copy()
            data.flags.writeable = False
        object.__setattr__(self, "data", data)
        if _padding_dirty(data, self.width * self.height):
            raise ValueError("padding bits beyond width*height must be zero")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.num_frames, self.height, self.width)

    @property
    def bytes_per_frame(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.num_frames * self.frame_duration

    def frame_time(self, index: int) -> float:
        """Center time of spike frame ``index``."""
        return self.start_time + (index + 0.5) * self.frame_duration

    def get_bit(self, frame: int, y: int, x: int) -> int:
        if not (0 <= frame < self.num_frames and 0 <= y < self.height and 0 <= x < self.width):
            raise IndexError((frame, y, x))
        bit = y * self.width + x
        return int(self.data[frame, bit >> 3] >> (bit & 7)) & 1

    def to_dense(self, window: WindowSpec | None = None) -> np.ndarray:
        """Unpack to a ``uint8`` array of shape ``(frames, height, width)``."""
        lo, hi = (0, self.num_frames) if window is None else (window.start_frame, window.stop_frame)
        bits = np.unpackbits(self.data[lo:hi], axis=1, bitorder="little")
        return bits[:, : self.width * self.height].reshape(hi - lo, self.height, self.width)

    def slice(self, window: WindowSpec) -> "SpikeStream":
        window.check(self)
        return SpikeStream(
            self.width,
            self.height,
            window.len_frames,
            self.frame_duration,
            self.frame_time(window.start_frame) - 0.5 * self.frame_duration,
            self.data[window.start_frame : window.stop_frame],
        )

    def __eq__(self, other):
        if not isinstance(other, SpikeStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.num_frames == other.num_frames
            and self.frame_duration == other.frame_duration
            and self.start_time == other.start_time
            and np.array_equal(self.data, other.data)
        )


def _padding_dirty(data: np.ndarray, nbits: int) -> bool:
    tail = nbits & 7
    if tail == 0:
        return False
    mask = np.uint8((0xFF << tail) & 0xFF)
    return bool(np.any(data[:, -1] & mask))


def from_dense(
    frames: Sequence[np.ndarray] | np.ndarray,
    frame_duration: float = 1.0,
    start_time: float = 0.0,
) -> SpikeStream:
    """Pack a sequence of binary H x W masks into a :class:`SpikeStream`."""
    if isinstance(frames, np.ndarray):
        arr = frames
    else:
        frames = list(frames)
        if not frames:
            raise ValueError("cannot build a spike stream from zero frames")
        shapes = {np.shape(f) for f in frames}
        if len(shapes) != 1:
            raise ValueError(f"all masks must share one shape, got {sorted(shapes)}")
        arr = np.stack([np.asarray(f) for f in frames])
    if arr.ndim != 3:
        raise ValueError(f"expected frames of shape (K, H, W), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("cannot build a spike stream from zero frames")
    if arr.dtype != np.bool_ and not np.all((arr == 0) | (arr == 1)):
        raise ValueError("spike masks must contain only 0 and 1")
    k, h, w = arr.shape
    packed = np.packbits(arr.astype(bool).reshape(k, h * w), axis=1, bitorder="little")
    return SpikeStream(w, h, k, float(frame_duration), float(start_time), packed)


def concatenate(streams: Sequence[SpikeStream]) -> SpikeStream:
    """Join streams of equal geometry and frame duration along time."""
    if not streams:
        raise ValueError("nothing to concatenate")
    first = streams[0]
    for s in streams[1:]:
        if (s.width, s.height, s.frame_duration) != (first.width, first.height, first.frame_duration):
            raise ValueError("streams differ in geometry or frame duration")
    data = np.concatenate([s.data for s in streams])
    return SpikeStream(first.width, first.height, data.shape[0], first.frame_duration,
                       first.start_time, data)


def _bitsliced_popcount(slab: np.ndarray, nbits: int) -> np.ndarray:
    # Vertical counter: each uint64 word holds 64 pixels; ``planes[j]`` holds
    # bit j of the running per-pixel count. Adding a frame is a ripple-carry
    # add of a one-bit operand into the plane stack.
    n, nbytes = slab.shape
    pad = (-nbytes) % 8
    if pad:
        slab = np.concatenate([slab, np.zeros((n, pad), np.uint8)], axis=1)
    words = np.ascontiguousarray(slab).view(np.uint64)
    nwords = words.shape[1]
    planes = [np.zeros(nwords, np.uint64) for _ in range(int(n).bit_length())]
    carry = np.empty(nwords, np.uint64)
    tmp = np.empty(nwords, np.uint64)
    for i in range(n):
        np.copyto(carry, words[i])
        for plane in planes:
            np.bitwise_and(plane, carry, out=tmp)
            np.bitwise_xor(plane, carry, out=plane)
            carry, tmp = tmp, carry
            if not carry.any():
                break
    counts = np.zeros(nwords * 64, np.uint32)
    for j, plane in enumerate(planes):
        bits = np.unpackbits(plane.view(np.uint8), bitorder="little")
        counts += bits.astype(np.uint32) << np.uint32(j)
    return counts[:nbits]


def accumulate_window(stream: SpikeStream, window: WindowSpec) -> SpikeCountMap:
    """Per-pixel spike count over ``window``, as a :class:`SpikeCountMap`."""
    window.check(stream)
    slab = stream.data[window.start_frame : window.stop_frame]
    counts = _bitsliced_popcount(slab, stream.width * stream.height)
    return SpikeCountMap(counts.reshape(stream.height, stream.width), window)


def encode(stream: SpikeStream) -> bytes:
    header = HEADER.pack(
        MAGIC,
        stream.width,
        stream.height,
        stream.num_frames,
        float(stream.frame_duration),
        float(stream.start_time),
        0,
    )
    return header + stream.data.tobytes()


def decode(buf: bytes) -> SpikeStream:
    if len(buf) < 4 and MAGIC.startswith(bytes(buf)):
        raise TruncatedPayloadError(f"header truncated at {len(buf)} bytes")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < HEADER.size:
        raise TruncatedPayloadError(f"header truncated at {len(buf)} bytes")
    _, width, height, num_frames, frame_duration, start_time, flags = HEADER.unpack_from(buf)
    if flags != 0:
        raise SpikeFormatError(f"unsupported flags {flags:#x}")
    if width < 1 or height < 1 or num_frames < 1:
        raise SpikeFormatError(f"invalid dimensions {width}x{height}x{num_frames}")
    if not (np.isfinite(frame_duration) and frame_duration > 0):
        raise SpikeFormatError(f"invalid frame_duration {frame_duration}")
    expected = num_frames * bytes_per_frame(width, height)
    got = len(buf) - HEADER.size
    if got < expected:
        raise TruncatedPayloadError(f"payload has {got} bytes, header declares {expected}")
    if got > expected:
        raise SpikeFormatError(f"payload has {got} bytes, header declares {expected}")
    payload = np.frombuffer(buf, dtype=np.uint8, offset=HEADER.size)
    try:
        return SpikeStream(width, height, num_frames, frame_duration, start_time, payload)
    except ValueError as err:
        raise SpikeFormatError(str(err)) from err


def save(stream: SpikeStream, path: str | Path) -> None:
    Path(path).write_bytes(encode(stream))


def load(path: str | Path) -> SpikeStream:
    return decode(Path(path).read_bytes())


def read_raw(
    path: str | Path,
    width: int,
    height: int,
    num_frames: int | None = None,
    bit_order: str = "lsb",
    frame_duration: float = 1.0,
    start_time: float = 0.0,
) -> SpikeStream:
    """Import a headerless dump of packed frames.

    Each frame must occupy ``ceil(width * height / 8)`` bytes. With
    ``num_frames=None`` the count is inferred from the file size.
    ``bit_order="msb"`` treats the first pixel of each byte as its most
    significant bit.
    """
    if bit_order not in ("lsb", "msb"):
        raise ValueError(f"bit_order must be 'lsb' or 'msb', got {bit_order!r}")
    raw = np.fromfile(path, dtype=np.uint8)
    bpf = bytes_per_frame(width, height)
    if num_frames is None:
        if raw.size % bpf:
            raise SpikeFormatError(f"file size {raw.size} is not a multiple of {bpf}")
        num_frames = raw.size // bpf
    if raw.size < num_frames * bpf:
        raise TruncatedPayloadError(f"file has {raw.size} bytes, need {num_frames * bpf}")
    data = raw[: num_frames * bpf].reshape(num_frames, bpf)
    if bit_order == "msb":
        data = _BIT_REVERSE[data]
    return SpikeStream(width, height, num_frames, frame_duration, start_time, data)
