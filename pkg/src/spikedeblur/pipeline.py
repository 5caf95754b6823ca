"""Dataset synthesis, batch deblurring and evaluation over manifest files.

A manifest is JSON living next to the files it references (paths are relative
to the manifest's directory)::

    {
      "version": 1,
      "spikes": "spikes.spk",
      "upsample_factor": 4,
      "frames_per_blur": 97,
      "short_len": 13,
      "num_outputs": 7,
      "records": [
        {"id": "000000",
         "blurry": "blurry/000000.png",
         "window": [0, 97],              # spike frames [start, len]
         "timestamps": [6, 20, ...],     # absolute spike frame indices
         "source_frames": [0, 97],       # video frames [start, len]
         "gt_frames": [6, 20, ...],      # video frame indices
         "ground_truth": ["gt/000000_0.png", ...]}
      ]
    }
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio, metrics
from .blur import LUMA, downsample_area, synthesize_blur, to_grayscale
from .sdm import ExposureSpec, ReconstructionConfig, default_short_len, default_timestamps, sdm_reconstruct_sequence
from .simulator import IntegratorState, SimulatorConfig, inject_noise_profile, simulate_spikes
from .spike_stream import SpikeStream, WindowSpec, concatenate
from .spike_stream import load as load_spikes
from .spike_stream import save as save_spikes

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
DEBLUR_INDEX = "deblur.json"


@dataclass
class PipelineConfig:
    input: str = ""
    output: str = "out"
    frames_per_blur: int = 97
    downsample: int | None = None
    threshold: float = 1.0
    kprime: int | None = None
    num_outputs: int = 7
    reset_mode: str = "zero"
    dark_current: float = 0.0
    supersample: int = 1
    initial_accumulator: str = "zeros"
    noise_spurious: float = 0.0
    noise_drop: float = 0.0
    seed: int = 0
    unclamped: bool = False
    interpolate: str = "ratio"
    png_bits: int = 8
    workers: int = 1

    def __post_init__(self):
        if self.frames_per_blur < 1:
            raise ValueError("frames_per_blur must be >= 1")
        if self.num_outputs < 1:
            raise ValueError("num_outputs must be >= 1")
        if self.reset_mode not in ("zero", "subtract"):
            raise ValueError(f"reset_mode must be 'zero' or 'subtract', got {self.reset_mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def simulator_config(self) -> SimulatorConfig:
        return SimulatorConfig(
            threshold=self.threshold,
            reset_mode="reset_to_zero" if self.reset_mode == "zero" else "reset_subtract",
            dark_current=self.dark_current,
            spurious_spike_prob=self.noise_spurious,
            seed=self.seed,
            initial_accumulator=self.initial_accumulator,
            supersample=self.supersample,
        )

    def short_len(self, spike_frames: int) -> int:
        return self.kprime if self.kprime is not None else default_short_len(spike_frames)


@dataclass
class Manifest:
    root: Path
    spikes: str
    upsample_factor: int
    frames_per_blur: int
    short_len: int
    num_outputs: int
    records: list[dict] = field(default_factory=list)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def to_json(self) -> dict:
        return {
            "version": 1,
            "spikes": self.spikes,
            "upsample_factor": self.upsample_factor,
            "frames_per_blur": self.frames_per_blur,
            "short_len": self.short_len,
            "num_outputs": self.num_outputs,
            "records": self.records,
        }

    def write(self) -> Path:
        out = self.root / MANIFEST_NAME
        out.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        return out

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.is_file():
            raise FileNotFoundError(f"manifest {path} not found")
        d = json.loads(path.read_text())
        m = cls(path.parent, d["spikes"], int(d["upsample_factor"]), int(d["frames_per_blur"]),
                int(d["short_len"]), int(d["num_outputs"]), list(d["records"]))
        _check_windows(m.records)
        return m


def _check_windows(records: list[dict]) -> None:
    spans = sorted((r["window"][0], r["window"][0] + r["window"][1], r["id"]) for r in records)
    for (a0, a1, aid), (b0, b1, bid) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ValueError(f"spike windows of records {aid} and {bid} overlap")


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def synthesize(cfg: PipelineConfig, frames_dir: str | Path | None = None,
               out_dir: str | Path | None = None) -> Manifest:
    """Cut a dense video into blur records with matching spikes and ground truth."""
    frames_dir = Path(frames_dir or cfg.input)
    out = Path(out_dir or cfg.output)
    paths = imageio.list_frames(frames_dir)
    k = cfg.frames_per_blur
    if len(paths) < k:
        raise ValueError(f"{len(paths)} frames in {frames_dir}, need at least {k}")
    n_records = len(paths) // k
    if len(paths) % k:
        logger.info("dropping %d trailing frames", len(paths) % k)
    factor = 4 if cfg.downsample is None else cfg.downsample
    sim = cfg.simulator_config()
    spike_len = k * sim.supersample
    short_len = cfg.short_len(spike_len)
    spike_ts = default_timestamps(spike_len, cfg.num_outputs)

    (out / "blurry").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)

    state: IntegratorState | None = None
    shape = None
    streams: list[SpikeStream] = []
    records = []
    for r in range(n_records):
        video = np.stack([imageio.read_png(p) for p in paths[r * k:(r + 1) * k]])
        if shape is None:
            shape = video.shape[1:]
        elif video.shape[1:] != shape:
            raise ValueError(f"frame shape changed to {video.shape[1:]} in record {r}, expected {shape}")
        gray = to_grayscale(video, LUMA) if video.ndim == 4 else video
        gray = downsample_area(np.moveaxis(gray, 0, -1), factor)
        stream, state = simulate_spikes(np.moveaxis(gray, -1, 0), sim, state)
        streams.append(stream)

        rid = f"{r:06d}"
        gt_frames = [t // sim.supersample for t in spike_ts]
        jobs = [(out / "blurry" / f"{rid}.png", synthesize_blur(video))]
        jobs += [(out / "gt" / f"{rid}_{m}.png", video[g]) for m, g in enumerate(gt_frames)]
        _map(lambda job: imageio.write_png(job[0], job[1], cfg.png_bits), jobs, cfg.workers)
        records.append({
            "id": rid,
            "blurry": f"blurry/{rid}.png",
            "window": [r * spike_len, spike_len],
            "timestamps": [r * spike_len + t for t in spike_ts],
            "source_frames": [r * k, k],
            "gt_frames": [r * k + g for g in gt_frames],
            "ground_truth": [f"gt/{rid}_{m}.png" for m in range(cfg.num_outputs)],
        })

    full = concatenate(streams)
    if cfg.noise_drop > 0:
        full = inject_noise_profile(full, 0.0, cfg.noise_drop, cfg.seed)
    save_spikes(full, out / "spikes.spk")
    manifest = Manifest(out, "spikes.spk", factor, k, short_len, cfg.num_outputs, records)
    manifest.write()
    return manifest


def deblur_record(manifest: Manifest, record: dict, stream: SpikeStream,
                  cfg: PipelineConfig, out_dir: Path) -> dict:
    blurry = imageio.read_png(manifest.path(record["blurry"]))
    start, length = record["window"]
    if start + length > stream.num_frames:
        raise ValueError(f"record {record['id']}: spike window [{start}, {start + length}) "
                         f"missing from a {stream.num_frames}-frame stream")
    short_len = cfg.kprime if cfg.kprime is not None else manifest.short_len
    exposure = ExposureSpec(WindowSpec(start, length), short_len,
                            timestamps=tuple(record["timestamps"]))
    rcfg = ReconstructionConfig(clamp_output=False, upsample_factor=manifest.upsample_factor,
                                interpolate=cfg.interpolate)
    seq = sdm_reconstruct_sequence(blurry, stream, exposure, rcfg)
    outputs, dumps = [], []
    for m, frame in enumerate(seq):
        name = f"{record['id']}_{m}.png"
        imageio.write_png(out_dir / name, frame, cfg.png_bits)
        outputs.append(name)
        if cfg.unclamped:
            dump = f"{record['id']}_{m}.f32"
            imageio.write_float_dump(out_dir / dump, frame)
            dumps.append(dump)
    entry = {"id": record["id"], "outputs": outputs,
             "height": blurry.shape[0], "width": blurry.shape[1],
             "channels": 1 if blurry.ndim == 2 else blurry.shape[2]}
    if dumps:
        entry["float_dumps"] = dumps
    return entry


def deblur(manifest: Manifest, cfg: PipelineConfig, out_dir: str | Path) -> dict:
    """Reconstruct every record; writes ``<id>_<m>.png`` plus an index file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = load_spikes(manifest.path(manifest.spikes))
    entries = _map(lambda rec: deblur_record(manifest, rec, stream, cfg, out_dir),
                   manifest.records, cfg.workers)
    index = {"manifest": str((manifest.root / MANIFEST_NAME).resolve()), "records": entries}
    (out_dir / DEBLUR_INDEX).write_text(json.dumps(index, indent=2) + "\n")
    return index


def explicit_manifest(blurry_path: str | Path, spikes_path: str | Path, out_dir: str | Path,
                      cfg: PipelineConfig, window_start: int = 0,
                      window_len: int | None = None, stream: SpikeStream | None = None) -> Manifest:
    """Single-record manifest for a loose blurry PNG plus spike stream."""
    blurry_path = Path(blurry_path).resolve()
    spikes_path = Path(spikes_path).resolve()
    if stream is None:
        stream = load_spikes(spikes_path)
    blurry = imageio.read_png(blurry_path)
    factor = cfg.downsample
    if factor is None:
        fy, ry = divmod(blurry.shape[0], stream.height)
        fx, rx = divmod(blurry.shape[1], stream.width)
        if ry or rx or fx != fy or fx < 1:
            raise ValueError(f"blurry {blurry.shape[1]}x{blurry.shape[0]} is not an integer "
                             f"multiple of spikes {stream.width}x{stream.height}")
        factor = fx
    length = stream.num_frames - window_start if window_len is None else window_len
    window = WindowSpec(window_start, length)
    window.check(stream)
    ts = [window_start + t for t in default_timestamps(length, cfg.num_outputs)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = {"id": blurry_path.stem, "blurry": str(blurry_path), "window": [window_start, length],
           "timestamps": ts}
    return Manifest(out, str(spikes_path), factor, length, cfg.short_len(length),
                    cfg.num_outputs, [rec])


def _eval_record(manifest: Manifest, record: dict, recon_dir: Path) -> metrics.MetricReport:
    if "ground_truth" not in record:
        raise ValueError(f"record {record['id']} has no ground truth")
    m = len(record["ground_truth"])
    blurry = imageio.read_png(manifest.path(record["blurry"]))
    recon = [imageio.read_png(recon_dir / f"{record['id']}_{i}.png") for i in range(m)]
    gt = [imageio.read_png(manifest.path(p)) for p in record["ground_truth"]]
    return metrics.evaluate_sequence(np.stack(recon), np.stack(gt), blurry, record["id"])


def evaluate(manifest: Manifest, recon_dir: str | Path, out_dir: str | Path,
             workers: int = 1) -> list[metrics.MetricReport]:
    recon_dir = Path(recon_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = _map(lambda rec: _eval_record(manifest, rec, recon_dir), manifest.records, workers)
    metrics.write_csv(out_dir / "report.csv", reports)
    metrics.write_json(out_dir / "report.json", reports)
    return reports
