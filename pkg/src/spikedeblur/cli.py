"""Command-line entry point: ``spikedeblur <command> [flags]``.

Every flag can also be set in a flat ``key = value`` config file passed with
``--config``; keys are flag names with or without the leading dashes
(``frames-per-blur`` and ``frames_per_blur`` are equivalent). Flags given on the
command line win over the file.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import imageio, pipeline
from .blur import downsample_area, synthesize_blur, to_grayscale
from .metrics import summarize
from .pipeline import Manifest, PipelineConfig
from .sdm import tfp_reconstruct
from .simulator import inject_noise_profile, simulate_spikes
from .spike_stream import WindowSpec, read_raw
from .spike_stream import load as load_spikes
from .spike_stream import save as save_spikes

logger = logging.getLogger("spikedeblur")

COMMANDS = ("simulate", "blur", "tfp", "deblur", "synthesize", "eval", "pipeline")

# dest -> (type, default); "flag" type is a boolean switch
OPTIONS = {
    "input": (str, None),
    "output": (str, None),
    "threshold": (float, 1.0),
    "kprime": (int, None),
    "frames_per_blur": (int, None),
    "num_outputs": (int, 7),
    "downsample": (int, None),
    "reset_mode": (str, "zero"),
    "seed": (int, 0),
    "noise_spurious": (float, 0.0),
    "noise_drop": (float, 0.0),
    "dark_current": (float, 0.0),
    "supersample": (int, 1),
    "initial_accumulator": (str, "zeros"),
    "unclamped": ("flag", False),
    "interpolate": (str, "ratio"),
    "png_bits": (int, 8),
    "workers": (int, 1),
    "raw_spike_width": (int, None),
    "raw_spike_height": (int, None),
    "raw_spike_frames": (int, None),
    "bit_order": (str, "lsb"),
    "window_start": (int, 0),
    "window_len": (int, None),
    "blurry": (str, None),
    "spikes": (str, None),
    "recon": (str, None),
}
CHOICES = {
    "reset_mode": ("zero", "subtract"),
    "bit_order": ("lsb", "msb"),
    "initial_accumulator": ("zeros", "uniform_random"),
    "interpolate": ("ratio", "counts"),
    "png_bits": (8, 16),
}
HELP = {
    "input": "input frame directory, SPK1 file, or manifest (per command)",
    "output": "output directory or file",
    "threshold": "firing threshold C (V_th multiplier on a unit base threshold)",
    "kprime": "short-window length K' in spike frames (default: K/8 rounded to odd)",
    "frames_per_blur": "video frames averaged per blurry image (default 97)",
    "num_outputs": "reconstructed frames per blurry image",
    "downsample": "spike resolution factor relative to the blurry image",
    "unclamped": "also write unclamped float32 dumps",
    "workers": "records processed in parallel",
    "bit_order": "bit order within bytes for headerless spike dumps",
}


class CliError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikedeblur", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value config file")
    for dest, (typ, _) in OPTIONS.items():
        flag = "--" + dest.replace("_", "-")
        if typ == "flag":
            parser.add_argument(flag, dest=dest, action="store_const", const=True, default=None,
                                help=HELP.get(dest))
        else:
            parser.add_argument(flag, dest=dest, type=typ, default=None,
                                choices=CHOICES.get(dest), help=HELP.get(dest))
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _coerce(dest: str, raw: str):
    typ, _ = OPTIONS[dest]
    if typ == "flag":
        val = raw.strip().lower()
        if val not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise CliError(f"config key {dest}: not a boolean: {raw!r}")
        return val in ("1", "true", "yes", "on")
    try:
        value = typ(raw.strip())
    except ValueError as err:
        raise CliError(f"config key {dest}: {err}") from err
    if dest in CHOICES and value not in CHOICES[dest]:
        raise CliError(f"config key {dest}: {value!r} not in {CHOICES[dest]}")
    return value


def read_config(path: str | Path) -> dict:
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string("[spikedeblur]\n" + text)
    out = {}
    for key, raw in cp["spikedeblur"].items():
        dest = key.strip().lstrip("-").replace("-", "_")
        if dest not in OPTIONS:
            raise CliError(f"unknown config key {key!r}")
        out[dest] = _coerce(dest, raw)
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Effective settings: flags, then config file, then defaults."""
    from_file = read_config(args.config) if args.config else {}
    eff = {}
    for dest, (_, default) in OPTIONS.items():
        flag_val = getattr(args, dest)
        if flag_val is not None:
            eff[dest] = flag_val
        elif dest in from_file:
            eff[dest] = from_file[dest]
        else:
            eff[dest] = default
    return eff


def pipeline_config(eff: dict) -> PipelineConfig:
    names = {f.name for f in dataclasses.fields(PipelineConfig)}
    kwargs = {k: v for k, v in eff.items() if k in names and v is not None}
    return PipelineConfig(**kwargs)


def _require(eff: dict, *keys: str) -> None:
    for k in keys:
        if eff.get(k) is None:
            raise CliError(f"--{k.replace('_', '-')} is required")


def _load_stream(eff: dict, path: str):
    if eff["raw_spike_width"] is not None or eff["raw_spike_height"] is not None:
        _require(eff, "raw_spike_width", "raw_spike_height")
        return read_raw(path, eff["raw_spike_width"], eff["raw_spike_height"],
                        eff["raw_spike_frames"], eff["bit_order"])
    return load_spikes(path)


def _out_file(eff: dict, default_name: str) -> Path:
    _require(eff, "output")
    out = Path(eff["output"])
    if out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / default_name
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(eff: dict) -> dict:
    _require(eff, "input")
    cfg = pipeline_config(eff)
    frames = imageio.read_frames(eff["input"])
    if frames.ndim == 4:
        frames = to_grayscale(frames)
    factor = eff["downsample"] or 1
    if factor > 1:
        frames = np.moveaxis(downsample_area(np.moveaxis(frames, 0, -1), factor), -1, 0)
    stream, _ = simulate_spikes(frames, cfg.simulator_config())
    if cfg.noise_drop > 0:
        stream = inject_noise_profile(stream, 0.0, cfg.noise_drop, cfg.seed)
    out = _out_file(eff, "spikes.spk")
    save_spikes(stream, out)
    return {"spikes": str(out), "frames": stream.num_frames,
            "width": stream.width, "height": stream.height}


def cmd_blur(eff: dict) -> dict:
    _require(eff, "input")
    frames = imageio.read_frames(eff["input"])
    blurry = synthesize_blur(frames, eff["window_start"], eff["frames_per_blur"])
    out = _out_file(eff, "blurry.png")
    imageio.write_png(out, blurry, eff["png_bits"])
    return {"blurry": str(out)}


def cmd_tfp(eff: dict) -> dict:
    _require(eff, "input")
    stream = _load_stream(eff, eff["input"])
    length = eff["window_len"] or stream.num_frames - eff["window_start"]
    image = tfp_reconstruct(stream, WindowSpec(eff["window_start"], length), eff["threshold"])
    out = _out_file(eff, "tfp.png")
    imageio.write_png(out, image, eff["png_bits"])
    result = {"tfp": str(out)}
    if eff["unclamped"]:
        dump = out.with_suffix(".f32")
        imageio.write_float_dump(dump, image)
        result["float_dump"] = str(dump)
    return result


def _deblur(eff: dict, cfg: PipelineConfig) -> dict:
    _require(eff, "output")
    if eff["blurry"] or eff["spikes"]:
        _require(eff, "blurry", "spikes")
        stream = _load_stream(eff, eff["spikes"])
        manifest = pipeline.explicit_manifest(
            eff["blurry"], eff["spikes"], eff["output"], cfg,
            eff["window_start"], eff["window_len"] or eff["frames_per_blur"], stream=stream)
        out_dir = Path(eff["output"])
        entry = pipeline.deblur_record(manifest, manifest.records[0], stream, cfg, out_dir)
        index = {"records": [entry]}
        (out_dir / pipeline.DEBLUR_INDEX).write_text(json.dumps(index, indent=2) + "\n")
        return index
    _require(eff, "input")
    manifest = Manifest.read(eff["input"])
    return pipeline.deblur(manifest, cfg, eff["output"])


def cmd_deblur(eff: dict) -> dict:
    cfg = pipeline_config(eff)
    index = _deblur(eff, cfg)
    n = sum(len(r["outputs"]) for r in index["records"])
    return {"records": len(index["records"]), "outputs": n, "output": eff["output"]}


def cmd_synthesize(eff: dict) -> dict:
    _require(eff, "input", "output")
    cfg = pipeline_config(eff)
    manifest = pipeline.synthesize(cfg)
    return {"manifest": str(manifest.root / pipeline.MANIFEST_NAME), "records": len(manifest.records)}


def cmd_eval(eff: dict) -> dict:
    _require(eff, "input", "recon", "output")
    manifest = Manifest.read(eff["input"])
    reports = pipeline.evaluate(manifest, eff["recon"], eff["output"], eff["workers"])
    return summarize(reports)


def cmd_pipeline(eff: dict) -> dict:
    _require(eff, "input", "output")
    root = Path(eff["output"])
    cfg = pipeline_config(eff)
    manifest = pipeline.synthesize(cfg, eff["input"], root / "dataset")
    pipeline.deblur(manifest, cfg, root / "recon")
    reports = pipeline.evaluate(manifest, root / "recon", root / "eval", cfg.workers)
    return summarize(reports)


HANDLERS = {
    "simulate": cmd_simulate,
    "blur": cmd_blur,
    "tfp": cmd_tfp,
    "deblur": cmd_deblur,
    "synthesize": cmd_synthesize,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        eff = resolve(args)
        if eff["frames_per_blur"] is None and args.command in ("synthesize", "pipeline"):
            eff["frames_per_blur"] = 97
        print("config " + json.dumps({"command": args.command, **eff}, sort_keys=True))
        result = HANDLERS[args.command](eff)
    except Exception as err:  # noqa: BLE001 - every failure becomes one parseable line
        if args.verbose:
            logger.exception("command failed")
        msg = " ".join(str(err).split())
        print(json.dumps({"error": type(err).__name__, "message": msg}), file=sys.stderr)
        return 1
    print("result " + json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
