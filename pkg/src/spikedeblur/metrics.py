"""Full-reference quality metrics and reblur consistency."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .sdm import reblur

PSNR_CAP = 99.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    """Mean squared difference, summed with exact rounding (``math.fsum``)."""
    a, b = _pair(a, b)
    d = (a - b).ravel()
    if d.size == 0:
        raise ValueError("empty images")
    return math.fsum(d * d) / d.size


def psnr_from_mse(err: float, peak: float = 1.0) -> float:
    if err < 1e-12:
        return PSNR_CAP
    return 10.0 * math.log10(peak * peak / err)


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB over all pixels and channels jointly; 99.0 when MSE < 1e-12."""
    if not peak > 0:
        raise ValueError("peak must be > 0")
    return psnr_from_mse(mse(a, b), peak)


def _gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _ssim_plane(x: np.ndarray, y: np.ndarray, peak: float) -> float:
    g = _gaussian_window()
    pad = SSIM_WIN // 2

    def blur(img):
        out = ndimage.correlate1d(img, g, axis=0, mode="reflect")
        out = ndimage.correlate1d(out, g, axis=1, mode="reflect")
        return out[pad:-pad, pad:-pad]

    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged over channels."""
    a, b = _pair(a, b)
    if a.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, C), got {a.shape}")
    if min(a.shape[:2]) < SSIM_WIN:
        raise ValueError(f"image {a.shape[:2]} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    if a.ndim == 2:
        return _ssim_plane(a, b, peak)
    return float(np.mean([_ssim_plane(a[..., c], b[..., c], peak) for c in range(a.shape[2])]))


def reblur_residual(blurry, sequence) -> dict:
    err = mse(blurry, reblur(sequence))
    return {"mse": err, "psnr": psnr_from_mse(err)}


@dataclass
class FrameMetric:
    frame_index: int
    psnr: float
    ssim: float


@dataclass
class MetricReport:
    per_frame: list[FrameMetric]
    mean_psnr: float
    mean_ssim: float
    reblur_residual_mse: float
    reblur_residual_psnr: float
    record_id: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = dict(d)
        d["per_frame"] = [FrameMetric(**f) for f in d["per_frame"]]
        return cls(**d)


def evaluate_sequence(recon, ground_truth, blurry, record_id: str = "",
                      clamp: bool = True) -> MetricReport:
    """Per-frame PSNR/SSIM of ``recon`` against ``ground_truth`` plus the reblur residual.

    With ``clamp`` the reconstructions are clipped to [0, 1] first, matching how
    8-bit outputs are scored.
    """
    recon = np.asarray(recon, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    if recon.shape != gt.shape:
        raise ValueError(f"reconstruction {recon.shape} vs ground truth {gt.shape}")
    if clamp:
        recon = np.clip(recon, 0.0, 1.0)
    frames = [FrameMetric(i, psnr(r, g), ssim(r, g)) for i, (r, g) in enumerate(zip(recon, gt))]
    res = reblur_residual(blurry, recon)
    return MetricReport(
        frames,
        float(np.mean([f.psnr for f in frames])),
        float(np.mean([f.ssim for f in frames])),
        res["mse"],
        res["psnr"],
        record_id,
    )


def summarize(reports: list[MetricReport]) -> dict:
    frames = [f for r in reports for f in r.per_frame]
    return {
        "records": len(reports),
        "frames": len(frames),
        "mean_psnr": float(np.mean([f.psnr for f in frames])),
        "mean_ssim": float(np.mean([f.ssim for f in frames])),
        "mean_reblur_residual_mse": float(np.mean([r.reblur_residual_mse for r in reports])),
        "mean_reblur_residual_psnr": float(np.mean([r.reblur_residual_psnr for r in reports])),
    }


CSV_FIELDS = ["record_id", "frame_index", "psnr", "ssim", "reblur_residual_mse", "reblur_residual_psnr"]


def write_csv(path: str | Path, reports: list[MetricReport]) -> None:
    """One row per frame, then a ``summary`` row with aggregate means."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in reports:
            for f in r.per_frame:
                writer.writerow({
                    "record_id": r.record_id,
                    "frame_index": f.frame_index,
                    "psnr": repr(f.psnr),
                    "ssim": repr(f.ssim),
                    "reblur_residual_mse": repr(r.reblur_residual_mse),
                    "reblur_residual_psnr": repr(r.reblur_residual_psnr),
                })
        s = summarize(reports)
        writer.writerow({
            "record_id": "summary",
            "frame_index": "",
            "psnr": repr(s["mean_psnr"]),
            "ssim": repr(s["mean_ssim"]),
            "reblur_residual_mse": repr(s["mean_reblur_residual_mse"]),
            "reblur_residual_psnr": repr(s["mean_reblur_residual_psnr"]),
        })


def write_json(path: str | Path, reports: list[MetricReport]) -> None:
    payload = {"summary": summarize(reports), "records": [r.to_dict() for r in reports]}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
