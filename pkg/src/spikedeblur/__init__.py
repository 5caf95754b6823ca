"""Spike-camera simulation and spike-guided motion deblurring."""

from .blur import (
    ChannelRatioReport,
    GrayscaleWeights,
    channel_ratio_consistency,
    downsample_area,
    synthesize_blur,
    to_grayscale,
)
from .metrics import MetricReport, evaluate_sequence, psnr, reblur_residual, ssim
from .sdm import (
    ExposureSpec,
    ReconstructionConfig,
    reblur,
    sdm_reconstruct_frame,
    sdm_reconstruct_sequence,
    tfp_reconstruct,
    upsample_bilinear,
)
from .simulator import IntegratorState, SimulatorConfig, inject_noise_profile, simulate_spikes
from .spike_stream import (
    SpikeCountMap,
    SpikeStream,
    WindowSpec,
    accumulate_window,
    decode,
    encode,
    from_dense,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelRatioReport", "GrayscaleWeights", "channel_ratio_consistency", "downsample_area",
    "synthesize_blur", "to_grayscale",
    "MetricReport", "evaluate_sequence", "psnr", "reblur_residual", "ssim",
    "ExposureSpec", "ReconstructionConfig", "reblur", "sdm_reconstruct_frame",
    "sdm_reconstruct_sequence", "tfp_reconstruct", "upsample_bilinear",
    "IntegratorState", "SimulatorConfig", "inject_noise_profile", "simulate_spikes",
    "SpikeCountMap", "SpikeStream", "WindowSpec", "accumulate_window", "decode", "encode", "from_dense",
]
