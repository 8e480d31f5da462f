"""Short-time Wiener acoustic echo cancellation with attention-weighted statistics."""
from .attention import AttentionParams, load_checkpoint, save_checkpoint, train_surrogate
from .metrics import erle, s_sisnr, sdr, sisnr
from .simulate import Scenario, image_method_rir, render_scenario, sample_scenario
from .stft import StftConfig, istft, stft, unfold
from .wiener import accumulate_stats, solve, stws_pipeline

__all__ = [
    "AttentionParams", "Scenario", "StftConfig", "accumulate_stats", "erle", "image_method_rir",
    "istft", "load_checkpoint", "render_scenario", "s_sisnr", "sample_scenario", "save_checkpoint",
    "sdr", "sisnr", "solve", "stft", "stws_pipeline", "train_surrogate", "unfold",
]
__version__ = "0.1.0"
