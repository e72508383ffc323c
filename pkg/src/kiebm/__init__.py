"""Collaborative image/k-space energy-based priors for parallel MRI reconstruction."""

__version__ = "0.1.0"

from .ebm import EnergyModel, LangevinConfig, ReplayBuffer, TrainConfig, train  # noqa: E402
from .estimators import EnergyPrior, KIEBMReconstructor  # noqa: E402
from .metrics import evaluate, psnr, ssim  # noqa: E402
from .mri import fft2c, generate_mask, ifft2c, shepp_logan, sos_combine, weight_matrix  # noqa: E402
from .recon import ReconConfig, reconstruct  # noqa: E402

__all__ = [
    "__version__",
    "EnergyModel",
    "LangevinConfig",
    "ReplayBuffer",
    "TrainConfig",
    "train",
    "EnergyPrior",
    "KIEBMReconstructor",
    "evaluate",
    "psnr",
    "ssim",
    "fft2c",
    "ifft2c",
    "generate_mask",
    "shepp_logan",
    "sos_combine",
    "weight_matrix",
    "ReconConfig",
    "reconstruct",
]
