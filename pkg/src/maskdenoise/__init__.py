"""Self-supervised real-image denoising with asymmetric masking.

Training hides a random share of pixels and optimizes the reconstruction of
exactly those hidden positions against the noisy image itself; inference runs
k branches with complementary masks so every pixel is predicted while hidden,
and recombines them into a full denoised image. Phase downsampling at a
training/inference-asymmetric stride breaks spatial noise correlation.
"""

from .core import (
    ImageTensor,
    PadSpec,
    SubSampleSet,
    crop,
    load_png,
    pad_reflect,
    pd_merge,
    pd_split,
    save_png,
)
from .denoisers import (
    CheckpointError,
    DenoiserHandle,
    DenoiserSpec,
    build_denoiser,
    load_checkpoint,
    save_checkpoint,
)
from .inference import InferConfig, RefineConfig, denoise_image, denoise_variant, refine_r3
from .losses import LossValue, bsn_loss, mask_loss, total_loss, tv_loss
from .masking import MaskPartition, MaskSet, apply_mask, complement, sample_mask, sample_partition
from .training import TrainConfig, run_training

__version__ = "0.1.0"

__all__ = [
    "ImageTensor",
    "PadSpec",
    "SubSampleSet",
    "MaskSet",
    "MaskPartition",
    "DenoiserSpec",
    "DenoiserHandle",
    "InferConfig",
    "RefineConfig",
    "TrainConfig",
    "LossValue",
    "CheckpointError",
    "pd_split",
    "pd_merge",
    "pad_reflect",
    "crop",
    "load_png",
    "save_png",
    "sample_mask",
    "sample_partition",
    "apply_mask",
    "complement",
    "build_denoiser",
    "save_checkpoint",
    "load_checkpoint",
    "mask_loss",
    "tv_loss",
    "total_loss",
    "bsn_loss",
    "denoise_image",
    "denoise_variant",
    "refine_r3",
    "run_training",
]
