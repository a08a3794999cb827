"""Residual CNN post-processing of sparse-view FBP CT volumes.

Volumes are float32 numpy arrays shaped (slices, rows, cols) in HU unless a
function says it works on normalized intensities (window (0, 2000) -> [0, 1]).
"""

from ._core import (
    EmptyMaskError,
    FormatError,
    Network,
    NonFiniteGradientError,
    ShapeError,
    default_detector_count,
    extract_patches,
    fbp,
    generate_phantom,
    gradcheck,
    hu_denormalize,
    hu_normalize,
    load_volume,
    make_pair,
    masked_mse,
    masked_psnr,
    psnr,
    radon,
    save_volume,
    train,
    uniform_angles,
)

__all__ = [
    "EmptyMaskError",
    "FormatError",
    "Network",
    "NonFiniteGradientError",
    "ShapeError",
    "default_detector_count",
    "extract_patches",
    "fbp",
    "generate_phantom",
    "gradcheck",
    "hu_denormalize",
    "hu_normalize",
    "load_volume",
    "make_pair",
    "masked_mse",
    "masked_psnr",
    "psnr",
    "radon",
    "save_volume",
    "train",
    "uniform_angles",
]
