"""Two-path transformer for image restoration.

The heavy lifting lives in the compiled `_core` module: the model itself,
the training loop, PSNR/SSIM, PNG/PPM IO, synthetic degradations, and the
self-test suite.
"""

from uhdformer._core import (
    ConfigError,
    FormatError,
    IoError,
    Model,
    NumericError,
    ShapeError,
    cosine_lr,
    evaluate_pairs,
    make_clean_image,
    psnr,
    read_image,
    selftest,
    set_num_threads,
    ssim,
    synth_degrade,
    train_pairs,
    write_image,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "IoError",
    "Model",
    "NumericError",
    "ShapeError",
    "cosine_lr",
    "evaluate_pairs",
    "make_clean_image",
    "psnr",
    "read_image",
    "selftest",
    "set_num_threads",
    "ssim",
    "synth_degrade",
    "train_pairs",
    "write_image",
]
