"""Recurrent feature reasoning inpainting network (C++ core)."""

from ._core import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    IoError,
    Network,
    NumericError,
    generate_image,
    generate_mask,
    hole_fraction,
    mask_update,
    mean_l1,
    partial_conv,
    psnr,
    read_pnm,
    ssim,
    write_pnm,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "IoError",
    "Network",
    "NumericError",
    "generate_image",
    "generate_mask",
    "hole_fraction",
    "mask_update",
    "mean_l1",
    "partial_conv",
    "psnr",
    "read_pnm",
    "ssim",
    "write_pnm",
]
