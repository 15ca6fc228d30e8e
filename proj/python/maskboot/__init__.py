"""Mask-bootstrapped dense contrastive pretraining on synthetic scenes."""

from ._core import (
    ConfigError,
    FormatError,
    __version__,
    adjusted_rand_index,
    default_config,
    generate_scene,
    hungarian_miou,
    load_checkpoint_config,
    mask_pool,
    resolve_config,
    spherical_kmeans,
    train,
    vmf_nll,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "__version__",
    "adjusted_rand_index",
    "default_config",
    "generate_scene",
    "hungarian_miou",
    "load_checkpoint_config",
    "mask_pool",
    "resolve_config",
    "spherical_kmeans",
    "train",
    "vmf_nll",
]
