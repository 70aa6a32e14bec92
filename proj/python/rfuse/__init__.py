"""Python access to the rfuse fusion library."""

from ._core import (
    NumericalError,
    ValidationError,
    default_config,
    digamma,
    evaluate,
    expected_precision_block,
    fuse,
    kmeans2,
    misclassification,
    normalize_config,
    read_raster,
    rmse,
    simulate,
    train_dynamics,
    write_raster,
)

__all__ = [
    "NumericalError",
    "ValidationError",
    "default_config",
    "digamma",
    "evaluate",
    "expected_precision_block",
    "fuse",
    "kmeans2",
    "misclassification",
    "normalize_config",
    "read_raster",
    "rmse",
    "simulate",
    "train_dynamics",
    "write_raster",
]
