"""Multi-scale patching forecaster trained with the smooth quadratic loss."""

from timesql.types import SeriesMatrix, SeriesWindow, SplitSpec, make_windows, split_series
from timesql.patching import MultiScaleConfig, PatchScaleSpec, PatchTensor, multi_patch, patch
from timesql.losses import (
    LossReport,
    SqlHyperParams,
    mse_loss,
    rqf_grad,
    rqf_loss,
    rqf_maclaurin,
    sql_loss,
)
from timesql.model import Architecture, ModelParams, backward, forward, init_params

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "LossReport",
    "ModelParams",
    "MultiScaleConfig",
    "PatchScaleSpec",
    "PatchTensor",
    "SeriesMatrix",
    "SeriesWindow",
    "SplitSpec",
    "SqlHyperParams",
    "backward",
    "forward",
    "init_params",
    "make_windows",
    "mse_loss",
    "multi_patch",
    "patch",
    "rqf_grad",
    "rqf_loss",
    "rqf_maclaurin",
    "split_series",
    "sql_loss",
]
