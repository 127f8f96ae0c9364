"""Covariate-aware permutation-invariant set encoding for multi-sample
single-cell data: RFF sample signatures, covariate triplet mining, a set
encoder trained with a BCE + triplet-margin composite loss, and the
evaluation suite around it.
"""

from . import backend
from .data import (
    CellMatrix,
    CohortDataset,
    CovariateValue,
    SampleRecord,
    SplitPlan,
)
from .errors import DataError, NumericError
from .rff import RffConfig, RffProjection, SampleSignature
from .setnet import ModelParams, SetEncoderConfig
from .training import LossConfig, TrainConfig
from .triplets import Triplet, TripletConfig

__version__ = "0.1.0"

__all__ = [
    "backend",
    "CellMatrix",
    "CohortDataset",
    "CovariateValue",
    "DataError",
    "LossConfig",
    "ModelParams",
    "NumericError",
    "RffConfig",
    "RffProjection",
    "SampleRecord",
    "SampleSignature",
    "SetEncoderConfig",
    "SplitPlan",
    "TrainConfig",
    "Triplet",
    "TripletConfig",
    "__version__",
]
