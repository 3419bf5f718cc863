"""Event classification over per-clip concept-score sequences with
dynamically sized temporal receptive fields."""

from .autodiff import Tape, Tensor, backward, gradient_check
from .data import (ConceptSequence, Dataset, SyntheticSpec, VideoSample,
                   generate_synthetic, load_dataset, save_dataset, split)
from .models import Model, ModelConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .tdc import TdcConfig, TdcParameters, tdc_forward
from .training import (CoefficientDump, EvalReport, TrainConfig,
                       average_precision, dump_coefficients, evaluate, loss,
                       train)

__all__ = [
    "Tape", "Tensor", "backward", "gradient_check",
    "ConceptSequence", "Dataset", "SyntheticSpec", "VideoSample",
    "generate_synthetic", "load_dataset", "save_dataset", "split",
    "Model", "ModelConfig", "load_checkpoint", "save_checkpoint",
    "TdcConfig", "TdcParameters", "tdc_forward",
    "CoefficientDump", "EvalReport", "TrainConfig", "average_precision",
    "dump_coefficients", "evaluate", "loss", "train",
]
