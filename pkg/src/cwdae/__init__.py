"""Mixture Cramer-Wold distributional autoencoder for mixed-type tabular data."""

__version__ = "0.1.0"

from .checkpoint import load_checkpoint, save_checkpoint
from .cramer_wold import (MixtureMeasureConfig, cw_distance_sq, marginal_cw_sq, mix_cw_distance_sq,
                          phi_D, psi_d, silverman_gamma)
from .data import Column, TabularEncoder, TabularSchema, encode, load_schema, read_table, split
from .estimator import CWDAE
from .metrics import EvalReport, compare, evaluate
from .model import CwdaeModel, TrainConfig, train
from .synthesis import SynthesisRequest, emit_latent_scatter, generate

__all__ = [
    "CWDAE", "Column", "CwdaeModel", "EvalReport", "MixtureMeasureConfig", "SynthesisRequest",
    "TabularEncoder", "TabularSchema", "TrainConfig", "compare", "cw_distance_sq", "emit_latent_scatter",
    "encode", "evaluate", "generate", "load_checkpoint", "load_schema", "marginal_cw_sq",
    "mix_cw_distance_sq", "phi_D", "psi_d", "read_table", "save_checkpoint", "silverman_gamma",
    "split", "train",
]
