"""Compressive neural representation of gridded multivariate fields.

A single residual sinusoidal network maps grid coordinates to all variables
at once; the trained weights are the compressed artifact. The package also
carries the baselines and metrics used to judge reconstruction fidelity.
"""
from .field import (DatasetError, GridSpec, MultiField, Normalizer, VariableMeta,
                    load_dataset, make_normalizer, sample_points, save_dataset)
from .model import (ModelConfig, ResidualSirenModel, backward, compression_ratio,
                    forward, init_model, load_model, param_count, reconstruct,
                    save_model)
from .trainer import TrainConfig, TrainReport, adam_step, train

__version__ = "0.1.0"
