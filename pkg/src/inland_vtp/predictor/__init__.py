"""Transformer trajectory predictor."""

from .model import ModelConfig, TrajectoryTransformer, build_model, load_model, save_model
from .nll import BiGaussianParams, bivariate_nll, nll

__all__ = ["ModelConfig", "TrajectoryTransformer", "build_model", "load_model", "save_model",
           "BiGaussianParams", "bivariate_nll", "nll"]
