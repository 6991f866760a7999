"""Sparse bilinear logistic regression for matrix-valued samples."""

from sblr.bcd import InnerSolverConfig, fit_bcd
from sblr.bcpd import FitReport, SolverConfig, SolverError, StepsizePolicy, fit, init_params
from sblr.dataio import (FormatError, generate_synthetic, read_dataset, read_model,
                         write_dataset, write_model)
from sblr.linear import LinearModel, fit_linear, predict_linear
from sblr.metrics import accuracy, auc
from sblr.multiclass import fit_multinomial, fit_one_vs_all, predict_classes
from sblr.prox import ProxSpec, prox_update_factor, shrink
from sblr.types import (Dataset, ModelParams, MulticlassModel, RegConfig, margin,
                        materialize_weight_matrix, predict)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ModelParams", "MulticlassModel", "RegConfig", "margin", "predict",
    "materialize_weight_matrix", "ProxSpec", "shrink",
    "prox_update_factor", "StepsizePolicy", "SolverConfig", "SolverError", "FitReport", "fit",
    "init_params", "InnerSolverConfig", "fit_bcd", "LinearModel", "fit_linear", "predict_linear",
    "fit_one_vs_all", "fit_multinomial", "predict_classes", "FormatError", "generate_synthetic",
    "read_dataset", "write_dataset", "read_model", "write_model", "accuracy", "auc",
]
