"""Trained nonlinear reaction-diffusion filtering for speckle removal."""

from .diffusion import (DiffusionModel, StageParams, StageTrace,
                        diffusion_step, diffusion_step_projected,
                        run_diffusion)
from .imageops import conv2d, conv2d_adjoint, rotate180
from .influence import InfluenceFunction, RbfGrid
from .metrics import (MetricsReport, coeff_variation, compute_report,
                      edge_correlation, mssim, psnr, ratio_image_stats)
from .speckle import (NoisyPair, SpeckleConfig, energy_d1, energy_d2,
                      energy_d3, prox_idiv, sample_speckle)
from .training import (TrainConfig, backprop_adjoint, finite_diff_check,
                       grad_stage_params, loss, train)

__all__ = [
    "DiffusionModel", "StageParams", "StageTrace", "diffusion_step",
    "diffusion_step_projected", "run_diffusion", "conv2d", "conv2d_adjoint",
    "rotate180", "InfluenceFunction", "RbfGrid", "MetricsReport",
    "coeff_variation", "compute_report", "edge_correlation", "mssim", "psnr",
    "ratio_image_stats", "NoisyPair", "SpeckleConfig", "energy_d1",
    "energy_d2", "energy_d3", "prox_idiv", "sample_speckle", "TrainConfig",
    "backprop_adjoint", "finite_diff_check", "grad_stage_params", "loss",
    "train",
]

__version__ = "0.1.0"
