"""Exactly reversible diffusion inversion with dual chains, at desk scale."""

from .data import make_shapes, shape_prior
from .dci import InversionRecord, dci_invert, joint_infer, reconstruct
from .ddim import Trajectory, ddim_infer, ddim_infer_step, ddim_invert, ddim_invert_step, forward_jump, forward_step, predict_x0
from .edit import DcsConfig, EditConfig, EditResult, dcs_scale, dji_step, edit_run, g_step, ji_step, rewrite_condition
from .estimators import DDIMInversion, DualChainInversion
from .metrics import ReconReport, mse, pca_project, psnr, ssim
from .predictor import (
    ConstantPredictor,
    GmmDataModel,
    GmmNoisePredictor,
    MlpNoisePredictor,
    cfg_combine,
    constant_predictor,
    gmm_predictor,
)
from .schedule import NoiseSchedule, TimestepPlan, make_linear_schedule, make_plan
from .tensorio import Rng, read_tensor, sample_standard_normal, write_tensor

__version__ = "0.1.0"
