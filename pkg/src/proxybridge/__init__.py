"""Kernel proxy-variable estimators of dose-response curves under hidden confounding."""
from .ate import fit_ate, predict_ate
from .att import fit_att, predict_att
from .dataset import Dataset, generate, mc_ground_truth_ate, mc_ground_truth_att
from .pipeline import PipelineConfig, fit_ate_tuned, fit_att_tuned, prepare, tune_shared
from .tuning import Grid

__all__ = ["Dataset", "Grid", "PipelineConfig", "fit_ate", "fit_ate_tuned", "fit_att",
           "fit_att_tuned", "generate", "mc_ground_truth_ate", "mc_ground_truth_att",
           "predict_ate", "predict_att", "prepare", "tune_shared"]
