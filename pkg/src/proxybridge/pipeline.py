"""Standardize, split, tune and fit in one place.

Estimators work in standardized units; the helpers here accept and return
treatments and outcomes in original units.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from .ate import fit_ate, predict_ate, second_stage_system
from .att import fit_att, predict_att
from .dataset import concat, split_two_stage, standardize
from .kernel import kernel_config_from
from .stages import BBAR_NORMS, fit_stage1, fit_stage3, matrix_B
from .tuning import (Grid, loocv_lambda1, loocv_lambda3, loocv_zeta,
                     surrogate_att, tune_lambda2_ate, _tune_lambda2)

STAGE3_CHOICES = ("both", "stage1", "stage2")


@dataclass(frozen=True)
class PipelineConfig:
    grid: Grid = field(default_factory=Grid.logspace)
    sigma2: float = 1.0
    bbar_norm: str = "m-1"
    stage3_data: str = "both"
    standardize_y: bool = False
    columnwise_w: bool = False

    def __post_init__(self):
        if self.bbar_norm not in BBAR_NORMS:
            raise ValueError(f"bbar_norm must be one of {BBAR_NORMS}")
        if self.stage3_data not in STAGE3_CHOICES:
            raise ValueError(f"stage3_data must be one of {STAGE3_CHOICES}")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")


@dataclass(frozen=True)
class Prepared:
    data: object
    scaler: object
    split: object
    kcfg: object
    stage3_data: object


def prepare(dataset, seed, cfg):
    """Standardize the full sample, split it and pick kernel lengthscales."""
    data, scaler = standardize(dataset, cfg.standardize_y)
    split = split_two_stage(data, seed)
    kcfg = kernel_config_from(data.a, data.w, data.z, cfg.columnwise_w)
    s3 = {"both": lambda: concat(split.stage1, split.stage2),
          "stage1": lambda: split.stage1,
          "stage2": lambda: split.stage2}[cfg.stage3_data]()
    return Prepared(data, scaler, split, kcfg, s3)


@dataclass
class Tuned:
    """Shared stage-1 and stage-3 fits plus their tuning reports."""
    prep: Prepared
    stage1: object
    stage3: object
    reports: dict
    timings: dict


def tune_shared(prep, cfg):
    timings = {}
    t0 = time.perf_counter()
    r1 = loocv_lambda1(prep.split.stage1, prep.kcfg, cfg.grid)
    s1 = fit_stage1(prep.split.stage1, prep.kcfg, r1.selected)
    timings["stage1"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    r3 = loocv_lambda3(prep.stage3_data, prep.kcfg, cfg.grid)
    s3 = fit_stage3(prep.stage3_data, prep.kcfg, r3.selected)
    timings["stage3"] = time.perf_counter() - t0
    return Tuned(prep, s1, s3, {"lambda1": r1, "lambda3": r3}, timings)


def fit_ate_tuned(tuned, cfg):
    """Tune lam2 on the hold-out surrogate and fit the dose-response."""
    t0 = time.perf_counter()
    split = tuned.prep.split
    sys_ = second_stage_system(tuned.stage1, split.stage2, cfg.bbar_norm)
    r2 = tune_lambda2_ate(tuned.stage1, split.stage1, split.stage2, cfg.grid,
                          cfg.sigma2, cfg.bbar_norm, system=sys_)
    fit = fit_ate(tuned.stage1, split.stage2, tuned.stage3, r2.selected,
                  cfg.bbar_norm, system=sys_)
    tuned.reports["lambda2"] = r2
    tuned.timings["stage2"] = time.perf_counter() - t0
    return fit


def fit_att_tuned(tuned, cfg, a_primes):
    """One conditional fit per a' (original units); returns {a': fit}."""
    t0 = time.perf_counter()
    prep = tuned.prep
    split = prep.split
    rz = loocv_zeta(split.stage2, prep.kcfg, cfg.grid, "zeta")
    rz2 = loocv_zeta(split.stage1, prep.kcfg, cfg.grid, "zeta2")
    tuned.reports["zeta"] = rz
    tuned.reports["zeta2"] = rz2
    B = matrix_B(tuned.stage1, split.stage2.w, split.stage2.a)
    fits = {}
    for ap in a_primes:
        ap_std = to_std_a(prep, ap)
        fit0 = fit_att(tuned.stage1, split.stage2, tuned.stage3, ap_std,
                       cfg.grid.values[0], rz.selected, B=B)
        sur = surrogate_att(tuned.stage1, split.stage1, split.stage2, ap_std,
                            rz.selected, rz2.selected, cfg.sigma2, system=fit0.system)
        r2 = _tune_lambda2(sur, cfg.grid, "lambda2")
        tuned.reports[f"lambda2_att_{ap!r}"] = r2
        fits[ap] = fit_att(tuned.stage1, split.stage2, tuned.stage3, ap_std,
                           r2.selected, rz.selected, theta=fit0.theta, B=B)
    tuned.timings["stage2"] = time.perf_counter() - t0
    return fits


def to_std_a(prep, a):
    """Original-unit treatment(s) -> standardized column(s)."""
    a = np.asarray(a, dtype=np.float64)
    d = prep.data.a.shape[1]
    return prep.scaler.apply("a", a.reshape(-1, d))


def predict_curve(prep, fit, a_grid):
    """Estimated curve on original-unit treatments, original-unit outcome."""
    a_std = to_std_a(prep, a_grid)
    pred = predict_att if hasattr(fit, "a_prime") else predict_ate
    vals = np.asarray(pred(fit, a_std), dtype=np.float64).ravel()
    return prep.scaler.invert("y", vals[:, None])[:, 0]


def central_grid(a, points=100, coverage=0.9):
    """Evenly spaced points over the central quantile range of a 1-D sample."""
    lo, hi = np.quantile(np.asarray(a).ravel(), [(1 - coverage) / 2, (1 + coverage) / 2])
    return np.linspace(lo, hi, points)


def full_grid(a, points=100):
    a = np.asarray(a).ravel()
    return np.linspace(a.min(), a.max(), points)


def krr_curve(prep, cfg, a_grid):
    """Ridge regression of Y on A with the treatment kernel, LOOCV-tuned.

    Uses the same rows as the third stage. This is the no-confounding
    reference for the dose-response.
    """
    from .numerics import reg_factorize, reg_solve
    from .tuning import loocv_losses, select_on_grid

    data = prep.stage3_data
    y = data.y[:, 0]
    k = prep.kcfg.a(data.a, data.a)
    losses, skipped = loocv_losses(k, np.outer(y, y), cfg.grid)
    rep = select_on_grid("krr", cfg.grid, losses, skipped)
    coef = reg_solve(reg_factorize(k, data.n * rep.selected), y)
    vals = prep.kcfg.a(to_std_a(prep, a_grid), data.a) @ coef
    return prep.scaler.invert("y", vals[:, None])[:, 0], rep
