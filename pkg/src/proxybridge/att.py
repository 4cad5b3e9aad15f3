"""Conditional dose-response at a fixed conditioning treatment a'.

Same basis as the dose-response bridge, with the averaged element replaced
by the theta-weighted cross pairs (theta = CME weights of W given A = a').
Every inner product carries an extra factor k = k_A(a', a'), which enters
the loss scaling and the prediction prefix.
"""
from dataclasses import dataclass

import numpy as np

from .ate import (_evaluate, _shape_out, assemble_system, solve_alpha,
                  stationarity_ok, stationarity_residual)
from .numerics import as_matrix, frozen
from .stages import matrix_B, matrix_B_tilde, theta_weights


def as_treatment_point(a_prime, d_a):
    return np.asarray(a_prime, dtype=np.float64).reshape(1, d_a)


def kernel_at(kernel_a, a_prime, d_a):
    """k_A(a', a')."""
    ap = as_treatment_point(a_prime, d_a)
    return float(kernel_a(ap, ap)[0, 0])


@dataclass(frozen=True)
class AttFit:
    stage1: object
    stage3: object
    system: object
    a_prime: np.ndarray
    theta: np.ndarray
    zeta: float
    alpha: np.ndarray
    lam2: float
    k_ap: float
    a2: np.ndarray
    residual: float
    m_inf: float

    @property
    def stationary(self):
        return stationarity_ok(self.residual, self.m_inf)


def att_system(stage1, stage2, a_prime, zeta, theta=None, B=None):
    """Second-stage Gram matrix with theta-weighted cross pairs."""
    d_a = stage2.a.shape[1]
    if theta is None:
        theta = theta_weights(stage2.a, as_treatment_point(a_prime, d_a), zeta,
                              stage1.kcfg.a)
    if B is None:
        B = matrix_B(stage1, stage2.w, stage2.a)
    Bt = matrix_B_tilde(stage1, stage2.w, stage2.a, theta)
    k_aa2 = stage1.kcfg.a(stage2.a, stage2.a)
    return assemble_system(stage1.k_zz, B, Bt, k_aa2), np.asarray(theta, dtype=np.float64)


def fit_att(stage1, stage2, stage3, a_prime, lam2, zeta, theta=None, B=None):
    """Bridge coefficients for the conditional dose-response at a_prime.

    `theta` overrides the CME weights (used by reduction checks); `B` lets
    several a' values share one projection matrix.
    """
    if stage2.n < 2:
        raise ValueError("second stage needs m >= 2")
    zeta = float(zeta)
    if not (np.isfinite(zeta) and zeta > 0):
        raise ValueError(f"zeta must be positive, got {zeta}")
    d_a = stage2.a.shape[1]
    sys_, theta = att_system(stage1, stage2, a_prime, zeta, theta, B)
    k = kernel_at(stage1.kcfg.a, a_prime, d_a)
    alpha = solve_alpha(sys_.G, lam2, k)
    res, m_inf = stationarity_residual(sys_.G, alpha, lam2, k)
    return AttFit(stage1, stage3, sys_, frozen(as_treatment_point(a_prime, d_a)),
                  frozen(theta), zeta, frozen(alpha), float(lam2), k,
                  stage2.a, res, m_inf)


def predict_att(fit, a):
    """Conditional dose-response estimate at treatment(s) a."""
    aq = as_matrix(a, "a")
    left = fit.stage3.embed(fit.stage1.z, aq)
    k_a2q = fit.stage1.kcfg.a(fit.a2, aq)
    vals = fit.k_ap * _evaluate(fit.alpha, fit.system.B, fit.system.other, k_a2q, left)
    return _shape_out(a, vals)


def bridge_att(fit, z, a):
    """Bridge function at paired rows (z_i, a_i) for the fitted a'."""
    zq = as_matrix(z, "z")
    aq = as_matrix(a, "a")
    left = fit.stage1.kcfg.z(fit.stage1.z, zq)
    k_a2q = fit.stage1.kcfg.a(fit.a2, aq)
    vals = fit.k_ap * _evaluate(fit.alpha, fit.system.B, fit.system.other, k_a2q, left)
    return _shape_out(a, vals)
