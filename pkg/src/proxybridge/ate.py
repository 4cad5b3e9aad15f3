"""Dose-response estimation with a treatment bridge function.

The bridge is expanded over m+1 basis elements: the m stage-2 embeddings
mu(w_j, a_j) x phi(a_j) and one averaged element built from the
leave-one-out cross pairs. All second-stage quantities live in the
(m+1)x(m+1) Gram matrix G of that basis:

    G = [[P, q], [q^T, s]],  L = G[:m, :],  M = G[:, m],  N = G.

Because L^T L = G E G with E = diag(1,..,1,0), the normal equations
(k/m L^T L + lam2 N) alpha = M factor as G (k/m E G + lam2 I) alpha = G e,
and the block-triangular inner system gives the minimizer in closed form:

    alpha_{m+1} = 1/lam2,
    (k P + m lam2 I) alpha_{1:m} = -k q / lam2.

k is k_A(a', a') for the conditional estimand and 1 here.
"""
from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, frozen, reg_factorize, reg_solve
from .stages import matrix_B, matrix_B_bar

STATIONARITY_TOL = 1e-8


@dataclass(frozen=True)
class SecondStageSystem:
    """Basis Gram matrix for one stage-2 sample and one averaged element."""
    B: np.ndarray
    other: np.ndarray
    k_aa2: np.ndarray
    G: np.ndarray

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def L(self):
        return self.G[:self.m, :]

    @property
    def M(self):
        return self.G[:, self.m]

    @property
    def N(self):
        return self.G


def assemble_system(k_zz, B, other, k_aa2):
    """Gram matrix of the m+1 basis elements, exactly symmetric."""
    m = B.shape[1]
    kb = k_zz @ B
    P = (B.T @ kb) * k_aa2
    P = 0.5 * (P + P.T)
    q = ((B.T @ (k_zz @ other)) * k_aa2).mean(axis=1)
    s = ((other.T @ (k_zz @ other)) * k_aa2).mean()
    G = np.empty((m + 1, m + 1))
    G[:m, :m] = P
    G[:m, m] = q
    G[m, :m] = q
    G[m, m] = s
    return SecondStageSystem(frozen(B), frozen(other), frozen(k_aa2), frozen(G))


def second_stage_system(stage1, stage2, bbar_norm="m-1"):
    B = matrix_B(stage1, stage2.w, stage2.a)
    Bbar = matrix_B_bar(stage1, stage2.w, stage2.a, bbar_norm)
    k_aa2 = stage1.kcfg.a(stage2.a, stage2.a)
    return assemble_system(stage1.k_zz, B, Bbar, k_aa2)


def build_second_stage_system(stage1, stage2, bbar_norm="m-1"):
    """(L, M, N) of the second-stage quadratic loss."""
    sys_ = second_stage_system(stage1, stage2, bbar_norm)
    return sys_.L, sys_.M, sys_.N


def solve_alpha(G, lam2, k=1.0):
    """Minimizer of k/m a^T L^T L a - 2 a^T M + lam2 a^T N a."""
    lam2 = float(lam2)
    if not (np.isfinite(lam2) and lam2 > 0):
        raise ValueError(f"lam2 must be positive, got {lam2}")
    m = G.shape[0] - 1
    fac = reg_factorize(k * G[:m, :m], m * lam2)
    alpha = np.empty(m + 1)
    alpha[:m] = -reg_solve(fac, k * G[:m, m]) / lam2
    alpha[m] = 1.0 / lam2
    return alpha


def alpha_path(G, lams, k=1.0):
    """solve_alpha for many lam2 values via one eigendecomposition."""
    m = G.shape[0] - 1
    evals, evecs = np.linalg.eigh(k * G[:m, :m])
    evals = np.clip(evals, 0.0, None)
    proj = evecs.T @ (k * G[:m, m])
    out = np.empty((len(lams), m + 1))
    for i, lam in enumerate(lams):
        out[i, :m] = -(evecs @ (proj / (evals + m * lam))) / lam
        out[i, m] = 1.0 / lam
    return out


def stationarity_residual(G, alpha, lam2, k=1.0):
    """Sup-norm gradient of the second-stage loss and the scale ||M||_inf."""
    m = G.shape[0] - 1
    L = G[:m, :]
    M = G[:, m]
    grad = 2 * (k / m) * (L.T @ (L @ alpha)) - 2 * M + 2 * lam2 * (G @ alpha)
    return float(np.max(np.abs(grad))), float(np.max(np.abs(M)))


def stationarity_ok(resid, m_inf):
    return resid <= STATIONARITY_TOL * (1 + m_inf)


@dataclass(frozen=True)
class AteFit:
    stage1: object
    stage3: object
    system: SecondStageSystem
    alpha: np.ndarray
    lam2: float
    a2: np.ndarray
    residual: float
    m_inf: float
    bbar_norm: str

    @property
    def stationary(self):
        return stationarity_ok(self.residual, self.m_inf)


def fit_ate(stage1, stage2, stage3, lam2, bbar_norm="m-1", system=None):
    """Second-stage bridge coefficients for the dose-response curve."""
    if stage2.n < 2:
        raise ValueError("second stage needs m >= 2")
    sys_ = system if system is not None else second_stage_system(stage1, stage2, bbar_norm)
    alpha = solve_alpha(sys_.G, lam2)
    res, m_inf = stationarity_residual(sys_.G, alpha, lam2)
    return AteFit(stage1, stage3, sys_, frozen(alpha), float(lam2),
                  stage2.a, res, m_inf, bbar_norm)


def _evaluate(alpha, B, other, k_a2q, left):
    """alpha^T [ (B^T left) * K ; mean_j ((other^T left) * K) ]."""
    m = B.shape[1]
    top = (B.T @ left) * k_a2q
    bottom = ((other.T @ left) * k_a2q).mean(axis=0)
    return alpha[:m] @ top + alpha[m] * bottom


def _shape_out(a, vals):
    return float(vals[0]) if np.ndim(a) == 0 else vals


def predict_ate(fit, a):
    """Dose-response estimate at treatment(s) a (standardized units)."""
    aq = as_matrix(a, "a")
    left = fit.stage3.embed(fit.stage1.z, aq)
    k_a2q = fit.stage1.kcfg.a(fit.a2, aq)
    return _shape_out(a, _evaluate(fit.alpha, fit.system.B, fit.system.other, k_a2q, left))


def bridge_ate(fit, z, a):
    """Bridge function at paired rows (z_i, a_i)."""
    zq = as_matrix(z, "z")
    aq = as_matrix(a, "a")
    left = fit.stage1.kcfg.z(fit.stage1.z, zq)
    k_a2q = fit.stage1.kcfg.a(fit.a2, aq)
    return _shape_out(a, _evaluate(fit.alpha, fit.system.B, fit.system.other, k_a2q, left))
