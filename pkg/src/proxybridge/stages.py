"""First-stage conditional mean embedding of Z given (W, A), the third-stage
regression of Y*phi(Z) on A, and the CME weights of W given A = a'.

A first-stage fit stores one Cholesky factor of (K_WW * K_AA + n*lam1*I);
every projection matrix below is a single solve against that factor.
"""
from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, as_matrix, frozen, reg_factorize, reg_solve

BBAR_NORMS = ("m-1", "m")


def _check_lambda(lam, name):
    lam = float(lam)
    if not (np.isfinite(lam) and lam > 0):
        raise ValueError(f"{name} must be positive, got {lam}")
    return lam


@dataclass(frozen=True)
class Stage1Fit:
    w: np.ndarray
    a: np.ndarray
    z: np.ndarray
    kcfg: object
    lam1: float
    factor: object
    k_zz: np.ndarray

    @property
    def n(self):
        return self.w.shape[0]

    def features(self, w, a):
        """Cross gram K_Ww * K_Aa for query rows (n x q)."""
        w = as_matrix(w, "w")
        a = as_matrix(a, "a")
        if w.shape[0] != a.shape[0]:
            raise DimensionError(f"w has {w.shape[0]} rows, a has {a.shape[0]}")
        return self.kcfg.w(self.w, w) * self.kcfg.a(self.a, a)

    def beta(self, w, a):
        """CME weights beta(w, a), one column per query row."""
        return reg_solve(self.factor, self.features(w, a))


def fit_stage1(stage1, kcfg, lam1):
    """Kernel ridge regression of phi(Z) on phi(W) x phi(A)."""
    lam1 = _check_lambda(lam1, "lam1")
    if stage1.n < 1:
        raise ValueError("first stage needs at least one row")
    base = kcfg.w(stage1.w, stage1.w) * kcfg.a(stage1.a, stage1.a)
    fac = reg_factorize(base, stage1.n * lam1)
    return Stage1Fit(stage1.w, stage1.a, stage1.z, kcfg, lam1, fac,
                     frozen(kcfg.z(stage1.z, stage1.z)))


def matrix_B(f, w2, a2):
    """Column j is beta(w2_j, a2_j)."""
    return f.beta(w2, a2)


def _pair_grams(f, w2, a2):
    w2 = as_matrix(w2, "w2")
    a2 = as_matrix(a2, "a2")
    if w2.shape[0] != a2.shape[0]:
        raise DimensionError(f"w2 has {w2.shape[0]} rows, a2 has {a2.shape[0]}")
    if w2.shape[0] < 2:
        raise ValueError("leave-one-out pairing needs m >= 2")
    return f.kcfg.w(f.w, w2), f.kcfg.a(f.a, a2)


def matrix_B_bar(f, w2, a2, bbar_norm="m-1"):
    """Column j averages beta(w2_l, a2_j) over l != j.

    `bbar_norm` picks the divisor: "m-1" (a true average) or "m".
    """
    if bbar_norm not in BBAR_NORMS:
        raise ValueError(f"bbar_norm must be one of {BBAR_NORMS}")
    k_w, k_a = _pair_grams(f, w2, a2)
    m = k_w.shape[1]
    rhs = (k_w.sum(axis=1, keepdims=True) - k_w) * k_a
    return reg_solve(f.factor, rhs) / (m - 1 if bbar_norm == "m-1" else m)


def matrix_B_tilde(f, w2, a2, theta):
    """Column j is sum_{l != j} theta_l beta(w2_l, a2_j), unnormalized."""
    k_w, k_a = _pair_grams(f, w2, a2)
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.shape[0] != k_w.shape[1]:
        raise DimensionError(f"theta has length {theta.shape[0]}, expected {k_w.shape[1]}")
    rhs = (k_w @ theta[:, None] - k_w * theta[None, :]) * k_a
    return reg_solve(f.factor, rhs)


@dataclass(frozen=True)
class Stage3Fit:
    """Ridge regression of y*phi(Z) on phi(A) over t rows."""
    a: np.ndarray
    z: np.ndarray
    y: np.ndarray
    kcfg: object
    lam3: float
    factor: object

    @property
    def t(self):
        return self.a.shape[0]

    @property
    def D(self):
        """K_ZZ diag(y) (K_AA + t*lam3*I)^{-1} on the stage-3 rows."""
        left = self.kcfg.z(self.z, self.z) * self.y[None, :]
        return reg_solve(self.factor, left.T).T

    def weights(self, a):
        """(K_AA + t*lam3*I)^{-1} K_Aa scaled by y, one column per query."""
        v = reg_solve(self.factor, self.kcfg.a(self.a, as_matrix(a, "a")))
        return v * self.y[:, None]

    def embed(self, z_basis, a):
        """Estimated E[Y phi(Z) | A = a] evaluated against phi(z_basis).

        Equals D K_Aa when z_basis is the stage-3 Z itself.
        """
        return self.kcfg.z(as_matrix(z_basis, "z"), self.z) @ self.weights(a)


def fit_stage3(data, kcfg, lam3):
    lam3 = _check_lambda(lam3, "lam3")
    if data.n < 1:
        raise ValueError("third stage needs at least one row")
    fac = reg_factorize(kcfg.a(data.a, data.a), data.n * lam3)
    return Stage3Fit(data.a, data.z, frozen(data.y[:, 0].copy()), kcfg, lam3, fac)


def theta_weights(a2, a_prime, zeta, kernel_a):
    """CME weights of W given A = a_prime from second-stage treatments."""
    zeta = _check_lambda(zeta, "zeta")
    a2 = as_matrix(a2, "a2")
    ap = as_matrix(np.atleast_1d(a_prime).reshape(1, -1), "a_prime")
    fac = reg_factorize(kernel_a(a2, a2), a2.shape[0] * zeta)
    return reg_solve(fac, kernel_a(a2, ap))[:, 0]
