"""Regularization selection.

lam1, lam3 and zeta use the closed-form leave-one-out loss of kernel ridge
regression with an RKHS-valued target; lam2 uses a hold-out loss on the
first-stage sample plus a degrees-of-freedom penalty.
"""
import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .ate import alpha_path, second_stage_system
from .att import as_treatment_point, att_system, kernel_at
from .numerics import reg_factorize, reg_solve
from .stages import BBAR_NORMS

DEGENERATE_TOL = 1e-12
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Strictly decreasing positive regularization values."""
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("grid must not be empty")
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError("grid values must be positive and finite")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid must be strictly decreasing")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]

    @classmethod
    def logspace(cls, points=150, gmax=1.0, gmin=1e-7):
        if points < 1:
            raise ValueError("grid needs at least one point")
        if points == 1:
            return cls((gmax,))
        if not gmax > gmin > 0:
            raise ValueError("need grid-max > grid-min > 0")
        return cls(tuple(np.logspace(np.log10(gmax), np.log10(gmin), points)))


def default_grid():
    return Grid.logspace()


@dataclass(frozen=True)
class TuneReport:
    param: str
    grid: tuple
    losses: np.ndarray
    selected: float
    note: str = ""
    skipped: tuple = field(default_factory=tuple)

    def rows(self):
        for lam, loss in zip(self.grid, self.losses):
            yield (self.param, repr(float(lam)), repr(float(loss)),
                   "1" if lam == self.selected else "0")

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["param", "lambda", "loss", "selected"])
        wr.writerows(self.rows())
        return buf.getvalue()


class DegenerateLoocvError(ValueError):
    """No grid point has a usable leave-one-out diagonal."""


def select_on_grid(param, grid, losses, skipped=()):
    """Largest lambda among minimizers within 1e-12 relative loss."""
    losses = np.asarray(losses, dtype=np.float64)
    ok = np.isfinite(losses)
    if not ok.any():
        raise DegenerateLoocvError(f"{param}: every grid point was skipped")
    best = losses[ok].min()
    tied = ok & (losses <= best + TIE_RTOL * abs(best))
    idx = int(np.flatnonzero(tied)[0])  # grid is decreasing
    note = f"{int(tied.sum())} tied minimizer(s); largest chosen" if tied.sum() > 1 else ""
    if skipped:
        note = (note + "; " if note else "") + f"{len(skipped)} degenerate point(s) skipped"
    return TuneReport(param, tuple(grid), losses, float(grid[idx]), note, tuple(skipped))


def loocv_losses(k_in, k_target, grid):
    """Leave-one-out losses of ridge regression with an RKHS-valued target.

    Loss(lam) = (1/n) sum_i [H K_t H]_ii / H_ii^2 with
    H = I - K (K + n lam I)^{-1}. H is diagonalized once through the
    eigendecomposition of K; eigenvalues at the round-off floor
    (<= n*eps*max eigenvalue) are treated as exact zeros, whose directions
    H maps to themselves. Returns (losses, skipped lambdas); skipped points
    have NaN loss.
    """
    k_in = 0.5 * (k_in + k_in.T)
    n = k_in.shape[0]
    evals, Q = linalg.eigh(k_in)
    top = max(evals[-1], 0.0)
    keep = evals > n * np.finfo(float).eps * top
    Q = Q[:, keep]
    ev = evals[keep]
    X = Q.T @ k_target                      # r x n
    Kt = X @ Q                              # r x r
    Kt = 0.5 * (Kt + Kt.T)
    if Q.shape[1] < n:
        # parts living in the null directions of K
        d_perp = 1.0 - np.einsum("ij,ij->i", Q, Q)
        QKt = Q @ Kt
        d_pkp = (np.diag(k_target) - 2 * np.einsum("ij,ji->i", Q, X)
                 + np.einsum("ij,ij->i", QKt, Q))
        Y = X - Kt @ Q.T                    # Q^T K P_perp
    else:
        d_perp = np.zeros(n)
        d_pkp = np.zeros(n)
        Y = None
    Q2 = Q * Q
    losses = np.full(len(grid), np.nan)
    skipped = []
    for g, lam in enumerate(grid):
        h = n * lam / (ev + n * lam)
        hd = Q2 @ h + d_perp
        if np.any(np.abs(hd) < DEGENERATE_TOL):
            skipped.append(float(lam))
            continue
        quad = np.einsum("ij,ij->i", Q @ (h[:, None] * Kt * h[None, :]), Q)
        num = quad + d_pkp
        if Y is not None:
            num += 2 * np.einsum("ij,ji->i", Q * h, Y)
        losses[g] = np.mean(num / hd ** 2)
    return losses, skipped


def loocv_lambda1(stage1, kcfg, grid):
    """First-stage lam1 by leave-one-out over (W, A) -> phi(Z)."""
    if stage1.n < 3:
        raise ValueError("leave-one-out tuning needs n >= 3")
    k_in = kcfg.w(stage1.w, stage1.w) * kcfg.a(stage1.a, stage1.a)
    losses, skipped = loocv_losses(k_in, kcfg.z(stage1.z, stage1.z), grid)
    return select_on_grid("lambda1", grid, losses, skipped)


def loocv_lambda3(data, kcfg, grid):
    """Third-stage lam3 by leave-one-out over A -> y*phi(Z)."""
    if data.n < 3:
        raise ValueError("leave-one-out tuning needs n >= 3")
    y = data.y[:, 0]
    target = kcfg.z(data.z, data.z) * np.outer(y, y)
    losses, skipped = loocv_losses(kcfg.a(data.a, data.a), target, grid)
    return select_on_grid("lambda3", grid, losses, skipped)


def loocv_zeta(data, kcfg, grid, param="zeta"):
    """CME regularizer of W given A by leave-one-out."""
    if data.n < 3:
        raise ValueError("leave-one-out tuning needs m >= 3")
    losses, skipped = loocv_losses(kcfg.a(data.a, data.a),
                                   kcfg.w(data.w, data.w), grid)
    return select_on_grid(param, grid, losses, skipped)


# ------------------------------------------------------------------ lam2

@dataclass(frozen=True)
class SurrogateLoss:
    """Hold-out loss on stage 1 plus the degrees-of-freedom penalty.

    value(alpha, lam2) = k^2/n ||V^T alpha||^2 - 2 k alpha^T v + penalty(lam2)
    """
    V: np.ndarray
    v: np.ndarray
    G: np.ndarray
    sv2: np.ndarray
    sigma2: float
    k: float = 1.0

    def holdout(self, alpha):
        n = self.V.shape[1]
        r = self.V.T @ alpha
        return self.k ** 2 * (r @ r) / n - 2 * self.k * (alpha @ self.v)

    def penalty(self, lam2):
        m = self.G.shape[0] - 1
        return 2 * self.sigma2 / m * np.sum(self.sv2 / (self.sv2 + m * lam2))

    def value(self, alpha, lam2):
        return self.holdout(alpha) + self.penalty(lam2)


def _holdout_blocks(stage1fit, stage1, stage2, B, other, c_fit, c_pair):
    """V ((m+1) x n) and v (m+1) from the stage-1 projections."""
    kcfg = stage1fit.kcfg
    k_2a = kcfg.a(stage2.a, stage1.a)                # m x n
    kzc = stage1fit.k_zz @ c_fit
    V = np.vstack([(B.T @ kzc) * k_2a,
                   ((other.T @ kzc) * k_2a).mean(axis=0)[None, :]])
    kzp = stage1fit.k_zz @ c_pair
    v = np.concatenate([((B.T @ kzp) * k_2a).mean(axis=1),
                        [((other.T @ kzp) * k_2a).mean()]])
    return V, v


def _squared_singular_values(G):
    m = G.shape[0] - 1
    L = G[:m, :]
    return np.clip(linalg.eigvalsh(L @ L.T), 0.0, None)


def _stage1_projections(stage1fit, stage1):
    if stage1.n < 2:
        raise ValueError("hold-out loss needs n >= 2")
    kcfg = stage1fit.kcfg
    k_w = kcfg.w(stage1.w, stage1.w)
    k_a = kcfg.a(stage1.a, stage1.a)
    c_fit = reg_solve(stage1fit.factor, k_w * k_a)
    return k_w, k_a, c_fit


def surrogate_ate(stage1fit, stage1, stage2, sigma2=1.0, bbar_norm="m-1", system=None):
    if bbar_norm not in BBAR_NORMS:
        raise ValueError(f"bbar_norm must be one of {BBAR_NORMS}")
    sys_ = system if system is not None else second_stage_system(stage1fit, stage2, bbar_norm)
    k_w, k_a, c_fit = _stage1_projections(stage1fit, stage1)
    n = stage1.n
    c_bar = reg_solve(stage1fit.factor, (k_w.sum(axis=1, keepdims=True) - k_w) * k_a)
    c_bar /= (n - 1) if bbar_norm == "m-1" else n
    V, v = _holdout_blocks(stage1fit, stage1, stage2, sys_.B, sys_.other, c_fit, c_bar)
    return SurrogateLoss(V, v, sys_.G, _squared_singular_values(sys_.G), float(sigma2))


def surrogate_att(stage1fit, stage1, stage2, a_prime, zeta, zeta2, sigma2=1.0,
                  system=None, theta=None):
    kcfg = stage1fit.kcfg
    d_a = stage2.a.shape[1]
    sys_ = system if system is not None else att_system(stage1fit, stage2, a_prime,
                                                        zeta, theta)[0]
    k_w, k_a, c_fit = _stage1_projections(stage1fit, stage1)
    theta2 = cme_weights_stage1(stage1, a_prime, zeta2, kcfg.a)
    rhs = (k_w @ theta2[:, None] - k_w * theta2[None, :]) * k_a
    c_tilde = reg_solve(stage1fit.factor, rhs)
    V, v = _holdout_blocks(stage1fit, stage1, stage2, sys_.B, sys_.other, c_fit, c_tilde)
    k = kernel_at(kcfg.a, a_prime, d_a)
    return SurrogateLoss(V, v, sys_.G, _squared_singular_values(sys_.G), float(sigma2), k)


def cme_weights_stage1(stage1, a_prime, zeta2, kernel_a):
    """(K_AA + n zeta2 I)^{-1} K_Aa' on first-stage treatments."""
    ap = as_treatment_point(a_prime, stage1.a.shape[1])
    fac = reg_factorize(kernel_a(stage1.a, stage1.a), stage1.n * float(zeta2))
    return reg_solve(fac, kernel_a(stage1.a, ap))[:, 0]


def _tune_lambda2(sur, grid, param):
    alphas = alpha_path(sur.G, list(grid), sur.k)
    losses = np.array([sur.value(al, lam) for al, lam in zip(alphas, grid)])
    return select_on_grid(param, grid, losses)


def tune_lambda2_ate(stage1fit, stage1, stage2, grid, sigma2=1.0, bbar_norm="m-1",
                     system=None):
    """Second-stage lam2 for the dose-response bridge."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    sur = surrogate_ate(stage1fit, stage1, stage2, sigma2, bbar_norm, system)
    return _tune_lambda2(sur, grid, "lambda2")


def tune_lambda2_att(stage1fit, stage1, stage2, a_prime, zeta, grid, sigma2=1.0,
                     zeta2=None, system=None):
    """Second-stage lam2 for the conditional dose-response at a_prime.

    zeta2 (the stage-1 CME regularizer) defaults to the leave-one-out
    choice on stage-1 data over `grid`.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    if zeta2 is None:
        zeta2 = loocv_zeta(stage1, stage1fit.kcfg, grid, "zeta2").selected
    sur = surrogate_att(stage1fit, stage1, stage2, a_prime, zeta, zeta2, sigma2, system)
    return _tune_lambda2(sur, grid, "lambda2")
