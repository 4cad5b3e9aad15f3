"""Dense matrix primitives shared by the estimators.

Matrices are plain float64 numpy arrays. Anything cached inside a fit is
marked read-only so fits can be shared between workers without copies.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

ASYM_TOL = 1e-10
JITTER_START = 1e-10
JITTER_STOP = 1e-4


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Factorization failed even after the jitter policy was exhausted."""


def as_matrix(x, name="matrix"):
    """Return `x` as a 2-D float64 array; vectors become columns."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None]
    elif x.ndim != 2:
        raise DimensionError(f"{name} must be at most 2-D, got shape {x.shape}")
    return x


def frozen(x):
    """Read-only view of an array."""
    x = np.asarray(x)
    x.setflags(write=False)
    return x


def hadamard(a, b):
    """Entrywise product of two equally shaped matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def symmetrize(x, tol=ASYM_TOL):
    """Return (x + x.T)/2, refusing matrices that are far from symmetric."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {x.shape}")
    fro = np.linalg.norm(x)
    if np.linalg.norm(x - x.T) > tol * max(fro, np.finfo(float).tiny):
        raise DimensionError("matrix is not symmetric within tolerance")
    return 0.5 * (x + x.T)


@dataclass(frozen=True)
class RegFactorization:
    """Cholesky factor of (base + shift*I), possibly with extra jitter.

    `jitter` is the diagonal loading that was actually needed on top of
    `shift` (0.0 in the common case).
    """
    base: np.ndarray
    shift: float
    factor: tuple
    jitter: float = 0.0

    @property
    def n(self):
        return self.base.shape[0]


def reg_factorize(base, shift):
    """Factorize (base + shift*I) with escalating jitter on failure.

    Jitter starts at 1e-10*trace(base)/n and grows by 10x up to
    1e-4*trace(base)/n before giving up.
    """
    base = symmetrize(as_matrix(base, "base"))
    shift = float(shift)
    if not np.isfinite(shift) or shift < 0:
        raise ValueError(f"shift must be a finite nonnegative scalar, got {shift}")
    n = base.shape[0]
    scale = np.trace(base) / n if n else 0.0
    if not scale > 0:
        scale = 1.0
    eye = np.eye(n)
    jitters = [0.0]
    j = JITTER_START
    while j <= JITTER_STOP * (1 + 1e-9):
        jitters.append(j * scale)
        j *= 10
    for jit in jitters:
        try:
            c = linalg.cho_factor(base + (shift + jit) * eye, lower=True,
                                  check_finite=True)
        except linalg.LinAlgError:
            continue
        if np.all(np.diag(c[0]) > 0):
            return RegFactorization(frozen(base), shift, c, jit)
    raise SingularMatrixError(
        f"factorization of base + {shift:g}*I failed after jitter up to "
        f"{jitters[-1]:.3g}")


def reg_solve(f, rhs):
    """Solve (base + shift*I) X = rhs using a cached factorization."""
    rhs = np.asarray(rhs, dtype=np.float64)
    vec = rhs.ndim == 1
    r = rhs[:, None] if vec else rhs
    if r.ndim != 2 or r.shape[0] != f.n:
        raise DimensionError(
            f"rhs has {r.shape[0] if r.ndim else 0} rows, factor has {f.n}")
    x = linalg.cho_solve(f.factor, r, check_finite=False)
    return x[:, 0] if vec else x


def residual_norm(f, x, rhs):
    """Frobenius residual of (base + shift*I) x - rhs."""
    x = np.asarray(x, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    return np.linalg.norm(f.base @ x + f.shift * x - rhs)
