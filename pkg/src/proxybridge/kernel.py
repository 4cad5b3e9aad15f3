"""Gaussian kernels and median-heuristic lengthscales."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .numerics import DimensionError, as_matrix


class InsufficientDataError(ValueError):
    """Too few points to estimate a lengthscale."""


@dataclass(frozen=True)
class LengthScales:
    """Isotropic (one value) or columnwise (one value per input dimension)."""
    mode: str
    values: tuple

    def __post_init__(self):
        if self.mode not in ("isotropic", "columnwise"):
            raise ValueError(f"unknown lengthscale mode {self.mode!r}")
        vals = tuple(float(v) for v in np.atleast_1d(self.values))
        if not vals or not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError(f"lengthscales must be positive and finite: {vals}")
        if self.mode == "isotropic" and len(vals) != 1:
            raise ValueError("isotropic lengthscale takes exactly one value")
        object.__setattr__(self, "values", vals)

    @classmethod
    def isotropic(cls, value):
        return cls("isotropic", (value,))

    @classmethod
    def columnwise(cls, values):
        return cls("columnwise", tuple(values))

    def scaled_inputs(self, x):
        """Divide each column by its lengthscale."""
        x = as_matrix(x)
        if self.mode == "columnwise" and x.shape[1] != len(self.values):
            raise DimensionError(
                f"{len(self.values)} lengthscales for {x.shape[1]} columns")
        return x / np.asarray(self.values)


def _half_median_sqdist(points):
    d2 = pdist(points, "sqeuclidean")
    # np.median averages the two central values for even counts
    med = float(np.median(d2))
    return 0.5 * med


def median_heuristic(points):
    """l^2 = half the median pairwise squared distance; l = 1 if that is 0."""
    x = as_matrix(points, "points")
    if x.shape[0] < 2:
        raise InsufficientDataError("median heuristic needs at least 2 points")
    l2 = _half_median_sqdist(x)
    return LengthScales.isotropic(np.sqrt(l2) if l2 > 0 else 1.0)


def median_heuristic_columnwise(points):
    """Median heuristic applied to each column separately."""
    x = as_matrix(points, "points")
    if x.shape[0] < 2:
        raise InsufficientDataError("median heuristic needs at least 2 points")
    vals = []
    for k in range(x.shape[1]):
        l2 = _half_median_sqdist(x[:, k:k + 1])
        vals.append(np.sqrt(l2) if l2 > 0 else 1.0)
    return LengthScales.columnwise(vals)


def gram(x, y, ls):
    """Gaussian gram matrix exp(-sum_k (x_k - y_k)^2 / (2 l_k^2))."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"x has {x.shape[1]} columns, y has {y.shape[1]}")
    d2 = cdist(ls.scaled_inputs(x), ls.scaled_inputs(y), "sqeuclidean")
    return np.exp(-0.5 * d2)


@dataclass(frozen=True)
class GaussianKernel:
    """Gaussian kernel bound to a set of lengthscales."""
    ls: LengthScales

    def __call__(self, x, y):
        return gram(x, y, self.ls)

    def diag(self, x):
        return np.ones(as_matrix(x).shape[0])


@dataclass(frozen=True)
class KernelConfig:
    """One kernel per variable role.

    Each role holds a callable `k(x, y) -> gram` with a `diag(x)` method;
    normally a GaussianKernel.
    """
    a: object
    w: object
    z: object


def kernel_config_from(a, w, z, columnwise_w=False):
    """Median-heuristic Gaussian kernels for pooled role samples.

    `columnwise_w` selects the per-dimension product kernel for W.
    """
    lw = median_heuristic_columnwise(w) if columnwise_w else median_heuristic(w)
    return KernelConfig(a=GaussianKernel(median_heuristic(a)),
                        w=GaussianKernel(lw),
                        z=GaussianKernel(median_heuristic(z)))


def lengthscale_values(kcfg):
    """Role -> tuple of lengthscales, for reporting."""
    out = {}
    for role in ("a", "w", "z"):
        k = getattr(kcfg, role)
        ls = getattr(k, "ls", None)
        out[role] = ls.values if ls is not None else ()
    return out
