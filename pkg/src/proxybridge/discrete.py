"""Exact finite-alphabet oracle.

A joint over (U, A, Y, Z, W) factorizing as
p(u) p(a|u) p(y|u,a) p(z|u,a) p(w|u). The dose-response is available both
directly (summing over the hidden U) and through the proxy formula that
only touches observable margins:

    f(a) = y^T P(Y,Z|a) P(Z|W,a)^{-T} [p(a) / p(a|w)]_w,

with [P(Z|W,a)]_{zw} = p(z|w,a).
"""
import csv
import io
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, LatentTrace, substream
from .numerics import frozen

AXES = ("u", "a", "y", "z", "w")
FACTOR_TOL = 1e-12


class UndefinedConditionalError(ValueError):
    pass


class CompletenessError(np.linalg.LinAlgError):
    """The proxy matrix P(Z|W,a) is singular."""


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteJoint:
    """Probability table p[u, a, y, z, w] and the numeric value of each y."""
    p: np.ndarray
    y_values: np.ndarray = None

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        if p.ndim != 5:
            raise ShapeError(f"joint table must be 5-D, got {p.ndim}-D")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("joint table must be nonnegative and sum to 1")
        yv = np.arange(p.shape[2], dtype=np.float64) if self.y_values is None \
            else np.asarray(self.y_values, dtype=np.float64)
        if yv.shape != (p.shape[2],):
            raise ShapeError("one y value per outcome category required")
        object.__setattr__(self, "p", frozen(p))
        object.__setattr__(self, "y_values", frozen(yv))

    @property
    def cards(self):
        return self.p.shape

    @classmethod
    def from_factors(cls, pu, pa_u, py_ua, pz_ua, pw_u, y_values=None):
        """Assemble from p(u), p(a|u), p(y|u,a), p(z|u,a), p(w|u)."""
        p = np.einsum("u,ua,uay,uaz,uw->uayzw", pu, pa_u, py_ua, pz_ua, pw_u)
        return cls(p, y_values)

    def factors(self):
        """The DAG conditionals recovered from the table (nan where undefined)."""
        p = self.p
        with np.errstate(invalid="ignore", divide="ignore"):
            pu = p.sum(axis=(1, 2, 3, 4))
            pua = p.sum(axis=(2, 3, 4))
            pa_u = pua / pu[:, None]
            py_ua = p.sum(axis=(3, 4)) / pua[:, :, None]
            pz_ua = p.sum(axis=(2, 4)) / pua[:, :, None]
            pw_u = p.sum(axis=(1, 2, 3)) / pu[:, None]
        return pu, pa_u, py_ua, pz_ua, pw_u

    def factorization_residual(self):
        """max |p - product of its own conditionals| over defined cells."""
        rebuilt = np.einsum("u,ua,uay,uaz,uw->uayzw", *self.factors())
        return float(np.nanmax(np.abs(np.where(np.isnan(rebuilt), self.p, rebuilt) - self.p)))

    def observable(self):
        """p(a, y, z, w)."""
        return self.p.sum(axis=0)

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(list(AXES) + ["prob"])
        for idx in np.ndindex(*self.p.shape):
            wr.writerow(list(idx) + [repr(float(self.p[idx]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, y_values=None):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != list(AXES) + ["prob"]:
            raise ValueError("header must be u,a,y,z,w,prob")
        idx = np.array([[int(v) for v in r[:5]] for r in rows[1:] if r], dtype=np.intp)
        prob = np.array([float(r[5]) for r in rows[1:] if r])
        p = np.zeros(tuple(idx.max(axis=0) + 1))
        p[tuple(idx.T)] = prob
        return cls(p, y_values)


def discrete_ground_truth(j, a):
    """sum_u sum_y y p(y|u,a) p(u)."""
    pu, pa_u, py_ua, _, _ = j.factors()
    live = pu > 0
    if np.any(pa_u[live, a] <= 0):
        raise UndefinedConditionalError(f"p(a={a}|u) is zero for some u with p(u) > 0")
    return float(pu[live] @ (py_ua[live, a, :] @ j.y_values))


def proxy_matrix(j, a):
    """[P(Z|W,a)]_{zw} = p(z | w, a)."""
    obs = j.observable()
    pzw = obs[a].sum(axis=0)                 # (z, w)
    pw = pzw.sum(axis=0)
    if np.any(pw <= 0):
        raise UndefinedConditionalError(f"p(w, a={a}) is zero for some w")
    return pzw / pw[None, :]


def discrete_ate_identified(j, a):
    """Dose-response at category a from observable margins only."""
    d_z, d_w = j.cards[3], j.cards[4]
    if d_z != d_w:
        raise ShapeError(f"identification needs |Z| == |W|, got {d_z} and {d_w}")
    obs = j.observable()
    pa = obs.sum(axis=(1, 2, 3))
    if pa[a] <= 0:
        raise UndefinedConditionalError(f"p(a={a}) is zero")
    p_yz = obs[a].sum(axis=2) / pa[a]        # P(Y, Z | a)
    P = proxy_matrix(j, a)
    pw = obs.sum(axis=(0, 1, 2))
    pa_w = obs[a].sum(axis=(0, 1)) / pw      # p(a | w)
    rhs = pa[a] / pa_w
    if np.linalg.matrix_rank(P) == d_z:
        bridge = np.linalg.solve(P.T, rhs)
    else:
        # rank-deficient but consistent systems (e.g. no confounding) still
        # pin the value down; anything else is a completeness failure
        bridge = np.linalg.lstsq(P.T, rhs, rcond=None)[0]
        if np.max(np.abs(P.T @ bridge - rhs)) > 1e-10 * max(1.0, np.abs(rhs).max()):
            raise CompletenessError(f"P(Z|W,a={a}) is singular")
    return float(j.y_values @ p_yz @ bridge)


def discrete_density_ratio(j, w, a):
    """p(w) p(a) / p(w, a)."""
    obs = j.observable()
    pwa = obs.sum(axis=(1, 2))               # (a, w)
    if pwa[a, w] <= 0:
        raise UndefinedConditionalError(f"p(w={w}, a={a}) is zero")
    return float(pwa[:, w].sum() * pwa[a, :].sum() / pwa[a, w])


def _conditional(rng, shape, floor):
    x = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    x = np.maximum(x, floor)
    return x / x.sum(axis=-1, keepdims=True)


def random_joint(seed, cards=(3, 3, 3, 3, 3), floor=0.02, max_cond=1e4,
                 max_tries=10_000):
    """Random DAG-respecting joint with well-conditioned P(Z|W,a).

    Conditionals are Dirichlet(1) draws floored at `floor` and
    renormalized; draws are rejected until cond(P(Z|W,a)) <= max_cond for
    every a.
    """
    d_u, d_a, d_y, d_z, d_w = cards
    rng = substream(seed, "joint")
    for _ in range(max_tries):
        j = DiscreteJoint.from_factors(
            _conditional(rng, (d_u,), floor),
            _conditional(rng, (d_u, d_a), floor),
            _conditional(rng, (d_u, d_a, d_y), floor),
            _conditional(rng, (d_u, d_a, d_z), floor),
            _conditional(rng, (d_u, d_w), floor))
        if d_z != d_w:
            return j
        if all(np.linalg.cond(proxy_matrix(j, a)) <= max_cond for a in range(d_a)):
            return j
    raise RuntimeError("no well-conditioned joint found")


@dataclass(frozen=True)
class CodeBook:
    """Real embedding of each category, per variable."""
    values: dict

    def __post_init__(self):
        for role, v in self.values.items():
            v = np.asarray(v, dtype=np.float64)
            if len(np.unique(v)) != len(v):
                raise ValueError(f"codebook for {role!r} is not injective")

    @classmethod
    def integers(cls, cards):
        return cls({r: np.arange(d, dtype=np.float64) for r, d in zip(AXES, cards)})

    def embed(self, role, idx):
        return np.asarray(self.values[role], dtype=np.float64)[idx]


def sample_discrete(j, n, seed, cb=None):
    """n i.i.d. rows embedded through the codebook; also returns the U trace."""
    cb = cb if cb is not None else CodeBook.integers(j.cards)
    flat = substream(seed, "discrete").choice(j.p.size, size=int(n), p=j.p.ravel())
    u, a, y, z, w = np.unravel_index(flat, j.cards)
    ds = Dataset(cb.embed("a", a), j.y_values[y], cb.embed("z", z), cb.embed("w", w))
    return ds, LatentTrace({"u_0": frozen(u.astype(np.float64))})
