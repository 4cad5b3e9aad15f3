"""Datasets, CSV I/O, standardization, splitting, synthetic generators and
Monte Carlo ground truth.

Random numbers come from numpy's Philox counter-based generator. Every
variable draws from its own substream keyed by (seed, variable name), so
adding a variable to a generator never shifts the draws of another one.
"""
import csv
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, frozen

ROLES = ("a", "y", "z", "w")
# Monte Carlo truths use their own seed so they never reuse training draws
MC_SEED = 987_654_321
GENERATORS = ("lowdim", "lowdim_unconfounded", "setting1", "setting2",
              "setting3", "setting4", "setting5", "setting6")


class SchemaError(ValueError):
    """CSV header does not describe a dataset."""


class CsvParseError(ValueError):
    """CSV body could not be parsed."""


class UnknownGeneratorError(ValueError):
    pass


class InsufficientOverlapError(ValueError):
    """Too little kernel weight near the conditioning treatment."""


def substream(seed, name):
    """Independent Philox generator for one (seed, variable) pair."""
    seed = int(seed)
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, key])))


def _block(x, n, name):
    x = np.array(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != n:
        raise DimensionError(f"{name} must have {n} rows, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return frozen(x)


@dataclass(frozen=True)
class Dataset:
    """Observed treatment a, outcome y, treatment proxy z, outcome proxy w."""
    a: np.ndarray
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.a).shape[0] if np.ndim(self.a) else 0
        for role in ROLES:
            object.__setattr__(self, role, _block(getattr(self, role), n, role))
        if self.y.shape[1] != 1:
            raise DimensionError("y must be a single column")

    @property
    def n(self):
        return self.a.shape[0]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.a[idx], self.y[idx], self.z[idx], self.w[idx])

    def columns(self):
        """Header names following the CSV convention."""
        names = []
        for role in ROLES:
            d = getattr(self, role).shape[1]
            if role == "y" or (role == "a" and d == 1):
                names.append(role)
            else:
                names += [f"{role}_{k}" for k in range(d)]
        return names

    def matrix(self):
        return np.hstack([self.a, self.y, self.z, self.w])


def concat(*parts):
    return Dataset(*(np.vstack([getattr(p, r) for p in parts]) for r in ROLES))


@dataclass(frozen=True)
class LatentTrace:
    """Hidden variables of a synthetic draw, kept away from the estimators."""
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def matrix(self):
        return np.column_stack([self.values[k] for k in sorted(self.values)])


# ---------------------------------------------------------------- CSV I/O

def _role_columns(header):
    cols = {}
    for j, name in enumerate(header):
        name = name.strip()
        if name in ("a", "y"):
            cols.setdefault(name, []).append((0, j))
            continue
        role, _, idx = name.partition("_")
        if role in ("a", "z", "w") and idx.isdigit():
            cols.setdefault(role, []).append((int(idx), j))
    for role in ROLES:
        if role not in cols:
            raise SchemaError(f"missing required column {role!r}")
        ks = sorted(k for k, _ in cols[role])
        if ks != list(range(len(ks))):
            raise SchemaError(f"columns for {role!r} must be numbered 0..k-1")
    if len(cols["y"]) != 1:
        raise SchemaError("exactly one 'y' column is required")
    if len(cols["a"]) > 1 and any(header[j].strip() == "a" for _, j in cols["a"]):
        raise SchemaError("use either 'a' or 'a_0..', not both")
    return {r: [j for _, j in sorted(cols[r])] for r in ROLES}


def load_csv(path):
    """Read a dataset with header `a|a_0.., y, z_0.., w_0..`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file, header row required") from None
        cols = _role_columns(header)
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvParseError(
                    f"row {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise CsvParseError(f"row {lineno}: non-numeric cell ({exc})") from None
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    if not np.all(np.isfinite(data)):
        raise CsvParseError("non-finite value in data")
    return Dataset(*(data[:, cols[r]] for r in ROLES))


def format_float(x):
    return repr(float(x))


def write_csv(path, d):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(d.columns())
        for row in d.matrix():
            wr.writerow([format_float(v) for v in row])


# ------------------------------------------------------- standardization

@dataclass(frozen=True)
class Standardizer:
    """Per-column mean and population std for each role (y optional)."""
    mean: dict
    std: dict

    def apply(self, role, x):
        if role not in self.mean:
            return np.asarray(x, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean[role]) / self.std[role]

    def invert(self, role, x):
        if role not in self.mean:
            return np.asarray(x, dtype=np.float64)
        return np.asarray(x, dtype=np.float64) * self.std[role] + self.mean[role]

    def transform(self, d):
        return Dataset(*(self.apply(r, getattr(d, r)) for r in ROLES))

    def inverse(self, d):
        return Dataset(*(self.invert(r, getattr(d, r)) for r in ROLES))


def fit_standardizer(d, standardize_y):
    if d.n < 2:
        raise ValueError("standardization needs at least 2 rows")
    mean, std = {}, {}
    for role in ROLES:
        if role == "y" and not standardize_y:
            continue
        x = getattr(d, role)
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        # constant columns keep std 1 and map to zeros
        sd = np.where(sd > 0, sd, 1.0)
        mean[role] = frozen(mu)
        std[role] = frozen(sd)
    return Standardizer(mean, std)


def standardize(d, standardize_y):
    """Center and scale each column (population std)."""
    s = fit_standardizer(d, standardize_y)
    return s.transform(d), s


def destandardize(d, s):
    return s.inverse(d)


# -------------------------------------------------------------- splitting

@dataclass(frozen=True)
class SplitDataset:
    stage1: Dataset
    stage2: Dataset
    index1: np.ndarray
    index2: np.ndarray


def split_two_stage(d, seed):
    """Random halves; stage 1 gets ceil(n/2) rows."""
    if d.n < 2:
        raise ValueError("splitting needs at least 2 rows")
    perm = substream(seed, "split").permutation(d.n)
    n1 = (d.n + 1) // 2
    i1, i2 = perm[:n1], perm[n1:]
    return SplitDataset(d.take(i1), d.take(i2), frozen(i1), frozen(i2))


# ------------------------------------------------------------- generators

def logistic_link(x):
    """0.8 * sigmoid(x) + 0.1."""
    return 0.8 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64))) + 0.1


_BETA = {1: (5, 4), 2: (5, 4), 3: (8, 4), 4: (8, 4), 5: (3, 5), 6: (3, 5)}
_MIX_STD = math.sqrt(0.1)


def _mixture(u, n, seed, name):
    """(1-U)*N(-1, 0.1) + U*N(1, 0.1), the second argument is a variance."""
    first = substream(seed, name + "1").normal(-1.0, _MIX_STD, n)
    second = substream(seed, name + "2").normal(1.0, _MIX_STD, n)
    return (1 - u) * first + u * second


def _lowdim_latent(n, seed):
    u1 = substream(seed, "u1").uniform(-1.0, 2.0, n)
    u2 = substream(seed, "u2").uniform(0.0, 1.0, n) - ((u1 >= 0) & (u1 <= 1))
    return {"u_0": u1, "u_1": u2}


def _lowdim_mean(a, lat):
    return 3 * np.cos(2 * (0.3 * lat["u_1"] + 0.3 * lat["u_0"] + 0.2) + 1.5 * a)


def _lowdim(n, seed, confounded=True):
    lat = _lowdim_latent(n, seed)
    u1, u2 = lat["u_0"], lat["u_1"]
    w = np.column_stack([u2 + substream(seed, "w0").uniform(-1, 1, n),
                         u1 + substream(seed, "w1").normal(0, 1, n)])
    z = np.column_stack([u2 + substream(seed, "z0").normal(0, 1, n),
                         u1 + substream(seed, "z1").uniform(-1, 1, n)])
    if confounded:
        base = u1
    else:
        # same marginal law for the treatment, but independent of U
        base = substream(seed, "a_base").uniform(-1.0, 2.0, n)
    a = base + substream(seed, "a").normal(0, 1, n)
    y = _lowdim_mean(a, lat) + substream(seed, "y").normal(0, 1, n)
    return a, y, z, w, lat


def _ablation(setting, n, seed):
    p, q = _BETA[setting]
    u = substream(seed, "u").beta(p, q, n)
    unif1 = substream(seed, "unif1").uniform(0, 1, n)
    unif100 = substream(seed, "unif100").uniform(0, 100, n)
    if setting == 1:
        w = logistic_link(u) + unif1
        z = _mixture(u, n, seed, "z") + unif100
    elif setting == 2:
        z = logistic_link(u) + unif1
        w = _mixture(u, n, seed, "w") + unif100
    elif setting == 3:
        w = u + unif1
        z = logistic_link(_mixture(u, n, seed, "z")) + unif100
    elif setting == 4:
        z = u + unif1
        w = logistic_link(_mixture(u, n, seed, "w")) + unif100
    elif setting == 5:
        w = -u ** 2 + unif1
        z = logistic_link(_mixture(u, n, seed, "z")) + unif100
    else:
        z = -u ** 2 + unif1
        w = logistic_link(_mixture(u, n, seed, "w") + unif100)
    noise_a = substream(seed, "a").uniform(0, 1, n)
    if setting <= 4:
        a = 0.1 * u + 0.1 * z + noise_a
    else:
        a = 0.25 * np.sqrt(np.abs(u)) - 0.2 * z + noise_a
    lat = {"u_0": u, "w_0": w}
    y = _ablation_mean(setting, a, lat)
    return a, y, z, w, {"u_0": u}, lat


def _ablation_mean(setting, a, lat):
    u = lat["u_0"]
    if setting <= 4:
        return (2 * u - 1) + np.cos(1.5 * a)
    w = lat["w_0"]
    if setting == 5:
        return 3 * w - 0.1 * a - np.cos(0.5 * a + 5 * u)
    return 3 * w - 2 * a - np.cos(10 * a + 5 * u)


def generate_lowdim(n, seed, confounded=True):
    """Two-dimensional proxies, scalar treatment, cosine outcome."""
    a, y, z, w, lat = _lowdim(int(n), seed, confounded)
    return Dataset(a, y, z, w), LatentTrace({k: frozen(v) for k, v in lat.items()})


def generate_ablation(setting, n, seed):
    """Scalar ablation settings 1..6 with Beta-distributed confounder."""
    if setting not in _BETA:
        raise UnknownGeneratorError(f"setting must be in 1..6, got {setting!r}")
    a, y, z, w, lat, _ = _ablation(setting, int(n), seed)
    return Dataset(a, y, z, w), LatentTrace({k: frozen(v) for k, v in lat.items()})


def _setting_id(gen):
    if isinstance(gen, str) and gen.startswith("setting") and gen[7:].isdigit():
        s = int(gen[7:])
        if s in _BETA:
            return s
    return None


def generate(gen, n, seed):
    if gen == "lowdim":
        return generate_lowdim(n, seed)
    if gen == "lowdim_unconfounded":
        return generate_lowdim(n, seed, confounded=False)
    s = _setting_id(gen)
    if s is None:
        raise UnknownGeneratorError(f"unknown generator {gen!r}")
    return generate_ablation(s, n, seed)


# ----------------------------------------------------- Monte Carlo truths

def _mc_draws(gen, n_mc, seed):
    """(treatment, latent dict, structural mean fn) for n_mc joint draws."""
    if gen in ("lowdim", "lowdim_unconfounded"):
        a, _, _, _, lat = _lowdim(n_mc, seed, gen == "lowdim")
        return a, lat, _lowdim_mean
    s = _setting_id(gen)
    if s is None:
        raise UnknownGeneratorError(f"unknown generator {gen!r}")
    a, _, _, _, _, lat = _ablation(s, n_mc, seed)
    return a, lat, lambda t, lt: _ablation_mean(s, t, lt)


def mc_ground_truth_ate(gen, a, n_mc=1_000_000, seed=MC_SEED):
    """Monte Carlo E_U[E[Y | do(a), U]] and its standard error.

    `a` may be a scalar or an array of treatment values (original units).
    Returns (value, se) with the shape of `a`.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    _, lat, mean_fn = _mc_draws(gen, int(n_mc), seed)
    grid = np.atleast_1d(np.asarray(a, dtype=np.float64))
    val = np.empty(grid.shape)
    se = np.empty(grid.shape)
    for i, t in enumerate(grid.ravel()):
        f = mean_fn(t, lat)
        val.flat[i] = f.mean()
        se.flat[i] = f.std() / math.sqrt(f.size)
    if np.ndim(a) == 0:
        return float(val[0]), float(se[0])
    return val, se


def mc_ground_truth_att(gen, a, a_prime, n_mc=1_000_000, bandwidth=0.05, seed=MC_SEED):
    """Monte Carlo E[E[Y | do(a), U] | A = a_prime] by kernel weighting.

    Draws (U, A) jointly and weights each draw by a Gaussian kernel in
    A - a_prime. Returns (value, se) with the shape of `a`.
    """
    if n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    treat, lat, mean_fn = _mc_draws(gen, int(n_mc), seed)
    wts = np.exp(-0.5 * ((treat - float(a_prime)) / bandwidth) ** 2)
    total = wts.sum()
    if total < 1e-6 * wts.size:
        raise InsufficientOverlapError(
            f"kernel weight near a'={a_prime} is {total:.3g} of {wts.size} draws")
    grid = np.atleast_1d(np.asarray(a, dtype=np.float64))
    val = np.empty(grid.shape)
    se = np.empty(grid.shape)
    for i, t in enumerate(grid.ravel()):
        f = mean_fn(t, lat)
        m = wts @ f / total
        val.flat[i] = m
        se.flat[i] = math.sqrt(wts ** 2 @ (f - m) ** 2) / total
    if np.ndim(a) == 0:
        return float(val[0]), float(se[0])
    return val, se
