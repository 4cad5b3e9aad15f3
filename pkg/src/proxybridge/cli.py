"""Command-line entry point.

    proxybridge tune|fit|curve|benchmark|oracle [options]

Outputs land in <out>/<command>/<config hash>/ so a rerun of the same
configuration overwrites the same files with the same bytes. Exit codes:
0 success, 2 configuration error, 3 some seeds failed, 4 oracle failures.
"""
import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .ate import stationarity_ok
from .dataset import (GENERATORS, generate, load_csv, mc_ground_truth_ate,
                      mc_ground_truth_att)
from .oracles import SUITES, run_suite
from .pipeline import (PipelineConfig, central_grid, fit_ate_tuned, fit_att_tuned,
                       full_grid, predict_curve, prepare, tune_shared)
from .stages import BBAR_NORMS
from .tuning import Grid

log = logging.getLogger("proxybridge")

COMMANDS = ("tune", "fit", "curve", "benchmark", "oracle")
EXIT_OK, EXIT_CONFIG, EXIT_SEEDS, EXIT_ORACLE = 0, 2, 3, 4
DEFAULT_N = {"oracle:loocv": 10, "oracle:reductions": 2000}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    generator: str = "lowdim"
    csv_path: str = None
    csv_digest: str = None
    n: int = 500
    seeds: int = 1
    base_seed: int = 0
    estimand: str = "ate"
    a_prime: tuple = field(default_factory=tuple)
    sigma2: float = 1.0
    grid_points: int = 150
    grid_max: float = 1.0
    grid_min: float = 1e-7
    bbar_norm: str = "m-1"
    stage3_data: str = "both"
    standardize_y: bool = False
    curve_points: int = 100
    with_truth: bool = False
    n_mc: int = 1_000_000
    suite: str = None
    emit_gnuplot: bool = False
    timings: bool = False

    def digest(self):
        """Hash of every field that can change an output byte."""
        payload = {k: v for k, v in asdict(self).items() if k != "csv_path"}
        blob = json.dumps(payload, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def seed_list(self):
        return [self.base_seed + i for i in range(self.seeds)]

    def pipeline(self):
        return PipelineConfig(
            grid=Grid.logspace(self.grid_points, self.grid_max, self.grid_min),
            sigma2=self.sigma2, bbar_norm=self.bbar_norm,
            stage3_data=self.stage3_data, standardize_y=self.standardize_y,
            columnwise_w=self.generator.startswith("lowdim"))


# ------------------------------------------------------------------ parsing

def build_parser():
    p = argparse.ArgumentParser(prog="proxybridge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--generator", default="lowdim",
                       choices=[g for g in GENERATORS] + ["csv"])
        s.add_argument("--csv", dest="csv_path")
        s.add_argument("--n", type=int)
        s.add_argument("--seeds", type=int, default=1)
        s.add_argument("--base-seed", type=int, default=0)
        s.add_argument("--estimand", choices=("ate", "att"), default="ate")
        s.add_argument("--a-prime", type=float, nargs="+", default=[])
        s.add_argument("--sigma2", type=float, default=1.0)
        s.add_argument("--grid-points", type=int, default=150)
        s.add_argument("--grid-max", type=float, default=1.0)
        s.add_argument("--grid-min", type=float, default=1e-7)
        s.add_argument("--bbar-norm", choices=BBAR_NORMS, default="m-1")
        s.add_argument("--stage3-data", choices=("both", "stage1", "stage2"), default="both")
        s.add_argument("--standardize-y", choices=("on", "off"), default="off")
        s.add_argument("--jobs", type=int, default=1)
        s.add_argument("--out", default="runs")
        s.add_argument("--emit-gnuplot", action="store_true",
                       help="also write two-column whitespace files")
        s.add_argument("--timings", action="store_true",
                       help="write per-stage wall-clock (not byte-reproducible)")
        s.add_argument("--n-mc", type=int, default=1_000_000,
                       help="Monte Carlo draws for ground truth")
        if name == "curve":
            s.add_argument("--curve-points", type=int, default=100)
            s.add_argument("--with-truth", action="store_true")
        if name == "oracle":
            s.add_argument("--suite", choices=SUITES, required=True)
    return p


def _file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def config_from_args(ns):
    cmd = ns.command
    if ns.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    if ns.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    if ns.sigma2 < 0:
        raise ConfigError("--sigma2 must be nonnegative")
    if ns.n_mc < 100:
        raise ConfigError("--n-mc must be at least 100")
    if ns.grid_points < 1:
        raise ConfigError("--grid-points must be at least 1")
    if ns.grid_points > 1 and not ns.grid_max > ns.grid_min > 0:
        raise ConfigError("--grid-max must exceed --grid-min > 0")
    if ns.grid_points == 1 and not ns.grid_max > 0:
        raise ConfigError("--grid-max must be positive")
    csv_digest = None
    if ns.generator == "csv":
        if not ns.csv_path:
            raise ConfigError("--generator csv needs --csv PATH")
        if not os.path.isfile(ns.csv_path):
            raise ConfigError(f"--csv: no such file {ns.csv_path!r}")
        if cmd == "benchmark":
            raise ConfigError("benchmark needs a synthetic --generator (ground truth)")
        csv_digest = _file_digest(ns.csv_path)
    elif ns.csv_path:
        raise ConfigError("--csv is only valid with --generator csv")
    if ns.estimand == "att" and not ns.a_prime:
        raise ConfigError("--estimand att needs at least one --a-prime")
    if ns.estimand == "ate" and ns.a_prime:
        raise ConfigError("--a-prime is only valid with --estimand att")
    with_truth = getattr(ns, "with_truth", False)
    if with_truth and ns.generator == "csv":
        raise ConfigError("--with-truth needs a synthetic --generator")
    curve_points = getattr(ns, "curve_points", 100)
    if curve_points < 2:
        raise ConfigError("--curve-points must be at least 2")
    suite = getattr(ns, "suite", None)
    n = ns.n if ns.n is not None else DEFAULT_N.get(f"{cmd}:{suite}", 500)
    if n < 4:
        raise ConfigError("--n must be at least 4")
    return ExperimentConfig(
        command=cmd, generator=ns.generator, csv_path=ns.csv_path, csv_digest=csv_digest,
        n=n, seeds=ns.seeds, base_seed=ns.base_seed, estimand=ns.estimand,
        a_prime=tuple(ns.a_prime), sigma2=ns.sigma2, grid_points=ns.grid_points,
        grid_max=ns.grid_max, grid_min=ns.grid_min, bbar_norm=ns.bbar_norm,
        stage3_data=ns.stage3_data, standardize_y=ns.standardize_y == "on",
        curve_points=curve_points, with_truth=with_truth, n_mc=ns.n_mc, suite=suite,
        emit_gnuplot=ns.emit_gnuplot, timings=ns.timings)


# ------------------------------------------------------------------ output

def fmt(x):
    return repr(float(x))


def csv_text(header, rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def gnuplot_text(xs, ys):
    return "".join(f"{fmt(x)} {fmt(y)}\n" for x, y in zip(xs, ys))


def write_atomic(path, text):
    """Write through a temp file in the same directory, then rename."""
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tree(root, files):
    for rel in sorted(files):
        write_atomic(os.path.join(root, rel), files[rel])


def seed_dir(seed):
    return f"seed_{seed:04d}"


def aprime_tag(ap):
    return f"aprime_{ap!r}"


# ------------------------------------------------------------- per seed work

def load_data(cfg, seed):
    if cfg.generator == "csv":
        return load_csv(cfg.csv_path)
    return generate(cfg.generator, cfg.n, seed)[0]


def _tuned(cfg, seed, clock):
    pcfg = cfg.pipeline()
    t0 = time.perf_counter()
    data = load_data(cfg, seed)
    clock["generate"] = time.perf_counter() - t0
    prep = prepare(data, seed, pcfg)
    tuned = tune_shared(prep, pcfg)
    if cfg.estimand == "ate":
        fits = {None: fit_ate_tuned(tuned, pcfg)}
    else:
        fits = fit_att_tuned(tuned, pcfg, list(cfg.a_prime))
    clock.update(tuned.timings)
    return data, prep, tuned, fits


def _tune_files(tuned, cfg):
    rep = tuned.reports
    files = {"lambda1.csv": rep["lambda1"].to_csv(), "lambda3.csv": rep["lambda3"].to_csv()}
    if cfg.estimand == "ate":
        files["lambda2.csv"] = rep["lambda2"].to_csv()
        return files
    rows = []
    for ap in cfg.a_prime:
        rows += [(f"lambda2@{aprime_tag(ap)}",) + r[1:] for r in rep[f"lambda2_att_{ap!r}"].rows()]
    files["lambda2.csv"] = csv_text(["param", "lambda", "loss", "selected"], rows)
    files["zeta.csv"] = csv_text(["param", "lambda", "loss", "selected"],
                                 list(rep["zeta"].rows()) + list(rep["zeta2"].rows()))
    return files


def _fit_summary(tuned, fit, ap):
    rep = tuned.reports
    rows = [("lambda1", fmt(rep["lambda1"].selected)), ("lambda3", fmt(rep["lambda3"].selected)),
            ("lambda2", fmt(fit.lam2))]
    if ap is not None:
        rows += [("a_prime", fmt(ap)), ("zeta", fmt(fit.zeta)),
                 ("zeta2", fmt(rep["zeta2"].selected))]
    rows += [("stationarity_residual", fmt(fit.residual)),
             ("stationarity_bound", fmt(1e-8 * (1 + fit.m_inf))),
             ("stationary", str(int(fit.stationary)))]
    return csv_text(["key", "value"], rows)


def _suffix(ap):
    return "" if ap is None else "_" + aprime_tag(ap)


def _truth(cfg, grid, ap):
    if ap is None:
        return mc_ground_truth_ate(cfg.generator, grid, n_mc=cfg.n_mc)
    return mc_ground_truth_att(cfg.generator, grid, ap, n_mc=cfg.n_mc)


def run_seed(cfg, seed):
    """All files for one seed plus benchmark records. Never raises."""
    clock = {}
    out = {"seed": seed, "files": {}, "records": [], "error": None, "clock": clock}
    sd = seed_dir(seed)
    try:
        data, prep, tuned, fits = _tuned(cfg, seed, clock)
        files = out["files"]
        if cfg.command == "tune":
            for k, v in _tune_files(tuned, cfg).items():
                files[f"{sd}/{k}"] = v
        elif cfg.command == "fit":
            for ap, fit in fits.items():
                files[f"{sd}/fit{_suffix(ap)}.csv"] = _fit_summary(tuned, fit, ap)
                files[f"{sd}/alpha{_suffix(ap)}.csv"] = csv_text(
                    ["index", "alpha"], [(i, fmt(v)) for i, v in enumerate(fit.alpha)])
        elif cfg.command == "curve":
            grid = full_grid(data.a, cfg.curve_points)
            for ap, fit in fits.items():
                f_hat = predict_curve(prep, fit, grid)
                header, cols = ["a", "f_hat"], [grid, f_hat]
                if cfg.with_truth:
                    header += ["f_true", "f_true_se"]
                    cols += list(_truth(cfg, grid, ap))
                files[f"{sd}/curve{_suffix(ap)}.csv"] = csv_text(
                    header, [[fmt(v) for v in row] for row in zip(*cols)])
                if cfg.emit_gnuplot:
                    files[f"{sd}/curve{_suffix(ap)}.dat"] = gnuplot_text(grid, f_hat)
        elif cfg.command == "benchmark":
            t0 = time.perf_counter()
            grid = central_grid(data.a)
            for ap, fit in fits.items():
                f_hat = predict_curve(prep, fit, grid)
                truth, _ = _truth(cfg, grid, ap)
                out["records"].append({
                    "seed": seed, "a_prime": ap,
                    "mse": float(np.mean((f_hat - truth) ** 2)),
                    "residual": fit.residual, "bound": 1e-8 * (1 + fit.m_inf),
                    "stationary": stationarity_ok(fit.residual, fit.m_inf)})
            clock["evaluate"] = time.perf_counter() - t0
    except Exception as exc:  # recorded, the run carries on
        out["error"] = f"{type(exc).__name__}: {exc}"
        log.error("seed %d failed\n%s", seed, traceback.format_exc())
    return out


def _run_seed_args(args):
    return run_seed(*args)


def run_seeds(cfg, jobs):
    work = [(cfg, s) for s in cfg.seed_list]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed_args, work))
    else:
        results = [run_seed(*w) for w in work]
    return sorted(results, key=lambda r: r["seed"])


# ------------------------------------------------------------------ commands

def _ap_cell(ap):
    return "" if ap is None else fmt(ap)


def benchmark_files(cfg, results):
    rows, per_ap = [], {}
    for r in results:
        if r["error"] is not None:
            rows.append([r["seed"], "", "", "", "", "", "failed: " + r["error"]])
            continue
        for rec in r["records"]:
            rows.append([rec["seed"], _ap_cell(rec["a_prime"]), fmt(rec["mse"]),
                         fmt(rec["residual"]), fmt(rec["bound"]), int(rec["stationary"]), "ok"])
            per_ap.setdefault(rec["a_prime"], []).append(rec["mse"])
    files = {"mse.csv": csv_text(
        ["seed", "a_prime", "mse", "stationarity_residual", "stationarity_bound",
         "stationary", "status"], rows)}
    failed = sum(r["error"] is not None for r in results)
    summ = []
    for ap in sorted(per_ap, key=lambda v: -np.inf if v is None else v):
        v = np.asarray(per_ap[ap])
        summ.append([_ap_cell(ap), len(v), fmt(v.mean()), fmt(v.std(ddof=1) if len(v) > 1 else 0.0),
                     fmt(np.median(v)), failed])
    files["summary.csv"] = csv_text(["a_prime", "count", "mean", "std", "median", "failed"], summ)
    if cfg.emit_gnuplot:
        for ap in per_ap:
            seeds = [r["seed"] for r in results if r["error"] is None]
            files[f"mse{_suffix(ap)}.dat"] = gnuplot_text(seeds, per_ap[ap])
    return files


def timing_file(results):
    rows = [[r["seed"], k, fmt(v)] for r in results for k, v in sorted(r["clock"].items())]
    return csv_text(["seed", "stage", "seconds"], rows)


def cmd_oracle(cfg):
    kw = {}
    if cfg.suite == "loocv":
        kw = {"sizes": (cfg.n,), "grid": cfg.pipeline().grid}
    elif cfg.suite == "reductions":
        kw = {"n": cfg.n, "seed": cfg.base_seed, "cfg": PipelineConfig(
            grid=cfg.pipeline().grid, sigma2=cfg.sigma2, bbar_norm=cfg.bbar_norm,
            stage3_data=cfg.stage3_data, standardize_y=cfg.standardize_y,
            columnwise_w=True)}
    checks = run_suite(cfg.suite, **kw)
    text = csv_text(["suite", "check", "measured", "tolerance", "passed"],
                    [[c.suite, c.name, fmt(c.measured), fmt(c.tolerance), int(c.passed)]
                     for c in checks])
    failed = [c for c in checks if not c.passed]
    for c in failed:
        log.warning("oracle check %s/%s failed: %.3g > %.3g", c.suite, c.name,
                    c.measured, c.tolerance)
    return {"report.csv": text}, (EXIT_ORACLE if failed else EXIT_OK)


def execute(cfg, out_root, jobs=1):
    """Run one configured command; returns (output directory, exit code)."""
    root = os.path.join(out_root, cfg.command, cfg.digest())
    if cfg.command == "oracle":
        files, code = cmd_oracle(cfg)
    else:
        results = run_seeds(cfg, jobs)
        files = {}
        for r in results:
            files.update(r["files"])
        if cfg.command == "benchmark":
            files.update(benchmark_files(cfg, results))
        if cfg.timings:
            files["timings.csv"] = timing_file(results)
        failed = [r for r in results if r["error"] is not None]
        if failed and cfg.command != "benchmark":
            files["failures.csv"] = csv_text(["seed", "error"],
                                             [[r["seed"], r["error"]] for r in failed])
        code = EXIT_SEEDS if failed else EXIT_OK
    files["config.json"] = json.dumps(
        {k: v for k, v in asdict(cfg).items() if k != "csv_path"},
        sort_keys=True, indent=1, default=list) + "\n"
    write_tree(root, files)
    return root, code


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except ConfigError as exc:
        parser.error(str(exc))  # exits with status 2
    root, code = execute(cfg, ns.out, ns.jobs)
    print(root)
    return code


if __name__ == "__main__":
    sys.exit(main())
