"""Seeded generators for the simulation scenarios, scoring, and the benchmark driver.

Scenario families share one observation-time scheme (integer grid 1..20 with
independent 60% skipping and U(-0.5, 0.5) jitter) and one covariate scheme
(one uniform covariate drifting with time, four conditionally normal ones,
one with exponential mean drift, and autocorrelated Gaussian noise columns),
varying the error covariance: AR(1)/CS, random symmetric Toeplitz, or a
heteroscedastic per-subject mixture. Everything is deterministic under the
scenario seed.
"""

from __future__ import annotations

import csv
import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .baselines import PenaltySpec, fit_penalized
from .data_model import LongitudinalDataset
from .em_fitters import (
    FitResult,
    eb_working_covariance,
    fit_nvcssl,
    fit_unstructured,
    predict,
    select_xi,
)
from .errors import ValidationError
from .spline_basis import build_design, eval_basis_matrix, make_basis
from .ssgl_math import DEFAULT_XI_GRID, SSGLConfig
from .correlation import ar1_matrix, cs_matrix

__all__ = [
    "Scenario",
    "Truth",
    "MetricsReport",
    "BenchRow",
    "BenchConfig",
    "generate",
    "score",
    "run_benchmark",
    "load_bench_config",
    "write_results_csv",
    "METHODS",
]

KINDS = (
    "s61",
    "s62_toeplitz",
    "c1_linear_constant",
    "c2_dense_time",
    "c3_correlated_design",
    "d2_hetero_mixture",
)

METHODS = ("nvcssl", "robustified", "unstructured", "glasso", "gscad", "gmcp")

_KIND_DEFAULTS = {
    "s61": dict(n=50, p=400),
    "s62_toeplitz": dict(n=50, p=400),
    "c1_linear_constant": dict(n=50, p=400),
    "c2_dense_time": dict(n=20, p=400),
    "c3_correlated_design": dict(n=40, p=100),
    "d2_hetero_mixture": dict(n=50, p=200),
}

MAX_REDRAWS = 1000


@dataclass(frozen=True)
class Scenario:
    kind: str
    n: int
    p: int
    rho: float = 0.8
    structure: str = "ar1"
    seed: int = 0
    n_test_subjects: int = 50
    sigma2: float = 1.0
    design_rho: float = 0.8  # covariate-design correlation (c3 only)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown scenario {self.kind!r}; choose from {KINDS}")
        if self.structure not in ("ar1", "cs"):
            raise ValidationError("scenario structure must be 'ar1' or 'cs'")
        if self.n < 2 or self.p < 6:
            raise ValidationError("scenario needs n >= 2 subjects and p >= 6 covariates")

    @classmethod
    def default(cls, kind, **overrides):
        if kind not in _KIND_DEFAULTS:
            raise ValidationError(f"unknown scenario {kind!r}; choose from {KINDS}")
        base = dict(_KIND_DEFAULTS[kind])
        base.update(overrides)
        return cls(kind=kind, **base)

    @property
    def time_range(self):
        if self.kind == "c2_dense_time":
            return (0.25, 20.0)
        return (0.5, 20.5)


def _main_betas():
    return (
        lambda t: 10.0 * np.sin(np.pi * t / 15.0),
        lambda t: 5.0 * np.cos(np.pi * t / 15.0),
        lambda t: -1.0 + 2.0 * np.sin(np.pi * (t - 25.0) / 8.0),
        lambda t: 1.0 + 2.0 * np.cos(np.pi * (t - 25.0) / 15.0),
        lambda t: 2.0 + 10.0 * np.exp(t - 10.0) / (1.0 + np.exp(t - 10.0)),
        lambda t: -4.0 + (20.0 - t) ** 3 / 2000.0,
    )


def _linear_constant_betas():
    return (
        lambda t: 2.0 * t - 10.0,
        lambda t: 5.0 * np.cos(np.pi * t / 15.0),
        lambda t: -1.0 + 2.0 * np.sin(np.pi * (t - 25.0) / 8.0),
        lambda t: -2.5 + 0.0 * t,
        lambda t: 10.0 + 0.0 * t,
        lambda t: -t / 3.0,
    )


@dataclass(frozen=True)
class Truth:
    betas: tuple            # callables for the six signal curves
    support: tuple          # 0-based indices of nonzero functions
    p: int
    time_range: tuple
    scenario: Scenario

    def beta_matrix(self, t) -> np.ndarray:
        """len(t) x p matrix of true curve values (zero off-support)."""
        t = np.asarray(t, dtype=float)
        out = np.zeros((t.size, self.p))
        for k, fn in zip(self.support, self.betas):
            out[:, k] = fn(t)
        return out


def _draw_times(scn: Scenario, rng) -> np.ndarray:
    if scn.kind == "c2_dense_time":
        return np.arange(0.25, 20.0 + 1e-9, 0.25)
    for _ in range(MAX_REDRAWS):
        keep = rng.random(20) >= 0.6  # each point skipped with prob 0.6
        if np.any(keep):
            base = np.arange(1.0, 21.0)[keep]
            return base + rng.uniform(-0.5, 0.5, size=base.size)
    raise ValidationError("could not draw a non-empty time grid after 1000 tries")


def _draw_covariates(scn: Scenario, t: np.ndarray, rng) -> np.ndarray:
    m = t.size
    X = np.empty((m, scn.p))
    if scn.kind == "c3_correlated_design":
        # every observation row from N_p(0, Omega), omega_jk = design_rho^|j-k|
        idx = np.arange(scn.p)
        omega = scn.design_rho ** np.abs(idx[:, None] - idx[None, :])
        L = np.linalg.cholesky(omega)
        return rng.standard_normal((m, scn.p)) @ L.T
    x1 = rng.uniform(t / 10.0, 2.0 + t / 10.0)
    X[:, 0] = x1
    sd = np.sqrt((1.0 + x1) / (2.0 + x1))
    for k in range(1, 5):
        X[:, k] = rng.normal(0.0, sd)
    X[:, 5] = rng.normal(1.5 * np.exp(t / 40.0), 1.0)
    if scn.p > 6:
        # noise covariates: zero-mean Gaussian process, corr 0.5^|t-s|
        L = np.linalg.cholesky(ar1_matrix(t, 0.5) + 1e-10 * np.eye(m))
        X[:, 6:] = L @ rng.standard_normal((m, scn.p - 6))
    return X


def _toeplitz_block(m: int, rng) -> np.ndarray:
    """Symmetric Toeplitz correlation with off-diagonals from U(0, 0.9),
    constrained to minimum eigenvalue > 0.01.

    Rejection sampling handles small blocks; for wide blocks a random draw is
    essentially never positive definite, so the final draw is shrunk toward
    the identity (off-diagonals scaled by the closed-form factor that pins
    the smallest eigenvalue just above the floor), which preserves the
    Toeplitz structure and the unit diagonal.
    """
    if m == 1:
        return np.eye(1)
    T = None
    for _ in range(MAX_REDRAWS):
        r = rng.uniform(0.0, 0.9, size=m - 1)
        first_row = np.concatenate([[1.0], r])
        idx = np.arange(m)
        T = first_row[np.abs(idx[:, None] - idx[None, :])]
        if np.linalg.eigvalsh(T)[0] > 0.01:
            return T
    lam_min = float(np.linalg.eigvalsh(T)[0])
    alpha = (1.0 - 0.011) / (1.0 - lam_min)  # eig(I + a(T-I)) = 1 + a(eig(T)-1)
    return np.eye(m) + alpha * (T - np.eye(m))


def _draw_errors(scn: Scenario, t: np.ndarray, rng) -> np.ndarray:
    m = t.size
    z = rng.standard_normal(m)
    if scn.kind == "s62_toeplitz":
        cov = scn.sigma2 * _toeplitz_block(m, rng)
    elif scn.kind == "d2_hetero_mixture":
        use_cs = int(rng.integers(0, 2)) == 1
        s2 = rng.uniform(0.5, 2.5)
        r = rng.uniform(0.0, 0.95)
        R = cs_matrix(m, r) if use_cs else ar1_matrix(t, r)
        cov = s2 * R
    else:
        R = ar1_matrix(t, scn.rho) if scn.structure == "ar1" else cs_matrix(m, scn.rho)
        cov = scn.sigma2 * R
    return np.linalg.cholesky(cov) @ z


def _draw_subject(scn: Scenario, rng, truth: Truth):
    t = _draw_times(scn, rng)
    X = _draw_covariates(scn, t, rng)
    signal = np.sum(X[:, truth.support] * truth.beta_matrix(t)[:, truth.support], axis=1)
    y = signal + _draw_errors(scn, t, rng)
    return t, X, y


def generate(scn: Scenario):
    """Returns (train, test, truth); both datasets are uncentered."""
    rng = np.random.default_rng(scn.seed)
    betas = _linear_constant_betas() if scn.kind == "c1_linear_constant" else _main_betas()
    truth = Truth(betas=betas, support=tuple(range(6)), p=scn.p,
                  time_range=scn.time_range, scenario=scn)

    def draw_block(count, prefix):
        ids, times, ys, xs = [], [], [], []
        for i in range(count):
            t, X, y = _draw_subject(scn, rng, truth)
            ids.append(f"{prefix}{i + 1}")
            times.append(t)
            ys.append(y)
            xs.append(X)
        return LongitudinalDataset(
            subject_ids=tuple(ids), times=tuple(times), responses=tuple(ys),
            covariates=np.vstack(xs),
            variable_names=tuple(f"x{k + 1}" for k in range(scn.p)),
        )

    train = draw_block(scn.n, "s")
    test = draw_block(scn.n_test_subjects, "new") if scn.n_test_subjects > 0 else None
    return train, test, truth


@dataclass(frozen=True)
class MetricsReport:
    mse100: float
    mspe: float
    f1: float
    tp: int
    fp: int
    fn: int
    seconds: float = math.nan


def score(fit: FitResult, truth: Truth, train: LongitudinalDataset,
          test: LongitudinalDataset | None, seconds: float = math.nan) -> MetricsReport:
    """Estimation error over train times, prediction error on the test set,
    and F1 of the selected set against the true support."""
    if fit.p != truth.p:
        raise ValidationError(f"fit has p={fit.p}, truth has p={truth.p}")
    t_train = train.stacked_times
    B = eval_basis_matrix(fit.basis, t_train)
    curves = B @ fit.gamma_blocks.T              # N x p fitted curves
    err = curves - truth.beta_matrix(t_train)
    mse = float(np.sum(err * err)) / (t_train.size * truth.p)

    mspe = math.nan
    if test is not None:
        design_test = build_design(test, fit.basis)
        resid = test.stacked_responses - predict(fit, design_test)
        mspe = float(resid @ resid) / test.total_obs

    sel = set(fit.selected)
    sup = set(truth.support)
    tp = len(sel & sup)
    fp = len(sel - sup)
    fn = len(sup - sel)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 0.0 if precision + recall == 0 else 2.0 * precision * recall / (precision + recall)
    return MetricsReport(mse100=100.0 * mse, mspe=mspe, f1=f1, tp=tp, fp=fp, fn=fn,
                         seconds=seconds)


@dataclass(frozen=True)
class BenchRow:
    scenario: str
    method: str
    rep: object          # replication index, or "mean"/"sd" for aggregates
    metrics: MetricsReport | None
    min_ascent: float = math.nan
    error: str | None = None


@dataclass(frozen=True)
class BenchConfig:
    scenario: Scenario
    methods: tuple
    reps: int
    base_seed: int = 0
    d: int = 8
    d_grid: tuple | None = None     # when set, nvcssl and the baselines tune d on it
    xi_grid: tuple = DEFAULT_XI_GRID
    threads: int | None = None
    output: str | None = None
    ssgl: SSGLConfig | None = None

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValidationError(f"unknown method {m!r}; choose from {METHODS}")
        if self.reps < 1:
            raise ValidationError("need at least one replication")


def _fit_method(method, train, scn, cfg):
    lo, hi = scn.time_range
    ssgl = cfg.ssgl if cfg.ssgl is not None else SSGLConfig()

    def design_at(d):
        return build_design(train, make_basis(lo, hi, d))

    if method == "nvcssl":
        if cfg.d_grid:
            best = None
            for d in sorted(cfg.d_grid):
                fit = fit_nvcssl(train, design_at(d), ssgl, scn.structure)
                if best is None or fit.aicc < best.aicc:
                    best = fit
            return best
        return fit_nvcssl(train, design_at(cfg.d), ssgl, scn.structure)
    if method == "robustified":
        design = design_at(cfg.d)
        s2, rho, S_list = eb_working_covariance(train, design)
        best_xi, fits = select_xi(train, design, ssgl, S_list, cfg.xi_grid,
                                  eb_estimates=(s2, rho))
        return fits[best_xi]
    if method == "unstructured":
        return fit_unstructured(train, design_at(cfg.d), ssgl)
    penalty = PenaltySpec(kind=method)
    if cfg.d_grid:
        return fit_penalized(train, None, penalty, d_grid=cfg.d_grid,
                             time_range=(lo, hi))
    return fit_penalized(train, design_at(cfg.d), penalty)


def _one_rep(cfg: BenchConfig, rep: int):
    scn = replace(cfg.scenario, seed=cfg.base_seed + rep)
    # fits run on raw responses: the generator's mean structure is part of
    # the no-intercept model (covariate means carry it), so centering would
    # inject a constant the curve expansion cannot represent
    train, test, truth = generate(scn)
    rows = []
    for method in cfg.methods:
        t0 = _time.perf_counter()
        try:
            fit = _fit_method(method, train, scn, cfg)
            secs = _time.perf_counter() - t0
            metrics = score(fit, truth, train, test, seconds=secs)
            rows.append(BenchRow(scenario=scn.kind, method=method, rep=rep,
                                 metrics=metrics, min_ascent=fit.min_ascent_step))
        except Exception as exc:  # row-level failure; the run continues
            rows.append(BenchRow(scenario=scn.kind, method=method, rep=rep,
                                 metrics=None, error=f"{type(exc).__name__}: {exc}"))
    return rows


def run_benchmark(cfg: BenchConfig):
    """Per-replication rows plus mean/sd aggregate rows, in replication order.
    Individual failures become error rows; the run continues."""
    per_rep: list = [None] * cfg.reps
    workers = cfg.threads
    if workers is None or workers > 1:
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(_one_rep, cfg, rep): rep for rep in range(cfg.reps)}
                for fut, rep in futures.items():
                    per_rep[rep] = fut.result()
        except (OSError, ValueError):
            workers = 1
    if workers == 1 or per_rep[0] is None:
        per_rep = [_one_rep(cfg, rep) for rep in range(cfg.reps)]

    rows = [row for rep_rows in per_rep for row in rep_rows]

    aggregates = []
    for method in cfg.methods:
        ok = [r.metrics for r in rows if r.method == method and r.metrics is not None]
        if not ok:
            continue
        fields = ("mse100", "mspe", "f1", "tp", "fp", "fn", "seconds")
        values = {f: np.array([getattr(m, f) for m in ok], dtype=float) for f in fields}
        mean = {f: float(np.mean(v)) for f, v in values.items()}
        sd = {f: float(np.std(v, ddof=1)) if len(ok) > 1 else 0.0 for f, v in values.items()}
        aggregates.append(BenchRow(scenario=cfg.scenario.kind, method=method, rep="mean",
                                   metrics=MetricsReport(**mean)))
        aggregates.append(BenchRow(scenario=cfg.scenario.kind, method=method, rep="sd",
                                   metrics=MetricsReport(**sd)))
    rows.extend(aggregates)
    if cfg.output:
        write_results_csv(rows, cfg, cfg.output)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def write_results_csv(rows, cfg: BenchConfig, path) -> None:
    scn = cfg.scenario
    echo = {
        "scenario": scn.kind, "n": scn.n, "p": scn.p, "rho": scn.rho,
        "structure": scn.structure, "sigma2": scn.sigma2,
        "n_test_subjects": scn.n_test_subjects,
        "methods": ",".join(cfg.methods), "reps": cfg.reps, "seed": cfg.base_seed,
        "d": cfg.d, "d_grid": ":".join(str(v) for v in cfg.d_grid) if cfg.d_grid else "",
    }
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in echo.items():
            fh.write(f"# {k} = {v}\n")
        writer = csv.writer(fh)
        writer.writerow(["scenario", "method", "rep", "mse100", "mspe", "f1",
                         "tp", "fp", "fn", "seconds"])
        for row in rows:
            if row.metrics is None:
                writer.writerow([row.scenario, row.method, row.rep] + ["nan"] * 7)
                fh.write(f"# error rep={row.rep} method={row.method}: {row.error}\n")
                continue
            m = row.metrics
            writer.writerow([
                row.scenario, row.method, row.rep,
                _fmt(m.mse100), _fmt(m.mspe), _fmt(m.f1),
                _fmt(int(m.tp)) if not isinstance(row.rep, str) else _fmt(m.tp),
                _fmt(int(m.fp)) if not isinstance(row.rep, str) else _fmt(m.fp),
                _fmt(int(m.fn)) if not isinstance(row.rep, str) else _fmt(m.fn),
                _fmt(m.seconds),
            ])


def load_bench_config(path) -> BenchConfig:
    """Key-value benchmark configuration, `key = value` per line, # comments.

    Recognized keys: scenario, n, p, rho, structure, sigma2, n_test_subjects,
    methods (comma list), reps, seed, d, d_grid (lo:hi or comma list),
    xi_grid (comma list), threads, output.
    """
    keys = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            keys[key.strip().lower()] = value.strip()

    if "scenario" not in keys:
        raise ValidationError(f"{path}: missing required key 'scenario'")
    kind = keys.pop("scenario").lower()
    try:
        scn_kwargs = {}
        for k in ("n", "p", "n_test_subjects"):
            if k in keys:
                scn_kwargs[k] = int(keys.pop(k))
        for k in ("rho", "sigma2", "design_rho"):
            if k in keys:
                scn_kwargs[k] = float(keys.pop(k))
        if "structure" in keys:
            scn_kwargs["structure"] = keys.pop("structure").lower()
        scenario = Scenario.default(kind, **scn_kwargs)

        methods = tuple(m.strip().lower() for m in keys.pop("methods", "nvcssl").split(",") if m.strip())
        reps = int(keys.pop("reps", "1"))
        seed = int(keys.pop("seed", "0"))
        d = int(keys.pop("d", "8"))
        d_grid = None
        if "d_grid" in keys:
            raw = keys.pop("d_grid")
            if ":" in raw:
                lo, hi = raw.split(":")
                d_grid = tuple(range(int(lo), int(hi) + 1))
            else:
                d_grid = tuple(int(v) for v in raw.split(","))
        xi_grid = DEFAULT_XI_GRID
        if "xi_grid" in keys:
            xi_grid = tuple(float(v) for v in keys.pop("xi_grid").split(","))
        threads = int(keys.pop("threads")) if "threads" in keys else None
        output = keys.pop("output", None)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if keys:
        raise ValidationError(f"{path}: unknown keys {sorted(keys)}")
    return BenchConfig(scenario=scenario, methods=methods, reps=reps, base_seed=seed,
                       d=d, d_grid=d_grid, xi_grid=xi_grid, threads=threads, output=output)
