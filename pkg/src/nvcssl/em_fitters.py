"""MAP-EM fitters for the spike-and-slab varying-coefficient model.

Three fitters share the same dynamic exploration loop over an increasing
spike-parameter ladder with warm starts between rungs:

* fit_nvcssl      - structured AR(1)/CS errors; per rung, one EM chain per
                    correlation atom, the atom maximizing the log posterior
                    wins the rung (ties to the smallest atom).
* fit_robustified - fixed working covariances, likelihood raised to xi;
                    only (gamma, theta) updated.
* fit_unstructured- per-subject covariances under inverse-Wishart priors with
                    a closed-form update each iteration.

Every EM chain warm-starts its group-lasso subproblem from the previous
iterate, so each per-iteration log-posterior trace is non-decreasing (ECM
ascent); traces are retained on the FitResult for verification.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .correlation import CovarianceSpec, ar1_matrix, whiten
from .data_model import LongitudinalDataset
from .errors import ValidationError
from .group_solver import GramCache, GroupProblem, block_majorizers, solve_group_lasso
from .spline_basis import BasisSpec, DesignExpansion, build_design, make_basis
from .ssgl_math import (
    SSGLConfig,
    THETA_FLOOR,
    generalized_dimension,
    log_posterior_fractional,
    log_posterior_structured,
    log_posterior_unstructured,
    penalty_weight,
    selection_threshold,
    slab_prob_groups,
)

__all__ = [
    "EmTrace",
    "RungSummary",
    "FitResult",
    "theta_update",
    "sigma2_update",
    "sigma2_init",
    "fit_nvcssl",
    "eb_working_covariance",
    "fit_robustified",
    "fit_unstructured",
    "aicc",
    "aicc_value",
    "select_df",
    "select_xi",
    "predict",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class EmTrace:
    """Per-iteration log-posterior values of one (lambda0, atom) EM chain."""

    lambda0: float
    atom: float | None
    values: np.ndarray


@dataclass(frozen=True)
class RungSummary:
    lambda0: float
    rho_hat: float | None
    logpost: float
    n_selected: int
    em_iters: int
    converged: bool
    nonconverged_atoms: tuple = ()


@dataclass
class FitResult:
    method: str
    gamma: np.ndarray
    basis: BasisSpec
    variable_names: tuple
    theta_hat: float | None = None
    sigma2_hat: float | None = None
    rho_hat: float | None = None
    structure: str | None = None
    xi: float | None = None
    sigma_blocks: tuple | None = None
    selected: tuple = ()
    generalized_dim: int = 0
    logpost_trace: tuple = ()
    aicc: float = math.nan
    ladder_path: tuple = ()
    response_offset: float = 0.0
    converged: bool = True
    extras: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def p(self) -> int:
        return self.gamma.size // self.basis.d

    @property
    def gamma_blocks(self) -> np.ndarray:
        return self.gamma.reshape(self.p, self.d)

    @property
    def block_norms(self) -> np.ndarray:
        return np.linalg.norm(self.gamma_blocks, axis=1)

    @property
    def min_ascent_step(self) -> float:
        """Smallest per-iteration log-posterior increment over all EM chains;
        should never fall below a small negative rounding tolerance."""
        diffs = [float(np.min(np.diff(tr.values))) for tr in self.logpost_trace if tr.values.size > 1]
        return min(diffs) if diffs else 0.0


def theta_update(p_star_values, a: float, b: float, p: int) -> float:
    """Closed-form mixing-proportion update, clamped to the open unit interval."""
    th = (a - 1.0 + float(np.sum(p_star_values))) / (a + b + p - 2.0)
    return min(max(th, THETA_FLOOR), 1.0 - THETA_FLOOR)


def sigma2_update(resid_ss_whitened: float, d0: float, c0: float, N: int) -> float:
    """Closed-form noise-variance update."""
    if resid_ss_whitened < 0:
        raise ValidationError("residual sum of squares must be nonnegative")
    return (d0 + resid_ss_whitened) / (N + c0 + 2.0)


def sigma2_init(y: np.ndarray, nu: float = 3.0, quantile: float = 0.9) -> float:
    """Mode of a scaled inverse chi-squared whose `quantile` equals var(y).

    With X = nu*tau^2 / Z, Z ~ chi2(nu): P(X <= v) = q requires
    nu*tau^2 = v * chi2.ppf(1-q, nu); the mode is nu*tau^2 / (nu + 2).
    """
    v = float(np.var(np.asarray(y, dtype=float), ddof=1))
    return max(v * float(chi2.ppf(1.0 - quantile, nu)) / (nu + 2.0), 1e-12)


def _selected(gamma: np.ndarray, d: int) -> tuple:
    norms = np.linalg.norm(gamma.reshape(-1, d), axis=1)
    return tuple(int(k) for k in np.nonzero(norms > 0)[0])


def aicc_value(resid_ss: float, N: int, s_hat: int) -> float:
    """Small-sample corrected criterion; +inf when s_hat >= N - 2."""
    if s_hat >= N - 2:
        return math.inf
    return math.log(max(resid_ss, 1e-300) / N) + 1.0 + 2.0 * (s_hat + 1.0) / (N - s_hat - 2.0)


def aicc(fit: FitResult, ds: LongitudinalDataset, design: DesignExpansion,
         structure: str | None = None) -> float:
    """Criterion at the fitted coefficients: structured fits whiten the
    residual with the fitted correlation, all others use the identity."""
    Y = ds.stacked_responses
    structure = structure if structure is not None else fit.structure
    if structure in ("ar1", "cs") and fit.rho_hat is not None:
        ws = whiten(CovarianceSpec(kind=structure, rho=fit.rho_hat), ds, design)
        r = ws.Y - ws.U @ fit.gamma
    else:
        r = Y - design.U @ fit.gamma
    return aicc_value(float(r @ r), ds.total_obs, len(fit.selected))


def _run_em_structured(Yt, Ut, logdet_R, majorizers, start, lambda0, cfg, d, p, N,
                       a, b, n_atoms, gram=None):
    """One EM chain at fixed (lambda0, rho atom); returns final state + trace.

    When d*p > N the joint (gamma, sigma2) posterior has a degenerate
    interpolation mode (residual -> 0 drives sigma2 to its prior floor,
    which switches the group penalty off entirely). A chain whose active
    coefficient count reaches N is headed there: it is aborted at the last
    sub-saturation iterate and flagged, leaving the ladder to recover
    sparsity at larger spike values.
    """
    gamma, theta, sigma2 = np.array(start[0], copy=True), start[1], start[2]
    resid = Yt - Ut @ gamma
    rss = float(resid @ resid)

    def lp(g, th, s2, ss):
        return log_posterior_structured(
            g, th, s2, resid_ss_whitened=ss, logdet_R=logdet_R, N=N, d=d, p=p,
            lambda0=lambda0, lambda1=cfg.lambda1, a=a, b=b, c0=cfg.c0, d0=cfg.d0,
            n_atoms=n_atoms)

    values = [lp(gamma, theta, sigma2, rss)]
    converged = False
    saturated = False
    can_saturate = d * p > N
    iters = 0
    for _ in range(cfg.em_max_iter):
        iters += 1
        norms = np.linalg.norm(gamma.reshape(p, d), axis=1)
        pst = slab_prob_groups(norms, theta, lambda0, cfg.lambda1, d)
        lam_star = penalty_weight(pst, lambda0, cfg.lambda1)
        theta_new = theta_update(pst, a, b, p)
        problem = GroupProblem(Y=Yt, U=Ut, weights=sigma2 * lam_star, d=d,
                               warm_start=gamma, tol=cfg.bcd_tol,
                               max_iter=cfg.bcd_max_iter, majorizers=majorizers,
                               gram=gram, validate=False)
        res = solve_group_lasso(problem)
        if can_saturate:
            n_active = int(np.count_nonzero(
                np.linalg.norm(res.gamma.reshape(p, d), axis=1)))
            if n_active * d >= N:
                saturated = True
                iters -= 1
                break
        theta = theta_new
        rss = float(res.residual @ res.residual)
        sigma2 = sigma2_update(rss, cfg.d0, cfg.c0, N)
        diff = float(np.linalg.norm(res.gamma - gamma))
        gamma = res.gamma
        values.append(lp(gamma, theta, sigma2, rss))
        if diff <= cfg.em_tol:
            converged = True
            break
    return gamma, theta, sigma2, rss, np.asarray(values), iters, converged, saturated


def fit_nvcssl(ds: LongitudinalDataset, design: DesignExpansion,
               config: SSGLConfig | None = None, structure: str = "ar1") -> FitResult:
    """Structured-covariance fit over the full spike ladder and atom grid.

    Responses are used as-is: when the covariate means cannot carry an
    intercept-like level, center first (see center_response) -- the stored
    response_offset is then added back by predict().
    """
    if structure not in ("ar1", "cs"):
        raise ValidationError(f"structure must be 'ar1' or 'cs', got {structure!r}")
    cfg = config if config is not None else SSGLConfig()
    Y = ds.stacked_responses
    N, p, d = ds.total_obs, ds.p, design.basis.d
    a, b = cfg.a, cfg.b_for(p)
    atoms = tuple(sorted(cfg.rho_atoms))

    # covariance-mode workspaces are worth their memory only at moderate width
    gram_ok = (d * p) ** 2 * 8 * len(atoms) <= 256e6
    systems = {}
    for m in atoms:
        ws = whiten(CovarianceSpec(kind=structure, rho=m), ds, design)
        systems[m] = (ws, block_majorizers(ws.U, d),
                      GramCache(ws.U, d) if gram_ok else None)

    state = (np.zeros(d * p), 0.5, sigma2_init(Y))
    traces, rungs = [], []
    all_converged = True
    winner = None
    for lambda0 in cfg.lambda0_ladder:
        best = None
        bad_atoms = []
        for m in atoms:
            ws, L, gram = systems[m]
            out = _run_em_structured(ws.Y, ws.U, ws.logdet, L, state, lambda0,
                                     cfg, d, p, N, a, b, len(atoms), gram=gram)
            gamma, theta, sigma2, rss, values, iters, conv, sat = out
            traces.append(EmTrace(lambda0=lambda0, atom=m, values=values))
            if not conv:
                bad_atoms.append(m)
                all_converged = False
            if best is None or values[-1] > best[0]:
                best = (values[-1], m, gamma, theta, sigma2, rss, iters, conv)
        logpost, m_hat, gamma, theta, sigma2, rss, iters, conv = best
        state = (gamma, theta, sigma2)
        rungs.append(RungSummary(lambda0=lambda0, rho_hat=m_hat, logpost=float(logpost),
                                 n_selected=len(_selected(gamma, d)), em_iters=iters,
                                 converged=conv, nonconverged_atoms=tuple(bad_atoms)))
        winner = best

    _, rho_hat, gamma, theta, sigma2, rss, _, _ = winner
    selected = _selected(gamma, d)
    omega = selection_threshold(cfg.lambda0_ladder[-1], cfg.lambda1, theta, d)
    fit = FitResult(
        method="nvcssl", gamma=gamma, basis=design.basis,
        variable_names=ds.variable_names, theta_hat=float(theta),
        sigma2_hat=float(sigma2), rho_hat=float(rho_hat), structure=structure,
        selected=selected, generalized_dim=generalized_dimension(gamma, d, omega),
        logpost_trace=tuple(traces), ladder_path=tuple(rungs),
        response_offset=ds.response_offset, converged=all_converged,
        extras={"config": cfg.to_dict()},
    )
    fit.aicc = aicc_value(rss, N, len(selected))
    return fit


def eb_working_covariance(ds: LongitudinalDataset, design: DesignExpansion,
                          pilot_gamma: np.ndarray | None = None):
    """Empirical-Bayes AR(1) working covariance.

    A plain group-lasso pilot (tuned by the corrected criterion) supplies
    residuals; sigma2 is profiled in closed form and rho maximizes the
    profiled marginal log-likelihood over {0.01, ..., 0.99}. An all-zero
    pilot is allowed: the covariance of Y itself is fit.
    """
    from .baselines import PenaltySpec, fit_penalized

    Y = ds.stacked_responses
    N = ds.total_obs
    if pilot_gamma is None:
        pilot = fit_penalized(ds, design, PenaltySpec(kind="glasso"))
        pilot_gamma = pilot.gamma
    resid = Y - design.U @ pilot_gamma

    from .correlation import RHO_CAP, _ar1_whiten_block, ar1_inverse_logdet

    slices = ds.subject_slices()
    best = None
    grid = np.round(np.arange(0.01, 1.00, 0.01), 2)
    for rho in grid[grid <= RHO_CAP]:
        q = 0.0
        logdet = 0.0
        for i, sl in enumerate(slices):
            w = _ar1_whiten_block(ds.times[i], rho, resid[sl])
            q += float(w @ w)
            logdet += ar1_inverse_logdet(ds.times[i], rho)[1]
        sigma2 = q / N
        value = -0.5 * N * math.log(sigma2) - 0.5 * logdet - 0.5 * N
        if best is None or value > best[0]:
            best = (value, float(rho), sigma2)
    _, rho_hat, sigma2_hat = best
    S_list = tuple(sigma2_hat * ar1_matrix(t, rho_hat) for t in ds.times)
    return sigma2_hat, rho_hat, S_list


def fit_robustified(ds: LongitudinalDataset, design: DesignExpansion,
                    config: SSGLConfig | None = None, S_list=None,
                    xi: float = 0.99, eb_estimates=None) -> FitResult:
    """Working-covariance fit of the fractional posterior; only (gamma, theta)
    are updated. S_list defaults to identity blocks (working independence)."""
    if not 0.0 < xi < 1.0:
        raise ValidationError(f"xi must lie in (0, 1), got {xi}")
    cfg = config if config is not None else SSGLConfig()
    Y = ds.stacked_responses
    N, p, d = ds.total_obs, ds.p, design.basis.d
    a, b = cfg.a, cfg.b_for(p)

    if S_list is None:
        S_list = tuple(np.eye(t.size) for t in ds.times)
    ws = whiten(CovarianceSpec.working(S_list), ds, design)
    majorizers = block_majorizers(ws.U, d)
    gram = GramCache(ws.U, d) if (d * p) ** 2 * 8 <= 64e6 else None

    def lp(g, th, ss):
        return log_posterior_fractional(g, th, resid_ss_whitened=ss, logdet_S=ws.logdet,
                                        xi=xi, d=d, p=p, lambda0=lambda0,
                                        lambda1=cfg.lambda1, a=a, b=b)

    gamma, theta = np.zeros(d * p), 0.5
    traces, rungs = [], []
    all_converged = True
    final_rss = float(ws.Y @ ws.Y)
    for lambda0 in cfg.lambda0_ladder:
        resid = ws.Y - ws.U @ gamma
        rss = float(resid @ resid)
        values = [lp(gamma, theta, rss)]
        converged = False
        iters = 0
        for _ in range(cfg.em_max_iter):
            iters += 1
            norms = np.linalg.norm(gamma.reshape(p, d), axis=1)
            pst = slab_prob_groups(norms, theta, lambda0, cfg.lambda1, d)
            lam_star = penalty_weight(pst, lambda0, cfg.lambda1)
            theta = theta_update(pst, a, b, p)
            problem = GroupProblem(Y=ws.Y, U=ws.U, weights=lam_star / xi, d=d,
                                   warm_start=gamma, tol=cfg.bcd_tol,
                                   max_iter=cfg.bcd_max_iter, majorizers=majorizers,
                                   gram=gram, validate=False)
            res = solve_group_lasso(problem)
            rss = float(res.residual @ res.residual)
            diff = float(np.linalg.norm(res.gamma - gamma))
            gamma = res.gamma
            values.append(lp(gamma, theta, rss))
            if diff <= cfg.em_tol:
                converged = True
                break
        all_converged &= converged
        final_rss = rss
        traces.append(EmTrace(lambda0=lambda0, atom=None, values=np.asarray(values)))
        rungs.append(RungSummary(lambda0=lambda0, rho_hat=None, logpost=float(values[-1]),
                                 n_selected=len(_selected(gamma, d)), em_iters=iters,
                                 converged=converged,
                                 nonconverged_atoms=() if converged else (None,)))

    selected = _selected(gamma, d)
    omega = selection_threshold(cfg.lambda0_ladder[-1], cfg.lambda1, theta, d)
    extras = {"config": cfg.to_dict()}
    if eb_estimates is not None:
        extras["eb_sigma2"], extras["eb_rho"] = float(eb_estimates[0]), float(eb_estimates[1])
    fit = FitResult(
        method="robustified", gamma=gamma, basis=design.basis,
        variable_names=ds.variable_names, theta_hat=float(theta), xi=float(xi),
        selected=selected, generalized_dim=generalized_dimension(gamma, d, omega),
        logpost_trace=tuple(traces), ladder_path=tuple(rungs),
        response_offset=ds.response_offset, converged=all_converged, extras=extras,
    )
    # criterion uses the identity-whitened residual for working-covariance fits
    r = ds.stacked_responses - design.U @ gamma
    fit.aicc = aicc_value(float(r @ r), N, len(selected))
    return fit


def fit_unstructured(ds: LongitudinalDataset, design: DesignExpansion,
                     config: SSGLConfig | None = None, iw_df=None, iw_scale=None) -> FitResult:
    """Per-subject covariance fit under inverse-Wishart priors.

    Defaults: df m_i = n_i - 1 and identity scale matrices. Each covariance
    update is (Omega_i + r_i r_i') / (m_i + n_i + 2), SPD by construction.
    """
    cfg = config if config is not None else SSGLConfig()
    Y = ds.stacked_responses
    N, p, d = ds.total_obs, ds.p, design.basis.d
    a, b = cfg.a, cfg.b_for(p)
    n_obs = ds.n_obs
    slices = ds.subject_slices()

    if iw_df is None:
        iw_df = tuple(float(ni - 1) for ni in n_obs)
    else:
        iw_df = tuple(float(v) for v in iw_df)
    if iw_scale is None:
        iw_scale = tuple(np.eye(ni) for ni in n_obs)
    else:
        iw_scale = tuple(np.asarray(m, dtype=float) for m in iw_scale)
    for i, om in enumerate(iw_scale):
        if om.shape != (n_obs[i], n_obs[i]):
            raise ValidationError(f"scale matrix {i} has shape {om.shape}, expected {(n_obs[i], n_obs[i])}")
        try:
            np.linalg.cholesky(om)
        except np.linalg.LinAlgError:
            raise ValidationError(f"scale matrix {i} is not SPD") from None

    iw_weight = np.array([(m + ni + 1.0) / 2.0 for m, ni in zip(iw_df, n_obs)])
    denom = np.array([m + ni + 2.0 for m, ni in zip(iw_df, n_obs)])
    scale_chols = [np.linalg.cholesky(om) for om in iw_scale]

    def sigma_stats(sigmas):
        chols, logdets, traces_ = [], [], []
        for c_om, s in zip(scale_chols, sigmas):
            L = np.linalg.cholesky(s)
            chols.append(L)
            logdets.append(2.0 * float(np.sum(np.log(np.diag(L)))))
            w = np.linalg.solve(L, c_om)
            traces_.append(float(np.sum(w * w)))  # tr(Omega S^-1) = ||L^-1 chol(Omega)||_F^2
        return chols, np.asarray(logdets), np.asarray(traces_)

    def whiten_with(chols, vec, mat=None):
        import scipy.linalg as sla
        out_v = np.empty_like(vec)
        out_m = np.empty_like(mat) if mat is not None else None
        for i, sl in enumerate(slices):
            out_v[sl] = sla.solve_triangular(chols[i], vec[sl], lower=True)
            if mat is not None:
                out_m[sl] = sla.solve_triangular(chols[i], mat[sl], lower=True)
        return out_v, out_m

    def lp(g, th, ss_whitened, logdets, trs):
        return log_posterior_unstructured(
            g, th, resid_ss_whitened=ss_whitened, logdet_sigma=float(np.sum(logdets)),
            iw_logdet_term=float(np.sum(iw_weight * logdets)),
            iw_trace_term=float(np.sum(trs)), d=d, p=p,
            lambda0=lambda0, lambda1=cfg.lambda1, a=a, b=b)

    gamma, theta = np.zeros(d * p), 0.5
    sigmas = [np.eye(ni) for ni in n_obs]
    chols, logdets, trs = sigma_stats(sigmas)
    traces, rungs = [], []
    all_converged = True
    for lambda0 in cfg.lambda0_ladder:
        resid_raw = Y - design.U @ gamma
        rw, _ = whiten_with(chols, resid_raw)
        values = [lp(gamma, theta, float(rw @ rw), logdets, trs)]
        converged = False
        iters = 0
        for _ in range(cfg.em_max_iter):
            iters += 1
            norms = np.linalg.norm(gamma.reshape(p, d), axis=1)
            pst = slab_prob_groups(norms, theta, lambda0, cfg.lambda1, d)
            lam_star = penalty_weight(pst, lambda0, cfg.lambda1)
            theta = theta_update(pst, a, b, p)
            Yw, Uw = whiten_with(chols, Y, design.U)
            problem = GroupProblem(Y=Yw, U=Uw, weights=lam_star, d=d,
                                   warm_start=gamma, tol=cfg.bcd_tol,
                                   max_iter=cfg.bcd_max_iter, validate=False)
            res = solve_group_lasso(problem)
            diff = float(np.linalg.norm(res.gamma - gamma))
            gamma = res.gamma
            resid_raw = Y - design.U @ gamma
            sigmas = [
                (om + np.outer(resid_raw[sl], resid_raw[sl])) / dn
                for om, sl, dn in zip(iw_scale, slices, denom)
            ]
            chols, logdets, trs = sigma_stats(sigmas)
            rw, _ = whiten_with(chols, resid_raw)
            values.append(lp(gamma, theta, float(rw @ rw), logdets, trs))
            if diff <= cfg.em_tol:
                converged = True
                break
        all_converged &= converged
        traces.append(EmTrace(lambda0=lambda0, atom=None, values=np.asarray(values)))
        rungs.append(RungSummary(lambda0=lambda0, rho_hat=None, logpost=float(values[-1]),
                                 n_selected=len(_selected(gamma, d)), em_iters=iters,
                                 converged=converged,
                                 nonconverged_atoms=() if converged else (None,)))

    selected = _selected(gamma, d)
    omega = selection_threshold(cfg.lambda0_ladder[-1], cfg.lambda1, theta, d)
    fit = FitResult(
        method="unstructured", gamma=gamma, basis=design.basis,
        variable_names=ds.variable_names, theta_hat=float(theta),
        sigma_blocks=tuple(sigmas), selected=selected,
        generalized_dim=generalized_dimension(gamma, d, omega),
        logpost_trace=tuple(traces), ladder_path=tuple(rungs),
        response_offset=ds.response_offset, converged=all_converged,
        extras={"config": cfg.to_dict()},
    )
    r = Y - design.U @ gamma
    fit.aicc = aicc_value(float(r @ r), N, len(selected))
    return fit


def select_df(ds: LongitudinalDataset, config: SSGLConfig | None = None,
              structure: str = "ar1", d_grid=(8,), degree: int = 3):
    """Refit per basis dimension and return (best_d, {d: fit}); ties to smaller d."""
    d_grid = tuple(int(v) for v in d_grid)
    if not d_grid:
        raise ValidationError("d grid is empty")
    t_all = ds.stacked_times
    lo, hi = float(np.min(t_all)), float(np.max(t_all))
    results = {}
    for d in sorted(d_grid):
        design = build_design(ds, make_basis(lo, hi, d, degree))
        results[d] = fit_nvcssl(ds, design, config, structure)
    best_d = None
    for d in sorted(results):
        if best_d is None or results[d].aicc < results[best_d].aicc:
            best_d = d
    return best_d, results


def select_xi(ds: LongitudinalDataset, design: DesignExpansion,
              config: SSGLConfig | None = None, S_list=None, xi_grid=None,
              eb_estimates=None):
    """Robustified fit per xi on the grid; argmin criterion, ties to larger xi."""
    cfg = config if config is not None else SSGLConfig()
    grid = tuple(cfg.xi_grid if xi_grid is None else xi_grid)
    if any(not 0.0 < x < 1.0 for x in grid):
        raise ValidationError("xi grid values must lie in (0, 1)")
    results = {}
    for xi in sorted(grid):
        results[xi] = fit_robustified(ds, design, cfg, S_list, xi, eb_estimates=eb_estimates)
    best_xi = None
    for xi in sorted(results):
        if best_xi is None or results[xi].aicc <= results[best_xi].aicc:
            best_xi = xi
    return best_xi, results


def predict(fit: FitResult, design_new: DesignExpansion, offset: float | None = None) -> np.ndarray:
    """Fitted-value predictions on a new design built from the same basis."""
    if design_new.basis.d != fit.basis.d or not np.array_equal(design_new.basis.knots, fit.basis.knots):
        raise ValidationError("prediction design was built with a different basis")
    off = fit.response_offset if offset is None else float(offset)
    return design_new.U @ fit.gamma + off


MODEL_FORMAT_VERSION = 1


def save_model(fit: FitResult, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "method": fit.method,
        "structure": fit.structure,
        "basis": {"degree": fit.basis.degree, "d": fit.basis.d, "knots": fit.basis.knots.tolist()},
        "variable_names": list(fit.variable_names),
        "gamma": [blk.tolist() for blk in fit.gamma_blocks],
        "theta_hat": fit.theta_hat,
        "sigma2_hat": fit.sigma2_hat,
        "rho_hat": fit.rho_hat,
        "xi": fit.xi,
        "sigma_blocks": None if fit.sigma_blocks is None else [m.tolist() for m in fit.sigma_blocks],
        "selected": list(fit.selected),
        "generalized_dim": fit.generalized_dim,
        "aicc": fit.aicc,
        "response_offset": fit.response_offset,
        "converged": fit.converged,
        "ladder_path": [
            {"lambda0": r.lambda0, "rho_hat": r.rho_hat, "logpost": r.logpost,
             "n_selected": r.n_selected, "em_iters": r.em_iters, "converged": r.converged}
            for r in fit.ladder_path
        ],
        "extras": fit.extras,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path) -> FitResult:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValidationError(f"unsupported model format version {doc.get('format_version')!r}")
    basis = BasisSpec(degree=int(doc["basis"]["degree"]), d=int(doc["basis"]["d"]),
                      knots=np.asarray(doc["basis"]["knots"]))
    gamma = np.asarray(doc["gamma"], dtype=float).ravel()
    return FitResult(
        method=doc["method"], gamma=gamma, basis=basis,
        variable_names=tuple(doc["variable_names"]),
        theta_hat=doc.get("theta_hat"), sigma2_hat=doc.get("sigma2_hat"),
        rho_hat=doc.get("rho_hat"), structure=doc.get("structure"), xi=doc.get("xi"),
        sigma_blocks=None if doc.get("sigma_blocks") is None
        else tuple(np.asarray(m) for m in doc["sigma_blocks"]),
        selected=tuple(doc.get("selected", ())),
        generalized_dim=int(doc.get("generalized_dim", 0)),
        aicc=doc.get("aicc", math.nan),
        response_offset=float(doc.get("response_offset", 0.0)),
        converged=bool(doc.get("converged", True)),
        extras=doc.get("extras", {}),
    )
