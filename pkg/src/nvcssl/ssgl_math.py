"""Spike-and-slab group lasso densities, responsibilities, and log-posterior evaluators.

All mixture arithmetic is done in log space: the spike component carries a
factor exp(-lambda0 * ||gamma_k||) that underflows in natural space well
within the default ladder, so responsibilities and posterior values are
assembled with log-sum-exp throughout. Log-posterior values are defined up
to the additive constant independent of (gamma, theta, sigma2, rho); only
differences are contract-bearing.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError, ValidationError

__all__ = [
    "SSGLConfig",
    "group_density_log",
    "slab_prob",
    "slab_prob_groups",
    "penalty_weight",
    "selection_threshold",
    "generalized_dimension",
    "log_posterior_structured",
    "log_posterior_fractional",
    "log_posterior_unstructured",
]

THETA_FLOOR = 1e-12

DEFAULT_LADDER = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0)
DEFAULT_ATOMS = tuple(np.round(np.arange(0.0, 1.0, 0.1), 1))
DEFAULT_XI_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)


class SSGLConfig:
    """Hyperparameters and convergence controls for the EM fitters.

    b defaults to the number of covariates p at fit time (favors sparse
    models in high dimensions); pass an explicit value to override.
    """

    def __init__(self, lambda0_ladder=DEFAULT_LADDER, lambda1=1.0, a=1.0, b=None,
                 c0=1.0, d0=1.0, rho_atoms=DEFAULT_ATOMS, xi_grid=DEFAULT_XI_GRID,
                 em_tol=1e-6, em_max_iter=100, bcd_tol=1e-7, bcd_max_iter=50):
        # bcd_tol sits an order of magnitude below em_tol: the EM stopping
        # rule compares successive gamma iterates, which cannot settle below
        # the inner solver's own tolerance floor. bcd_max_iter is a per-M-step
        # sweep budget, not a convergence requirement: a truncated solve still
        # descends from its warm start, so EM ascent is preserved (generalized
        # EM) and the outer loop simply takes more cheap iterations.
        self.lambda0_ladder = tuple(float(v) for v in lambda0_ladder)
        self.lambda1 = float(lambda1)
        self.a = float(a)
        self.b = None if b is None else float(b)
        self.c0 = float(c0)
        self.d0 = float(d0)
        self.rho_atoms = tuple(float(v) for v in rho_atoms)
        self.xi_grid = tuple(float(v) for v in xi_grid)
        self.em_tol = float(em_tol)
        self.em_max_iter = int(em_max_iter)
        self.bcd_tol = float(bcd_tol)
        self.bcd_max_iter = int(bcd_max_iter)
        self._validate()

    def _validate(self):
        lad = self.lambda0_ladder
        if not lad:
            raise ValidationError("lambda0 ladder is empty")
        if any(b <= a for a, b in zip(lad, lad[1:])):
            raise ValidationError("lambda0 ladder must be strictly increasing")
        if not 0 < self.lambda1 < lad[0]:
            raise ValidationError("need 0 < lambda1 < min(lambda0 ladder)")
        if self.a <= 0 or (self.b is not None and self.b <= 0):
            raise ValidationError("beta prior shapes must be positive")
        if self.c0 <= 0 or self.d0 <= 0:
            raise ValidationError("inverse-gamma shapes must be positive")
        if len(set(self.rho_atoms)) != len(self.rho_atoms):
            raise ValidationError("rho atoms must be distinct")
        if any(not 0.0 <= m < 1.0 for m in self.rho_atoms):
            raise ValidationError("rho atoms must lie in [0, 1)")
        if any(not 0.0 < x < 1.0 for x in self.xi_grid):
            raise ValidationError("xi grid must lie in (0, 1)")
        if self.em_tol <= 0 or self.bcd_tol <= 0:
            raise ValidationError("tolerances must be positive")
        if self.em_max_iter < 1 or self.bcd_max_iter < 1:
            raise ValidationError("iteration caps must be >= 1")

    def b_for(self, p: int) -> float:
        return float(p) if self.b is None else self.b

    def to_dict(self):
        return {
            "lambda0_ladder": list(self.lambda0_ladder),
            "lambda1": self.lambda1,
            "a": self.a,
            "b": self.b,
            "c0": self.c0,
            "d0": self.d0,
            "rho_atoms": list(self.rho_atoms),
            "xi_grid": list(self.xi_grid),
            "em_tol": self.em_tol,
            "em_max_iter": self.em_max_iter,
            "bcd_tol": self.bcd_tol,
            "bcd_max_iter": self.bcd_max_iter,
        }


def _log_normalizer(d: int) -> float:
    # C_d = 2^d pi^((d-1)/2) Gamma((d+1)/2)
    return d * math.log(2.0) + 0.5 * (d - 1) * math.log(math.pi) + math.lgamma(0.5 * (d + 1))


def group_density_log(gamma_k, lam: float, d: int | None = None) -> float:
    """Log of the d-variate group lasso density at gamma_k:
    d*log(lam) - lam*||gamma_k|| - log C_d."""
    gamma_k = np.asarray(gamma_k, dtype=float)
    if d is None:
        d = gamma_k.size
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    norm = float(np.linalg.norm(gamma_k))
    return d * math.log(lam) - lam * norm - _log_normalizer(d)


_P_LO = np.nextafter(0.0, 1.0)
_P_HI = np.nextafter(1.0, 0.0)


def _slab_prob_from_norm(norm, theta, lambda0, lambda1, d):
    if theta >= 1.0:
        return np.ones_like(norm, dtype=float)
    if theta <= 0.0:
        return np.zeros_like(norm, dtype=float)
    # log odds spike/slab; normalizers cancel. Clamped to the open unit
    # interval at float resolution so downstream logs stay finite.
    log_spike = math.log1p(-theta) + d * math.log(lambda0) - lambda0 * norm
    log_slab = math.log(theta) + d * math.log(lambda1) - lambda1 * norm
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + np.exp(log_spike - log_slab))
    return np.clip(p, _P_LO, _P_HI)


def slab_prob(gamma_k, theta: float, lambda0: float, lambda1: float, d: int | None = None) -> float:
    """Posterior probability the block is drawn from the slab component."""
    gamma_k = np.asarray(gamma_k, dtype=float)
    if d is None:
        d = gamma_k.size
    if not lambda0 > lambda1 > 0:
        raise ValidationError("need lambda0 > lambda1 > 0")
    return float(_slab_prob_from_norm(np.linalg.norm(gamma_k), theta, lambda0, lambda1, d))


def slab_prob_groups(block_norms, theta, lambda0, lambda1, d):
    """Vectorized slab probabilities for all p block norms at once."""
    return _slab_prob_from_norm(np.asarray(block_norms, dtype=float), theta, lambda0, lambda1, d)


def penalty_weight(p_k, lambda0: float, lambda1: float):
    """Effective group penalty: lambda1 * p_k + lambda0 * (1 - p_k)."""
    p_k = np.asarray(p_k, dtype=float)
    if np.any(p_k < 0) or np.any(p_k > 1):
        raise ValidationError("slab probabilities must lie in [0, 1]")
    out = lambda1 * p_k + lambda0 * (1.0 - p_k)
    return float(out) if out.ndim == 0 else out


def selection_threshold(lambda0: float, lambda1: float, theta: float, d: int) -> float:
    """Block-norm where spike and slab densities intersect; may be negative
    for theta near 1 and is reported as-is."""
    if lambda0 == lambda1:
        raise ValidationError("threshold undefined for lambda0 == lambda1")
    if not 0.0 < theta < 1.0:
        raise ValidationError("theta must lie in (0, 1)")
    return (math.log((1.0 - theta) / theta) + d * math.log(lambda0 / lambda1)) / (lambda0 - lambda1)


def generalized_dimension(gamma, d: int, omega: float) -> int:
    """Number of coefficient blocks with euclidean norm above omega."""
    gamma = np.asarray(gamma, dtype=float).reshape(-1, d)
    norms = np.linalg.norm(gamma, axis=1)
    return int(np.sum(norms > omega))


def _mixture_term(block_norms, theta, lambda0, lambda1, d):
    # sum_k log((1-theta) lambda0^d e^{-l0 nk} + theta lambda1^d e^{-l1 nk}),
    # normalizers dropped as a constant
    norms = np.asarray(block_norms, dtype=float)
    log_spike = math.log1p(-theta) + d * math.log(lambda0) - lambda0 * norms
    log_slab = math.log(theta) + d * math.log(lambda1) - lambda1 * norms
    return float(np.sum(np.logaddexp(log_spike, log_slab)))


def _block_norms(gamma, d):
    return np.linalg.norm(np.asarray(gamma, dtype=float).reshape(-1, d), axis=1)


def _beta_term(theta, a, b):
    return (a - 1.0) * math.log(theta) + (b - 1.0) * math.log1p(-theta)


def _check_finite(value, label):
    if not math.isfinite(value):
        raise NumericError(f"{label} evaluated to a non-finite value")
    return value


def log_posterior_structured(gamma, theta, sigma2, *, resid_ss_whitened, logdet_R,
                             N, d, p, lambda0, lambda1, a, b, c0, d0, n_atoms) -> float:
    """Structured-model log posterior up to its additive constant.

    Takes the pre-whitened residual sum of squares ||Ytilde - Utilde gamma||^2
    and sum_i log|R_i| for the current rho atom; the flat atom prior
    contributes -log(n_atoms).
    """
    if sigma2 <= 0:
        raise ValidationError("sigma2 must be positive")
    theta = min(max(theta, THETA_FLOOR), 1.0 - THETA_FLOOR)
    norms = _block_norms(gamma, d)
    value = (
        -0.5 * N * math.log(sigma2)
        - 0.5 * logdet_R
        - resid_ss_whitened / (2.0 * sigma2)
        + _mixture_term(norms, theta, lambda0, lambda1, d)
        + _beta_term(theta, a, b)
        - 0.5 * (c0 + 2.0) * math.log(sigma2)
        - d0 / (2.0 * sigma2)
        - math.log(n_atoms)
    )
    return _check_finite(value, "structured log posterior")


def log_posterior_fractional(gamma, theta, *, resid_ss_whitened, logdet_S,
                             xi, d, p, lambda0, lambda1, a, b) -> float:
    """Fractional (working-covariance) log posterior: the likelihood terms are
    scaled by xi; only (gamma, theta) are free."""
    if not 0.0 < xi < 1.0:
        raise ValidationError("xi must lie in (0, 1)")
    theta = min(max(theta, THETA_FLOOR), 1.0 - THETA_FLOOR)
    norms = _block_norms(gamma, d)
    value = (
        -0.5 * xi * logdet_S
        - 0.5 * xi * resid_ss_whitened
        + _mixture_term(norms, theta, lambda0, lambda1, d)
        + _beta_term(theta, a, b)
    )
    return _check_finite(value, "fractional log posterior")


def log_posterior_unstructured(gamma, theta, *, resid_ss_whitened, logdet_sigma,
                               iw_logdet_term, iw_trace_term, d, p,
                               lambda0, lambda1, a, b) -> float:
    """Unstructured-model log posterior: gaussian term under the current
    per-subject covariances plus the inverse-Wishart prior terms.

    logdet_sigma = sum_i log|Sigma_i|;
    iw_logdet_term = sum_i (m_i + n_i + 1)/2 * log|Sigma_i|;
    iw_trace_term = sum_i tr(Omega_i Sigma_i^-1).
    """
    theta = min(max(theta, THETA_FLOOR), 1.0 - THETA_FLOOR)
    norms = _block_norms(gamma, d)
    value = (
        -0.5 * logdet_sigma
        - 0.5 * resid_ss_whitened
        + _mixture_term(norms, theta, lambda0, lambda1, d)
        + _beta_term(theta, a, b)
        - iw_logdet_term
        - 0.5 * iw_trace_term
    )
    return _check_finite(value, "unstructured log posterior")
