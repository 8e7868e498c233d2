"""Within-subject correlation algebra: AR(1)/CS closed forms and block whitening.

AR(1) on an irregular grid is a Gaussian Markov chain, so its precision is
tridiagonal and its whitening factor bidiagonal; both are assembled in O(n_i)
from the consecutive-gap correlations a_j = rho^(t_{j+1} - t_j). Compound
symmetry uses the rank-one (Sherman-Morrison) identities. The whitening
factor W satisfies W'W = R^{-1}; only quadratic forms and log-determinants
enter the likelihood, so any such factor is acceptable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data_model import LongitudinalDataset
from .errors import NumericError, ValidationError
from .spline_basis import DesignExpansion

__all__ = [
    "CovarianceSpec",
    "WhitenedSystem",
    "ar1_matrix",
    "cs_matrix",
    "closed_form_inverse_logdet",
    "whiten",
]

RHO_CAP = 1.0 - 1e-6  # numeric guard inside empirical-Bayes searches

STRUCTURED_KINDS = ("ar1", "cs")


@dataclass(frozen=True)
class CovarianceSpec:
    """Within-subject covariance description.

    kind: "ar1" | "cs" | "independence" | "working" | "unstructured".
    Structured kinds carry a single correlation parameter rho (sigma2 is
    tracked separately by the fitters); working/unstructured carry explicit
    per-subject SPD matrices.
    """

    kind: str
    rho: float = 0.0
    sigma2: float = 1.0
    matrices: tuple = ()

    def __post_init__(self):
        if self.kind not in ("ar1", "cs", "independence", "working", "unstructured"):
            raise ValidationError(f"unknown covariance kind {self.kind!r}")
        if self.kind in STRUCTURED_KINDS and not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"rho must lie in [0, 1), got {self.rho}")
        if self.sigma2 <= 0:
            raise ValidationError("sigma2 must be positive")
        if self.kind in ("working", "unstructured"):
            mats = tuple(np.asarray(m, dtype=float) for m in self.matrices)
            if not mats:
                raise ValidationError(f"{self.kind} spec needs per-subject matrices")
            object.__setattr__(self, "matrices", mats)

    @classmethod
    def ar1(cls, rho, sigma2=1.0):
        return cls(kind="ar1", rho=rho, sigma2=sigma2)

    @classmethod
    def cs(cls, rho, sigma2=1.0):
        return cls(kind="cs", rho=rho, sigma2=sigma2)

    @classmethod
    def independence(cls):
        return cls(kind="independence")

    @classmethod
    def working(cls, matrices):
        return cls(kind="working", matrices=tuple(matrices))

    @classmethod
    def unstructured(cls, matrices):
        return cls(kind="unstructured", matrices=tuple(matrices))


def ar1_matrix(times, rho: float) -> np.ndarray:
    """R[j,k] = rho^|t_j - t_k|, with 0^0 = 1 so rho = 0 gives the identity."""
    if not 0.0 <= rho < 1.0:
        raise ValidationError(f"rho must lie in [0, 1), got {rho}")
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise ValidationError("times must be strictly increasing")
    gaps = np.abs(t[:, None] - t[None, :])
    if rho == 0.0:
        return np.eye(t.size)
    return rho ** gaps


def cs_matrix(n_i: int, rho: float) -> np.ndarray:
    """Unit diagonal, constant rho off-diagonal."""
    if not 0.0 <= rho < 1.0:
        raise ValidationError(f"rho must lie in [0, 1), got {rho}")
    R = np.full((n_i, n_i), rho)
    np.fill_diagonal(R, 1.0)
    return R


def _ar1_gap_correlations(times, rho):
    t = np.asarray(times, dtype=float)
    gaps = np.diff(t)
    a = rho ** gaps if rho > 0 else np.zeros(gaps.size)
    one_minus = 1.0 - a * a
    if np.any(one_minus <= 0.0) or not np.all(np.isfinite(one_minus)):
        raise NumericError(f"1 - rho^(2*gap) underflowed for rho={rho}")
    return a, one_minus


def ar1_inverse_logdet(times, rho: float):
    """Tridiagonal precision of the irregular-gap AR(1) correlation.

    With a_j = rho^(t_{j+1}-t_j): off-diagonal -a_j/(1-a_j^2), diagonal
    accumulates 1/(1-a^2) contributions from the adjacent gaps;
    log|R| = sum_j log(1 - a_j^2).
    """
    t = np.asarray(times, dtype=float)
    m = t.size
    if m == 1:
        return np.eye(1), 0.0
    a, one_minus = _ar1_gap_correlations(t, rho)
    inv = np.zeros((m, m))
    diag = np.ones(m)
    diag[:-1] += a * a / one_minus
    diag[1:] += a * a / one_minus
    # equivalent to 1/(1-a_{j-1}^2) + 1/(1-a_j^2) - 1 on interior entries
    inv[np.arange(m), np.arange(m)] = diag
    off = -a / one_minus
    inv[np.arange(m - 1), np.arange(1, m)] = off
    inv[np.arange(1, m), np.arange(m - 1)] = off
    return inv, float(np.sum(np.log(one_minus)))


def cs_inverse_logdet(n_i: int, rho: float):
    """Sherman-Morrison inverse: (I - c J)/(1-rho), c = rho/(1+(n_i-1)rho)."""
    if rho == 0.0:
        return np.eye(n_i), 0.0
    denom = 1.0 + (n_i - 1) * rho
    if denom <= 0 or (1.0 - rho) <= 0:
        raise NumericError(f"CS inverse undefined for rho={rho}, n_i={n_i}")
    c = rho / denom
    inv = (np.eye(n_i) - c * np.ones((n_i, n_i))) / (1.0 - rho)
    logdet = (n_i - 1) * np.log1p(-rho) + np.log(denom)
    return inv, float(logdet)


def closed_form_inverse_logdet(kind: str, times_or_n, rho: float):
    """Dispatch to the AR(1)/CS closed forms; returns (R_inverse, log|R|)."""
    if not 0.0 <= rho < 1.0:
        raise ValidationError(f"rho must lie in [0, 1), got {rho}")
    if kind == "ar1":
        return ar1_inverse_logdet(times_or_n, rho)
    if kind == "cs":
        return cs_inverse_logdet(int(times_or_n), rho)
    raise ValidationError(f"closed form only for ar1/cs, got {kind!r}")


def _ar1_whiten_block(times, rho, block):
    """Apply the bidiagonal innovations factor: row j is
    (x_j - a_j x_{j-1}) / sqrt(1 - a_j^2), row 0 passes through."""
    if times.size == 1 or rho == 0.0:
        return np.array(block, dtype=float, copy=True)
    a, one_minus = _ar1_gap_correlations(times, rho)
    out = np.array(block, dtype=float, copy=True)
    scale = np.sqrt(one_minus)
    if block.ndim == 1:
        out[1:] = (block[1:] - a * block[:-1]) / scale
    else:
        out[1:] = (block[1:] - a[:, None] * block[:-1]) / scale[:, None]
    return out


def _upper_factor_from_precision(precision):
    """W = chol(R^-1)^T so that W'W = R^-1."""
    try:
        L = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"precision not SPD: {exc}") from None
    return L.T


def _inv_lower_factor(matrix, label):
    """W = C^-1 for S = C C', so that W'W = S^-1; also returns log|S|."""
    try:
        C = np.linalg.cholesky(np.asarray(matrix, dtype=float))
    except np.linalg.LinAlgError:
        raise NumericError(f"covariance block for subject {label!r} is not SPD") from None
    return C, float(2.0 * np.sum(np.log(np.diag(C))))


@dataclass(frozen=True)
class WhitenedSystem:
    Y: np.ndarray          # whitened response, length N
    U: np.ndarray          # whitened design, N x (d*p)
    logdet: float          # sum_i log|R_i| (or log|S_i| for explicit matrices)

    def __post_init__(self):
        object.__setattr__(self, "U", np.ascontiguousarray(self.U, dtype=float))
        object.__setattr__(self, "Y", np.ascontiguousarray(self.Y, dtype=float))


def whiten(spec: CovarianceSpec, ds: LongitudinalDataset, design: DesignExpansion) -> WhitenedSystem:
    """Per-subject whitening of the stacked (Y, U) system.

    Structured kinds whiten by the correlation R only (sigma2 stays in the
    objective); working/unstructured whiten by the full matrices.
    """
    Y = ds.stacked_responses
    U = design.U
    slices = ds.subject_slices()
    if spec.kind in ("working", "unstructured") and len(spec.matrices) != ds.n:
        raise ValidationError("need one covariance block per subject")

    Yt = np.empty_like(Y)
    Ut = np.empty_like(U)
    logdet = 0.0
    for i, sl in enumerate(slices):
        yi, ui = Y[sl], U[sl]
        ni = yi.size
        if spec.kind == "independence" or (spec.kind in STRUCTURED_KINDS and spec.rho == 0.0):
            Yt[sl], Ut[sl] = yi, ui
        elif spec.kind == "ar1":
            ti = ds.times[i]
            Yt[sl] = _ar1_whiten_block(ti, spec.rho, yi)
            Ut[sl] = _ar1_whiten_block(ti, spec.rho, ui)
            _, ld = ar1_inverse_logdet(ti, spec.rho)
            logdet += ld
        elif spec.kind == "cs":
            prec, ld = cs_inverse_logdet(ni, spec.rho)
            W = _upper_factor_from_precision(prec)
            Yt[sl] = W @ yi
            Ut[sl] = W @ ui
            logdet += ld
        else:
            mat = spec.matrices[i]
            if mat.shape != (ni, ni):
                raise ValidationError(
                    f"covariance block for subject {ds.subject_ids[i]!r} has shape {mat.shape}, expected {(ni, ni)}"
                )
            C, ld = _inv_lower_factor(mat, ds.subject_ids[i])
            Yt[sl] = scipy.linalg.solve_triangular(C, yi, lower=True)
            Ut[sl] = scipy.linalg.solve_triangular(C, ui, lower=True)
            logdet += ld
    return WhitenedSystem(Y=Yt, U=Ut, logdet=logdet)
