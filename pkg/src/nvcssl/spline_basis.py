"""Clamped B-spline basis construction and the stacked regression design.

Each covariate's coefficient curve is a linear combination of d basis
functions over the observed time range; the stacked design U has one d-column
block per covariate, block k being the covariate column elementwise-scaled
basis rows. Equispaced interior knots, no extrapolation outside the range.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data_model import LongitudinalDataset
from .errors import DomainError, ValidationError

__all__ = [
    "BasisSpec",
    "DesignExpansion",
    "make_basis",
    "eval_basis",
    "eval_basis_matrix",
    "build_design",
    "eval_beta",
    "write_curve_csv",
]


@dataclass(frozen=True)
class BasisSpec:
    degree: int
    d: int              # basis dimension per covariate
    knots: np.ndarray   # clamped: boundary knots repeated degree+1 times

    def __post_init__(self):
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))
        if self.d < self.degree + 1:
            raise ValidationError(f"basis dimension d={self.d} requires d >= degree+1 = {self.degree + 1}")
        if self.knots.size != self.d + self.degree + 1:
            raise ValidationError("knot vector length must equal d + degree + 1")
        if np.any(np.diff(self.knots) < 0):
            raise ValidationError("knots must be non-decreasing")
        self.knots.setflags(write=False)

    @property
    def t_min(self) -> float:
        return float(self.knots[0])

    @property
    def t_max(self) -> float:
        return float(self.knots[-1])


def make_basis(t_min: float, t_max: float, d: int, degree: int = 3) -> BasisSpec:
    """Clamped knot vector with d - degree - 1 equispaced interior knots on (t_min, t_max)."""
    if not t_max > t_min:
        raise ValidationError(f"need t_max > t_min, got [{t_min}, {t_max}]")
    if d < degree + 1:
        raise ValidationError(f"basis dimension d={d} requires d >= degree+1 = {degree + 1}")
    n_interior = d - degree - 1
    interior = np.linspace(t_min, t_max, n_interior + 2)[1:-1]
    knots = np.concatenate([np.full(degree + 1, t_min), interior, np.full(degree + 1, t_max)])
    return BasisSpec(degree=degree, d=d, knots=knots)


def _find_span(knots: np.ndarray, degree: int, d: int, t: float) -> int:
    # index mu with knots[mu] <= t < knots[mu+1]; right endpoint folded into last span
    if t >= knots[d]:
        return d - 1
    return int(np.searchsorted(knots, t, side="right") - 1)


def eval_basis_matrix(basis: BasisSpec, t) -> np.ndarray:
    """Evaluate all d basis functions at each t; returns len(t) x d.

    Cox-de Boor triangular scheme per evaluation point, restricted to the
    degree+1 functions supported on the containing span.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    knots, deg, d = basis.knots, basis.degree, basis.d
    lo, hi = basis.t_min, basis.t_max
    if np.any(t < lo) or np.any(t > hi):
        bad = t[(t < lo) | (t > hi)][0]
        raise DomainError(f"time {bad} outside basis range [{lo}, {hi}]")
    out = np.zeros((t.size, d))
    work = np.empty(deg + 1)
    for i, ti in enumerate(t):
        mu = _find_span(knots, deg, d, ti)
        work[0] = 1.0
        for r in range(1, deg + 1):
            # raise degree: work[0..r] become the r-degree values on span mu
            saved = 0.0
            for j in range(r):
                left = knots[mu + j + 1]
                right = knots[mu + j + 1 - r]
                denom = left - right
                term = work[j] / denom if denom > 0 else 0.0
                work[j] = saved + (left - ti) * term
                saved = (ti - right) * term
            work[r] = saved
        out[i, mu - deg:mu + 1] = work
    return out


def eval_basis(basis: BasisSpec, t: float) -> np.ndarray:
    """Basis values at a single time; nonnegative and summing to one."""
    return eval_basis_matrix(basis, [t])[0]


@dataclass(frozen=True)
class DesignExpansion:
    basis: BasisSpec
    U: np.ndarray  # N x (d*p), subject-major row order

    def __post_init__(self):
        object.__setattr__(self, "U", np.ascontiguousarray(self.U, dtype=float))
        self.U.setflags(write=False)

    @property
    def p(self) -> int:
        return self.U.shape[1] // self.basis.d

    def block(self, k: int) -> slice:
        """Columns of covariate k's coefficient block."""
        d = self.basis.d
        return slice(k * d, (k + 1) * d)


def build_design(ds: LongitudinalDataset, basis: BasisSpec) -> DesignExpansion:
    """Assemble the N x (d*p) stacked design: block k = x_k * basis rows."""
    t_all = ds.stacked_times
    lo, hi = basis.t_min, basis.t_max
    if np.any(t_all < lo) or np.any(t_all > hi):
        for sid, t in zip(ds.subject_ids, ds.times):
            bad = t[(t < lo) | (t > hi)]
            if bad.size:
                raise DomainError(
                    f"subject {sid!r}: time {bad[0]} outside basis range [{lo}, {hi}]"
                )
    B = eval_basis_matrix(basis, t_all)          # N x d
    N, p, d = t_all.size, ds.p, basis.d
    U = np.empty((N, d * p))
    for k in range(p):
        U[:, k * d:(k + 1) * d] = ds.covariates[:, k:k + 1] * B
    return DesignExpansion(basis=basis, U=U)


def eval_beta(gamma_k: np.ndarray, basis: BasisSpec, t_grid) -> np.ndarray:
    """Coefficient curve values: basis matrix at t_grid times the block coefficients."""
    gamma_k = np.asarray(gamma_k, dtype=float)
    if gamma_k.shape != (basis.d,):
        raise ValidationError(f"gamma_k must have length d={basis.d}")
    return eval_basis_matrix(basis, t_grid) @ gamma_k


def write_curve_csv(basis: BasisSpec, gamma: np.ndarray, variable_names, path, num: int = 200) -> None:
    """Export fitted curves as `covariate,t,beta_hat` over an equispaced grid."""
    gamma = np.asarray(gamma, dtype=float).reshape(len(variable_names), basis.d)
    grid = np.linspace(basis.t_min, basis.t_max, num)
    B = eval_basis_matrix(basis, grid)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["covariate", "t", "beta_hat"])
        for name, gk in zip(variable_names, gamma):
            curve = B @ gk
            for tv, bv in zip(grid, curve):
                writer.writerow([name, f"{tv:.12g}", f"{bv:.12g}"])
