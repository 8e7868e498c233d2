import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvcssl.data_model import LongitudinalDataset
from nvcssl.errors import DomainError, ValidationError
from nvcssl.spline_basis import (
    build_design,
    eval_basis,
    eval_basis_matrix,
    eval_beta,
    make_basis,
    write_curve_csv,
)

from oracles import bspline_row_scalar, design_brute_force


class TestMakeBasis:
    def test_no_interior_knots(self):
        b = make_basis(0.0, 1.0, d=4, degree=3)
        assert b.knots.size == 8
        assert np.allclose(b.knots, [0, 0, 0, 0, 1, 1, 1, 1])

    def test_equispaced_interior(self):
        b = make_basis(0.0, 20.0, d=8, degree=3)
        interior = b.knots[4:-4]
        assert np.allclose(interior, [4.0, 8.0, 12.0, 16.0])

    def test_d_too_small(self):
        with pytest.raises(ValidationError):
            make_basis(0.0, 1.0, d=3, degree=3)

    def test_bad_range(self):
        with pytest.raises(ValidationError):
            make_basis(1.0, 1.0, d=4)


class TestEvalBasis:
    def test_left_endpoint(self):
        b = make_basis(0.0, 10.0, d=6)
        v = eval_basis(b, 0.0)
        assert v[0] == pytest.approx(1.0, abs=1e-14)
        assert np.all(v[1:] == 0.0)

    def test_right_endpoint(self):
        b = make_basis(0.0, 10.0, d=6)
        v = eval_basis(b, 10.0)
        assert v[-1] == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(v[:-1], 0.0, atol=1e-14)

    @given(st.floats(min_value=0.0, max_value=10.0), st.integers(min_value=4, max_value=12))
    @settings(max_examples=60, deadline=None)
    def test_partition_of_unity_and_support(self, t, d):
        b = make_basis(0.0, 10.0, d=d)
        v = eval_basis(b, t)
        assert v.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(v >= 0.0)
        nz = np.nonzero(v)[0]
        assert nz.size <= b.degree + 1
        if nz.size:
            assert np.all(np.diff(nz) == 1)  # contiguous support

    def test_partition_of_unity_dense_grid(self):
        grid = np.linspace(0.0, 10.0, 1000)
        for d in range(4, 13):
            b = make_basis(0.0, 10.0, d=d)
            B = eval_basis_matrix(b, grid)
            assert np.max(np.abs(B.sum(axis=1) - 1.0)) <= 1e-12

    def test_matches_scalar_recursion(self):
        b = make_basis(0.0, 1.0, d=5, degree=3)
        t = 0.625  # midpoint of a uniform knot span
        assert np.allclose(eval_basis(b, t), bspline_row_scalar(b, t), atol=1e-12)

    def test_matches_scalar_recursion_many(self):
        rng = np.random.default_rng(4)
        for d in (4, 7, 12):
            b = make_basis(-2.0, 7.0, d=d)
            for t in rng.uniform(-2.0, 7.0, size=12):
                assert np.allclose(eval_basis(b, t), bspline_row_scalar(b, t), atol=1e-12)

    def test_out_of_range(self):
        b = make_basis(0.0, 1.0, d=4)
        with pytest.raises(DomainError):
            eval_basis(b, 1.0001)
        with pytest.raises(DomainError):
            eval_basis(b, -0.1)


def _design_ds(n_rows=3, p=2, seed=0, x=None):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0.0, 1.0, n_rows))
    X = rng.standard_normal((n_rows, p)) if x is None else x
    return LongitudinalDataset(
        subject_ids=("s1",), times=(t,), responses=(rng.standard_normal(n_rows),),
        covariates=X, variable_names=tuple(f"x{k}" for k in range(p)),
    )


class TestBuildDesign:
    def test_identity_covariate(self):
        ds = _design_ds(n_rows=5, p=1, x=np.ones((5, 1)))
        b = make_basis(0.0, 1.0, d=4)
        design = build_design(ds, b)
        assert np.allclose(design.U, eval_basis_matrix(b, ds.stacked_times))

    def test_zero_column_annihilates_block(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((4, 3))
        X[:, 1] = 0.0
        ds = _design_ds(n_rows=4, p=3, x=X)
        design = build_design(ds, make_basis(0.0, 1.0, d=4))
        assert np.all(design.U[:, design.block(1)] == 0.0)

    def test_matches_brute_force(self):
        ds = _design_ds(n_rows=3, p=2, seed=9)
        b = make_basis(0.0, 1.0, d=4)
        design = build_design(ds, b)
        U_ref = design_brute_force(ds, b, lambda basis, t: bspline_row_scalar(basis, t))
        assert np.max(np.abs(design.U - U_ref)) <= 1e-12

    def test_linear_in_x(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((6, 2))
        ds1 = _design_ds(n_rows=6, p=2, x=X)
        X2 = X.copy()
        X2[:, 0] *= 2.0
        ds2 = LongitudinalDataset(
            subject_ids=ds1.subject_ids, times=ds1.times, responses=ds1.responses,
            covariates=X2, variable_names=ds1.variable_names,
        )
        b = make_basis(0.0, 1.0, d=5)
        d1, d2 = build_design(ds1, b), build_design(ds2, b)
        assert np.allclose(d2.U[:, d2.block(0)], 2.0 * d1.U[:, d1.block(0)])
        assert np.allclose(d2.U[:, d2.block(1)], d1.U[:, d1.block(1)])

    def test_out_of_range_names_subject(self):
        ds = _design_ds(n_rows=4, seed=3)
        with pytest.raises(DomainError, match="s1"):
            build_design(ds, make_basis(0.4, 0.9, d=4))


class TestEvalBeta:
    def test_zero_coefficients(self):
        b = make_basis(0.0, 1.0, d=5)
        assert np.all(eval_beta(np.zeros(5), b, [0.1, 0.5, 0.9]) == 0.0)

    def test_all_ones_constant(self):
        b = make_basis(0.0, 1.0, d=6)
        vals = eval_beta(np.ones(6), b, np.linspace(0, 1, 17))
        assert np.allclose(vals, 1.0, atol=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(7)
        b = make_basis(0.0, 1.0, d=6)
        gamma = rng.standard_normal(6)
        grid = rng.uniform(0.0, 1.0, 5)
        expected = np.array([bspline_row_scalar(b, t) @ gamma for t in grid])
        assert np.allclose(eval_beta(gamma, b, grid), expected, atol=1e-12)


def test_curve_csv_export(tmp_path):
    b = make_basis(0.0, 2.0, d=4)
    gamma = np.concatenate([np.ones(4), np.zeros(4)])
    path = tmp_path / "curves.csv"
    write_curve_csv(b, gamma, ("x1", "x2"), path, num=11)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "covariate,t,beta_hat"
    assert len(lines) == 1 + 2 * 11
    first = lines[1].split(",")
    assert first[0] == "x1"
    assert float(first[2]) == pytest.approx(1.0, abs=1e-9)  # partition of unity
