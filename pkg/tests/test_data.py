"""Dataset construction, CSV ingestion, centering, projections and losses."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulse_iv.data import (
    CsvSchema,
    Dataset,
    DesignView,
    IdentificationClass,
    ModelPartition,
    center,
    load_csv,
    projection_apply,
)
from pulse_iv.exceptions import DataError, SingularGram

from conftest import loss_by_residuals, make_instance, raw_matrices


class TestDataset:
    def test_shapes_and_counts(self):
        ds = Dataset(y=[1.0, 2.0, 3.0], x=[[1.0], [2.0], [3.0]], a=[[0.1], [0.2], [0.3]])
        assert (ds.n, ds.d, ds.q) == (3, 1, 1)

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError, match="non-finite"):
            Dataset(y=[1.0, np.nan], x=[[1.0], [2.0]], a=[[1.0], [2.0]])

    def test_rejects_row_mismatch(self):
        with pytest.raises(DataError, match="row mismatch"):
            Dataset(y=[1.0, 2.0], x=[[1.0], [2.0], [3.0]], a=[[1.0], [2.0]])

    def test_rejects_too_few_rows(self):
        with pytest.raises(DataError, match="n >= max"):
            Dataset(y=[1.0], x=[[1.0, 2.0]], a=[[1.0, 2.0]])

    def test_arrays_are_readonly(self):
        ds = Dataset(y=[1.0, 2.0], x=[[1.0], [2.0]], a=[[1.0], [2.0]])
        with pytest.raises(ValueError):
            ds.y[0] = 5.0


class TestLoadCsv:
    def test_three_row_file(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text("y,x1,a1\n1,2,3\n4,5,6\n7,8,9\n")
        ds = load_csv(path, CsvSchema("y", ("x1",), ("a1",)))
        assert (ds.n, ds.d, ds.q) == (3, 1, 1)
        assert ds.x_names == ("x1",) and ds.a_names == ("a1",)
        np.testing.assert_allclose(ds.x[:, 0], [2.0, 5.0, 8.0])

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x1,a1\n1,2,3\n4,oops,6\n")
        with pytest.raises(DataError, match=r"row 2, column 'x1'"):
            load_csv(path, CsvSchema("y", ("x1",), ("a1",)))

    def test_missing_column(self, tmp_path):
        path = tmp_path / "cols.csv"
        path.write_text("y,x1\n1,2\n")
        with pytest.raises(DataError, match=r"missing column.*a1"):
            load_csv(path, CsvSchema("y", ("x1",), ("a1",)))


class TestCenter:
    def test_simple_column(self):
        ds = Dataset(y=[1.0, 2.0, 3.0], x=[[1.0], [2.0], [3.0]], a=[[4.0], [5.0], [6.0]])
        out = center(ds)
        np.testing.assert_allclose(out.y, [-1.0, 0.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(out.x[:, 0], [-1.0, 0.0, 1.0], atol=1e-15)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        ds = Dataset(y=rng.normal(size=20), x=rng.normal(size=(20, 2)), a=rng.normal(size=(20, 2)))
        once = center(ds)
        twice = center(once)
        np.testing.assert_allclose(once.a, twice.a, atol=1e-12)

    def test_anchor_columns_centered_within_tolerance(self):
        rng = np.random.default_rng(1)
        ds = Dataset(
            y=rng.normal(size=50),
            x=rng.normal(size=(50, 1)),
            a=1e6 + rng.normal(size=(50, 3)),
        )
        out = center(ds)
        scale = np.abs(out.a).max(axis=0)
        assert np.all(np.abs(out.a.mean(axis=0)) <= 1e-12 * np.maximum(scale, 1.0))

    def test_role_selection(self):
        ds = Dataset(y=[1.0, 3.0], x=[[2.0], [4.0]], a=[[5.0], [7.0]])
        out = center(ds, roles=("exogenous",))
        np.testing.assert_allclose(out.y, ds.y)
        np.testing.assert_allclose(out.a[:, 0], [-1.0, 1.0])


class TestProjection:
    def test_fixes_its_range(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(10, 2))
        v = a @ rng.normal(size=2)
        np.testing.assert_allclose(projection_apply(a, v), v, atol=1e-10)

    def test_kills_orthogonal_complement(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(10, 2))
        v = rng.normal(size=10)
        q_basis, _ = np.linalg.qr(a)
        v_perp = v - q_basis @ (q_basis.T @ v)
        np.testing.assert_allclose(projection_apply(a, v_perp), 0.0, atol=1e-10)

    def test_contraction_idempotence_and_qr_oracle(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(10, 2))
        v = rng.normal(size=10)
        pv = projection_apply(a, v)
        assert np.linalg.norm(pv) <= np.linalg.norm(v) + 1e-12
        np.testing.assert_allclose(projection_apply(a, pv), pv, atol=1e-10)
        q_basis, _ = np.linalg.qr(a)
        np.testing.assert_allclose(pv, q_basis @ (q_basis.T @ v), atol=1e-10)

    def test_singular_gram(self):
        a = np.ones((5, 2))  # duplicated column
        with pytest.raises(SingularGram, match="A\\^T A"):
            projection_apply(a, np.ones(5))


class TestLosses:
    def test_ols_zero_at_interpolant(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(2, 2))
        alpha = rng.normal(size=2)
        y = z @ alpha
        ds = Dataset(y=y, x=z, a=rng.normal(size=(2, 2)))
        view = DesignView(ds)
        assert view.ols_loss(alpha) <= 1e-20

    def test_ols_at_zero_coefficient(self):
        view = make_instance(6)
        expected = float(view.y @ view.y) / view.n
        assert view.ols_loss(np.zeros(view.k)) == pytest.approx(expected, rel=1e-12)

    def test_losses_match_residual_oracle(self):
        view = make_instance(7, n=60, d1=2, q=3)
        y, z, a = raw_matrices(view)
        rng = np.random.default_rng(8)
        for _ in range(5):
            alpha = rng.normal(size=view.k)
            lo, li = loss_by_residuals(y, z, a, alpha)
            assert view.ols_loss(alpha) == pytest.approx(lo, rel=1e-10)
            assert view.iv_loss(alpha) == pytest.approx(li, rel=1e-10)

    def test_iv_loss_zero_when_residual_orthogonal(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(30, 2))
        q_basis, _ = np.linalg.qr(a)
        resid = rng.normal(size=30)
        resid -= q_basis @ (q_basis.T @ resid)
        z = rng.normal(size=(30, 1))
        y = z[:, 0] * 2.0 + resid
        view = DesignView(Dataset(y=y, x=z, a=a))
        assert view.iv_loss(np.array([2.0])) <= 1e-18

    def test_iv_loss_eigen_root_oracle(self):
        view = make_instance(10, n=40, d1=1, q=3)
        y, z, a = raw_matrices(view)
        alpha = np.array([0.3])
        w, v = np.linalg.eigh(a.T @ a)
        isqrt = (v / np.sqrt(w)) @ v.T
        r = isqrt @ (a.T @ (y - z @ alpha))
        assert view.iv_loss(alpha) == pytest.approx(float(r @ r) / view.n, rel=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_iv_loss_below_ols_loss(self, seed):
        view = make_instance(seed % 50, n=40, d1=1, q=2)
        alpha = np.random.default_rng(seed).normal(size=view.k)
        li, lo = view.iv_loss(alpha), view.ols_loss(alpha)
        assert 0.0 <= li <= lo + 1e-12 * max(1.0, lo)

    def test_strict_convexity_at_midpoint(self):
        view = make_instance(11, n=50, d1=2, q=2)
        rng = np.random.default_rng(12)
        for _ in range(10):
            a1, a2 = rng.normal(size=(2, view.k))
            mid = view.ols_loss(0.5 * (a1 + a2))
            avg = 0.5 * (view.ols_loss(a1) + view.ols_loss(a2))
            if np.linalg.norm(a1 - a2) > 1e-8:
                assert mid < avg - 1e-12 * max(1.0, avg) or np.isclose(mid, avg)
                assert mid <= avg

    def test_center_commutes_with_projection(self):
        rng = np.random.default_rng(13)
        a = rng.normal(size=(40, 2)) + 3.0
        v = rng.normal(size=40) + 1.0
        a_c = a - a.mean(axis=0)
        v_c = v - v.mean()
        left = projection_apply(a_c, v_c)
        right = projection_apply(a_c, v)
        right -= right.mean()
        np.testing.assert_allclose(left, right, atol=1e-10)


class TestPartitionAndView:
    def test_identification_classes(self):
        part = ModelPartition((0,), ())
        assert part.identification_class(1) is IdentificationClass.JUST
        assert part.identification_class(3) is IdentificationClass.OVER
        part2 = ModelPartition((0, 1), ())
        assert part2.identification_class(1) is IdentificationClass.UNDER
        assert part2.identification_degree(1) == -1

    def test_duplicate_indices_rejected(self):
        with pytest.raises(ValueError, match="duplicate-free"):
            ModelPartition((0, 0))

    def test_out_of_range_rejected(self):
        ds = Dataset(y=[1.0, 2.0], x=[[1.0], [2.0]], a=[[1.0], [2.0]])
        with pytest.raises(ValueError, match="out of range"):
            DesignView(ds, ModelPartition((0,), (4,)))

    def test_view_orders_endogenous_first(self):
        rng = np.random.default_rng(14)
        ds = Dataset(
            y=rng.normal(size=10),
            x=rng.normal(size=(10, 2)),
            a=rng.normal(size=(10, 3)),
            x_names=("p", "r"),
            a_names=("u", "v", "w"),
        )
        view = DesignView(ds, ModelPartition((1,), (2, 0)))
        assert view.coef_names == ("r", "w", "u")
        np.testing.assert_allclose(view.z[:, 0], ds.x[:, 1])
        np.testing.assert_allclose(view.z[:, 1], ds.a[:, 2])

    def test_gram_caches_match_direct_products(self):
        view = make_instance(15, n=30, d1=2, q=3, q1=1)
        y, z, a = raw_matrices(view)
        np.testing.assert_allclose(view.ztz, z.T @ z, rtol=1e-12)
        np.testing.assert_allclose(view.atz, a.T @ z, rtol=1e-12)
        np.testing.assert_allclose(view.aty, a.T @ y, rtol=1e-12)
