import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exposure_erf.splines import (
    back_transform,
    build_design,
    natural_cubic_basis,
    ns_matrix,
    standardize,
    standardize_columns,
    write_basis,
)


def test_df_one_reproduces_linear_fit():
    x = np.linspace(0, 10, 30)
    b = natural_cubic_basis(x, 1)
    design = np.column_stack([np.ones_like(x), b.matrix])
    coef, *_ = np.linalg.lstsq(design, 2 + 3 * x, rcond=None)
    np.testing.assert_allclose(design @ coef, 2 + 3 * x, atol=1e-10)


def test_linear_beyond_boundary_knots():
    x = np.linspace(0, 100, 200)
    b = natural_cubic_basis(x, 5)
    for side in (np.array([-30.0, -20.0, -10.0]), np.array([110.0, 120.0, 130.0])):
        vals = b.evaluate(side)
        second_diff = vals[2] - 2 * vals[1] + vals[0]
        np.testing.assert_allclose(second_diff, 0.0, atol=1e-6 * np.abs(vals).max())


def test_second_derivative_vanishes_at_boundary():
    x = np.linspace(0, 1, 50)
    knots = natural_cubic_basis(x, 4).knots
    h = 1e-4
    for k in (knots[0], knots[-1]):
        f = ns_matrix([k - h, k, k + h], knots)
        curv = (f[2] - 2 * f[1] + f[0]) / h**2
        # the one-sided cubic contributes O(h) curvature at the knot itself
        assert np.all(np.abs(curv) < 1e-2)


def test_time_basis_full_rank():
    t = np.arange(1, 364, dtype=float)
    b = natural_cubic_basis(t, 11)
    assert b.matrix.shape == (363, 11)
    s = np.linalg.svd(standardize(b).matrix, compute_uv=False)
    assert s.min() > 1e-8 * s.max()


def test_too_few_distinct_values():
    with pytest.raises(ValueError):
        natural_cubic_basis([1, 2, 3, 1, 2, 3], 3)
    with pytest.raises(ValueError):
        natural_cubic_basis(np.arange(10.0), 0)


def test_standardize_example():
    z, center, scale = standardize_columns(np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(z[:, 0], [-1, 0, 1])
    assert (center[0], scale[0]) == (2.0, 1.0)
    with pytest.raises(ValueError):
        standardize_columns(np.ones((3, 1)))


def test_standardize_idempotent_and_unit_sd():
    b = standardize(natural_cubic_basis(np.linspace(0, 5, 40) ** 2, 4))
    np.testing.assert_allclose(b.matrix.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(b.matrix.std(axis=0, ddof=1), 1, rtol=1e-12)
    again = standardize(b)
    np.testing.assert_array_equal(again.matrix, b.matrix)


def test_regenerated_basis_is_bit_identical():
    x = np.random.default_rng(2).uniform(-5, 30, 120)
    b = standardize(natural_cubic_basis(x, 3))
    np.testing.assert_array_equal(b.evaluate(x), (ns_matrix(x, b.knots) - b.center) / b.scale)
    raw = natural_cubic_basis(x, 3)
    np.testing.assert_array_equal(raw.evaluate(x), raw.matrix)


def test_back_transform_reproduces_unstandardized_fit(rng):
    x = np.sort(rng.uniform(0, 50, 150))
    y = np.sin(x / 8) + rng.normal(0, 0.1, x.size)
    raw = natural_cubic_basis(x, 6)
    std = standardize(raw)
    d_std = np.column_stack([np.ones_like(x), std.matrix])
    coef, *_ = np.linalg.lstsq(d_std, y, rcond=None)
    a0, a = back_transform(coef[0], coef[1:], std.center, std.scale)
    pred_raw = a0 + raw.matrix @ a
    np.testing.assert_allclose(pred_raw, d_std @ coef, atol=1e-10)
    d_raw = np.column_stack([np.ones_like(x), raw.matrix])
    coef_raw, *_ = np.linalg.lstsq(d_raw, y, rcond=None)
    np.testing.assert_allclose(d_raw @ coef_raw, d_std @ coef, atol=1e-8)


@given(st.integers(1, 8), st.integers(0, 10_000))
def test_design_shape_and_intercept(df, seed):
    gen = np.random.default_rng(seed)
    times = np.arange(1.0, 61.0)
    temps = gen.normal(10, 5, 60)
    design, names, (tb, sb) = build_design(times, temps, df, 2)
    assert design.shape == (60, 1 + df + 2)
    assert names[0] == "intercept" and np.all(design[:, 0] == 1)
    assert tb.df == df and sb.df == 2


def test_basis_export(tmp_path):
    b = natural_cubic_basis(np.arange(20.0), 3)
    write_basis(b, pd.date_range("2000-01-01", periods=20), tmp_path / "b.csv")
    frame = pd.read_csv(tmp_path / "b.csv", float_precision="round_trip")
    assert list(frame.columns) == ["date", "col_1", "col_2", "col_3"]
    np.testing.assert_array_equal(frame.iloc[:, 1:].to_numpy(), b.matrix)
