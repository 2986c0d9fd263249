import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from besim.codec import BinSpec, MotionBinner, decode_motion, encode_motion, fit_bins, sample_motion
from besim.exceptions import ContractError, DataError

reals = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_median_edge():
    spec = fit_bins(np.arange(1, 101, dtype=float).reshape(-1, 1), 2)
    np.testing.assert_allclose(spec.edges[0], [1.0, 50.5, 100.0])


def test_constant_dimension_falls_back(caplog):
    data = np.column_stack([np.arange(100.0), np.full(100, 3.0)])
    with caplog.at_level(logging.WARNING):
        spec = fit_bins(data, 4)
    assert "equal-width" in caplog.text
    bins = encode_motion(data, spec)[:, 1]
    assert np.unique(bins).size == 1
    np.testing.assert_allclose(np.diff(spec.edges[1]), 0.25)


def test_uniform_data_equal_frequency():
    x = np.random.default_rng(0).uniform(-2, 5, size=(51000, 1))
    spec = fit_bins(x, 51)
    counts = np.bincount(encode_motion(x, spec)[:, 0], minlength=51) / len(x)
    assert np.all(np.abs(counts - 1 / 51) <= 0.2 / 51)


def test_tied_quantiles_keep_bin_count():
    x = np.concatenate([np.zeros(900), np.linspace(1, 2, 100)]).reshape(-1, 1)
    spec = fit_bins(x, 10)
    assert spec.bin_counts == [10]
    assert np.all(np.diff(spec.edges[0]) > 0)


def test_per_dimension_bin_counts():
    x = np.random.default_rng(1).normal(size=(500, 3))
    x[:, 2] = x[:, 2] > 0
    spec = fit_bins(x, [7, 5, 2])
    assert spec.bin_counts == [7, 5, 2]
    assert set(encode_motion(x, spec)[:, 2]) == {0, 1}


def test_edges_cover_training_range():
    x = np.random.default_rng(2).standard_t(2, size=(2000, 2))
    spec = fit_bins(x, 21)
    np.testing.assert_allclose(spec.lower, x.min(axis=0))
    np.testing.assert_allclose(spec.upper, x.max(axis=0))


def test_encode_edges_and_clamp():
    spec = BinSpec([[0.0, 1.0, 2.0, 3.0]])
    assert encode_motion([0.0], spec)[0] == 0
    assert encode_motion([1.0], spec)[0] == 1
    assert encode_motion([99.0], spec)[0] == 2
    assert encode_motion([-99.0], spec)[0] == 0
    assert encode_motion([3.0], spec)[0] == 2


@given(arrays(np.float64, (20, 2), elements=reals))
def test_encode_total_and_order_preserving(x):
    spec = BinSpec([np.linspace(-10, 10, 8), np.linspace(0, 1, 5)])
    b = encode_motion(x, spec)
    assert b.shape == x.shape
    for d in range(2):
        assert b[:, d].min() >= 0 and b[:, d].max() < spec.bin_counts[d]
        order = np.argsort(x[:, d], kind="stable")
        assert np.all(np.diff(b[order, d]) >= 0)


@given(arrays(np.float64, (15, 2), elements=st.floats(-10, 10)))
def test_decode_round_trip_same_bin(x):
    spec = BinSpec([np.linspace(-10, 10, 8), np.geomspace(1, 30, 6) - 11])
    b = encode_motion(x, spec)
    back = decode_motion(b, spec)
    np.testing.assert_array_equal(encode_motion(back, spec), b)
    np.testing.assert_array_equal(encode_motion(decode_motion(encode_motion(back, spec), spec), spec), b)


def test_binspec_validation():
    with pytest.raises(ContractError):
        BinSpec([[0.0, 1.0]])
    with pytest.raises(ContractError):
        BinSpec([[0.0, 1.0, 1.0]])


def test_binspec_csv_round_trip(tmp_path):
    spec = fit_bins(np.random.default_rng(3).normal(size=(300, 3)), [4, 6, 2])
    spec.to_csv(tmp_path / "bins.csv")
    lines = (tmp_path / "bins.csv").read_text().splitlines()
    assert lines[0] == "dimension,edge_index,edge_value"
    back = BinSpec.from_csv(tmp_path / "bins.csv")
    for a, b in zip(spec.edges, back.edges):
        np.testing.assert_array_equal(a, b)


def test_binspec_csv_errors(tmp_path):
    p = tmp_path / "bins.csv"
    p.write_text("dimension,edge_index,edge_value\n0,0,1.0\n0,x,2\n")
    with pytest.raises(DataError, match="line 3"):
        BinSpec.from_csv(p)


def test_sample_delta_stays_in_bin():
    spec = BinSpec([np.linspace(0, 1, 6)])
    r = np.random.default_rng(0)
    p = np.zeros(5)
    p[3] = 1.0
    vals = [sample_motion([p], spec, r)[0] for _ in range(500)]
    assert min(vals) >= 0.6 and max(vals) <= 0.8


def test_sample_uniform_frequencies():
    n, draws = 10, 10000
    spec = BinSpec([np.linspace(0, 1, n + 1)])
    r = np.random.default_rng(1)
    vals = np.array([sample_motion([np.full(n, 1 / n)], spec, r)[0] for _ in range(draws)])
    freq = np.bincount(encode_motion(vals[:, None], spec)[:, 0], minlength=n)
    sigma = np.sqrt(draws * (1 / n) * (1 - 1 / n))
    assert np.all(np.abs(freq - draws / n) < 4 * sigma)


def test_sample_reproducible():
    spec = BinSpec([np.linspace(0, 1, 6), np.linspace(-1, 1, 4)])
    p = [np.full(5, 0.2), np.array([0.5, 0.25, 0.25])]
    a = [sample_motion(p, spec, np.random.default_rng(9)) for _ in range(3)]
    b = [sample_motion(p, spec, np.random.default_rng(9)) for _ in range(3)]
    np.testing.assert_array_equal(a, b)


def test_sample_rejects_unnormalized():
    spec = BinSpec([np.linspace(0, 1, 4)])
    with pytest.raises(ContractError):
        sample_motion([np.array([0.5, 0.5, 0.1])], spec, np.random.default_rng(0))
    with pytest.raises(ContractError):
        sample_motion([np.array([0.5, 0.5])], spec, np.random.default_rng(0))


def test_sample_argmax_and_bins():
    spec = BinSpec([np.array([0.0, 1.0, 3.0])])
    out, bins = sample_motion([np.array([0.2, 0.8])], spec, None, mode="argmax", return_bins=True)
    assert out[0] == 2.0 and bins[0] == 1


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1), st.integers(2, 8))
def test_sample_within_overall_range(seed, n):
    r = np.random.default_rng(seed)
    spec = BinSpec([np.sort(r.choice(1000, n + 1, replace=False)) / 10.0])
    p = r.dirichlet(np.ones(n))
    v = sample_motion([p], spec, r)[0]
    assert spec.lower[0] <= v <= spec.upper[0]


def test_binner_estimator_api():
    x = np.random.default_rng(4).normal(size=(400, 2))
    b = MotionBinner(n_bins=8).fit(x)
    assert b.get_params() == {"n_bins": 8}
    idx = b.transform(x)
    assert idx.shape == x.shape and idx.max() == 7
    mids = b.inverse_transform(idx)
    np.testing.assert_array_equal(b.transform(mids), idx)
