import warnings

import numpy as np
import pytest

from parkcast.evaluation import (
    HistoricalAverage, LassoBaseline, PredictionReport, build_report, color_scale, flatten_inputs,
    heatmap_export, historical_average_predict, lasso_fit, lasso_lambda_max, lasso_path,
    latest_observation_predict, mae, mape, q95_capacities, q95_capacity, soft_threshold,
    write_comparison_csv,
)


def orthonormal_design(n, p, rng):
    q, _ = np.linalg.qr(rng.normal(size=(n, p)))
    return q


# -- q95 ----------------------------------------------------------------------------

def test_q95_examples():
    assert q95_capacity(np.arange(1, 101)) == 95
    assert q95_capacity(np.full(7, 12.0)) == 12
    assert q95_capacity(np.zeros(20)) == 1
    with pytest.raises(ValueError):
        q95_capacity([])


def test_q95_nearest_rank_oracle(rng):
    for n in (1, 2, 19, 20, 21, 137):
        x = rng.integers(0, 40, n)
        s = sorted(x.tolist())
        rank = -(-95 * n // 100)          # ceil(0.95 n) in integers
        assert q95_capacity(x) == max(s[rank - 1], 1)


# -- metrics ------------------------------------------------------------------------

def test_metric_examples():
    y = np.array([[10.0]])
    assert mae(y, y) == 0 and mape(y, y) == 0
    assert mae(np.array([[8.0]]), y) == 2
    assert mape(np.array([[8.0]]), y, capacities=[20.0]) == pytest.approx(0.1)


def test_metrics_match_double_loop(rng):
    truth = rng.integers(0, 30, size=(50, 7)).astype(float)
    pred = truth + rng.normal(scale=3, size=truth.shape)
    cap = q95_capacities(truth)
    tot_a = tot_p = 0.0
    for i in range(50):
        for j in range(7):
            tot_a += abs(truth[i, j] - pred[i, j])
            tot_p += abs(truth[i, j] - pred[i, j]) / cap[j]
    assert abs(mae(pred, truth) - tot_a / 350) < 1e-12
    assert abs(mape(pred, truth) - tot_p / 350) < 1e-12


def test_metric_shape_mismatch():
    with pytest.raises(ValueError):
        mae(np.zeros((3, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        mape(np.zeros((3, 2)), np.zeros((3, 2)), capacities=[1.0])


def test_report_consistency(rng, tmp_path):
    truth = rng.integers(1, 20, size=(30, 4)).astype(float)
    pred = truth + rng.normal(size=truth.shape)
    r = build_report("m", pred, truth, ["a", "b", "c", "d"], metadata={"seed": 3})
    assert r.mae == pytest.approx(mae(pred, truth), abs=1e-12)
    assert r.mape == pytest.approx(mape(pred, truth), abs=1e-12)
    assert np.mean(r.block_values("mae")) == pytest.approx(r.mae, abs=1e-12)
    r.save(tmp_path / "r.json")
    again = PredictionReport.load(tmp_path / "r.json")
    assert again == r
    write_comparison_csv(tmp_path / "c.csv", [r])
    row = (tmp_path / "c.csv").read_text().splitlines()[1].split(",")
    assert row[0] == "m" and float(row[2]) == pytest.approx(100 * r.mape, abs=0.01)


# -- historical average -----------------------------------------------------------------

def _stamps(days, hhmm="10:00"):
    return np.array([np.datetime64(f"{d}T{hhmm}", "m") for d in days])


def test_historical_average_examples():
    mondays = _stamps(["2014-03-03", "2014-03-10"])
    got = historical_average_predict(mondays, np.array([[4.0], [6.0]]), _stamps(["2014-03-17"]))
    assert got.tolist() == [5.0]
    one = historical_average_predict(mondays[:1], np.array([[7.0]]), _stamps(["2014-03-24"]))
    assert one.tolist() == [7.0]


def test_historical_average_group_by_oracle(rng):
    days = np.arange(np.datetime64("2014-03-03"), np.datetime64("2014-04-04"))
    days = days[((days.astype(np.int64) + 3) % 7) < 5]
    times = (days.astype("datetime64[m]")[:, None] + np.array([420, 430, 440])).ravel()
    vals = rng.normal(size=(len(times), 3))
    ha = HistoricalAverage().fit(times, vals)
    query = times[::7]
    got = ha.predict(query)
    for q, g in zip(query, got):
        same = [i for i, t in enumerate(times)
                if (t.astype("datetime64[D]") - q.astype("datetime64[D]")).astype(int) % 7 == 0
                and (t - t.astype("datetime64[D]")) == (q - q.astype("datetime64[D]"))]
        assert np.allclose(g, vals[same].mean(axis=0), atol=1e-12)


def test_historical_average_falls_back_with_warning():
    ha = HistoricalAverage().fit(_stamps(["2014-03-03", "2014-03-04"]), np.array([[2.0], [4.0]]))
    with pytest.warns(UserWarning, match="time-of-day"):
        got = ha.predict(_stamps(["2014-03-07"]))      # a Friday, never seen
    assert got.tolist() == [[3.0]]


# -- latest observation -----------------------------------------------------------------

def test_latest_observation_examples():
    const = np.full((10, 3), 4.0)
    assert np.array_equal(latest_observation_predict(const, 5, 3), const[8])
    step = np.zeros((10, 2))
    step[6:] = 2.5
    pred = latest_observation_predict(step, 5, 3)
    assert np.abs(pred - step[8]).max() == 2.5
    with pytest.raises(IndexError):
        latest_observation_predict(const, 10, 3)


# -- LASSO ------------------------------------------------------------------------------

def test_soft_threshold():
    assert soft_threshold(np.array([-3.0, -0.5, 0.5, 3.0]), 1.0).tolist() == [-2.0, 0.0, 0.0, 2.0]


def test_lasso_zero_above_lambda_max(rng):
    X = rng.normal(size=(60, 5))
    y = X @ rng.normal(size=(5, 2)) + rng.normal(size=(60, 2))
    lmax = lasso_lambda_max(X, y)
    assert np.all(lasso_fit(X, y, lmax * 1.0001).coef == 0)
    assert np.any(lasso_fit(X, y, lmax * 0.9).coef != 0)


def test_lasso_orthonormal_ols(rng):
    X = orthonormal_design(40, 6, rng)
    y = rng.normal(size=(40, 2))
    fit = lasso_fit(X, y, 0.0, standardize=False, tol=1e-12)
    assert np.abs(fit.coef - X.T @ y).max() < 1e-10


@pytest.mark.parametrize("lam", [0.001, 0.01, 0.05])
def test_lasso_orthonormal_closed_form(rng, lam):
    n = 50
    X = orthonormal_design(n, 8, rng)
    y = rng.normal(size=(n, 3))
    expect = soft_threshold(X.T @ y, lam * n / 2.0)
    fit = lasso_fit(X, y, lam, standardize=False, tol=1e-12)
    assert np.abs(fit.coef - expect).max() < 1e-6


def test_lasso_kkt_conditions(rng):
    n = 80
    X = rng.normal(size=(n, 10))
    y = X[:, :3] @ np.array([1.0, -2.0, 0.5]) + 0.3 * rng.normal(size=n)
    lam = 0.05
    b = lasso_fit(X, y, lam, standardize=False, tol=1e-12).coef[:, 0]
    grad = -(2.0 / n) * X.T @ (y - X @ b)
    on = b != 0
    assert np.allclose(grad[on], -lam * np.sign(b[on]), atol=1e-8)
    assert np.all(np.abs(grad[~on]) <= lam + 1e-8)


def test_lasso_shrinkage_monotone(rng):
    X = rng.normal(size=(100, 12))
    y = X @ rng.normal(size=(12, 2)) + rng.normal(size=(100, 2))
    lams = lasso_lambda_max(X, y) * np.logspace(-3, 0, 10)
    fits = lasso_path(X, y, lams)
    norms = [np.abs(f.coef).sum(axis=0) for f in fits]
    for a, b in zip(norms, norms[1:]):
        assert np.all(a >= b - 1e-9)


def test_lasso_path_matches_cold_fits(rng):
    X = rng.normal(size=(60, 6))
    y = rng.normal(size=(60, 2))
    lams = np.array([0.2, 0.02, 0.05])
    for lam, f in zip(lams, lasso_path(X, y, lams, tol=1e-12)):
        assert np.abs(f.coef - lasso_fit(X, y, lam, tol=1e-12).coef).max() < 1e-8


def test_lasso_warns_when_sweeps_run_out(rng):
    X = rng.normal(size=(30, 20))
    X[:, 1] = X[:, 0] + 1e-3 * rng.normal(size=30)
    y = rng.normal(size=30)
    with pytest.warns(UserWarning, match="sweeps"):
        lasso_fit(X, y, 1e-6, tol=1e-14, max_sweeps=2)


def test_lasso_rejects_negative_lambda(rng):
    with pytest.raises(ValueError):
        lasso_fit(rng.normal(size=(5, 2)), rng.normal(size=5), -1.0)


def test_lasso_baseline_recovers_sparse_signal(rng):
    X = rng.normal(size=(300, 15))
    beta = np.zeros((15, 2))
    beta[0, 0], beta[3, 1] = 2.0, -1.5
    y = X @ beta + 0.1 * rng.normal(size=(300, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = LassoBaseline().fit(X[:240], y[:240], X[240:], y[240:])
    assert abs(model.coef[0, 0] - 2.0) < 0.05 and abs(model.coef[3, 1] + 1.5) < 0.05
    assert np.abs(np.delete(model.coef[:, 0], 0)).max() < 0.05


def test_flatten_inputs_order():
    a = np.arange(12.0).reshape(2, 3, 2)
    b = np.arange(4.0).reshape(2, 2)
    X = flatten_inputs({"a": a, "b": b}, ["a", "b"])
    assert X.shape == (2, 8)
    assert np.array_equal(X[1], np.concatenate([a[1].ravel(), b[1]]))


# -- heatmaps ---------------------------------------------------------------------------

def test_heatmap_csv_and_svg(tmp_path, rng):
    ids = [f"B{i:02d}" for i in range(39)]
    vals = rng.normal(size=39)
    files = heatmap_export(str(tmp_path / "h"), ids, vals, rng.uniform(0, 500, (39, 2)), "t")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert len(files) == 2 and len(lines) == 40
    assert [float(l.split(",")[1]) for l in lines[1:]] == vals.tolist()
    assert (tmp_path / "h.svg").read_text().count("<circle") == 39


def test_heatmap_without_coords_warns(tmp_path):
    with pytest.warns(UserWarning, match="CSV only"):
        files = heatmap_export(str(tmp_path / "h"), ["a", "b"], [1.0, 2.0])
    assert files == [str(tmp_path / "h.csv")]


def test_color_scale_constant_and_sign():
    assert len(set(color_scale(np.full(5, 3.0)))) == 1
    c = color_scale(np.array([-2.0, 0.0, 2.0]), diverging=True)
    assert c[1] == "#fee08b"            # zero sits on the midpoint colour
    assert c[0] != c[2]
    deltas = np.array([-1.0, 0.5, 0.0, 2.0])
    colors = color_scale(deltas, diverging=True)
    green, red = "#1a9850", "#d73027"
    for d, col in zip(deltas, colors):
        if d > 0:
            assert col != red and col != "#fee08b"
        elif d < 0:
            assert col != green and col != "#fee08b"
