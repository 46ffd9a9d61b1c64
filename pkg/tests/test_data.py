import logging

import numpy as np
import pytest

from parkcast.data import (
    WEATHER_FEATURES, DataError, TimeGrid, TransactionRecord, classify_hazardous, fit_transform,
    hazardous_mask, make_windows, parse_step, preprocess, read_speed_csv, read_transactions_csv,
    read_weather_csv, speed_ingest, split_days, transactions_to_occupancy, weather_interpolate,
    weekday_grid, window_and_split, window_positions, write_speed_csv, write_transactions_csv,
    write_weather_csv,
)

DAY = "2014-03-03"   # a Monday


def minutes(hhmm, day=DAY):
    return np.datetime64(f"{day}T{hhmm}", "m")


def one_grid(start="07:00", end="18:00"):
    return weekday_grid(DAY, 1, start, end)


def clear_stamp(**kw):
    s = dict.fromkeys(WEATHER_FEATURES, 0.0)
    s["visibility_mi"] = 10.0
    s.update(kw)
    return s


# -- grid ---------------------------------------------------------------------

def test_weekday_grid_skips_weekends():
    g = weekday_grid("2014-03-07", 3)          # Fri, then Mon, Tue
    days = np.unique(g.days).astype(str).tolist()
    assert days == ["2014-03-07", "2014-03-10", "2014-03-11"]
    assert len(g) == 3 * 66
    g.check_uniform()


def test_grid_midpoints_and_minutes():
    g = one_grid()
    assert g.midpoints[0] == minutes("07:05")
    assert g.minute_of_day[-1] == 17 * 60 + 50
    assert g.weekday[0] == 0


# -- transactions to occupancy ------------------------------------------------

def test_occupancy_hand_example():
    g = one_grid()
    recs = [TransactionRecord("m1", "A", minutes("10:00"), minutes("12:00")),
            TransactionRecord("m2", "A", minutes("10:30"), minutes("11:00"))]
    occ = transactions_to_occupancy(recs, ["A"], g).occupancy[:, 0]
    at = lambda hhmm: occ[np.flatnonzero(g.midpoints == minutes(hhmm))[0]]
    assert at("10:45") == 2
    assert at("11:35") == 1
    assert at("12:05") == 0


def test_occupancy_is_half_open():
    g = TimeGrid(np.array([minutes("09:55")]), 10)     # midpoint 10:00
    starts_at_mid = [TransactionRecord("m", "A", minutes("10:00"), minutes("10:30"))]
    ends_at_mid = [TransactionRecord("m", "A", minutes("09:00"), minutes("10:00"))]
    assert transactions_to_occupancy(starts_at_mid, ["A"], g).occupancy[0, 0] == 1
    assert transactions_to_occupancy(ends_at_mid, ["A"], g).occupancy[0, 0] == 0


def test_empty_records_give_zeros():
    occ = transactions_to_occupancy([], ["A", "B"], one_grid()).occupancy
    assert occ.shape == (66, 2) and not occ.any()


def test_unknown_block_listed():
    recs = [TransactionRecord("m", "Z9", minutes("10:00"), minutes("11:00"))]
    with pytest.raises(DataError, match="Z9"):
        transactions_to_occupancy(recs, ["A"], one_grid())


def test_record_must_end_after_start():
    with pytest.raises(DataError):
        TransactionRecord("m", "A", minutes("10:00"), minutes("10:00"))


def test_occupancy_matches_brute_force_scan(rng):
    g = weekday_grid(DAY, 2)
    blocks = ["A", "B", "C"]
    base = g.times[0].astype(np.int64) - 60
    start = base + rng.integers(0, 2 * 24 * 60, 1000)
    end = start + rng.integers(1, 300, 1000)
    rec = {"block_id": rng.choice(blocks, 1000), "start": start.astype("datetime64[m]"),
           "end": end.astype("datetime64[m]")}
    occ = transactions_to_occupancy(rec, blocks, g).occupancy
    mids = g.midpoints.astype(np.int64)
    for t, m in enumerate(mids):
        for v, b in enumerate(blocks):
            expect = np.sum((rec["block_id"] == b) & (start <= m) & (m < end))
            assert occ[t, v] == expect
    # conservation across blocks
    active = ((start[None, :] <= mids[:, None]) & (mids[:, None] < end[None, :])).sum(axis=1)
    assert np.array_equal(occ.sum(axis=1), active)


# -- speed ------------------------------------------------------------------------

def test_speed_ratio_and_filtering():
    g = one_grid()
    t0, t1, t2 = g.times[:3]
    rows = [("A", t0, 20.0, 40.0, 30), ("A", t1, 30.0, 30.0, 30), ("A", t2, 10.0, 40.0, 29)]
    c = speed_ingest(rows, ["A", "B"], g).congestion
    assert c[0, 0] == 2.0
    assert c[1, 0] == 1.0
    assert c[2, 0] == 1.0          # confidence 29 dropped
    assert np.all(c[:, 1] == 1.0)  # uncovered block


def test_speed_rejects_nonpositive():
    g = one_grid()
    with pytest.raises(DataError):
        speed_ingest([("A", g.times[0], 0.0, 40.0, 30)], ["A"], g)


# -- weather ----------------------------------------------------------------------

def _hourly(values_by_feature, hours=("09:00", "10:00")):
    times = np.array([minutes(h) for h in hours])
    vals = np.zeros((len(hours), len(WEATHER_FEATURES)))
    for f, col in values_by_feature.items():
        vals[:, WEATHER_FEATURES.index(f)] = col
    return times, vals


def test_weather_linear_interpolation():
    times, vals = _hourly({"temperature_f": [60, 66], "rain_flag": [1, 0]})
    g = TimeGrid(np.arange(minutes("09:00"), minutes("10:10"), np.timedelta64(10, "m")), 10)
    w = weather_interpolate(times, vals, g)
    temp = w.values[:, WEATHER_FEATURES.index("temperature_f")]
    rain = w.values[:, WEATHER_FEATURES.index("rain_flag")]
    assert np.allclose(temp, [60, 61, 62, 63, 64, 65, 66])
    assert rain.tolist() == [1, 1, 1, 1, 1, 1, 0]


def test_weather_constant_series():
    times, vals = _hourly({"humidity_pct": [55, 55], "pressure_inhg": [30.1, 30.1]})
    w = weather_interpolate(times, vals, one_grid("09:00", "10:00"))
    assert np.all(w.values[:, WEATHER_FEATURES.index("humidity_pct")] == 55)
    assert np.all(w.values[:, WEATHER_FEATURES.index("pressure_inhg")] == 30.1)


def test_weather_unsorted_rejected():
    times, vals = _hourly({}, ("10:00", "09:00"))
    with pytest.raises(DataError):
        weather_interpolate(times, vals, one_grid())


@pytest.mark.parametrize("stamp, hazardous", [
    (clear_stamp(visibility_mi=4.0), True),
    (clear_stamp(precip_in_hr=0.15), False),
    (clear_stamp(precip_in_hr=0.16), True),
    (clear_stamp(snow_flag=1.0), True),
    (clear_stamp(), False),
])
def test_classify_hazardous(stamp, hazardous):
    assert classify_hazardous(stamp) is hazardous


def test_hazardous_mask_agrees_with_classifier(rng):
    g = one_grid()
    times, vals = g.times[::6], np.zeros((11, len(WEATHER_FEATURES)))
    vals[:, WEATHER_FEATURES.index("visibility_mi")] = rng.uniform(2, 10, 11)
    vals[:, WEATHER_FEATURES.index("precip_in_hr")] = rng.uniform(0, 0.3, 11)
    w = weather_interpolate(times, vals, g)
    mask = hazardous_mask(w)
    assert mask.tolist() == [classify_hazardous(w.stamp(i)) for i in range(len(g))]


# -- preprocessing ------------------------------------------------------------------

def test_minmax_example():
    tf = fit_transform(np.array([[0.0], [5.0], [10.0]]), ["minmax"])
    assert tf.apply(np.array([[0.0], [5.0], [10.0]])).ravel().tolist() == [-1.0, 0.0, 1.0]


@pytest.mark.parametrize("chain", [["normalize", "minmax"], ["standardize"], ["standardize", "minmax"],
                                   ["normalize"], ["minmax"]])
def test_round_trip(rng, chain):
    x = rng.gamma(2.0, 5.0, size=(200, 4))
    tf = fit_transform(x, chain)
    assert np.abs(tf.invert(tf.apply(x)) - x).max() < 1e-12


def test_normalize_then_minmax_spans_unit_interval(rng):
    x = rng.uniform(0, 30, size=(500, 3))
    y = fit_transform(x, ["normalize", "minmax"]).apply(x)
    assert np.allclose(y.min(axis=0), -1) and np.allclose(y.max(axis=0), 1)


def test_winsorize_percentile_oracle():
    x = np.arange(1.0, 101.0)[:, None]
    y = fit_transform(x, ["winsorize:5"]).apply(x).ravel()
    # linear-interpolated 5th percentile of 1..100 sits at rank 0.05 * 99
    s = np.sort(x.ravel())
    lo = s[4] + 0.95 * (s[5] - s[4])
    hi = s[94] + 0.05 * (s[95] - s[94])
    assert (lo, hi) == pytest.approx((5.95, 95.05))
    assert y.min() == pytest.approx(lo) and y.max() == pytest.approx(hi)
    assert np.array_equal(y[10:90], x.ravel()[10:90])


def test_zero_variance_standardize_warns(caplog):
    x = np.column_stack([np.ones(10), np.arange(10.0)])
    with caplog.at_level(logging.WARNING):
        y = fit_transform(x, ["standardize"]).apply(x)
    assert "zero-variance" in caplog.text
    assert np.all(y[:, 0] == 1.0)


def test_degenerate_minmax_maps_to_zero():
    x = np.full((5, 1), 3.0)
    assert np.all(fit_transform(x, ["minmax"]).apply(x) == 0.0)


def test_unknown_step_rejected():
    with pytest.raises(ValueError):
        parse_step("robust")
    assert parse_step("winsorize") == ("winsorize", 5.0)


def test_transform_dict_round_trip(rng):
    x = rng.normal(size=(50, 2))
    tf = fit_transform(x, ["standardize", "minmax"])
    again = type(tf).from_dict(tf.to_dict())
    assert np.array_equal(again.apply(x), tf.apply(x))


def test_no_leakage_from_test_days(rng):
    g = weekday_grid(DAY, 10)
    occ = rng.poisson(8, size=(len(g), 3)).astype(float)
    train_days, _ = split_days(g.days, 0.8, 0)
    mask = np.isin(g.days, train_days)
    _, tf_a = preprocess({"occupancy": occ}, mask)
    poked = occ.copy()
    poked[~mask] = rng.uniform(100, 1000, size=poked[~mask].shape)
    _, tf_b = preprocess({"occupancy": poked}, mask)
    for sa, sb in zip(tf_a["occupancy"].steps, tf_b["occupancy"].steps):
        assert np.array_equal(sa.a, sb.a) and np.array_equal(sa.b, sb.b)


# -- windowing ----------------------------------------------------------------------

def test_window_count_for_one_day():
    # the target sits horizon steps after the last input, so positions 0..39 fit in 66 stamps
    assert len(window_positions(66, 24, 3)) == 40
    assert window_positions(26, 24, 3).size == 0
    assert window_positions(27, 24, 3).tolist() == [0]


def test_windows_alignment_and_day_boundaries(rng):
    g = weekday_grid(DAY, 3)
    T = len(g)
    occ = np.arange(T * 2, dtype=float).reshape(T, 2)
    weather = rng.normal(size=(T, 14))
    ds = make_windows(g, {"occupancy": occ, "weather": weather}, occ, 24, 3)
    assert len(ds) == 3 * 40
    assert ds.inputs["occupancy"].shape == (120, 2, 24, 1)
    assert ds.inputs["weather"].shape == (120, 24, 14)
    for i in range(len(ds)):
        ti, li = ds.target_index[i], ds.last_index[i]
        assert ti - li == 3
        assert g.days[ti] == g.days[li - 23] == ds.days[i]
        assert np.array_equal(ds.inputs["occupancy"][i, :, -1, 0], occ[li])
        assert np.array_equal(ds.inputs["occupancy"][i, :, 0, 0], occ[li - 23])
        assert np.array_equal(ds.targets[i], occ[ti])
        assert np.array_equal(ds.inputs["weather"][i], weather[li - 23:li + 1])


def test_short_day_skipped_with_warning(caplog):
    long_day = weekday_grid(DAY, 1).times
    short_day = weekday_grid("2014-03-04", 1, "07:00", "11:00").times
    g = TimeGrid(np.concatenate([long_day, short_day]), 10)
    occ = np.zeros((len(g), 1))
    with caplog.at_level(logging.WARNING):
        ds = make_windows(g, {"occupancy": occ}, occ)
    assert "too short" in caplog.text
    assert len(ds) == 40


def test_split_is_by_whole_days_and_seeded(rng):
    g = weekday_grid(DAY, 10)
    occ = rng.normal(size=(len(g), 2))
    tr, te = window_and_split(g, {"occupancy": occ}, occ, seed=3)
    tr2, te2 = window_and_split(g, {"occupancy": occ}, occ, seed=3)
    assert np.array_equal(tr.days, tr2.days) and np.array_equal(te.targets, te2.targets)
    assert len(np.unique(tr.days)) == 8 and len(np.unique(te.days)) == 2
    assert not set(tr.days.tolist()) & set(te.days.tolist())


def test_train_frac_one_empties_test(rng):
    g = weekday_grid(DAY, 10)
    occ = rng.normal(size=(len(g), 2))
    tr, te = window_and_split(g, {"occupancy": occ}, occ, train_frac=1.0)
    assert len(te) == 0 and len(tr) == 400


# -- CSV ------------------------------------------------------------------------------

def test_transactions_csv_round_trip(tmp_path):
    path = tmp_path / "tx.csv"
    starts = np.array([minutes("08:00"), minutes("09:10")])
    ends = np.array([minutes("09:00"), minutes("11:00")])
    write_transactions_csv(path, ["m1", "m2"], ["A", "B"], starts, ends)
    assert path.read_text().splitlines()[0] == "meter_id,block_id,start_iso8601,end_iso8601"
    got = read_transactions_csv(path)
    assert got["block_id"].tolist() == ["A", "B"]
    assert np.array_equal(got["start"], starts) and np.array_equal(got["end"], ends)


def test_transactions_csv_errors_name_line(tmp_path):
    path = tmp_path / "tx.csv"
    path.write_text("meter_id,block_id,start_iso8601,end_iso8601\n"
                    "m,A,2014-03-03T08:00,2014-03-03T09:00\n"
                    "m,A,2014-03-03T10:00,2014-03-03T09:00\n")
    with pytest.raises(DataError, match=":3"):
        read_transactions_csv(path)
    path.write_text("meter,block,start,end\n")
    with pytest.raises(DataError, match=":1"):
        read_transactions_csv(path)


def test_speed_and_weather_csv_round_trip(tmp_path, rng):
    rows = [("A", minutes("08:00"), 21.5, 30.0, 30.0), ("B", minutes("08:10"), 12.25, 25.0, 10.0)]
    write_speed_csv(tmp_path / "s.csv", rows)
    assert read_speed_csv(tmp_path / "s.csv") == rows
    times = np.array([minutes("08:00"), minutes("09:00")])
    vals = rng.normal(size=(2, 14))
    write_weather_csv(tmp_path / "w.csv", times, vals)
    t, v = read_weather_csv(tmp_path / "w.csv")
    assert np.array_equal(t, times) and np.array_equal(v, vals)
