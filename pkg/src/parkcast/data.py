"""Ingestion of transactions, speed and weather records onto a shared 10-minute
grid, preprocessing chains, and day-based windowing."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import make_rng

log = logging.getLogger(__name__)

WEATHER_FEATURES = (
    "temperature_f", "dew_point_f", "humidity_pct", "wind_mph", "gust_mph",
    "visibility_mi", "pressure_inhg", "wind_chill_f", "heat_index_f", "precip_in_hr",
    "pavement_flag", "fog_flag", "rain_flag", "snow_flag",
)
WEATHER_FLAGS = ("pavement_flag", "fog_flag", "rain_flag", "snow_flag")
MIN_CONFIDENCE = 30

TRANSACTION_HEADER = ("meter_id", "block_id", "start_iso8601", "end_iso8601")
SPEED_HEADER = ("block_id", "time_iso8601", "realtime_mph", "freeflow_mph", "confidence")
WEATHER_HEADER = ("time_iso8601",) + WEATHER_FEATURES


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def to_minutes(ts):
    return np.asarray(ts, dtype="datetime64[m]")


# -- time grid ----------------------------------------------------------------

@dataclass
class TimeGrid:
    """Interval start times; uniform within each day, days may be discontiguous."""

    times: np.ndarray
    interval_minutes: int = 10

    def __post_init__(self):
        self.times = to_minutes(self.times)

    def __len__(self):
        return len(self.times)

    @property
    def midpoints(self):
        return self.times + np.timedelta64(self.interval_minutes // 2, "m")

    @property
    def days(self):
        return self.times.astype("datetime64[D]")

    @property
    def weekday(self):
        # 1970-01-01 was a Thursday; Monday == 0
        return ((self.days.astype(np.int64) + 3) % 7).astype(np.int64)

    @property
    def minute_of_day(self):
        return (self.times - self.days).astype(np.int64)

    def day_slices(self):
        days = self.days
        cuts = np.flatnonzero(days[1:] != days[:-1]) + 1
        bounds = np.concatenate([[0], cuts, [len(days)]])
        return [(days[lo], slice(int(lo), int(hi))) for lo, hi in zip(bounds[:-1], bounds[1:])]

    def check_uniform(self):
        step = np.timedelta64(self.interval_minutes, "m")
        for _, sl in self.day_slices():
            if (np.diff(self.times[sl]) != step).any():
                raise DataError("time grid has gaps within a day")


def weekday_grid(start_date, n_days, start="07:00", end="18:00", interval_minutes=10):
    """Weekday-only grid of interval starts in [start, end) each day."""
    h0, m0 = map(int, start.split(":"))
    h1, m1 = map(int, end.split(":"))
    per_day = np.arange(h0 * 60 + m0, h1 * 60 + m1, interval_minutes)
    day = np.datetime64(start_date, "D")
    days = []
    while len(days) < n_days:
        if (day.astype(np.int64) + 3) % 7 < 5:
            days.append(day)
        day += 1
    times = (np.array(days, dtype="datetime64[D]").astype("datetime64[m]")[:, None]
             + per_day[None, :].astype("timedelta64[m]")).reshape(-1)
    return TimeGrid(times, interval_minutes)


# -- panels -------------------------------------------------------------------

@dataclass
class TransactionRecord:
    meter_id: str
    block_id: str
    start_time: np.datetime64
    end_time: np.datetime64

    def __post_init__(self):
        self.start_time = np.datetime64(self.start_time, "m")
        self.end_time = np.datetime64(self.end_time, "m")
        if not self.end_time > self.start_time:
            raise DataError(f"transaction on meter {self.meter_id} ends before it starts")


@dataclass
class OccupancyPanel:
    blocks: list
    grid: TimeGrid
    occupancy: np.ndarray   # (T, V) vehicles

    @property
    def interval_minutes(self):
        return self.grid.interval_minutes


@dataclass
class SpeedPanel:
    blocks: list
    grid: TimeGrid
    congestion: np.ndarray  # (T, V) free-flow / real-time speed


@dataclass
class WeatherSeries:
    grid: TimeGrid
    values: np.ndarray      # (T, 14)
    features: tuple = WEATHER_FEATURES

    def stamp(self, i):
        return dict(zip(self.features, self.values[i]))


def transactions_to_occupancy(records, blocks, grid):
    """Vehicles parked per block at each interval midpoint, counting [start, end)."""
    blocks = list(blocks)
    index = {b: i for i, b in enumerate(blocks)}
    mids = grid.midpoints.astype(np.int64)
    occ = np.zeros((len(grid), len(blocks)))
    if isinstance(records, dict):
        block_ids, starts, ends = records["block_id"], records["start"], records["end"]
    else:
        records = list(records)
        block_ids = [r.block_id for r in records]
        starts = [r.start_time for r in records]
        ends = [r.end_time for r in records]
    if len(block_ids) == 0:
        return OccupancyPanel(blocks, grid, occ)
    block_ids = np.asarray(block_ids, dtype=str)
    unknown = sorted(set(block_ids.tolist()) - set(blocks))
    if unknown:
        raise DataError(f"transactions reference unknown blocks: {unknown}")
    starts = to_minutes(starts).astype(np.int64)
    ends = to_minutes(ends).astype(np.int64)
    codes = np.array([index[b] for b in block_ids])
    for v in range(len(blocks)):
        mine = codes == v
        s = np.sort(starts[mine])
        e = np.sort(ends[mine])
        # started by mid minus ended by mid == active on [start, end)
        occ[:, v] = np.searchsorted(s, mids, "right") - np.searchsorted(e, mids, "right")
    return OccupancyPanel(blocks, grid, occ)


def speed_ingest(rows, blocks, grid):
    """Congestion ratio per (time, block) from confidence-30 rows; 1.0 elsewhere.

    ``rows`` holds (block_id, time, realtime, freeflow, confidence) tuples.
    Several rows in one cell are averaged.
    """
    blocks = list(blocks)
    index = {b: i for i, b in enumerate(blocks)}
    tindex = {int(t): i for i, t in enumerate(grid.times.astype(np.int64))}
    acc = np.zeros((len(grid), len(blocks)))
    cnt = np.zeros_like(acc)
    for block, t, real, free, conf in rows:
        real, free = float(real), float(free)
        if real <= 0 or free <= 0:
            raise DataError(f"non-positive speed for block {block} at {t}")
        if float(conf) < MIN_CONFIDENCE:
            continue
        ti = tindex.get(int(np.datetime64(t, "m").astype(np.int64)))
        vi = index.get(block)
        if ti is None or vi is None:
            continue
        acc[ti, vi] += free / real
        cnt[ti, vi] += 1
    ratio = np.where(cnt > 0, acc / np.maximum(cnt, 1), 1.0)
    return SpeedPanel(blocks, grid, ratio)


def weather_interpolate(times, values, grid, features=WEATHER_FEATURES):
    """Hourly rows -> grid: continuous features linear, flags held from the last report."""
    t = to_minutes(times).astype(np.int64)
    values = np.asarray(values, dtype=np.float64)
    if len(t) == 0:
        raise DataError("no weather rows")
    if (np.diff(t) <= 0).any():
        raise DataError("weather rows must be strictly increasing in time")
    g = grid.times.astype(np.int64)
    out = np.empty((len(grid), len(features)))
    flag_cols = {i for i, f in enumerate(features) if f in WEATHER_FLAGS}
    last = np.clip(np.searchsorted(t, g, "right") - 1, 0, len(t) - 1)
    for j in range(len(features)):
        if j in flag_cols:
            out[:, j] = values[last, j]
        else:
            out[:, j] = np.interp(g, t, values[:, j])
    return WeatherSeries(grid, out, tuple(features))


def classify_hazardous(stamp):
    """Visibility under 5 mi, precipitation over 0.15 in/hr, or snow."""
    return bool(stamp["visibility_mi"] < 5 or stamp["precip_in_hr"] > 0.15 or stamp["snow_flag"] >= 0.5)


def hazardous_mask(weather):
    cols = {f: i for i, f in enumerate(weather.features)}
    v = weather.values
    return (v[:, cols["visibility_mi"]] < 5) | (v[:, cols["precip_in_hr"]] > 0.15) | (v[:, cols["snow_flag"]] >= 0.5)


# -- preprocessing ------------------------------------------------------------

STEPS = ("standardize", "normalize", "winsorize", "minmax")


@dataclass
class FittedStep:
    name: str
    a: np.ndarray
    b: np.ndarray


@dataclass
class Transform:
    """Per-feature chain fitted on training rows; features are the last axis."""

    steps: list = field(default_factory=list)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        for s in self.steps:
            if s.name == "standardize":
                x = (x - s.a) / s.b
            elif s.name == "normalize":
                x = x / s.a
            elif s.name == "winsorize":
                x = np.clip(x, s.a, s.b)
            else:
                span = s.b - s.a
                safe = np.where(span > 0, span, 1.0)
                x = np.where(span > 0, 2.0 * (x - s.a) / safe - 1.0, 0.0)
        return x

    def invert(self, y):
        y = np.asarray(y, dtype=np.float64)
        for s in reversed(self.steps):
            if s.name == "standardize":
                y = y * s.b + s.a
            elif s.name == "normalize":
                y = y * s.a
            elif s.name == "minmax":
                y = (y + 1.0) * 0.5 * (s.b - s.a) + s.a
            # clipping has no inverse; values inside the bounds are untouched
        return y

    def to_dict(self):
        return {"steps": [{"name": s.name, "a": s.a.tolist(), "b": s.b.tolist()} for s in self.steps]}

    @classmethod
    def from_dict(cls, d):
        return cls([FittedStep(s["name"], np.asarray(s["a"], dtype=np.float64),
                               np.asarray(s["b"], dtype=np.float64)) for s in d["steps"]])


def parse_step(step):
    """'winsorize:5' -> ('winsorize', 5.0); bare names take defaults."""
    name, _, arg = str(step).partition(":")
    if name not in STEPS:
        raise ValueError(f"unknown preprocessing step {name!r}; choose from {STEPS}")
    return name, float(arg) if arg else (5.0 if name == "winsorize" else None)


def fit_transform(train_rows, chain):
    """Fit a chain on (rows, features) training data."""
    x = np.asarray(train_rows, dtype=np.float64)
    x = x.reshape(-1, x.shape[-1])
    steps = []
    for step in chain:
        name, arg = parse_step(step)
        if name == "standardize":
            mu, sd = x.mean(axis=0), x.std(axis=0)
            flat = sd == 0
            if flat.any():
                log.warning("standardize skipped for zero-variance features %s", np.flatnonzero(flat).tolist())
            s = FittedStep(name, np.where(flat, 0.0, mu), np.where(flat, 1.0, sd))
        elif name == "normalize":
            m = np.abs(x).max(axis=0)
            s = FittedStep(name, np.where(m > 0, m, 1.0), np.zeros(0))
        elif name == "winsorize":
            s = FittedStep(name, np.percentile(x, arg, axis=0), np.percentile(x, 100 - arg, axis=0))
        else:
            s = FittedStep(name, x.min(axis=0), x.max(axis=0))
        x = Transform([s]).apply(x)
        steps.append(s)
    return Transform(steps)


def preprocess(panels, train_mask, chain=("normalize", "minmax")):
    """Fit one chain per panel on the training rows and transform all rows.

    ``panels`` maps a source name to a (T, F) array on the shared grid.
    Returns (scaled panels, transforms).
    """
    scaled, transforms = {}, {}
    train_mask = np.asarray(train_mask, dtype=bool)
    for name, arr in panels.items():
        arr = np.asarray(arr, dtype=np.float64)
        tf = fit_transform(arr[train_mask], chain)
        transforms[name] = tf
        scaled[name] = tf.apply(arr)
    return scaled, transforms


# -- windowing ----------------------------------------------------------------

@dataclass
class WindowedSample:
    inputs: dict
    target: np.ndarray
    day: np.datetime64
    target_index: int
    timestamp: np.datetime64


@dataclass
class WindowedDataset:
    """Stacked samples.  Occupancy and speed are (N, V, T, 1), weather (N, T, F)."""

    inputs: dict
    targets: np.ndarray         # (N, V) preprocessed occupancy at the target stamp
    target_index: np.ndarray    # grid row of each target
    last_index: np.ndarray      # grid row of the last input stamp
    days: np.ndarray

    def __len__(self):
        return len(self.targets)

    def __getitem__(self, i):
        return WindowedSample({k: v[i] for k, v in self.inputs.items()}, self.targets[i],
                              self.days[i], int(self.target_index[i]), None)

    def subset(self, idx):
        return WindowedDataset({k: v[idx] for k, v in self.inputs.items()}, self.targets[idx],
                               self.target_index[idx], self.last_index[idx], self.days[idx])

    def as_pair(self, sources=None):
        keys = sources if sources is not None else list(self.inputs)
        return {k: self.inputs[k] for k in keys}, self.targets


def window_positions(n_steps, window, horizon):
    """Start offsets s whose inputs are [s, s+window) and target s+window-1+horizon."""
    last = n_steps - window - horizon
    return np.arange(0, last + 1) if last >= 0 else np.arange(0)


def split_days(days, train_frac, seed):
    days = np.unique(days)
    order = make_rng(seed).permutation(len(days))
    n_train = int(round(train_frac * len(days)))
    return np.sort(days[order[:n_train]]), np.sort(days[order[n_train:]])


def make_windows(grid, panels, target, window=24, horizon=3, vertex_sources=("occupancy", "speed")):
    """All within-day samples.  ``panels`` maps names to (T, F) arrays on ``grid``."""
    ins = {k: [] for k in panels}
    ys, tidx, lidx, days = [], [], [], []
    for day, sl in grid.day_slices():
        n = sl.stop - sl.start
        pos = window_positions(n, window, horizon)
        if len(pos) == 0:
            log.warning("day %s has %d stamps, too short for window %d + horizon %d", day, n, window, horizon)
            continue
        for s in pos:
            lo = sl.start + s
            hi = lo + window
            for k, arr in panels.items():
                ins[k].append(arr[lo:hi])
            ti = hi - 1 + horizon
            ys.append(target[ti])
            tidx.append(ti)
            lidx.append(hi - 1)
            days.append(day)
    out = {}
    for k, chunks in ins.items():
        a = np.asarray(chunks, dtype=np.float64).reshape(len(chunks), window, -1)
        if k in vertex_sources:
            a = a.transpose(0, 2, 1)[..., None]          # (N, V, T, 1)
        out[k] = a
    nv = target.shape[1]
    return WindowedDataset(out, np.asarray(ys, dtype=np.float64).reshape(-1, nv),
                           np.asarray(tidx, dtype=np.int64), np.asarray(lidx, dtype=np.int64),
                           np.asarray(days, dtype="datetime64[D]"))


def window_and_split(grid, panels, target, window=24, horizon=3, train_frac=0.8, seed=0,
                     vertex_sources=("occupancy", "speed")):
    """Windows inside each day, whole days drawn into train/test."""
    ds = make_windows(grid, panels, target, window, horizon, vertex_sources)
    train_days, _ = split_days(grid.days, train_frac, seed)
    is_train = np.isin(ds.days, train_days)
    return ds.subset(np.flatnonzero(is_train)), ds.subset(np.flatnonzero(~is_train))


# -- CSV formats --------------------------------------------------------------

def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _fmt_time(t):
    return str(np.datetime64(t, "m"))


def _fmt(v):
    return repr(float(v))


def _check_header(path, header, expected):
    if tuple(header) != tuple(expected):
        raise DataError(f"{path}:1: header {list(header)} != expected {list(expected)}")


def write_transactions_csv(path, meter_ids, block_ids, starts, ends):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(TRANSACTION_HEADER)
        for m, b, s, e in zip(meter_ids, block_ids, to_minutes(starts), to_minutes(ends)):
            w.writerow([m, b, _fmt_time(s), _fmt_time(e)])


def read_transactions_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        _check_header(path, next(r, ()), TRANSACTION_HEADER)
        meters, blocks, starts, ends = [], [], [], []
        for line, row in enumerate(r, start=2):
            if len(row) != 4:
                raise DataError(f"{path}:{line}: expected 4 fields, found {len(row)}")
            try:
                s, e = np.datetime64(row[2], "m"), np.datetime64(row[3], "m")
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
            if not e > s:
                raise DataError(f"{path}:{line}: end_time must follow start_time")
            meters.append(row[0])
            blocks.append(row[1])
            starts.append(s)
            ends.append(e)
    return {"meter_id": np.asarray(meters, dtype=str), "block_id": np.asarray(blocks, dtype=str),
            "start": to_minutes(starts), "end": to_minutes(ends)}


def write_speed_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(SPEED_HEADER)
        for b, t, real, free, conf in rows:
            w.writerow([b, _fmt_time(t), _fmt(real), _fmt(free), int(conf)])


def read_speed_csv(path):
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        _check_header(path, next(r, ()), SPEED_HEADER)
        for line, row in enumerate(r, start=2):
            if len(row) != 5:
                raise DataError(f"{path}:{line}: expected 5 fields, found {len(row)}")
            try:
                rows.append((row[0], np.datetime64(row[1], "m"), float(row[2]), float(row[3]), float(row[4])))
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
    return rows


def write_weather_csv(path, times, values):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(WEATHER_HEADER)
        for t, row in zip(to_minutes(times), np.asarray(values)):
            w.writerow([_fmt_time(t)] + [_fmt(v) for v in row])


def read_weather_csv(path):
    times, values = [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        _check_header(path, next(r, ()), WEATHER_HEADER)
        for line, row in enumerate(r, start=2):
            if len(row) != len(WEATHER_HEADER):
                raise DataError(f"{path}:{line}: expected {len(WEATHER_HEADER)} fields, found {len(row)}")
            try:
                times.append(np.datetime64(row[0], "m"))
                values.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
    return to_minutes(times), np.asarray(values, dtype=np.float64).reshape(-1, len(WEATHER_FEATURES))
