"""Synthetic downtown parking scenario.

Blocks sit on a jittered street grid.  Each weekday, every block receives
Poisson arrivals whose rate follows a block-type time-of-day curve, a
day-of-week factor, the weather, short demand pulses ("events") and traffic
incidents.  A network-wide factor scales every block's rate on top of that:
a random level per day times a smooth random drift within the day.  Stays
are short (30-40 minutes on average) and peak demand is twice capacity, so
occupancy turns over quickly and blocks saturate.  Arrivals that find their
block full cruise to the nearest blocks by travel time; if those are full
too the demand is lost.

Congestion rises with nearby demand about 20 minutes before the cars arrive,
jumps during incidents (which also suppress arrivals) and climbs ahead of
each event, so speed carries information about occupancy 30 minutes out.
Hazardous weather halves recreational demand and nudges business demand up.
"""
from __future__ import annotations

import csv
import heapq
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import (
    WEATHER_FEATURES, TimeGrid, classify_hazardous, read_speed_csv, read_transactions_csv,
    read_weather_csv, speed_ingest, transactions_to_occupancy, weather_interpolate,
    weekday_grid, write_speed_csv, write_transactions_csv, write_weather_csv,
)
from .graph import read_travel_time_csv, write_travel_time_csv
from .numerics import make_rng

BUSINESS, RECREATIONAL = "business", "recreational"
BLOCKS_HEADER = ("block_id", "kind", "capacity", "x_m", "y_m")


@dataclass
class SynthConfig:
    n_blocks: int = 39
    days: int = 60
    seed: int = 0
    start_date: str = "2014-01-06"
    day_start: str = "07:00"
    day_end: str = "18:00"
    interval_minutes: int = 10
    recreational_frac: float = 0.4
    capacity_range: tuple = (6, 30)
    demand_ratio: float = 2.0           # peak demand relative to capacity
    hazard_day_prob: float = 0.3
    hazard_rec_factor: float = 0.5
    hazard_business_factor: float = 1.1
    events_per_day: float = 2.0
    incidents_per_day: float = 1.0
    uncovered_frac: float = 0.15
    low_confidence_frac: float = 0.05
    neighbors: int = 5
    mean_duration: tuple = (30.0, 40.0)  # minutes, business then recreational
    day_demand_sd: float = 0.25         # network-wide log demand shift per day
    drift_sd: float = 0.35              # network-wide log demand drift within a day
    drift_knot_minutes: int = 60
    congestion_lead: int = 20           # minutes by which traffic runs ahead of arrivals

    def __post_init__(self):
        if self.n_blocks < 2:
            raise ValueError("need at least 2 blocks")
        if self.days < 10:
            raise ValueError("need at least 10 days")
        if self.congestion_lead < 0:
            raise ValueError("congestion_lead must be non-negative")
        self.capacity_range = tuple(self.capacity_range)
        self.mean_duration = tuple(float(d) for d in self.mean_duration)


@dataclass
class SyntheticScenario:
    config: SynthConfig
    blocks: list
    kinds: list
    capacity: np.ndarray
    coords: np.ndarray
    travel_time: np.ndarray
    transactions: dict
    speed_rows: list
    weather_times: np.ndarray
    weather_values: np.ndarray
    grid: TimeGrid = field(repr=False, default=None)

    def occupancy(self):
        return transactions_to_occupancy(self.transactions, self.blocks, self.grid)

    def speed(self):
        return speed_ingest(self.speed_rows, self.blocks, self.grid)

    def weather(self):
        return weather_interpolate(self.weather_times, self.weather_values, self.grid)

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        t = self.transactions
        write_transactions_csv(os.path.join(directory, "transactions.csv"),
                               t["meter_id"], t["block_id"], t["start"], t["end"])
        write_speed_csv(os.path.join(directory, "speed.csv"), self.speed_rows)
        write_weather_csv(os.path.join(directory, "weather.csv"), self.weather_times, self.weather_values)
        write_travel_time_csv(os.path.join(directory, "travel_time.csv"), self.blocks, self.travel_time)
        write_blocks_csv(os.path.join(directory, "blocks.csv"), self.blocks, self.kinds,
                         self.capacity, self.coords)
        return ["transactions.csv", "speed.csv", "weather.csv", "travel_time.csv", "blocks.csv"]


def write_blocks_csv(path, blocks, kinds, capacity, coords):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BLOCKS_HEADER)
        for b, k, c, (x, y) in zip(blocks, kinds, capacity, coords):
            w.writerow([b, k, int(c), repr(float(x)), repr(float(y))])


def read_blocks_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ([r["block_id"] for r in rows], [r["kind"] for r in rows],
            np.array([int(r["capacity"]) for r in rows]),
            np.array([[float(r["x_m"]), float(r["y_m"])] for r in rows]))


# -- layout -------------------------------------------------------------------

def _layout(cfg, rng):
    n = cfg.n_blocks
    cols = int(np.ceil(np.sqrt(n * 1.4)))
    spacing = 160.0
    cells = rng.permutation(cols * int(np.ceil(n / cols) + 1))[:n]
    xy = np.stack([(cells % cols) * spacing, (cells // cols) * spacing], axis=1).astype(float)
    xy += rng.uniform(-30, 30, size=xy.shape)
    return xy


def _travel_times(xy, cfg, rng):
    n = len(xy)
    manhattan = np.abs(xy[:, None, :] - xy[None, :, :]).sum(axis=2)
    t = 20.0 + manhattan / 6.0
    t *= rng.uniform(1.0, 1.3, size=t.shape)       # one-way streets make it directed
    np.fill_diagonal(t, 0.0)
    k = min(cfg.neighbors, n - 1)
    near = np.zeros((n, n), dtype=bool)
    order = np.argsort(t + np.eye(n) * 1e9, axis=1)
    for i in range(n):
        near[i, order[i, :k]] = True
    near |= near.T
    _connect(near, t)
    out = np.where(near, t, np.inf)
    np.fill_diagonal(out, 0.0)
    return out


def _connect(near, t):
    """Join components with their cheapest crossing edge until connected."""
    n = len(near)
    while True:
        comp = -np.ones(n, dtype=int)
        c = 0
        for s in range(n):
            if comp[s] >= 0:
                continue
            stack = [s]
            comp[s] = c
            while stack:
                u = stack.pop()
                for v in np.flatnonzero(near[u]):
                    if comp[v] < 0:
                        comp[v] = c
                        stack.append(v)
            c += 1
        if c == 1:
            return
        cross = np.where(comp[:, None] != comp[None, :], t, np.inf)
        cross[comp != 0, :] = np.inf
        i, j = np.unravel_index(np.argmin(cross), cross.shape)
        near[i, j] = near[j, i] = True


# -- demand curves ------------------------------------------------------------

def _bump(m, center_h, width_h, height):
    return height * np.exp(-0.5 * ((m / 60.0 - center_h) / width_h) ** 2)


def _profile(kind, minutes):
    if kind == BUSINESS:
        p = 0.15 + _bump(minutes, 8.6, 0.9, 1.0) + _bump(minutes, 12.3, 0.6, 0.55) + _bump(minutes, 14.5, 1.2, 0.35)
    else:
        p = 0.1 + _bump(minutes, 12.0, 1.3, 0.6) + _bump(minutes, 16.3, 1.2, 0.9)
    return p / p.max()


_DOW = {BUSINESS: np.array([0.95, 1.0, 1.0, 1.0, 0.88]),
        RECREATIONAL: np.array([0.75, 0.85, 0.9, 1.0, 1.25])}


# -- weather ------------------------------------------------------------------

def _weather_day(doy, hours, rng, cfg):
    """Hourly rows for one day and the hour range of its hazardous episode (or None)."""
    n = len(hours)
    season = -np.cos(2 * np.pi * (doy - 15) / 365.0)
    base = 52 + 24 * season + rng.normal(0, 5)
    temp = base + 8 * np.sin((hours - 9) / 24 * 2 * np.pi) + rng.normal(0, 1, n)
    humidity = np.clip(60 + rng.normal(0, 8) - 0.8 * (temp - base), 20, 100)
    dew = temp - (100 - humidity) / 5.0
    wind = np.clip(rng.normal(8, 3) + rng.normal(0, 2, n), 0, None)
    gust = wind + np.abs(rng.normal(4, 2, n))
    vis = np.full(n, 10.0)
    pressure = 30.0 + rng.normal(0, 0.15) + rng.normal(0, 0.02, n)
    precip = np.zeros(n)
    fog = np.zeros(n)
    rain = np.zeros(n)
    snow = np.zeros(n)
    episode = None
    if rng.random() < cfg.hazard_day_prob:
        start = rng.integers(7, 15)
        length = rng.integers(3, 7)
        on = (hours >= start) & (hours < start + length)
        kind = rng.choice(["rain", "snow", "fog"], p=[0.55, 0.25, 0.2] if base < 45 else [0.75, 0.05, 0.2])
        if kind == "rain":
            precip[on] = rng.uniform(0.2, 0.5, on.sum())
            rain[on] = 1
            vis[on] = rng.uniform(3.0, 6.0, on.sum())
        elif kind == "snow":
            snow[on] = 1
            precip[on] = rng.uniform(0.05, 0.2, on.sum())
            vis[on] = rng.uniform(1.5, 4.0, on.sum())
            temp[on] = np.minimum(temp[on], 31.0)
        else:
            fog[on] = 1
            vis[on] = rng.uniform(0.5, 3.0, on.sum())
        humidity[on] = np.maximum(humidity[on], 90)
        episode = (int(start), int(start + length))
    elif rng.random() < 0.25:
        # light drizzle that stays below the hazard thresholds
        start = rng.integers(7, 16)
        on = (hours >= start) & (hours < start + 2)
        precip[on] = rng.uniform(0.01, 0.1, on.sum())
        rain[on] = 1
        vis[on] = rng.uniform(7.0, 10.0, on.sum())
    wind_chill = np.where(temp < 50, temp - 0.7 * wind, temp)
    heat_index = np.where(temp > 80, temp + 0.1 * (humidity - 40), temp)
    pavement = ((rain + snow) > 0).astype(float)
    values = np.stack([temp, dew, humidity, wind, gust, vis, pressure, wind_chill, heat_index,
                       precip, pavement, fog, rain, snow], axis=1)
    return np.round(values, 4), episode


def _shared_demand(n_minutes, cfg, rng):
    """Multiplier common to every block: a day level times a smooth drift."""
    level = rng.normal(0.0, cfg.day_demand_sd) if cfg.day_demand_sd > 0 else 0.0
    if cfg.drift_sd <= 0:
        return np.full(n_minutes, np.exp(level))
    knots = np.arange(0, n_minutes + cfg.drift_knot_minutes, cfg.drift_knot_minutes)
    walk = rng.normal(0.0, cfg.drift_sd, len(knots))
    return np.exp(level + np.interp(np.arange(n_minutes), knots, walk))


# -- main entry ---------------------------------------------------------------

def synth_generate(cfg=None, **overrides):
    """Build a full scenario: transactions, speed rows, hourly weather, travel times."""
    cfg = cfg or SynthConfig()
    if overrides:
        cfg = SynthConfig(**{**asdict(cfg), **overrides})
    rng = make_rng(cfg.seed)
    n = cfg.n_blocks
    blocks = [f"B{i:02d}" for i in range(n)]
    n_rec = max(1, int(round(cfg.recreational_frac * n)))
    kinds = [RECREATIONAL if i < n_rec else BUSINESS for i in rng.permutation(n)]
    is_rec = np.array([k == RECREATIONAL for k in kinds])
    lo, hi = cfg.capacity_range
    capacity = rng.integers(lo, hi + 1, size=n)
    meters_per_block = rng.integers(1, 4, size=n)
    coords = _layout(cfg, rng)
    travel = _travel_times(coords, cfg, rng)
    finite = travel.copy()
    np.fill_diagonal(finite, np.inf)
    nearest = np.argsort(finite, axis=1)[:, :3]

    grid = weekday_grid(cfg.start_date, cfg.days, cfg.day_start, cfg.day_end, cfg.interval_minutes)
    sim_start, sim_end = 6 * 60, 18 * 60
    minutes = np.arange(sim_start, sim_end)
    profiles = np.stack([_profile(k, minutes) for k in kinds], axis=1)      # (M, V)
    mean_dur = np.where(is_rec, cfg.mean_duration[1], cfg.mean_duration[0])
    base_rate = cfg.demand_ratio * capacity / mean_dur
    weather_hours = np.arange(6, 20)
    freeflow = np.round(rng.uniform(25, 35, size=n), 1)
    covered = rng.random(n) >= cfg.uncovered_frac
    covered[rng.integers(n)] = True

    tx_meter, tx_block, tx_start, tx_end = [], [], [], []
    speed_rows = []
    w_times, w_values = [], []
    day_list = [d for d, _ in grid.day_slices()]

    for di, day in enumerate(day_list):
        day_min = day.astype("datetime64[m]").astype(np.int64)
        dow = int((day.astype(np.int64) + 3) % 7)
        doy = int((day - day.astype("datetime64[Y]")).astype(np.int64))
        wvals, _ = _weather_day(doy, weather_hours, rng, cfg)
        w_times.extend(day_min + weather_hours * 60)
        w_values.append(wvals)
        hazard_hour = np.array([classify_hazardous(dict(zip(WEATHER_FEATURES, r))) for r in wvals])
        hz = hazard_hour[np.clip(minutes // 60 - weather_hours[0], 0, len(weather_hours) - 1)]
        weather_mult = np.where(hz[:, None], np.where(is_rec, cfg.hazard_rec_factor, cfg.hazard_business_factor), 1.0)

        rate = base_rate * profiles * np.where(is_rec, _DOW[RECREATIONAL][dow], _DOW[BUSINESS][dow]) * weather_mult
        rate *= _shared_demand(len(minutes), cfg, rng)[:, None]
        congestion = np.ones((len(minutes), n))

        # demand pulses: congestion builds ~40 min ahead of the arrival surge
        for _ in range(rng.poisson(cfg.events_per_day)):
            c = rng.integers(n)
            onset = rng.integers(8 * 60, 16 * 60) - sim_start
            dur = rng.integers(40, 90)
            amp = rng.uniform(1.0, 2.0)
            hit = np.concatenate([[c], nearest[c, :2]])
            weights = np.array([1.0, 0.5, 0.5])
            on = np.zeros(len(minutes))
            on[onset:onset + dur] = 1.0
            lead = np.zeros(len(minutes))
            lead[max(onset - 40, 0):onset + dur] = 1.0
            for v, wt in zip(hit, weights):
                rate[:, v] *= 1.0 + amp * wt * on
                congestion[:, v] += 0.5 * amp * wt * lead
        # incidents: sharp slowdowns that push parkers away
        for _ in range(rng.poisson(cfg.incidents_per_day)):
            c = rng.integers(n)
            onset = rng.integers(7 * 60, 17 * 60) - sim_start
            dur = rng.integers(30, 70)
            sl = slice(onset, onset + dur)
            for v in np.concatenate([[c], nearest[c, :2]]):
                rate[sl, v] *= 0.5
                congestion[sl, v] += 1.2 if v == c else 0.6

        counts = rng.poisson(rate)
        # background congestion tracks local demand a little ahead, since drivers
        # heading for a block are on the road before they park; morning rush on
        # business blocks
        ahead = np.minimum(np.arange(len(minutes)) + cfg.congestion_lead, len(minutes) - 1)
        demand = rate[ahead] / base_rate
        neigh = demand[:, nearest].mean(axis=2)
        congestion += 0.35 * (0.5 * demand + 0.5 * neigh)
        congestion += _bump(minutes, 8.0, 0.5, 0.2)[:, None] * (~is_rec)[None, :]

        active = [[] for _ in range(n)]
        mi, vi = np.nonzero(counts)
        for m_idx, v in zip(mi, vi):
            m = int(minutes[m_idx])
            for _ in range(counts[m_idx, v]):
                for cand in (v, *nearest[v]):
                    heap = active[cand]
                    while heap and heap[0] <= m:
                        heapq.heappop(heap)
                    if len(heap) < capacity[cand]:
                        dur = int(np.clip(round(rng.gamma(2.0, mean_dur[cand] / 2.0)), 10, 240))
                        heapq.heappush(heap, m + dur)
                        tx_meter.append(f"{blocks[cand]}-M{rng.integers(meters_per_block[cand])}")
                        tx_block.append(blocks[cand])
                        tx_start.append(day_min + m)
                        tx_end.append(day_min + m + dur)
                        break

        # speed rows on the 10-minute grid
        _, day_sl = grid.day_slices()[di]
        stamps = grid.times[day_sl].astype(np.int64) - day_min
        for s in stamps:
            k = int(s) - sim_start
            ratio = congestion[k:k + cfg.interval_minutes].mean(axis=0) * rng.lognormal(0, 0.03, n)
            ratio = np.maximum(ratio, 0.8)
            for v in np.flatnonzero(covered):
                real = freeflow[v] / ratio[v]
                conf = 30
                if rng.random() < cfg.low_confidence_frac:
                    conf = int(rng.choice([10, 20]))
                    real = freeflow[v] * rng.uniform(0.6, 1.1)
                speed_rows.append((blocks[v], np.datetime64(int(day_min + s), "m"),
                                   round(float(real), 3), float(freeflow[v]), conf))

    order = np.lexsort((np.asarray(tx_block), np.asarray(tx_start)))
    transactions = {
        "meter_id": np.asarray(tx_meter, dtype=str)[order],
        "block_id": np.asarray(tx_block, dtype=str)[order],
        "start": np.asarray(tx_start, dtype=np.int64)[order].astype("datetime64[m]"),
        "end": np.asarray(tx_end, dtype=np.int64)[order].astype("datetime64[m]"),
    }
    return SyntheticScenario(
        config=cfg, blocks=blocks, kinds=kinds, capacity=capacity, coords=coords,
        travel_time=travel, transactions=transactions, speed_rows=speed_rows,
        weather_times=np.asarray(w_times, dtype=np.int64).astype("datetime64[m]"),
        weather_values=np.concatenate(w_values, axis=0), grid=grid,
    )


def load_scenario_dir(directory, grid):
    """Read the CSV set written by ``SyntheticScenario.write`` (or real data in that format)."""
    labels, travel = read_travel_time_csv(os.path.join(directory, "travel_time.csv"))
    tx = read_transactions_csv(os.path.join(directory, "transactions.csv"))
    speed_path = os.path.join(directory, "speed.csv")
    speed = read_speed_csv(speed_path) if os.path.exists(speed_path) else None
    weather_path = os.path.join(directory, "weather.csv")
    weather = read_weather_csv(weather_path) if os.path.exists(weather_path) else None
    return labels, travel, tx, speed, weather
