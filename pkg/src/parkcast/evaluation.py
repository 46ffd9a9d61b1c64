"""Error metrics, baseline predictors, LASSO, reports and heatmap export."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

log = logging.getLogger(__name__)


# -- metrics ------------------------------------------------------------------

def q95_capacity(series):
    """Nearest-rank 95th percentile (the ceil(0.95 n)-th smallest), at least 1."""
    x = np.sort(np.asarray(series, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("q95 of an empty series")
    rank = math.ceil(0.95 * x.size)
    return max(float(x[rank - 1]), 1.0)


def q95_capacities(truth):
    """Reference capacity of every block (column) of a (N, V) panel."""
    truth = np.asarray(truth, dtype=np.float64)
    return np.array([q95_capacity(truth[:, j]) for j in range(truth.shape[1])])


def _aligned(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    return pred, truth


def mae(pred, truth):
    pred, truth = _aligned(pred, truth)
    return float(np.abs(truth - pred).mean())


def mape(pred, truth, capacities=None):
    """Mean of |y - y_hat| / q95(y_block) over all (time, block) pairs, as a fraction."""
    pred, truth = _aligned(pred, truth)
    if capacities is None:
        capacities = q95_capacities(truth)
    capacities = np.asarray(capacities, dtype=np.float64)
    if capacities.shape != truth.shape[-1:]:
        raise ValueError(f"need one capacity per block, got {capacities.shape}")
    return float((np.abs(truth - pred) / capacities).mean())


@dataclass
class BlockMetrics:
    block_id: str
    mae: float
    mape: float
    q95_capacity: float


@dataclass
class PredictionReport:
    label: str
    mae: float
    mape: float
    blocks: list
    error_std: float
    n_samples: int
    metadata: dict = field(default_factory=dict)

    def block_values(self, metric="mape"):
        return np.array([getattr(b, metric) for b in self.blocks])

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["blocks"] = [BlockMetrics(**b) for b in d["blocks"]]
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_report(label, pred, truth, block_ids, capacities=None, metadata=None):
    pred, truth = _aligned(pred, truth)
    if capacities is None:
        capacities = q95_capacities(truth)
    err = np.abs(truth - pred)
    blocks = [BlockMetrics(str(b), float(err[:, j].mean()), float((err[:, j] / capacities[j]).mean()),
                           float(capacities[j])) for j, b in enumerate(block_ids)]
    return PredictionReport(label=label, mae=float(err.mean()), mape=float((err / capacities).mean()),
                            blocks=blocks, error_std=float((truth - pred).std()),
                            n_samples=int(truth.shape[0]), metadata=dict(metadata or {}))


def write_comparison_csv(path, reports):
    """One row per model: model, MAE, MAPE in percent."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mae", "mape_pct", "error_std"])
        for r in reports:
            w.writerow([r.label, f"{r.mae:.4f}", f"{100 * r.mape:.2f}", f"{r.error_std:.4f}"])


def write_sample_output_csv(path, timestamp, block_ids, capacities, truth_row, preds):
    """Per-block capacity, truth and each model's prediction at one stamp."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "block_id", "capacity", "truth"] + list(preds))
        for j, b in enumerate(block_ids):
            w.writerow([str(timestamp), b, f"{capacities[j]:g}", f"{truth_row[j]:g}"]
                       + [f"{p[j]:.2f}" for p in preds.values()])


# -- baselines ----------------------------------------------------------------

def _keys(times):
    t = np.asarray(times, dtype="datetime64[m]")
    days = t.astype("datetime64[D]")
    dow = ((days.astype(np.int64) + 3) % 7).astype(np.int64)
    tod = (t - days).astype(np.int64)
    return dow, tod


class HistoricalAverage:
    """Mean occupancy of training stamps sharing (weekday, time of day)."""

    def fit(self, times, values):
        values = np.asarray(values, dtype=np.float64)
        dow, tod = _keys(times)
        self._by_key = {}
        self._by_tod = {}
        for key in set(zip(dow.tolist(), tod.tolist())):
            self._by_key[key] = values[(dow == key[0]) & (tod == key[1])].mean(axis=0)
        for t in set(tod.tolist()):
            self._by_tod[t] = values[tod == t].mean(axis=0)
        return self

    def predict(self, times):
        dow, tod = _keys(np.atleast_1d(times))
        out, unseen = [], set()
        for d, t in zip(dow.tolist(), tod.tolist()):
            v = self._by_key.get((d, t))
            if v is None:
                unseen.add((d, t))
                v = self._by_tod.get(t)
                if v is None:
                    raise KeyError(f"no training stamp at minute {t}")
            out.append(v)
        if unseen:
            d, t = min(unseen)
            warnings.warn(f"{len(unseen)} (weekday, minute) keys never seen in training, e.g. "
                          f"weekday {d} minute {t}; using time-of-day means")
        return np.asarray(out)


def historical_average_predict(train_times, train_values, query_time):
    return HistoricalAverage().fit(train_times, train_values).predict(query_time)[0]


def latest_observation_predict(panel, t, horizon):
    """The occupancy observed at row ``t``, used as the forecast for ``t + horizon``."""
    panel = np.asarray(panel)
    if not 0 <= t < len(panel):
        raise IndexError(f"time index {t} outside panel of length {len(panel)}")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    return panel[t].copy()


# -- LASSO --------------------------------------------------------------------

def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@dataclass
class LassoFit:
    coef: np.ndarray           # (P, V) in the original feature scale
    intercept: np.ndarray      # (V,)
    lam: float
    sweeps: int
    max_change: float

    def predict(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept


def _gram_problem(X, y, standardize):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        Xs = (X - mu) / sd
        ymu = y.mean(axis=0)
        yc = y - ymu
    else:
        mu, sd, ymu = np.zeros(X.shape[1]), np.ones(X.shape[1]), np.zeros(y.shape[1])
        Xs, yc = X, y
    return Xs.T @ Xs, Xs.T @ yc, mu, sd, ymu


@numba.njit(cache=True)
def _sweep(G, c, b, q, idx, thresh):
    worst = 0.0
    for j in idx:
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        old = b[j]
        rho = c[j] - q[j] + gjj * old
        if rho > thresh:
            new = (rho - thresh) / gjj
        elif rho < -thresh:
            new = (rho + thresh) / gjj
        else:
            new = 0.0
        d = new - old
        if d != 0.0:
            q += G[j] * d
            b[j] = new
            worst = max(worst, abs(d))
    return worst


@numba.njit(cache=True)
def _cd_column(G, c, b, thresh, tol, max_sweeps):
    q = G @ b
    full = np.arange(G.shape[0])
    sweeps = 0
    change = np.inf
    while sweeps < max_sweeps:
        change = _sweep(G, c, b, q, full, thresh)
        sweeps += 1
        if change < tol:
            break
        # inactive coefficients are zero, so the active block is self-contained
        active = np.flatnonzero(b)
        Ga = np.empty((active.size, active.size))
        for r in range(active.size):
            Ga[r] = G[active[r]][active]
        ca = c[active]
        ba = b[active]
        qa = Ga @ ba
        local = np.arange(active.size)
        while sweeps < max_sweeps:
            change = _sweep(Ga, ca, ba, qa, local, thresh)
            sweeps += 1
            if change < tol:
                break
        b[active] = ba
        q = G @ b
    return sweeps, change


def _cd(G, C, B, thresh, tol, max_sweeps):
    """Cyclic coordinate descent on (1/N)||y - X b||^2 + lam ||b||_1 in Gram form.

    Each column of B is its own regression.  Full sweeps alternate with sweeps
    over the current active set until a full sweep moves no coefficient by
    more than ``tol``.  Returns the worst sweep count and final change.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    B = np.array(B, dtype=np.float64, order="F")
    sweeps, change = 0, 0.0
    for v in range(B.shape[1]):
        b = np.ascontiguousarray(B[:, v])
        s, ch = _cd_column(G, np.ascontiguousarray(C[:, v]), b, float(thresh), float(tol), int(max_sweeps))
        B[:, v] = b
        sweeps, change = max(sweeps, s), max(change, ch)
    return np.ascontiguousarray(B), sweeps, change


def lasso_fit(X, y, lam, standardize=True, tol=1e-7, max_sweeps=10_000, warm_start=None):
    """Minimize (1/N)||y - X b||^2 + lam ||b||_1 separately for every column of y.

    With ``standardize`` the columns of X are centred and scaled internally and
    an intercept is fitted; coefficients are returned in the original scale.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    G, C, mu, sd, ymu = _gram_problem(X, y, standardize)
    B = np.zeros_like(C) if warm_start is None else np.array(warm_start, dtype=np.float64) * sd[:, None]
    B, sweeps, change = _cd(G, C, B, lam * n / 2.0, tol, max_sweeps)
    if change >= tol:
        warnings.warn(f"LASSO stopped after {sweeps} sweeps with max coefficient change {change:.3g}")
    coef = B / sd[:, None]
    intercept = ymu - mu @ coef
    return LassoFit(coef, intercept, float(lam), sweeps, float(change))


def lasso_lambda_max(X, y, standardize=True):
    X = np.asarray(X, dtype=np.float64)
    _, C, *_ = _gram_problem(X, y, standardize)
    return float(np.abs(C).max() * 2.0 / X.shape[0])


def lasso_path(X, y, lambdas, standardize=True, tol=1e-7, max_sweeps=10_000):
    """Fits for decreasing lambdas with warm starts; returned in the input order."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    G, C, mu, sd, ymu = _gram_problem(X, y, standardize)
    order = np.argsort(lambdas)[::-1]
    B = np.zeros_like(C)
    fits = [None] * len(lambdas)
    for i in order:
        lam = float(lambdas[i])
        B, sweeps, change = _cd(G, C, B.copy(), lam * n / 2.0, tol, max_sweeps)
        if change >= tol:
            warnings.warn(f"LASSO (lambda={lam:g}) stopped after {sweeps} sweeps, change {change:.3g}")
        coef = B / sd[:, None]
        fits[i] = LassoFit(coef, ymu - mu @ coef, lam, sweeps, float(change))
    return fits


class LassoBaseline:
    """Per-block LASSO on flattened input windows, lambda chosen per block on
    held-out training days."""

    def __init__(self, n_lambdas=8, min_ratio=1e-2, tol=1e-7):
        self.n_lambdas = n_lambdas
        self.min_ratio = min_ratio
        self.tol = tol

    def fit(self, X, y, X_val, y_val):
        lmax = lasso_lambda_max(X, y)
        self.lambdas = lmax * np.logspace(0, np.log10(self.min_ratio), self.n_lambdas)
        val_fits = lasso_path(X, y, self.lambdas, tol=self.tol)
        err = np.stack([((f.predict(X_val) - y_val) ** 2).mean(axis=0) for f in val_fits])
        self.choice = err.argmin(axis=0)
        X_all = np.concatenate([X, X_val])
        y_all = np.concatenate([y, y_val])
        fits = lasso_path(X_all, y_all, self.lambdas, tol=self.tol)
        V = y.shape[1]
        self.coef = np.stack([fits[self.choice[j]].coef[:, j] for j in range(V)], axis=1)
        self.intercept = np.array([fits[self.choice[j]].intercept[j] for j in range(V)])
        return self

    def predict(self, X):
        return np.asarray(X) @ self.coef + self.intercept


def flatten_inputs(inputs, sources):
    """Concatenate every source's window into one feature row per sample."""
    n = len(next(iter(inputs.values())))
    return np.concatenate([np.asarray(inputs[s]).reshape(n, -1) for s in sources], axis=1)


# -- heatmaps -----------------------------------------------------------------

_SEQ = [(26, 152, 80), (254, 224, 139), (215, 48, 39)]      # green -> yellow -> red


def _lerp(stops, u):
    u = min(max(u, 0.0), 1.0) * (len(stops) - 1)
    i = min(int(u), len(stops) - 2)
    f = u - i
    a, b = stops[i], stops[i + 1]
    return "#%02x%02x%02x" % tuple(int(round(a[k] + f * (b[k] - a[k]))) for k in range(3))


def color_scale(values, diverging=False):
    """Hex colors.  Sequential: min green -> max red.  Diverging: symmetric
    about zero, negative red, zero yellow, positive green."""
    v = np.asarray(values, dtype=np.float64)
    if diverging:
        m = np.abs(v).max()
        u = 0.5 - 0.5 * v / m if m > 0 else np.full(v.shape, 0.5)
    else:
        lo, hi = v.min(), v.max()
        u = (v - lo) / (hi - lo) if hi > lo else np.full(v.shape, 0.5)
    return [_lerp(_SEQ, float(x)) for x in u]


def heatmap_export(path_prefix, block_ids, values, coords=None, title="", diverging=False):
    """Write ``<prefix>.csv`` and, when coordinates are given, ``<prefix>.svg``."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) != len(block_ids):
        raise ValueError("need one value per block")
    with open(path_prefix + ".csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "value"])
        for b, v in zip(block_ids, values):
            w.writerow([b, repr(float(v))])
    written = [path_prefix + ".csv"]
    if coords is None:
        warnings.warn("no block coordinates; heatmap written as CSV only")
        return written
    coords = np.asarray(coords, dtype=np.float64)
    colors = color_scale(values, diverging)
    pad, size = 40.0, 600.0
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = max(float((hi - lo).max()), 1.0)
    px = pad + (coords - lo) / span * (size - 2 * pad)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size + 30:.0f}">',
             f'<text x="10" y="20" font-size="14">{title}</text>']
    for b, (x, y), c, v in zip(block_ids, px, colors, values):
        # y grows downward in SVG
        lines.append(f'<circle cx="{x:.1f}" cy="{size + 30 - y:.1f}" r="12" fill="{c}" stroke="#333">'
                     f'<title>{b}: {v:.4g}</title></circle>')
    lines.append("</svg>")
    with open(path_prefix + ".svg", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    written.append(path_prefix + ".svg")
    return written
