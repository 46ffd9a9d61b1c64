"""End-to-end runs: prepare panels, train, score against baselines, ablate."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .data import make_windows, preprocess, split_days
from .evaluation import (
    HistoricalAverage, LassoBaseline, build_report, flatten_inputs, heatmap_export,
    q95_capacities, write_comparison_csv,
)
from .graph import ScaledLaplacian, build_weight_matrix
from .model import ParkingModel
from .training import train, write_history_csv

log = logging.getLogger(__name__)

OCCUPANCY = "occupancy"


@dataclass
class Prepared:
    grid: object
    blocks: list
    graph: object
    laplacian: ScaledLaplacian
    raw: dict
    scaled: dict
    transforms: dict
    train: object
    test: object
    train_days: np.ndarray
    test_days: np.ndarray
    window: int
    horizon: int
    coords: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self):
        return len(self.blocks)

    def split(self, name):
        if name not in ("train", "test"):
            raise ValueError(f"unknown split {name!r}")
        return self.train if name == "train" else self.test

    def truth(self, ds):
        """Vehicle counts at each sample's target stamp."""
        return self.raw[OCCUPANCY][ds.target_index]

    def to_counts(self, scaled_pred):
        return self.transforms[OCCUPANCY].invert(scaled_pred)


def prepare(grid, blocks, travel_time, panels, window=24, horizon=3, train_frac=0.8, seed=0,
            chain=("normalize", "minmax"), lambda_max="power", coords=None):
    """Split days, fit preprocessing on training days only, and window everything.

    ``panels`` maps source names to (T, F) arrays on ``grid`` and must include
    ``"occupancy"`` (T, V), which is also the prediction target.
    """
    if OCCUPANCY not in panels:
        raise ValueError("an occupancy panel is required")
    graph = build_weight_matrix(travel_time, blocks)
    lap = ScaledLaplacian.from_graph(graph, lambda_max)
    train_days, test_days = split_days(grid.days, train_frac, seed)
    train_rows = np.isin(grid.days, train_days)
    scaled, transforms = preprocess(panels, train_rows, chain)
    ds = make_windows(grid, scaled, scaled[OCCUPANCY], window, horizon)
    is_train = np.isin(ds.days, train_days)
    return Prepared(grid, list(blocks), graph, lap, dict(panels), scaled, transforms,
                    ds.subset(np.flatnonzero(is_train)), ds.subset(np.flatnonzero(~is_train)),
                    train_days, test_days, window, horizon, coords,
                    {"seed": seed, "chain": list(chain), "train_frac": train_frac})


def prepare_scenario(scenario, window=24, horizon=3, train_frac=0.8, seed=0,
                     chain=("normalize", "minmax"), lambda_max="power"):
    panels = {
        OCCUPANCY: scenario.occupancy().occupancy,
        "speed": scenario.speed().congestion,
        "weather": scenario.weather().values,
    }
    return prepare(scenario.grid, scenario.blocks, scenario.travel_time, panels, window, horizon,
                   train_frac, seed, chain, lambda_max, scenario.coords)


def predict_counts(prepared, spec, params, ds):
    model = ParkingModel(spec, prepared.laplacian, params)
    inputs, _ = ds.as_pair(spec.source_names)
    return prepared.to_counts(model.predict(inputs))


def model_report(prepared, spec, params, split="test", label="GCNN+LSTM", capacities=None, metadata=None):
    ds = prepared.split(split)
    pred = predict_counts(prepared, spec, params, ds)
    truth = prepared.truth(ds)
    return build_report(label, pred, truth, prepared.blocks, capacities, metadata)


def baseline_predictions(prepared, split="test", lasso_sources=None, seed=0):
    """Historical average, latest observation and LASSO forecasts in vehicles."""
    ds = prepared.split(split)
    occ = prepared.raw[OCCUPANCY]
    train_rows = np.isin(prepared.grid.days, prepared.train_days)
    ha = HistoricalAverage().fit(prepared.grid.times[train_rows], occ[train_rows])
    out = {
        "Historical Average": ha.predict(prepared.grid.times[ds.target_index]),
        "Latest Observation": occ[ds.last_index].copy(),
    }
    if lasso_sources is not False:
        sources = lasso_sources or [k for k in prepared.train.inputs]
        fit_days, val_days = split_days(prepared.train_days, 0.8, seed + 1)
        tr = prepared.train
        fit_idx = np.flatnonzero(np.isin(tr.days, fit_days))
        val_idx = np.flatnonzero(np.isin(tr.days, val_days))
        X = flatten_inputs(tr.inputs, sources)
        lasso = LassoBaseline().fit(X[fit_idx], tr.targets[fit_idx], X[val_idx], tr.targets[val_idx])
        out["LASSO"] = prepared.to_counts(lasso.predict(flatten_inputs(ds.inputs, sources)))
    return out


def baseline_reports(prepared, split="test", lasso_sources=None, capacities=None, seed=0):
    ds = prepared.split(split)
    truth = prepared.truth(ds)
    if capacities is None:
        capacities = q95_capacities(truth)
    preds = baseline_predictions(prepared, split, lasso_sources, seed)
    return {k: build_report(k, p, truth, prepared.blocks, capacities) for k, p in preds.items()}


@dataclass
class BenchmarkResult:
    train: object
    reports: dict

    def mape(self, label):
        return self.reports[label].mape


def run_benchmark(prepared, spec, cfg, lasso=True, out_dir=None):
    """Train the model, then score it and every baseline on the test days."""
    tr = prepared.train.as_pair(spec.source_names)
    te = prepared.test.as_pair(spec.source_names)
    res = train(spec, prepared.laplacian, tr, te, cfg)
    truth = prepared.truth(prepared.test)
    caps = q95_capacities(truth)
    reports = {"GCNN+LSTM": model_report(prepared, spec, res.params, "test", capacities=caps,
                                         metadata={"seed": cfg.seed, "best_epoch": res.best_epoch})}
    reports.update(baseline_reports(prepared, "test", None if lasso else False, caps, cfg.seed))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_history_csv(os.path.join(out_dir, "history.csv"), res.history)
        write_comparison_csv(os.path.join(out_dir, "comparison.csv"), list(reports.values()))
        for r in reports.values():
            r.save(os.path.join(out_dir, f"report_{_slug(r.label)}.json"))
        model_mape = reports["GCNN+LSTM"].block_values()
        heatmap_export(os.path.join(out_dir, "heatmap_model_mape"), prepared.blocks, model_mape,
                       prepared.coords, "Block MAPE, proposed model")
        if "LASSO" in reports:
            heatmap_export(os.path.join(out_dir, "heatmap_lasso_minus_model"), prepared.blocks,
                           reports["LASSO"].block_values() - model_mape, prepared.coords,
                           "E_LASSO - E_model (MAPE)", diverging=True)
    return BenchmarkResult(res, reports)


def _slug(label):
    return "".join(c.lower() if c.isalnum() else "_" for c in label).strip("_")


@dataclass
class AblationResult:
    reports: dict            # subset label -> PredictionReport
    histories: dict          # subset label -> list of EpochRecord
    best_test_mse: dict      # subset label -> float
    deltas: dict             # subset label -> per-block MAPE(subset) - MAPE(full)


def subset_label(subset):
    return "+".join(subset)


def ablation_run(prepared, spec, subsets, cfg, out_dir=None):
    """One model per source subset with identical seed and budget."""
    subsets = [tuple(s) for s in subsets]
    for s in subsets:
        if OCCUPANCY not in s:
            raise ValueError(f"subset {s} omits occupancy, which every model must keep")
        unknown = set(s) - set(spec.source_names)
        if unknown:
            raise ValueError(f"subset {s} names unknown sources {sorted(unknown)}")
    full = tuple(spec.source_names)
    if full not in [tuple(sorted(s, key=full.index)) for s in subsets]:
        subsets.append(full)
    truth = prepared.truth(prepared.test)
    caps = q95_capacities(truth)
    reports, histories, best = {}, {}, {}
    for s in subsets:
        sub = spec.only(s)
        label = subset_label(sub.source_names)
        res = train(sub, prepared.laplacian, prepared.train.as_pair(sub.source_names),
                    prepared.test.as_pair(sub.source_names), cfg)
        reports[label] = model_report(prepared, sub, res.params, "test", label, caps,
                                      {"seed": cfg.seed, "best_epoch": res.best_epoch})
        histories[label] = res.history
        best[label] = res.best_test_mse
    full_label = subset_label(full)
    deltas = {k: r.block_values() - reports[full_label].block_values() for k, r in reports.items()}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_comparison_csv(os.path.join(out_dir, "ablation.csv"), list(reports.values()))
        for k, r in reports.items():
            slug = _slug(k)
            r.save(os.path.join(out_dir, f"report_{slug}.json"))
            write_history_csv(os.path.join(out_dir, f"history_{slug}.csv"), histories[k])
            if k != full_label:
                heatmap_export(os.path.join(out_dir, f"delta_{slug}"), prepared.blocks, deltas[k],
                               prepared.coords, f"E({k}) - E(full), MAPE", diverging=True)
    return AblationResult(reports, histories, best, deltas)
