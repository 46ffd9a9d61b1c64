"""Command line entry point: generate, preprocess, train, predict, evaluate,
ablate, gridsearch and report.

Every command reads one JSON config (``--config``), optionally overridden with
``--set section.key=value`` and ``--seed``, and writes a ``manifest.json`` next
to its outputs.  Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric
divergence.
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import glob
import hashlib
import json
import logging
import os
import sys

import numpy as np

from .autodiff import DivergenceError
from .data import (
    DataError, TimeGrid, read_speed_csv, read_transactions_csv, read_weather_csv, speed_ingest,
    transactions_to_occupancy, weather_interpolate, weekday_grid,
)
from .graph import read_travel_time_csv
from .evaluation import (
    PredictionReport, build_report, heatmap_export, q95_capacities, write_comparison_csv,
    write_sample_output_csv,
)
from .experiment import (
    OCCUPANCY, ablation_run, baseline_predictions, predict_counts, prepare, _slug,
)
from .model import DataSourceSpec, EmbeddingConfig, ModelSpec, ParkingModel, final_model_spec
from .numerics import ParamStore
from .synth import SynthConfig, read_blocks_csv, synth_generate
from .training import (
    AdamState, TrainConfig, evaluate_mse, grid_search, read_history_csv, train, write_history_csv,
)

log = logging.getLogger("parkcast")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
MANIFEST = "manifest.json"
DATASET = "dataset.npz"

DEFAULTS = {
    "seed": 0,
    "synth": {},
    "grid": {},     # missing keys follow the synth section

    "preprocess": {"chain": ["normalize", "minmax"], "window": 24, "horizon": 3, "train_frac": 0.8,
                   "lambda_max": "power"},
    "model": {"sources": ["occupancy", "speed", "weather"], "weather_hidden": 64, "spec": None},
    "train": {},
    "evaluate": {"lasso": True},
    "ablation": {"subsets": [["occupancy"], ["occupancy", "speed"], ["occupancy", "weather"],
                             ["occupancy", "speed", "weather"]]},
    "gridsearch": {"axes": {"learning_rate": [0.001, 0.0005]}, "max_epochs": 20},
}


class ConfigError(ValueError):
    pass


# -- config and manifest --------------------------------------------------------

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=(), seed=None):
    """Defaults <- config file <- ``key.path=value`` overrides <- ``--seed``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
        cfg = _merge(cfg, user)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {p} is not a section")
        node[parts[-1]] = _parse_value(value)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command, cfg, config_path, inputs, outputs, started):
    """Provenance record: config, its hash and a checksum of every artifact."""
    manifest = {
        "command": command,
        "config_path": config_path,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "inputs": [str(p) for p in inputs],
        "outputs": {os.path.relpath(p, out_dir): _sha256(p) for p in sorted(outputs)},
        "started": started,
        "finished": _now(),
    }
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _train_config(cfg):
    try:
        return TrainConfig(**{**cfg["train"], "seed": cfg["seed"]})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train section: {exc}") from None


def _synth_config(cfg):
    try:
        return SynthConfig(**{**cfg["synth"], "seed": cfg["seed"]})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth section: {exc}") from None


def _grid(cfg):
    sc = SynthConfig(**{k: v for k, v in cfg["synth"].items()
                        if k in ("start_date", "days", "day_start", "day_end", "interval_minutes")})
    g = {"start_date": sc.start_date, "days": sc.days, "day_start": sc.day_start,
         "day_end": sc.day_end, "interval_minutes": sc.interval_minutes, **cfg["grid"]}
    try:
        return weekday_grid(g["start_date"], int(g["days"]), g["day_start"], g["day_end"],
                            int(g["interval_minutes"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"grid section: {exc}") from None


def model_spec(cfg, n_vertices, sources=None):
    m = cfg["model"]
    p = cfg["preprocess"]
    try:
        if m.get("spec"):
            spec = ModelSpec.from_dict(m["spec"])
        else:
            spec = final_model_spec(n_vertices, int(p["window"]), int(p["horizon"]),
                                    weather_hidden=int(m.get("weather_hidden", 64)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model section: {exc}") from None
    wanted = list(sources or m["sources"])
    missing = set(wanted) - set(spec.source_names)
    if missing:
        raise ConfigError(f"model section: unknown sources {sorted(missing)}")
    if OCCUPANCY not in wanted:
        raise ConfigError("model section: the occupancy source is required")
    spec = spec.only(wanted)
    if spec.n_vertices != n_vertices:
        raise ConfigError(f"model has {spec.n_vertices} vertices but the data has {n_vertices} blocks")
    if spec.window != int(p["window"]) or spec.horizon != int(p["horizon"]):
        raise ConfigError(f"model window/horizon {spec.window}/{spec.horizon} differ from preprocess "
                          f"settings {p['window']}/{p['horizon']}")
    return spec


# -- dataset files ------------------------------------------------------------------

def build_dataset(data_dir, cfg):
    """Read the CSV set in ``data_dir`` into panels on the configured grid."""
    grid = _grid(cfg)
    tt = os.path.join(data_dir, "travel_time.csv")
    tx = os.path.join(data_dir, "transactions.csv")
    for path in (tt, tx):
        if not os.path.exists(path):
            raise DataError(f"required file {path} is missing")
    try:
        labels, travel = read_travel_time_csv(tt)
    except ValueError as exc:
        raise DataError(f"{tt}: {exc}") from None
    panels = {OCCUPANCY: transactions_to_occupancy(read_transactions_csv(tx), labels, grid).occupancy}
    speed = os.path.join(data_dir, "speed.csv")
    if os.path.exists(speed):
        panels["speed"] = speed_ingest(read_speed_csv(speed), labels, grid).congestion
    weather = os.path.join(data_dir, "weather.csv")
    if os.path.exists(weather):
        times, values = read_weather_csv(weather)
        panels["weather"] = weather_interpolate(times, values, grid).values
    coords = None
    blocks_csv = os.path.join(data_dir, "blocks.csv")
    if os.path.exists(blocks_csv):
        ids, _, _, xy = read_blocks_csv(blocks_csv)
        if ids != list(labels):
            raise DataError(f"{blocks_csv}: block order differs from travel_time.csv")
        coords = xy
    return grid, labels, travel, panels, coords


def save_dataset(path, grid, blocks, travel, panels, coords):
    arrays = {"times": grid.times.astype(np.int64), "interval": np.array(grid.interval_minutes),
              "blocks": np.asarray(blocks, dtype=str), "travel_time": travel}
    if coords is not None:
        arrays["coords"] = coords
    for k, v in panels.items():
        arrays[f"panel/{k}"] = v
    np.savez(path, **arrays)


def load_dataset(path):
    if os.path.isdir(path):
        path = os.path.join(path, DATASET)
    if not os.path.exists(path):
        raise DataError(f"dataset {path} not found; run the preprocess command first")
    with np.load(path) as z:
        grid = TimeGrid(z["times"].astype("datetime64[m]"), int(z["interval"]))
        panels = {k.split("/", 1)[1]: z[k] for k in z.files if k.startswith("panel/")}
        coords = z["coords"] if "coords" in z.files else None
        return grid, z["blocks"].tolist(), z["travel_time"], panels, coords


def _prepare(dataset, cfg, sources):
    grid, blocks, travel, panels, coords = load_dataset(dataset)
    for s in sources:
        if s not in panels:
            raise DataError(f"source {s!r} is enabled but the dataset has no {s} data "
                            f"(expected {s}.csv in the data directory)")
    p = cfg["preprocess"]
    lam = p.get("lambda_max", "power")
    try:
        return prepare(grid, blocks, travel, {k: panels[k] for k in sources}, int(p["window"]),
                       int(p["horizon"]), float(p["train_frac"]), cfg["seed"], tuple(p["chain"]), lam,
                       coords)
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise ConfigError(f"preprocess section: {exc}") from None


# -- commands -----------------------------------------------------------------------

def cmd_generate(args, cfg):
    scenario = synth_generate(_synth_config(cfg))
    files = [os.path.join(args.out, f) for f in scenario.write(args.out)]
    return [], files


def cmd_preprocess(args, cfg):
    grid, blocks, travel, panels, coords = build_dataset(args.data, cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, DATASET)
    save_dataset(path, grid, blocks, travel, panels, coords)
    prep = _prepare(path, cfg, list(panels))
    summary = os.path.join(args.out, "preprocess.json")
    with open(summary, "w") as fh:
        json.dump({
            "sources": list(panels), "n_blocks": len(blocks), "n_stamps": len(grid),
            "train_days": [str(d) for d in prep.train_days], "test_days": [str(d) for d in prep.test_days],
            "n_train": len(prep.train), "n_test": len(prep.test),
            "transforms": {k: t.to_dict() for k, t in prep.transforms.items()},
        }, fh, indent=2)
    return [args.data], [path, summary]


def _save_checkpoint(path, params, spec, cfg, epoch, adam=None):
    extra = {"spec": np.array(spec.to_json()), "config_hash": np.array(config_hash(cfg)),
             "epoch": np.array(epoch)}
    if adam is not None:
        extra["adam_t"] = np.array(adam.t)
        for name in params.names():
            extra[f"adam_m/{name}"] = adam.m[name]
            extra[f"adam_v/{name}"] = adam.v[name]
    params.save(path, extra=extra)


def _load_checkpoint(path):
    if not os.path.exists(path):
        raise DataError(f"checkpoint {path} not found")
    params, extra = ParamStore.load(path)
    spec = ModelSpec.from_json(str(extra["spec"]))
    adam = None
    if "adam_t" in extra:
        names = params.names()
        adam = AdamState({n: extra[f"adam_m/{n}"] for n in names}, {n: extra[f"adam_v/{n}"] for n in names},
                         int(extra["adam_t"]))
    return params, spec, int(extra["epoch"]), adam


def cmd_train(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    best_path = os.path.join(args.out, "best.npz")
    last_path = os.path.join(args.out, "last.npz")
    hist_path = os.path.join(args.out, "history.csv")
    grid, blocks, *_ = load_dataset(args.data)
    tcfg = _train_config(cfg)
    params = adam = best_params = None
    history, start = [], 1
    if args.resume:
        params, spec, last_epoch, adam = _load_checkpoint(last_path)
        best_params, *_ = _load_checkpoint(best_path)
        history = read_history_csv(hist_path)
        if not history or history[-1].epoch != last_epoch:
            raise DataError(f"{hist_path} does not end at checkpoint epoch {last_epoch}")
        start = last_epoch + 1
        log.info("resuming at epoch %d", start)
    else:
        spec = model_spec(cfg, len(blocks))
    prep = _prepare(args.data, cfg, spec.source_names)

    def on_epoch(rec, store, adam_state):
        _save_checkpoint(last_path, store, spec, cfg, rec.epoch, adam_state)
        write_history_csv(hist_path, history_so_far + [rec])
        history_so_far.append(rec)

    history_so_far = list(history)
    res = train(spec, prep.laplacian, prep.train.as_pair(spec.source_names),
                prep.test.as_pair(spec.source_names), tcfg, params=params, adam=adam,
                history=history, start_epoch=start, on_epoch=on_epoch, best_params=best_params)
    _save_checkpoint(best_path, res.params, spec, cfg, res.best_epoch or 0)
    write_history_csv(hist_path, res.history)
    spec_path = os.path.join(args.out, "spec.json")
    with open(spec_path, "w") as fh:
        fh.write(spec.to_json())
    print(f"best epoch {res.best_epoch}, test mse {res.best_test_mse:.6g}, epochs run {len(res.history)}")
    return [args.data], [best_path, last_path, hist_path, spec_path]


def _model_run(args, cfg):
    params, spec, epoch, _ = _load_checkpoint(os.path.join(args.run, "best.npz"))
    p = cfg["preprocess"]
    if spec.window != int(p["window"]) or spec.horizon != int(p["horizon"]):
        raise ConfigError(f"checkpoint was trained with window/horizon {spec.window}/{spec.horizon}, "
                          f"config asks for {p['window']}/{p['horizon']}")
    prep = _prepare(args.data, cfg, spec.source_names)
    return params, spec, epoch, prep


def cmd_predict(args, cfg):
    params, spec, _, prep = _model_run(args, cfg)
    ds = prep.split(args.split)
    counts = predict_counts(prep, spec, params, ds)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"predictions_{args.split}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_time"] + list(prep.blocks))
        for ti, row in zip(ds.target_index, counts):
            w.writerow([str(prep.grid.times[ti])] + [repr(float(v)) for v in row])
    return [args.run, args.data], [path]


def cmd_evaluate(args, cfg):
    params, spec, epoch, prep = _model_run(args, cfg)
    ds = prep.split(args.split)
    truth = prep.truth(ds)
    caps = q95_capacities(truth)
    pred = predict_counts(prep, spec, params, ds)
    mse = evaluate_mse(ParkingModel(spec, prep.laplacian, params), *ds.as_pair(spec.source_names))
    meta = {"split": args.split, "best_epoch": epoch, "scaled_mse": mse, "config_hash": config_hash(cfg)}
    reports = [build_report("GCNN+LSTM", pred, truth, prep.blocks, caps, meta)]
    preds = {"GCNN+LSTM": pred}
    if not args.no_baselines:
        lasso = None if cfg["evaluate"].get("lasso", True) else False
        for label, p_ in baseline_predictions(prep, args.split, lasso, cfg["seed"]).items():
            preds[label] = p_
            reports.append(build_report(label, p_, truth, prep.blocks, caps, {"config_hash": config_hash(cfg)}))
    os.makedirs(args.out, exist_ok=True)
    out = []
    for r in reports:
        path = os.path.join(args.out, f"report_{_slug(r.label)}.json")
        r.save(path)
        out.append(path)
    comp = os.path.join(args.out, "comparison.csv")
    write_comparison_csv(comp, reports)
    out.append(comp)
    model_mape = reports[0].block_values()
    out += heatmap_export(os.path.join(args.out, "heatmap_model_mape"), prep.blocks, model_mape,
                          prep.coords, "Block MAPE, proposed model")
    if "LASSO" in preds:
        lasso_rep = next(r for r in reports if r.label == "LASSO")
        out += heatmap_export(os.path.join(args.out, "heatmap_lasso_minus_model"), prep.blocks,
                              lasso_rep.block_values() - model_mape, prep.coords,
                              "E_LASSO - E_model (MAPE)", diverging=True)
    sample = os.path.join(args.out, "sample_output.csv")
    write_sample_output_csv(sample, str(prep.grid.times[ds.target_index[0]]), prep.blocks, caps, truth[0],
                            {k: v[0] for k, v in preds.items()})
    out.append(sample)
    print(f"scaled mse {mse:.12g}")
    _print_table(reports)
    return [args.run, args.data], out


def cmd_ablate(args, cfg):
    grid, blocks, *_ = load_dataset(args.data)
    spec = model_spec(cfg, len(blocks), sources=cfg["model"]["sources"])
    subsets = [tuple(s) for s in cfg["ablation"]["subsets"]]
    for s in subsets:
        if OCCUPANCY not in s:
            raise ConfigError(f"ablation subset {list(s)} omits occupancy")
    prep = _prepare(args.data, cfg, spec.source_names)
    try:
        res = ablation_run(prep, spec, subsets, _train_config(cfg), args.out)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _print_table(list(res.reports.values()))
    files = [f for f in glob.glob(os.path.join(args.out, "*")) if not f.endswith(MANIFEST)]
    return [args.data], files


def _grid_build(prep_cache, cfg, blocks):
    """Map grid-search settings onto a spec, a prepared split and a TrainConfig."""
    train_keys = set(TrainConfig.__dataclass_fields__)

    def build(settings, tcfg):
        local = copy.deepcopy(cfg)
        t_over = {}
        for k, v in settings.items():
            if k in train_keys:
                t_over[k] = v
            elif k == "chain":
                local["preprocess"]["chain"] = list(v)
            elif k not in ("lstm_dim", "dropout", "activation", "cheb_order", "decoder_dim"):
                raise ConfigError(f"unknown grid-search axis {k!r}")
        spec = model_spec(local, len(blocks))
        sources = []
        for s in spec.sources:
            emb = s.embedding
            e = EmbeddingConfig(
                emb.gcnn_channels, settings.get("cheb_order", emb.cheb_order), emb.fc_dims,
                (settings["lstm_dim"],) if "lstm_dim" in settings and s.name != "weather" else emb.lstm_dims,
                settings.get("dropout", emb.dropout) if s.name == OCCUPANCY else emb.dropout,
                settings.get("activation", emb.activation),
            )
            sources.append(DataSourceSpec(s.name, s.schema, s.feature_dim, e))
        dec = (settings["decoder_dim"],) if "decoder_dim" in settings else spec.decoder_dims
        spec = ModelSpec(sources, spec.n_vertices, dec, spec.horizon, spec.window, spec.decoder_activation)
        key = tuple(local["preprocess"]["chain"])
        if key not in prep_cache:
            prep_cache[key] = _prepare(prep_cache["__path__"], local, spec.source_names)
        prep = prep_cache[key]
        run_cfg = TrainConfig(**{**tcfg.__dict__, **t_over})
        return (spec, prep.laplacian, prep.train.as_pair(spec.source_names),
                prep.test.as_pair(spec.source_names), run_cfg)

    return build


def cmd_gridsearch(args, cfg):
    _, blocks, *_ = load_dataset(args.data)
    gs = cfg["gridsearch"]
    axes = gs.get("axes") or {}
    build = _grid_build({"__path__": args.data}, cfg, blocks)
    try:
        rows = grid_search(axes, build, _train_config(cfg), int(gs.get("max_epochs", 20)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ConfigError, DataError)):
            raise
        raise ConfigError(f"gridsearch section: {exc}") from None
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "gridsearch.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "settings", "best_test_mse", "best_epoch", "epochs_run"])
        for r in rows:
            w.writerow([r.rank, json.dumps(r.settings, sort_keys=True), repr(r.best_test_mse),
                        r.best_epoch, r.epochs_run])
            print(f"{r.rank:3d}  {r.best_test_mse:.6g}  {json.dumps(r.settings, sort_keys=True)}")
    return [args.data], [path]


def cmd_report(args, cfg):
    paths = []
    for d in args.runs:
        paths += sorted(glob.glob(os.path.join(d, "report_*.json")))
    if not paths:
        raise DataError(f"no report_*.json files under {args.runs}")
    reports = [PredictionReport.load(p) for p in paths]
    os.makedirs(args.out, exist_ok=True)
    comp = os.path.join(args.out, "table.csv")
    write_comparison_csv(comp, reports)
    _print_table(reports)
    return paths, [comp]


def _print_table(reports):
    print(f"{'model':<28} {'MAE':>8} {'MAPE':>8}")
    for r in reports:
        print(f"{r.label:<28} {r.mae:8.3f} {100 * r.mape:7.2f}%")


# -- parser ---------------------------------------------------------------------------

COMMANDS = {
    "generate": cmd_generate, "preprocess": cmd_preprocess, "train": cmd_train,
    "predict": cmd_predict, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
    "gridsearch": cmd_gridsearch, "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="parkcast", description="Block-level parking occupancy forecasting.",
        epilog="exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; missing sections take defaults")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. train.max_epochs=5 (value parsed as JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic CSV dataset")
    p.add_argument("--out", required=True, help="directory for the CSV files")

    p = sub.add_parser("preprocess", parents=[common], help="build panels from a CSV directory")
    p.add_argument("--data", required=True, help="directory holding the CSV files")
    p.add_argument("--out", required=True, help="directory for dataset.npz")

    p = sub.add_parser("train", parents=[common], help="train and checkpoint the best epoch")
    p.add_argument("--data", required=True, help="preprocessed dataset (directory or .npz)")
    p.add_argument("--out", required=True, help="run directory for checkpoints and history")
    p.add_argument("--resume", action="store_true", help="continue from the run directory's last.npz")

    for name, text in (("predict", "write vehicle-count forecasts"),
                       ("evaluate", "score a trained run against the baselines")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--run", required=True, help="run directory written by train")
        p.add_argument("--data", required=True, help="preprocessed dataset (directory or .npz)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--split", choices=("train", "test"), default="test")
        if name == "evaluate":
            p.add_argument("--no-baselines", action="store_true", help="score the model only")

    p = sub.add_parser("ablate", parents=[common], help="train one model per source subset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gridsearch", parents=[common], help="rank hyper-parameter combinations")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", parents=[common], help="merge report files into one table")
    p.add_argument("runs", nargs="+", help="directories holding report_*.json files")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = _now()
    try:
        cfg = load_config(args.config, args.set, args.seed)
        inputs, outputs = COMMANDS[args.command](args, cfg)
        write_manifest(args.out, args.command, cfg, args.config, inputs, outputs, started)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
