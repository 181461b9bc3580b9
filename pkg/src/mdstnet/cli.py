"""Command line front end.

Subcommands: ``gen-data``, ``train``, ``eval``, ``predict``, ``gradcheck``
and ``dump-attention``. Runs are configured by a JSON file with the
sections ``model``, ``train``, ``data`` and ``ablation``; single values
can be overridden with ``--set section.key=value``.

Exit codes: 0 success, 1 gradient check failed, 2 invalid usage or
config, 3 numeric divergence, 4 I/O or data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import kernel as K
from .dam import record_attention
from .data import Windows, load_dataset, save_dataset, split_chronological
from .estimator import MDSTNetForecaster
from .exceptions import ConfigError, DataError, FormatError, NumericError
from .model import ModelConfig, forward
from .synthetic import SynthConfig, gen_synthetic
from .training import (FULL_MODEL_EPS, TrainConfig, baseline_ha, baseline_persistence, evaluate,
                       full_gradcheck)

log = logging.getLogger("mdstnet")

GRADCHECK_TOL = 1e-4

ABLATIONS = {
    "disable-spa": ("model", "disable_spa"),
    "disable-pva": ("model", "disable_pva"),
    "disable-mva": ("model", "disable_mva"),
    "zero-forecast": ("model", "zero_forecast"),
    "full-attention": ("model", "full_attention"),
    "paper-loss": ("train", "paper_loss"),
}

# the tiny verification model
TINY_MODEL = dict(history=6, horizon=4, d_model=8, depth=1, heads=2,
                  spa_tokens=2, pva_tokens=2, mva_tokens=2)

DATA_KEYS = {"path", "split", "eval_split", "seed", "synthetic"}


def default_config():
    model = {f.name: f.default for f in fields(ModelConfig)
             if f.name not in ("n_pollutants", "n_mete") and not f.name.startswith(("disable_", "zero_", "full_"))}
    train = {f.name: f.default for f in fields(TrainConfig) if f.name != "paper_loss"}
    return {
        "model": model,
        "train": train,
        "data": {"path": None, "split": [0.7, 0.1, 0.2], "eval_split": "test", "seed": 0,
                 "synthetic": {}},
        "ablation": {name.replace("-", "_"): False for name in ABLATIONS},
    }


def _merge(base, update, where="config"):
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown key {where}.{key}")
        if isinstance(base[key], dict) and key != "synthetic":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{key} must be an object")
            _merge(base[key], value, f"{where}.{key}")
        else:
            base[key] = value
    return base


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    """Apply ``section.key=value`` (value parsed as JSON when possible)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    dotted, text = assignment.split("=", 1)
    parts = dotted.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[p]
    leaf = parts[-1]
    synthetic = len(parts) >= 2 and parts[-2] == "synthetic"
    if not isinstance(node, dict) or (leaf not in node and not synthetic):
        raise ConfigError(f"unknown config key {dotted!r}")
    node[leaf] = _parse_value(text)
    return cfg


def build_config(path=None, overrides=(), ablate=()):
    """Defaults, then the JSON file, then ``--set`` overrides, then ``--ablate`` flags."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as f:
                loaded = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be an object")
        _merge(cfg, loaded)
    for item in overrides:
        apply_override(cfg, item)
    for name in ablate:
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        cfg["ablation"][name.replace("-", "_")] = True
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    unknown = set(cfg["data"]) - DATA_KEYS
    if unknown:
        raise ConfigError(f"unknown data keys {sorted(unknown)}")
    synth_fields = {f.name for f in fields(SynthConfig)}
    bad = set(cfg["data"]["synthetic"]) - synth_fields
    if bad:
        raise ConfigError(f"unknown data.synthetic keys {sorted(bad)}")
    for key, value in cfg["ablation"].items():
        if not isinstance(value, bool):
            raise ConfigError(f"ablation.{key} must be true or false")
    estimator_kwargs(cfg)
    synth_config(cfg)
    if cfg["data"]["eval_split"] not in ("train", "val", "test", "all"):
        raise ConfigError("data.eval_split must be train, val, test or all")


def estimator_kwargs(cfg):
    kw = {**cfg["model"], **cfg["train"]}
    kw.update(cfg["ablation"])
    ModelConfig(**{k: kw[k] for k in kw if k in ModelConfig.__dataclass_fields__})
    TrainConfig(**{k: kw[k] for k in kw if k in TrainConfig.__dataclass_fields__})
    return kw


def synth_config(cfg):
    s = SynthConfig(**cfg["data"]["synthetic"])
    s.validate()
    return s


# ---------------------------------------------------------------------------
# output directories and run state


def prepare_out(path, force):
    path = Path(path)
    occupied = any(path.iterdir()) if path.is_dir() else path.exists()
    if occupied:
        if not force:
            raise FileExistsError(f"{path} exists; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_config(cfg, directory):
    with open(Path(directory) / "config.json", "w") as f:
        json.dump(cfg, f, indent=1)


def save_run(est, directory):
    state = est.get_state()
    np.savez(Path(directory) / "params.npz", **state["params"])
    with open(Path(directory) / "state.json", "w") as f:
        json.dump({"config": state["config"], "scaler": state["scaler"],
                   "aq_names": est.aq_names_}, f, indent=1)
    with open(Path(directory) / "loss_trace.csv", "w", newline="") as f:
        keys = list(est.loss_trace_[0])
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        for row in est.loss_trace_:
            w.writerow({k: repr(float(v)) if k != "epoch" else v for k, v in row.items()})
    with open(Path(directory) / "step_losses.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for i, v in enumerate(est.step_losses_, 1):
            w.writerow([i, repr(float(v))])


def load_run(directory):
    directory = Path(directory)
    try:
        with open(directory / "config.json") as f:
            cfg = json.load(f)
        with open(directory / "state.json") as f:
            state = json.load(f)
        with np.load(directory / "params.npz") as z:
            params = {k: z[k] for k in z.files}
    except FileNotFoundError as exc:
        raise FormatError(f"{directory} is not a complete run directory: {exc}") from exc
    validate_config(cfg)
    est = MDSTNetForecaster(**estimator_kwargs(cfg))
    est.set_state({"params": params, "scaler": state["scaler"], "config": state["config"]})
    est.aq_names_ = state["aq_names"]
    return cfg, est


def load_data(cfg, path=None):
    path = path or cfg["data"]["path"]
    if path is None:
        raise ConfigError("no dataset given; pass --data or set data.path")
    return load_dataset(path)


def pick_split(ds, cfg, split=None):
    split = split or cfg["data"]["eval_split"]
    if split == "all":
        return ds
    parts = dict(zip(("train", "val", "test"), split_chronological(ds, cfg["data"]["split"])))
    return parts[split]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, cfg):
    out = prepare_out(args.out, args.force)
    ds = gen_synthetic(synth_config(cfg), seed=cfg["data"]["seed"])
    save_dataset(ds, out)
    write_config(cfg, out)
    print(f"wrote {ds.n_time} steps x {ds.n_stations} stations to {out}")
    return 0


def cmd_train(args, cfg):
    ds = load_data(cfg, args.data)
    if args.data:
        cfg["data"]["path"] = str(Path(args.data).resolve())
    out = prepare_out(args.out, args.force)
    write_config(cfg, out)
    train_ds, val_ds, _ = split_chronological(ds, cfg["data"]["split"])
    est = MDSTNetForecaster(**estimator_kwargs(cfg))
    if val_ds.n_time < est.history + est.horizon:
        val_ds = None
    est.fit(train_ds, validation=val_ds)
    save_run(est, out)
    last = est.loss_trace_[-1]
    print(f"trained {len(est.loss_trace_)} epochs, final train loss {last['train_loss']:.6f}"
          + (f", val loss {last['val_loss']:.6f}" if "val_loss" in last else ""))
    return 0


def _read_forecast_csv(path):
    import pandas as pd

    table = pd.read_csv(path)
    missing = {"timestamp", "station", "variate", "value"} - set(table.columns)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    return table


def _cube(table, stamps, stations, variates):
    cube = (table.set_index(["station", "variate", "timestamp"])["value"]
            .reindex(pd_index(stations, variates, stamps)))
    if cube.isna().any():
        raise DataError("forecast CSVs do not cover the same (timestamp, station, variate) cells")
    return cube.to_numpy(dtype=np.float64).reshape(1, len(stations), len(variates), len(stamps))


def pd_index(stations, variates, stamps):
    import pandas as pd

    return pd.MultiIndex.from_product([stations, variates, stamps],
                                      names=["station", "variate", "timestamp"])


def eval_csv(pred_path, truth_path):
    """Metrics from two forecast CSVs; lead time is the rank of the timestamp."""
    pred, truth = _read_forecast_csv(pred_path), _read_forecast_csv(truth_path)
    stamps = sorted(truth["timestamp"].unique())
    stations = list(dict.fromkeys(truth["station"]))
    variates = list(dict.fromkeys(truth["variate"]))
    p = _cube(pred, stamps, stations, variates)
    t = _cube(truth, stamps, stations, variates)
    return evaluate(p, t, variates=variates)


def cmd_eval(args, cfg):
    if args.pred_csv or args.truth_csv:
        if not (args.pred_csv and args.truth_csv):
            raise ConfigError("--pred-csv and --truth-csv go together")
        report = eval_csv(args.pred_csv, args.truth_csv)
        out = prepare_out(args.out, args.force)
        report.to_csv(out / "metrics.csv")
        report.to_json(out / "metrics.json")
        _print_report(report)
        return 0
    if not args.run:
        raise ConfigError("eval needs --run, or --pred-csv with --truth-csv")
    cfg, est = load_run(args.run)
    ds = pick_split(load_data(cfg, args.data), cfg, args.split)
    out = prepare_out(args.out or Path(args.run) / "eval", args.force)
    report = est.evaluate(ds, stride=args.stride)
    report.to_csv(out / "metrics.csv")
    report.to_json(out / "metrics.json")
    _print_report(report)
    if args.baselines:
        w = Windows(ds, est.history, est.horizon, args.stride)
        for name, rule in (("ha", baseline_ha), ("persistence", baseline_persistence)):
            rep = evaluate(rule(w.x_hist, est.horizon), w.x_fut, variates=ds.aq_names)
            rep.to_csv(out / f"metrics_{name}.csv")
            rep.to_json(out / f"metrics_{name}.json")
            print(f"{name}: " + ", ".join(f"{b} MAE {rep.get(b):.4f}" for b, *_ in rep.bands))
    return 0


def _print_report(report):
    for band, *_ in report.bands:
        print(f"{band}: MAE {report.get(band):.6f} RMSE {report.get(band, metric='RMSE'):.6f}")


def cmd_predict(args, cfg):
    cfg, est = load_run(args.run)
    ds = pick_split(load_data(cfg, args.data), cfg, args.split)
    stride = est.horizon if args.all else 1
    w = Windows(ds, est.history, est.horizon, stride)
    preds = est.predict(ds, stride=stride)
    windows = range(len(w)) if args.all else [args.window % len(w)]
    out = Path(args.out)
    if out.exists() and not args.force:
        raise FileExistsError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["timestamp", "station", "variate", "value"])
        for i in windows:
            times = w.forecast_times(i)
            for n, sid in enumerate(ds.station_ids):
                for c, name in enumerate(ds.aq_names):
                    for t, ts in enumerate(times):
                        writer.writerow([str(ts), sid, name, repr(float(preds[i, n, c, t]))])
    print(f"wrote {len(windows)} forecast(s) to {out}")
    return 0


def cmd_gradcheck(args, cfg):
    model_kw = dict(cfg["model"])
    model_kw.update({k: v for k, v in cfg["ablation"].items()
                     if k in ModelConfig.__dataclass_fields__})
    mcfg = ModelConfig(n_pollutants=args.pollutants, n_mete=args.mete, **model_kw)
    err = full_gradcheck(mcfg, seed=args.seed, n_stations=args.stations, eps=args.eps,
                         per_step=not cfg["ablation"]["paper_loss"])
    ok = err < GRADCHECK_TOL
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAILED'}, tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else 1


def _split_tag(tag):
    """'enc0.spa.refine' -> (spa, 0, refine); 'dec.prompt' -> (prompt, '', compress)."""
    head, *rest = tag.split(".")
    layer = head.lstrip("encd")
    module = rest[0]
    stage = rest[1] if len(rest) > 1 else ("compress" if module == "prompt" else "attend")
    return f"{head.rstrip('0123456789')}.{module}", layer, stage


def cmd_dump_attention(args, cfg):
    cfg, est = load_run(args.run)
    ds = pick_split(load_data(cfg, args.data), cfg, args.split)
    w = Windows(est.scaler_.transform(ds), est.history, est.horizon, 1)
    i = args.window % len(w)
    xh, yh, yf, _ = w.batch([i])
    with K.no_grad(), record_attention() as store:
        forward(est.params_, est.config_, xh[0], yh[0], yf[0], ds.coords, record=True)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise FileExistsError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["module", "layer", "stage", "slice", "query_id", "key_id", "head", "score"])
        for tag, probs in store.items():
            module, layer, stage = _split_tag(tag)
            h, m, n = probs.shape[-3:]
            flat = probs.reshape(-1, h, m, n)
            for s in range(flat.shape[0]):
                for head in range(h):
                    for q in range(m):
                        for k in range(n):
                            writer.writerow([module, layer, stage, s, q, k, head,
                                             repr(float(flat[s, head, q, k]))])
                            rows += 1
    print(f"wrote {rows} attention scores from {len(store)} maps to {out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "dump-attention": cmd_dump_attention,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mdstnet", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config value")
        p.add_argument("--ablate", action="append", default=[], choices=sorted(ABLATIONS),
                       help="switch on an ablation (repeatable)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model and save the run directory")
    common(p)
    p.add_argument("--data", help="dataset directory (overrides data.path)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="write MAE/RMSE per band for a run or two forecast CSVs")
    common(p)
    p.add_argument("--run")
    p.add_argument("--data")
    p.add_argument("--split", choices=["train", "val", "test", "all"])
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--baselines", action="store_true", help="also score HA and persistence")
    p.add_argument("--pred-csv")
    p.add_argument("--truth-csv")
    p.add_argument("--out")

    p = sub.add_parser("predict", help="write a forecast CSV")
    common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--data")
    p.add_argument("--split", choices=["train", "val", "test", "all"])
    p.add_argument("--window", type=int, default=-1, help="window index (default: last)")
    p.add_argument("--all", action="store_true", help="every non-overlapping window")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full tiny model")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stations", type=int, default=4)
    p.add_argument("--pollutants", type=int, default=2)
    p.add_argument("--mete", type=int, default=3)
    p.add_argument("--eps", type=float, default=FULL_MODEL_EPS)

    p = sub.add_parser("dump-attention", help="write attention probabilities for one window")
    common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--data")
    p.add_argument("--split", choices=["train", "val", "test", "all"])
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args.config, args.overrides, args.ablate)
        if args.command == "gradcheck" and not args.config:
            cfg["model"].update(TINY_MODEL)
            for item in args.overrides:
                apply_override(cfg, item)
            validate_config(cfg)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, TypeError) as exc:
        print(f"mdstnet: config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"mdstnet: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, DataError) as exc:
        print(f"mdstnet: I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
