"""Command-line interface.

Every command reads an optional ``--config`` file of ``key = value`` lines;
command-line flags override it, and the merged settings are echoed to
``effective-config.txt`` in the output directory. Exit codes: 0 success,
1 usage or data error, 2 infeasible grid or search region.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from flexgrid.backtest import BASELINES, BacktestReport, run_backtest, run_baseline, run_segmented
from flexgrid.errors import DataError, FlexgridError, InfeasibleError
from flexgrid.features import (
    Dataset,
    Normalizer,
    TARGET_NAMES,
    build_dataset,
    extract_features,
    normalize,
    split_dataset,
)
from flexgrid.fnn import (
    NetworkArch,
    TrainConfig,
    forward,
    init_network,
    load_model,
    predict_grid_params,
    save_model,
    train,
)
from flexgrid.grid_model import GridKind, GridSpec, anchored_spec, build_ladder, validate_spacing
from flexgrid.market_data import PriceSeries, SynthSpec, generate_synthetic, parse_csv_series, slice_window
from flexgrid.metrics import MetricsBlock, format_table, mse, r_squared, table_csv
from flexgrid.sso import PROFILES, BoundsProfile, SsoConfig, optimize

logger = logging.getLogger("flexgrid")

GRID_STRATEGIES = ("flexible", "equal-distance", "equal-ratio")
ALL_STRATEGIES = GRID_STRATEGIES + BASELINES

# key -> (type, default)
SETTINGS: dict[str, tuple[Callable, object]] = {
    "input": (str, None),
    "out": (str, "out"),
    "capital": (float, 10000.0),
    "fee": (float, 0.001),
    "strategies": (str, ",".join(ALL_STRATEGIES)),
    "profile": (str, "1"),
    "upper_mult": (float, None),
    "lower_mult": (float, None),
    "n_upper": (int, 20),
    "n_lower": (int, 20),
    "count_min": (int, 10),
    "count_max": (int, 50),
    "kind": (str, "flexible"),
    "cg": (float, 0.5),
    "cp": (float, 0.6),
    "cw": (float, 0.7),
    "n_sol": (int, 100),
    "n_gen": (int, 20),
    "n_run": (int, 10),
    "sso_seed": (int, 0),
    "workers": (int, 1),
    "window_start": (int, 0),
    "window_length": (int, None),
    "window": (int, 30),
    "stride": (int, 5),
    "pairing": (str, "same"),
    "split": (float, 0.9),
    "dataset": (str, None),
    "hidden": (str, "500,500,500"),
    "activation": (str, "sigmoid"),
    "epochs": (int, 300),
    "batch": (int, 40),
    "lr": (float, 1e-3),
    "init_seed": (int, 0),
    "train_seed": (int, 0),
    "target_mode": (str, "normalized"),
    "model": (str, None),
    "normalizer": (str, None),
    "val_periods": (int, 252),
    "reports": (str, None),
    "synth_kind": (str, "mean-reverting"),
    "length": (int, 3024),
    "start_price": (float, 100.0),
    "volatility": (float, 0.01),
    "drift": (float, 0.05),
    "amplitude": (float, 0.1),
    "period": (float, 60.0),
    "seed": (int, 0),
}

COMMAND_KEYS = {
    "synth": ["synth_kind", "length", "start_price", "volatility", "drift", "amplitude", "period", "seed"],
    "backtest": ["input", "capital", "fee", "strategies", "profile", "upper_mult", "lower_mult", "n_upper", "n_lower"],
    "optimize": [
        "input", "capital", "fee", "kind", "profile", "count_min", "count_max", "cg", "cp", "cw",
        "n_sol", "n_gen", "n_run", "sso_seed", "workers", "window_start", "window_length",
    ],
    "dataset": [
        "input", "capital", "fee", "profile", "count_min", "count_max", "cg", "cp", "cw", "n_sol", "n_gen",
        "n_run", "sso_seed", "workers", "window", "stride", "pairing", "split",
    ],
    "train": ["dataset", "split", "hidden", "activation", "epochs", "batch", "lr", "init_seed", "train_seed", "target_mode"],
    "predict": ["input", "model", "normalizer", "window", "profile", "count_min", "count_max", "fee"],
    "report": ["reports"],
}
COMMAND_KEYS["pipeline"] = sorted(
    set(COMMAND_KEYS["dataset"] + COMMAND_KEYS["train"] + COMMAND_KEYS["backtest"] + COMMAND_KEYS["synth"] + ["val_periods"])
    - {"dataset", "strategies"}
)


class UsageError(FlexgridError):
    pass


def read_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for n, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    file_values = read_config_file(args.config) if args.config else {}
    settings = {"out": SETTINGS["out"][1]}
    keys = COMMAND_KEYS[command]
    for key in keys:
        settings[key] = SETTINGS[key][1]
    for key, value in file_values.items():
        if key not in SETTINGS:
            raise UsageError(f"unknown config key {key!r}")
        settings[key] = value
    for key in list(keys) + ["out"]:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key, value in settings.items():
        conv = SETTINGS[key][0]
        if value is not None and not isinstance(value, conv):
            try:
                settings[key] = conv(value)
            except ValueError:
                raise UsageError(f"bad value for {key}: {value!r}") from None
    return settings


def write_outputs(out_dir: str, files: dict, settings: dict) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        mode = "wb" if isinstance(content, bytes) else "w"
        with open(d / name, mode) as fh:
            fh.write(content)
    echo = "".join(f"{k} = {'' if v is None else v}\n" for k, v in sorted(settings.items()))
    (d / "effective-config.txt").write_text(echo)


def load_series(path: Optional[str]) -> PriceSeries:
    if not path:
        raise UsageError("no input series given (--input)")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return parse_csv_series(p.read_text(encoding="utf-8"), id=p.stem)


def bounds_profile(s: dict) -> BoundsProfile:
    key = str(s.get("profile", "1"))
    if key not in PROFILES:
        raise UsageError(f"unknown bounds profile {key!r}; use 1 or 2")
    base = PROFILES[key]
    counts = (s.get("count_min", base.counts[0]), s.get("count_max", base.counts[1]))
    return replace(base, counts=tuple(int(c) for c in counts))


def sso_config(s: dict) -> SsoConfig:
    return SsoConfig(
        cg=s["cg"], cp=s["cp"], cw=s["cw"], n_sol=s["n_sol"], n_gen=s["n_gen"], n_run=s["n_run"],
        profile=bounds_profile(s), kind=GridKind(s.get("kind", "flexible")), seed=s["sso_seed"],
        workers=s.get("workers", 1),
    )


def fixed_spec(kind: str, anchor: float, s: dict) -> GridSpec:
    """Grid with bounds at the profile's outer edges (or explicit multipliers)."""
    profile = PROFILES.get(str(s.get("profile", "1")), PROFILES["1"])
    up = s.get("upper_mult") or profile.upper[1]
    lo = s.get("lower_mult") or profile.lower[0]
    kind = GridKind(kind)
    if kind is GridKind.FLEXIBLE:
        return GridSpec(kind, up * anchor, lo * anchor, s["n_upper"], s["n_lower"], anchor)
    return anchored_spec(kind, anchor, up * anchor, lo * anchor, s["n_upper"] + s["n_lower"])


def checked_spec(spec: GridSpec, fee: float) -> GridSpec:
    ok, pair = validate_spacing(build_ladder(spec), fee)
    if not ok:
        raise InfeasibleError(f"grid gap {pair} does not exceed the trading cost at fee {fee}")
    return spec


def slug(name: str) -> str:
    return name.lower().replace("&", "").replace(" ", "-")


def comparison_files(rows: list[tuple[str, MetricsBlock]], title: str) -> dict:
    return {"comparison.csv": table_csv(rows), "comparison.txt": format_table(rows, title)}


def report_files(rep: BacktestReport) -> dict:
    name = slug(rep.strategy)
    return {
        f"report_{name}.json": rep.to_json(),
        f"equity_{name}.csv": rep.equity_csv(),
        f"trades_{name}.csv": rep.trades_csv(),
    }


# ---------------------------------------------------------------- commands


def cmd_synth(s: dict) -> int:
    spec = SynthSpec(
        kind=s["synth_kind"], length=s["length"], start_price=s["start_price"], volatility=s["volatility"],
        drift=s["drift"], seed=s["seed"], amplitude=s["amplitude"], period=s["period"],
    )
    series = generate_synthetic(spec)
    write_outputs(s["out"], {"series.csv": series.to_csv()}, s)
    print(f"wrote {len(series)} periods to {Path(s['out']) / 'series.csv'}")
    return 0


def backtest_strategies(series: PriceSeries, s: dict, names) -> list[BacktestReport]:
    anchor = float(series.prices[0])
    reports = []
    for name in names:
        if name in BASELINES:
            reports.append(run_baseline(series, s["capital"], name, s["fee"]))
        elif name in GRID_STRATEGIES:
            spec = checked_spec(fixed_spec(name, anchor, s), s["fee"])
            reports.append(run_backtest(series, spec, s["capital"], s["fee"], strategy=name))
        else:
            raise UsageError(f"unknown strategy {name!r}; choose from {ALL_STRATEGIES}")
    return reports


def cmd_backtest(s: dict) -> int:
    series = load_series(s["input"])
    names = [n.strip() for n in s["strategies"].split(",") if n.strip()]
    reports = backtest_strategies(series, s, names)
    files = {}
    for rep in reports:
        files.update(report_files(rep))
    rows = [(r.strategy, r.metrics) for r in reports]
    files.update(comparison_files(rows, f"{series.id}: {len(series)} periods, fee {s['fee']}"))
    write_outputs(s["out"], files, s)
    print(files["comparison.txt"], end="")
    return 0


def cmd_optimize(s: dict) -> int:
    series = load_series(s["input"])
    length = s["window_length"] or len(series) - s["window_start"]
    window = slice_window(series, s["window_start"], length)
    config = sso_config(s)
    result = optimize(window, s["capital"], s["fee"], config)
    spec = result.spec()
    replay = run_backtest(window, spec, s["capital"], s["fee"])
    out = result.to_dict()
    out["verification"] = {
        "final_wealth": replay.final_wealth,
        "roi": replay.roi,
        "matches_fitness": replay.final_wealth == result.best.fitness,
    }
    out["config"] = config.to_dict()
    write_outputs(s["out"], {"best.json": json.dumps(out, indent=2), "trace.csv": result.trace_csv()}, s)
    b = result.best
    print(f"best: upper={b.upper:.6g} lower={b.lower:.6g} n_upper={b.n_upper} n_lower={b.n_lower}")
    print(f"fitness={b.fitness!r} verification wealth={replay.final_wealth!r} ROI={replay.roi:.4f}%")
    if replay.final_wealth != b.fitness:
        logger.error("verification replay differs from recorded fitness")
        return 1
    return 0


def _progress(label):
    def report(done, total):
        if done == total or done % 50 == 0:
            logger.info("%s: %d/%d windows", label, done, total)

    return report


def make_dataset(series: PriceSeries, s: dict) -> Dataset:
    config = replace(sso_config(s), kind=GridKind.FLEXIBLE)
    ds = build_dataset(series, s["window"], s["stride"], config, s["capital"], s["fee"], s["pairing"], _progress("dataset"))
    if len(ds) == 0:
        raise InfeasibleError("no window produced a feasible label")
    return ds


def cmd_dataset(s: dict) -> int:
    series = load_series(s["input"])
    ds = make_dataset(series, s)
    if len(ds) >= 2:
        train_part, _ = split_dataset(ds, s["split"])
        ds.stats = Normalizer.fit(train_part.X, train_part.Y)
        ds.meta["stats_split"] = s["split"]
    write_outputs(s["out"], {"dataset.csv": ds.to_csv(), "dataset.json": json.dumps(ds.sidecar(), indent=2)}, s)
    print(f"wrote {len(ds)} samples ({len(ds.meta['skipped'])} windows skipped)")
    return 0


def load_dataset(path: Optional[str]) -> Dataset:
    if not path:
        raise UsageError("no dataset given (--dataset)")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"dataset file not found: {path}")
    side = p.with_suffix(".json")
    sidecar = json.loads(side.read_text()) if side.is_file() else None
    return Dataset.from_csv(p.read_text(), sidecar)


def parse_hidden(text: str) -> tuple:
    try:
        sizes = tuple(int(h) for h in str(text).split(",") if h.strip())
    except ValueError:
        raise UsageError(f"bad hidden layer list {text!r}") from None
    if not sizes:
        raise UsageError("need at least one hidden layer")
    return sizes


def fit_network(train_part: Dataset, valid_part: Dataset, s: dict):
    """Train on ``train_part``; returns model, history, normalizer and per-output validation scores."""
    if s["target_mode"] not in ("normalized", "raw"):
        raise UsageError("target_mode must be 'normalized' or 'raw'")
    tx, ty, vx, vy, stats = normalize(train_part, valid_part, normalize_targets=s["target_mode"] == "normalized")
    arch = NetworkArch((tx.shape[1], *parse_hidden(s["hidden"]), ty.shape[1]), s["activation"])
    model = init_network(arch, s["init_seed"])
    cfg = TrainConfig(epochs=s["epochs"], batch_size=s["batch"], lr=s["lr"], seed=s["train_seed"])
    model, history = train(model, tx, ty, vx, vy, cfg)
    pred = stats.inverse_y(forward(model, vx))
    actual = valid_part.Y
    scores = {}
    for j, name in enumerate(TARGET_NAMES):
        try:
            r2 = r_squared(actual[:, j], pred[:, j])
        except ValueError:
            r2 = None
        scores[name] = {"mse": mse(actual[:, j], pred[:, j]), "r2": r2}
    return model, history, stats, scores


def score_table(scores: dict) -> str:
    lines = ["output  validation MSE      R^2"]
    for name, sc in scores.items():
        r2 = "undefined" if sc["r2"] is None else f"{sc['r2'] * 100:.3f}%"
        lines.append(f"{name:<6}  {sc['mse']:>14.6g}  {r2:>10}")
    return "\n".join(lines) + "\n"


def cmd_train(s: dict) -> int:
    ds = load_dataset(s["dataset"])
    train_part, valid_part = split_dataset(ds, s["split"])
    model, history, stats, scores = fit_network(train_part, valid_part, s)
    report = {"train_samples": len(train_part), "validation_samples": len(valid_part), "scores": scores,
              "target_mode": s["target_mode"], "final_train_mse": history.train_loss[-1]}
    write_outputs(
        s["out"],
        {
            "model.gfnn": save_model(model),
            "normalizer.json": stats.to_json(),
            "loss_history.csv": history.to_csv(),
            "train_report.json": json.dumps(report, indent=2),
        },
        s,
    )
    print(score_table(scores), end="")
    return 0


def cmd_predict(s: dict) -> int:
    series = load_series(s["input"])
    for key in ("model", "normalizer"):
        if not s[key] or not Path(s[key]).is_file():
            raise UsageError(f"{key} file not found: {s[key]}")
    model = load_model(Path(s["model"]).read_bytes())
    stats = Normalizer.from_dict(json.loads(Path(s["normalizer"]).read_text()))
    w = min(s["window"], len(series))
    feats = extract_features(slice_window(series, len(series) - w, w))
    anchor = float(series.prices[-1])
    pred = predict_grid_params(model, feats, stats, bounds_profile(s), anchor, s["fee"])
    out = pred.to_dict()
    out["features"] = feats.as_array().tolist()
    write_outputs(s["out"], {"grid_spec.json": json.dumps(out, indent=2)}, s)
    sp = pred.spec
    print(f"anchor={anchor:.6g} upper={sp.upper:.6g} lower={sp.lower:.6g} n_upper={sp.n_upper} n_lower={sp.n_lower}")
    for note in pred.adjustments:
        print(f"  adjusted: {note}")
    return 0


def cmd_report(s: dict) -> int:
    if not s["reports"]:
        raise UsageError("no report files given (--reports)")
    rows = []
    for path in s["reports"].split(","):
        p = Path(path.strip())
        if not p.is_file():
            raise UsageError(f"report file not found: {p}")
        d = json.loads(p.read_text())
        rows.append((d["strategy"], MetricsBlock(**d["metrics"])))
    files = comparison_files(rows, "comparison")
    write_outputs(s["out"], files, s)
    print(files["comparison.txt"], end="")
    return 0


def run_pipeline(series: PriceSeries, s: dict) -> dict:
    """Dataset, training, prediction and final-period comparison; returns files to write plus a summary."""
    W = s["window"]
    n = len(series)
    val_start = n - s["val_periods"]
    if val_start < 2 * W:
        raise UsageError("series too short for the requested validation period")
    ds = make_dataset(series, s)
    boundary = next((i for i, smp in enumerate(ds.samples) if smp.window_start >= val_start), len(ds))
    train_part, valid_part = split_dataset(ds, boundary)
    model, history, stats, scores = fit_network(train_part, valid_part, s)
    ds.stats = stats

    profile = bounds_profile(s)
    s_eval = dict(s)
    trade = PriceSeries(series.timestamps[val_start:], series.prices[val_start:], series.quantities[val_start:], id=f"{series.id}-final")
    predictions = []

    def fnn_spec(offset: int, anchor: float) -> GridSpec:
        start = val_start + offset
        feats = extract_features(slice_window(series, start - W, W))
        pred = predict_grid_params(model, feats, stats, profile, anchor, s["fee"])
        predictions.append({"segment_start": start, **pred.to_dict()})
        return pred.spec

    reports = [run_segmented(trade, W, fnn_spec, s["capital"], s["fee"], strategy="FG-FNN")]
    for kind in GRID_STRATEGIES:
        spec_for = lambda offset, anchor, kind=kind: checked_spec(fixed_spec(kind, anchor, s_eval), s["fee"])
        reports.append(run_segmented(trade, W, spec_for, s["capital"], s["fee"], strategy=kind))
    reports.append(run_baseline(trade, s["capital"], "B&S", s["fee"]))

    rows = [(r.strategy, r.metrics) for r in reports]
    files = {
        "dataset.csv": ds.to_csv(),
        "dataset.json": json.dumps(ds.sidecar(), indent=2),
        "model.gfnn": save_model(model),
        "normalizer.json": stats.to_json(),
        "loss_history.csv": history.to_csv(),
        "train_report.json": json.dumps({"train_samples": len(train_part), "validation_samples": len(valid_part), "scores": scores}, indent=2),
        "predictions.json": json.dumps(predictions, indent=2),
    }
    for rep in reports:
        files.update(report_files(rep))
    files.update(comparison_files(rows, f"{series.id}: final {s['val_periods']} periods, segments of {W}, fee {s['fee']}"))
    summary = {"samples": len(ds), "train": len(train_part), "validation": len(valid_part), "scores": scores, "rows": rows}
    return {"files": files, "summary": summary}


def cmd_pipeline(s: dict) -> int:
    if s.get("input"):
        series = load_series(s["input"])
    else:
        spec = SynthSpec(
            kind=s["synth_kind"], length=s["length"], start_price=s["start_price"], volatility=s["volatility"],
            drift=s["drift"], seed=s["seed"], amplitude=s["amplitude"], period=s["period"],
        )
        series = generate_synthetic(spec)
        logger.info("no input given; generated %s", series.id)
    result = run_pipeline(series, s)
    write_outputs(s["out"], result["files"], s)
    summary = result["summary"]
    print(f"samples={summary['samples']} train={summary['train']} validation={summary['validation']}")
    print(score_table(summary["scores"]), end="")
    print(result["files"]["comparison.txt"], end="")
    return 0


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic price series"),
    "backtest": (cmd_backtest, "backtest grid strategies and baselines on a series"),
    "optimize": (cmd_optimize, "SSO search of grid parameters on one window"),
    "dataset": (cmd_dataset, "label sliding windows with SSO-optimal parameters"),
    "train": (cmd_train, "train the parameter network on a dataset"),
    "predict": (cmd_predict, "emit a grid spec for the most recent window"),
    "pipeline": (cmd_pipeline, "dataset -> train -> predict -> final-period comparison"),
    "report": (cmd_report, "render a comparison table from report JSON files"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexgrid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--out", help="output directory (default: out)")
        for key in COMMAND_KEYS[name]:
            conv, default = SETTINGS[key]
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=conv, default=None, help=f"default: {default}")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        settings = resolve_settings(args.command, args)
        return func(settings)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except (FlexgridError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
