"""Command-line entry point: ``ivforecast <command> [options]``.

Configuration precedence, lowest first: built-in dataclass defaults, the JSON
config file (``--config``, else ``default.json`` in ``$IVFORECAST_CONFIG_DIR``,
else the packaged default), ``--set section.key=value`` overrides, then the
dedicated flags of each subcommand.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage,
3 missing input file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data, harness, network, strategies, surface
from .errors import ConfigError

CONFIG_ENV = "IVFORECAST_CONFIG_DIR"
DEFAULT_CONFIG_NAME = "default.json"
PACKAGED_CONFIG_DIR = Path(__file__).resolve().parent / "configs"
SECTIONS = ("synth", "experiment", "strategy")
_AR1_KEYS = {"mean", "persistence", "vol"}


# ---------------------------------------------------------------------------
# configuration


def default_config_path() -> Path:
    env = os.environ.get(CONFIG_ENV)
    base = Path(env) if env else PACKAGED_CONFIG_DIR
    return base / DEFAULT_CONFIG_NAME


def _section_keys(section: str) -> set[str]:
    return {"synth": data.SynthConfig.keys, "experiment": harness.ExperimentConfig.keys,
            "strategy": strategies.BacktestRules.keys}[section]()


def validate_config(doc) -> dict:
    """Reject unknown keys with their dotted path."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key, value in doc.items():
        if key == "seed":
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError("seed", "must be an integer")
            continue
        if key not in SECTIONS:
            raise ConfigError(key, "unknown key")
        if not isinstance(value, dict):
            raise ConfigError(key, "section must be a JSON object")
        allowed = _section_keys(key)
        for sub, v in value.items():
            if sub not in allowed:
                raise ConfigError(f"{key}.{sub}", "unknown key")
            if key == "synth" and isinstance(v, dict):
                for leaf in v:
                    if leaf not in _AR1_KEYS:
                        raise ConfigError(f"{key}.{sub}.{leaf}", "unknown key")
    return doc


def load_config(path: Path | None) -> dict:
    p = Path(path) if path is not None else default_config_path()
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(str(p), f"invalid JSON at line {e.lineno}: {e.msg}") from None
    return validate_config(doc)


def apply_overrides(doc: dict, pairs: list[str]) -> dict:
    out = json.loads(json.dumps(doc))
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(pair, "override must look like section.key=value")
        path, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = path.split(".")
        if parts == ["seed"]:
            out["seed"] = value
        elif len(parts) in (2, 3):
            node = out.setdefault(parts[0], {})
            for p in parts[1:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
        else:
            raise ConfigError(path, "override key must be 'seed' or section.key")
    return validate_config(out)


class RunConfig:
    """Resolved configuration for one invocation."""

    def __init__(self, doc: dict):
        self.doc = doc
        seed = doc.get("seed")
        self.sections = {}
        for name in SECTIONS:
            sec = dict(doc.get(name, {}))
            if seed is not None:
                sec.setdefault("seed", seed)
            self.sections[name] = sec

    def _build(self, name, factory, **flags):
        sec = dict(self.sections[name])
        sec.update({k: v for k, v in flags.items() if v is not None})
        try:
            return factory(sec)
        except (TypeError, ValueError) as e:
            raise ConfigError(name, str(e)) from None

    def synth(self, **flags) -> data.SynthConfig:
        return self._build("synth", data.SynthConfig.from_dict, **flags)

    def experiment(self, **flags) -> harness.ExperimentConfig:
        def make(d):
            if "holidays" in d:
                d["holidays"] = tuple(d["holidays"])
            return harness.ExperimentConfig(**d)
        return self._build("experiment", make, **flags)

    def strategy(self, **flags) -> strategies.BacktestRules:
        return self._build("strategy", lambda d: strategies.BacktestRules(**d), **flags)


def config_hash(command: str, resolved: dict) -> str:
    blob = json.dumps({"command": command, **resolved}, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _header(command: str, resolved: dict, seed: int) -> list[str]:
    return [f"config_sha256={config_hash(command, resolved)} seed={seed}", f"command={command}"]


def _jsonable(obj) -> dict:
    return json.loads(json.dumps(asdict(obj), default=list))


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


def _out_path(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, rc: RunConfig) -> int:
    cfg = rc.synth(seed=args.seed, n_days=args.days, start_date=args.start)
    series = data.generate_synthetic(cfg)
    resolved = {"synth": _jsonable(cfg)}
    header = _header("gen", resolved, cfg.seed)
    data.save_series(series, _out_path(args.out), header)
    if args.spot_out:
        rules = rc.strategy()
        spot = data.simulate_underlying(series, rules.spot0, rules.rate, cfg.seed)
        data.save_spot(series.dates, spot, _out_path(args.spot_out), header)
    print(f"wrote {len(series)} surfaces to {args.out}")
    return 0


def cmd_train(args, rc: RunConfig) -> int:
    series = data.load_series(_require(args.series))
    cfg = rc.experiment(model=args.model, epochs=args.epochs, seed=args.seed)
    model, scaler, curve = harness.fit_series(cfg, series)
    resolved = {"experiment": _jsonable(cfg), "series_sha256": _file_digest(args.series)}
    header = _header("train", resolved, cfg.seed)
    extra = {"scaler_mean": scaler.mean.tolist(), "scaler_scale": scaler.scale,
             "experiment": _jsonable(cfg), "header": header}
    network.save_checkpoint(model, _out_path(args.out), extra)
    if args.losses:
        with open(_out_path(args.losses), "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"# {c}\n" for c in header)
            fh.write("epoch,train_mse\n")
            fh.writelines(f"{e},{v:.17g}\n" for e, v in enumerate(curve, start=1))
    print(f"trained {cfg.model} for {len(curve)} epochs; final loss {curve[-1]:.6g}")
    return 0


def _next_business_day(d, holidays=()):
    return np.busday_offset(np.datetime64(d, "D"), 1, roll="forward", holidays=list(holidays)).item()


def cmd_predict(args, rc: RunConfig) -> int:
    model, extra = network.load_checkpoint(_require(args.checkpoint))
    series = data.load_series(_require(args.series))
    exp = dict(extra.get("experiment", {}))
    exp["holidays"] = tuple(exp.get("holidays", ()))
    cfg = harness.ExperimentConfig(**exp) if exp else rc.experiment()
    scaler = harness.Scaler(np.array(extra["scaler_mean"]), float(extra["scaler_scale"]))
    fc = harness.forecast_rows(model, scaler, series, cfg, _next_business_day(series.dates[-1], cfg.holidays))
    if args.project:
        fc = surface.noarb_project_series(fc)
    resolved = {"checkpoint_sha256": _file_digest(args.checkpoint), "series_sha256": _file_digest(args.series),
                "project": bool(args.project)}
    data.save_series(fc, _out_path(args.out), _header("predict", resolved, cfg.seed))
    print(f"wrote {len(fc)} forecasts to {args.out}")
    return 0


def cmd_evaluate(args, rc: RunConfig) -> int:
    series = data.load_series(_require(args.series))
    base = rc.experiment(mode=args.mode, epochs=args.epochs, seed=args.seed)
    models = args.models.split(",") if args.models else list(harness.MODEL_KINDS)
    reports = []
    for kind in models:
        cfg = base.replace(model=kind)
        reports.append(harness.run(cfg, series))
        r = reports[-1]
        print(f"{kind:9s} {args.mode:7s} in-sample mse={r.in_sample.mse:.6g} out-of-sample mse={r.out_of_sample.mse:.6g}")
    resolved = {"experiment": _jsonable(base), "models": models, "series_sha256": _file_digest(args.series)}
    header = _header("evaluate", resolved, base.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_summary(reports, out / "summary.csv", header)
    harness.write_daily(reports, out / "daily.csv", header)
    harness.write_epoch_losses(reports, out / "epochs.csv", header)
    if args.forecasts:
        for r in reports:
            data.save_series(r.forecast_series(), out / f"forecast_{r.model}.csv", header)
    return 0


def cmd_backtest(args, rc: RunConfig) -> int:
    series = data.load_series(_require(args.series))
    rules = rc.strategy(strategy=args.strategy, seed=args.seed)
    forecasts = data.load_series(_require(args.forecasts)) if args.forecasts else None
    if args.spot:
        spot_dates, spot = data.load_spot(_require(args.spot))
        if list(spot_dates) != list(series.dates):
            raise strategies.AlignmentError("spot file dates do not match the surface series")
    else:
        spot = data.simulate_underlying(series, rules.spot0, rules.rate, rules.seed)
    pnl = strategies.backtest(series, forecasts, rules, spot)
    resolved = {"strategy": _jsonable(rules), "series_sha256": _file_digest(args.series),
                "forecasts_sha256": _file_digest(args.forecasts) if args.forecasts else None,
                "spot_sha256": _file_digest(args.spot) if args.spot else None}
    header = _header("backtest", resolved, rules.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    strategies.write_pnl(pnl, out / "pnl.csv", header)
    strategies.write_trades(pnl, out / "trades.csv", header)
    sharpe = "absent" if pnl.sharpe is None else f"{pnl.sharpe:.6g}"
    print(f"{rules.strategy}: total_return={pnl.total_return:.6g} sharpe={sharpe} "
          f"max_drawdown={pnl.max_drawdown:.6g} trades={len(pnl.trades)}")
    return 0


def cmd_smooth(args, rc: RunConfig) -> int:
    series = data.load_series(_require(args.series))
    smoothed = surface.noarb_project_series(series)
    resolved = {"series_sha256": _file_digest(args.series)}
    data.save_series(smoothed, _out_path(args.out), _header("smooth", resolved, rc.doc.get("seed", 0)))
    print(f"projected {len(series)} surfaces to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ivforecast", description="Implied-volatility surface forecasting and option-spread backtests.")
    p.add_argument("--config", type=Path, help="JSON config file (default: $%s/%s or packaged)" % (CONFIG_ENV, DEFAULT_CONFIG_NAME))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. experiment.epochs=50")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic surface series")
    g.add_argument("--seed", type=int)
    g.add_argument("--days", type=int)
    g.add_argument("--start")
    g.add_argument("--out", required=True)
    g.add_argument("--spot-out", help="also write a simulated index path")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="fit a model on a series and write a checkpoint")
    t.add_argument("--series", required=True)
    t.add_argument("--model", choices=harness.MODEL_KINDS)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--losses", help="epoch-loss CSV path")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="one-day-ahead forecasts from a checkpoint")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--series", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--project", action="store_true", help="apply the no-arbitrage projection")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="static or rolling comparison of the three models")
    e.add_argument("--series", required=True)
    e.add_argument("--mode", choices=("static", "rolling"))
    e.add_argument("--models", help="comma-separated subset of " + ",".join(harness.MODEL_KINDS))
    e.add_argument("--epochs", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--forecasts", action="store_true", help="also write out-of-sample forecast CSVs")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("backtest", help="calendar or butterfly backtest")
    b.add_argument("--series", required=True, help="realized surfaces")
    b.add_argument("--forecasts", help="forecast surfaces; omitted means the no-forecast baseline")
    b.add_argument("--spot", help="index path CSV; simulated when omitted")
    b.add_argument("--strategy", choices=("calendar", "butterfly"))
    b.add_argument("--seed", type=int)
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_backtest)

    s = sub.add_parser("smooth", help="no-arbitrage projection of a surface CSV")
    s.add_argument("--series", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_smooth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        doc = apply_overrides(load_config(args.config), args.set)
        return args.func(args, RunConfig(doc))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # single-line diagnostic for any runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
