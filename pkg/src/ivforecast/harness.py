"""Static and rolling train/evaluate protocols and the MSE / MAE / QLIKE losses."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import WindowError
from .network import Model, TrainState, build_model, mse_loss, rmsprop_step
from .numerics import make_rng
from .surface import MONTH_DAYS, N_POINTS, SurfaceSeries, build_features

MODEL_KINDS = ("att_lstm", "lstm", "mlp")
_TRAIN_SEED_OFFSET = 1_000_003


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "att_lstm"
    mode: str = "static"
    epochs: int | None = None  # None -> 400 static, 100 rolling
    batch_size: int = 50
    window: int = 756
    split_fraction: float = 0.8  # 8y in-sample / 2y out of a 10y series
    retrain_every: int = 1
    warm_start: bool = True
    lr: float = 1e-3
    keep_prob: float = 0.8
    hidden: int = 135
    seed: int = 0
    loss_scale: float = 100.0  # losses on vols in percentage points
    raw_monthly: bool = False
    check_calendar: bool = True
    holidays: tuple = ()
    track_validation: bool = True
    scaling: str = "none"

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.mode not in ("static", "rolling"):
            raise ValueError(f"mode must be 'static' or 'rolling', got {self.mode!r}")
        for name in ("batch_size", "window", "retrain_every", "hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs is not None and self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.scaling not in SCALINGS:
            raise ValueError(f"scaling must be one of {SCALINGS}, got {self.scaling!r}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in (0, 1]")
        object.__setattr__(self, "holidays", tuple(self.holidays))

    @property
    def n_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 400 if self.mode == "static" else 100

    @staticmethod
    def keys() -> set[str]:
        return {f.name for f in fields(ExperimentConfig)}

    def replace(self, **kw) -> "ExperimentConfig":
        d = asdict(self)
        d.update(kw)
        return ExperimentConfig(**d)


# ---------------------------------------------------------------------------
# losses


def losses(pred, target) -> tuple[float, float, float]:
    """(MSE, MAE, QLIKE) averaged over every day and grid point.

    QLIKE = mean(log(pred) + target / pred); requires pred > 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("no points to score")
    if np.any(pred <= 0):
        raise ValueError("QLIKE needs strictly positive predictions")
    diff = target - pred
    return (float(np.mean(diff * diff)), float(np.mean(np.abs(diff))),
            float(np.mean(np.log(pred) + target / pred)))


# ---------------------------------------------------------------------------
# scaling and training


SCALINGS = ("per_point", "global", "none")


@dataclass
class Scaler:
    """Affine map fitted on training targets.

    ``per_point`` centres each grid point and applies one global scale,
    ``global`` uses a single mean and stdev over all points, ``none`` is the
    identity.
    """

    mean: np.ndarray
    scale: float

    @classmethod
    def fit(cls, y: np.ndarray, mode: str = "none") -> "Scaler":
        if mode == "none":
            return cls(np.zeros(y.shape[1]), 1.0)
        if mode == "global":
            mean = np.full(y.shape[1], y.mean())
        elif mode == "per_point":
            mean = y.mean(axis=0)
        else:
            raise ValueError(f"scaling must be one of {SCALINGS}, got {mode!r}")
        scale = float(np.sqrt(np.mean((y - mean) ** 2)))
        return cls(mean, max(scale, 1e-8))

    def transform(self, a: np.ndarray) -> np.ndarray:
        return (a - self.mean) / self.scale

    def inverse(self, a: np.ndarray) -> np.ndarray:
        return self.mean + self.scale * a


def train_epochs(state: TrainState, x: np.ndarray, y: np.ndarray, epochs: int, batch_size: int,
                 x_val: np.ndarray | None = None, y_val: np.ndarray | None = None):
    """Minibatch RMSProp over shuffled data; returns per-epoch train (and validation) MSE.

    The train value is the sample-weighted mean of the batch losses of that
    epoch; validation is evaluated in inference mode after the epoch.
    """
    model = state.model
    n = x.shape[0]
    train_curve, val_curve = [], []
    for _ in range(epochs):
        order = state.rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start: start + batch_size]
            y_hat, tape = model.forward(x[idx], mode="train", rng=state.rng)
            loss, dy = mse_loss(y_hat, y[idx])
            rmsprop_step(state, model.backward(tape, dy))
            total += loss * idx.size
        train_curve.append(total / n)
        if x_val is not None and len(x_val):
            val_curve.append(mse_loss(predict_batched(model, x_val), y_val)[0])
    return train_curve, val_curve


def predict_batched(model: Model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    if x.shape[0] == 0:
        return np.empty((0, N_POINTS))
    return np.concatenate([model.predict(x[k: k + batch_size]) for k in range(0, x.shape[0], batch_size)])


def make_pairs(series, targets: Sequence[int], cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Training pairs: features at row u-1 and the surface at row u.

    Features are read through an as-of view ending at u and the target through
    one ending at u + 1, so nothing later than u is touched.
    """
    xs = [_features_before(series, u, cfg) for u in targets]
    ys = [series.as_of(u + 1)[u].vols for u in targets]
    if not xs:
        return np.empty((0, 3, N_POINTS)), np.empty((0, N_POINTS))
    return np.stack(xs), np.stack(ys)


def _features_before(series, u: int, cfg: ExperimentConfig) -> np.ndarray:
    """Features available when forecasting row u (data strictly before u)."""
    return build_features(series.as_of(u), u - 1, raw_monthly=cfg.raw_monthly,
                          check_calendar=cfg.check_calendar, holidays=cfg.holidays)


def _new_state(cfg: ExperimentConfig) -> TrainState:
    model = build_model(cfg.model, seed=cfg.seed, hidden=cfg.hidden, keep_prob=cfg.keep_prob)
    return TrainState(model, make_rng(cfg.seed + _TRAIN_SEED_OFFSET), lr=cfg.lr)


def _fit_scaled(state, scaler, x, y, cfg, x_val=None, y_val=None):
    xv = None if x_val is None else scaler.transform(x_val)
    yv = None if y_val is None else scaler.transform(y_val)
    return train_epochs(state, scaler.transform(x), scaler.transform(y), cfg.n_epochs, cfg.batch_size, xv, yv)


# forecasts are vols: clip into the range a surface accepts so QLIKE stays defined
VOL_FLOOR, VOL_CAP = 1e-4, 4.999


def _predict_scaled(model, scaler, x):
    return np.clip(scaler.inverse(predict_batched(model, scaler.transform(x))), VOL_FLOOR, VOL_CAP)


# ---------------------------------------------------------------------------
# reports


@dataclass
class SplitResult:
    mse: float
    mae: float
    qlike: float
    n_days: int
    dates: list[dt.date] = field(default_factory=list)
    pred: np.ndarray | None = None
    target: np.ndarray | None = None

    @classmethod
    def score(cls, dates, pred, target, scale: float) -> "SplitResult":
        mse, mae, qlike = losses(pred * scale, target * scale)
        return cls(mse, mae, qlike, len(pred), list(dates), pred, target)


@dataclass
class EvalReport:
    model: str
    mode: str
    in_sample: SplitResult
    out_of_sample: SplitResult
    epoch_losses: list[float]
    val_losses: list[float]
    config: ExperimentConfig

    def daily_losses(self) -> list[tuple[dt.date, float, float, float]]:
        out = self.out_of_sample
        scale = self.config.loss_scale
        return [(d, *losses(p[None] * scale, t[None] * scale)) for d, p, t in zip(out.dates, out.pred, out.target)]

    def forecast_series(self) -> SurfaceSeries:
        """Out-of-sample predictions as a series dated by their target days."""
        out = self.out_of_sample
        return SurfaceSeries(out.dates, out.pred)


def _split_point(cfg: ExperimentConfig, n: int) -> int:
    return int(round(cfg.split_fraction * n))


def run_static(cfg: ExperimentConfig, series) -> EvalReport:
    """Train once on the in-sample block, score both blocks."""
    n = len(series)
    split = _split_point(cfg, n)
    if split - MONTH_DAYS < 2 or split >= n:
        raise WindowError(f"series of {n} days is too short for a static split at {split}")
    train_targets = range(MONTH_DAYS, split)
    test_targets = range(split, n)
    x_tr, y_tr = make_pairs(series.as_of(split), train_targets, cfg)
    x_te = np.stack([_features_before(series, u, cfg) for u in test_targets])
    # scoring and validation-curve only; never reaches the optimizer or the features
    y_te = np.array(series.realized(split, n))

    state = _new_state(cfg)
    scaler = Scaler.fit(y_tr, cfg.scaling)
    curve, val_curve = _fit_scaled(state, scaler, x_tr, y_tr, cfg,
                                   *((x_te, y_te) if cfg.track_validation else (None, None)))
    dates = series.dates
    in_res = SplitResult.score([dates[u] for u in train_targets], _predict_scaled(state.model, scaler, x_tr),
                               y_tr, cfg.loss_scale)
    out_res = SplitResult.score([dates[u] for u in test_targets], _predict_scaled(state.model, scaler, x_te),
                                y_te, cfg.loss_scale)
    return EvalReport(cfg.model, "static", in_res, out_res, curve, val_curve, cfg)


def run_rolling(cfg: ExperimentConfig, series) -> EvalReport:
    """Retrain on the trailing ``window`` days before each out-of-sample day.

    Retraining happens every ``retrain_every`` test days and warm-starts from
    the previous window unless ``warm_start`` is False.  The in-sample score
    pools every window's fitted values right after its retrain.
    """
    n = len(series)
    split = _split_point(cfg, n)
    if split - cfg.window < MONTH_DAYS or split >= n:
        raise WindowError(
            f"rolling needs {cfg.window} training days plus {MONTH_DAYS} days of feature history "
            f"before the first test day {split} (series has {n})"
        )
    state = None
    scaler = None
    curve: list[float] = []
    in_pred, in_tgt = [], []
    preds = []
    for k, u in enumerate(range(split, n)):
        view = series.as_of(u)
        if k % cfg.retrain_every == 0:
            x_tr, y_tr = make_pairs(view, range(u - cfg.window, u), cfg)
            if state is None or not cfg.warm_start:
                state = _new_state(cfg)
            scaler = Scaler.fit(y_tr, cfg.scaling)
            c, _ = _fit_scaled(state, scaler, x_tr, y_tr, cfg)
            curve.extend(c)
            in_pred.append(_predict_scaled(state.model, scaler, x_tr))
            in_tgt.append(y_tr)
        x = _features_before(view, u, cfg)
        preds.append(_predict_scaled(state.model, scaler, x[None])[0])
    in_pred_a, in_tgt_a = np.concatenate(in_pred), np.concatenate(in_tgt)
    mse, mae, qlike = losses(in_pred_a * cfg.loss_scale, in_tgt_a * cfg.loss_scale)
    in_res = SplitResult(mse, mae, qlike, in_pred_a.shape[0])
    targets = np.array(series.realized(split, n))  # scoring only
    out_res = SplitResult.score(list(series.dates[split:]), np.array(preds), targets, cfg.loss_scale)
    return EvalReport(cfg.model, "rolling", in_res, out_res, curve, [], cfg)


def run(cfg: ExperimentConfig, series) -> EvalReport:
    return run_static(cfg, series) if cfg.mode == "static" else run_rolling(cfg, series)


def fit_series(cfg: ExperimentConfig, series) -> tuple[Model, Scaler, list[float]]:
    """Train on every usable day pair of ``series``."""
    n = len(series)
    if n - MONTH_DAYS < 2:
        raise WindowError(f"series of {n} days is too short to train on")
    x, y = make_pairs(series, range(MONTH_DAYS, n), cfg)
    state = _new_state(cfg)
    scaler = Scaler.fit(y, cfg.scaling)
    curve, _ = _fit_scaled(state, scaler, x, y, cfg)
    return state.model, scaler, curve


def forecast_rows(model: Model, scaler: Scaler, series, cfg: ExperimentConfig, next_date) -> SurfaceSeries:
    """One-day-ahead forecasts for rows 22 .. n-1 plus the day after the last
    row (dated ``next_date``), each from data strictly before its date."""
    n = len(series)
    if n < MONTH_DAYS:
        raise WindowError(f"series of {n} days has no full feature window")
    rows = range(MONTH_DAYS, n + 1)
    x = np.stack([_features_before(series, u, cfg) for u in rows])
    pred = _predict_scaled(model, scaler, x)
    dates = list(series.dates[MONTH_DAYS:]) + [next_date]
    return SurfaceSeries(dates, pred)


# ---------------------------------------------------------------------------
# CSV emission

SUMMARY_HEADER = ["model", "split", "mse", "mae", "qlike"]


def write_summary(reports: Sequence[EvalReport], path, comments: Sequence[str] = ()) -> None:
    """Tables 1-2 layout: one row per (model, split)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in reports:
            for split, res in (("in_sample", r.in_sample), ("out_of_sample", r.out_of_sample)):
                w.writerow([r.model, split, f"{res.mse:.17g}", f"{res.mae:.17g}", f"{res.qlike:.17g}"])


def write_daily(reports: Sequence[EvalReport], path, comments: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "date", "mse", "mae", "qlike"])
        for r in reports:
            for d, mse, mae, qlike in r.daily_losses():
                w.writerow([r.model, d.isoformat(), f"{mse:.17g}", f"{mae:.17g}", f"{qlike:.17g}"])


def write_epoch_losses(reports: Sequence[EvalReport], path, comments: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "epoch", "train_mse", "validation_mse"])
        for r in reports:
            for e, loss in enumerate(r.epoch_losses, start=1):
                val = r.val_losses[e - 1] if e - 1 < len(r.val_losses) else ""
                w.writerow([r.model, e, f"{loss:.17g}", "" if val == "" else f"{val:.17g}"])
