"""Desk-scale forecasting models under a common train/predict contract.

Two model kinds share one flattened parameterization:

* ``ridge``: closed-form ridge regression from the flattened input
  window (plus a constant feature) to the flattened horizon. The
  penalty applies to all coefficients including the constant, making
  the solution the exact minimizer of ||AW - B||^2 + lambda ||W||^2.
* ``mlp``: a ReLU network trained with Adam on MAE loss, up to
  ``max_epochs`` epochs with early stopping on validation loss
  (patience ``patience``), returning the best-validation snapshot.
  Setting ``early_stopping=False`` trains to the final epoch without a
  validation set, which is the deliberately-overfit regime used to
  stress privacy leakage.

Inputs are flattened in C order over the (variables, time) axes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import nn, signals
from .rng import derive_seed
from .series import ForecastRecord, RecordSet

SERIALIZATION_VERSION = 1


class ForecasterError(ValueError):
    """Invalid forecaster configuration or inputs."""


class SingularSystemError(ForecasterError):
    """Ridge normal equations are singular (needs a positive penalty)."""


@dataclass(frozen=True)
class ForecasterConfig:
    kind: str = "mlp"  # "ridge" | "mlp"
    ridge_lambda: float = 1e-3
    hidden: tuple[int, ...] = (64,)
    learning_rate: float = 1e-3
    max_epochs: int = 50
    patience: int = 3
    batch_size: int = 1024
    loss: str = "mae"
    early_stopping: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ridge", "mlp"):
            raise ForecasterError(f"unknown forecaster kind {self.kind!r}")
        if self.ridge_lambda < 0:
            raise ForecasterError("ridge_lambda must be >= 0")
        if any(h < 1 for h in self.hidden):
            raise ForecasterError("hidden sizes must be >= 1")
        if self.patience < 1:
            raise ForecasterError("patience must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ForecasterError("invalid training hyperparameters")
        if self.loss != "mae":
            raise ForecasterError("only MAE loss is supported")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass(frozen=True)
class TrainedForecaster:
    """Immutable trained model: flat parameters plus shape metadata."""

    config: ForecasterConfig
    num_variables: int
    lookback: int
    horizon: int
    params: np.ndarray
    shapes: tuple[tuple[int, ...], ...]
    history: tuple[dict, ...]

    def __post_init__(self):
        if not np.all(np.isfinite(self.params)):
            raise ForecasterError("trained parameters must be finite")


@dataclass(frozen=True)
class ForecastMetrics:
    mse: float
    mae: float
    smape: float
    nd: float


def _coerce(records) -> RecordSet:
    if isinstance(records, RecordSet):
        return records
    if not records:
        raise ForecasterError("empty record set")
    return RecordSet.from_records(list(records))


def _flatten_xy(rs: RecordSet) -> tuple[np.ndarray, np.ndarray]:
    n = len(rs)
    return rs.x.reshape(n, -1), rs.y.reshape(n, -1)


def fit_ridge(records_train, ridge_lambda: float, config: ForecasterConfig | None = None) -> TrainedForecaster:
    """Closed-form ridge fit; raises SingularSystemError when the
    regularized Gram matrix is not positive definite."""
    rs = _coerce(records_train)
    if len(rs) < 1:
        raise ForecasterError("ridge: need at least one training record")
    if ridge_lambda < 0:
        raise ForecasterError("ridge: penalty must be >= 0")
    x, y = _flatten_xy(rs)
    a = np.hstack([x, np.ones((len(rs), 1))])
    gram = a.T @ a + ridge_lambda * np.eye(a.shape[1])
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise SingularSystemError(
            "ridge: singular normal equations; increase the penalty"
        ) from None
    rhs = a.T @ y
    w = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    cfg = config or ForecasterConfig(kind="ridge", ridge_lambda=ridge_lambda)
    if cfg.kind != "ridge":
        raise ForecasterError("ridge: config kind mismatch")
    return TrainedForecaster(
        config=dataclasses.replace(cfg, ridge_lambda=float(ridge_lambda)),
        num_variables=rs.num_variables,
        lookback=rs.lookback,
        horizon=rs.horizon,
        params=w.ravel().copy(),
        shapes=(tuple(w.shape),),
        history=(),
    )


def fit_mlp(records_train, records_val, cfg: ForecasterConfig) -> TrainedForecaster:
    """Adam/MAE training of a ReLU MLP from flattened window to flattened
    horizon. ``records_val`` may be None when early stopping is disabled."""
    if cfg.kind != "mlp":
        raise ForecasterError("mlp: config kind mismatch")
    rs = _coerce(records_train)
    if len(rs) < 1:
        raise ForecasterError("mlp: empty training set")
    x, y = _flatten_xy(rs)
    x_val = y_val = None
    if cfg.early_stopping:
        vs = _coerce(records_val)
        if len(vs) < 1:
            raise ForecasterError("mlp: early stopping needs a validation set")
        if vs.num_variables != rs.num_variables or vs.horizon != rs.horizon:
            raise ForecasterError("mlp: train/val dimension mismatch")
        x_val, y_val = _flatten_xy(vs)
    sizes = [x.shape[1], *cfg.hidden, y.shape[1]]
    try:
        result = nn.train_network(
            sizes,
            x,
            y,
            loss="mae",
            seed=derive_seed(cfg.seed, "mlp-forecaster"),
            learning_rate=cfg.learning_rate,
            max_epochs=cfg.max_epochs,
            batch_size=cfg.batch_size,
            patience=cfg.patience,
            early_stopping=cfg.early_stopping,
            x_val=x_val,
            y_val=y_val,
        )
    except nn.TrainingError as err:
        raise ForecasterError(f"mlp training failed: {err} (epoch {err.epoch})") from err
    return TrainedForecaster(
        config=cfg,
        num_variables=rs.num_variables,
        lookback=rs.lookback,
        horizon=rs.horizon,
        params=result.params,
        shapes=tuple(tuple(s) for s in result.shapes),
        history=tuple(result.history),
    )


def fit_forecaster(records_train, records_val, cfg: ForecasterConfig) -> TrainedForecaster:
    if cfg.kind == "ridge":
        return fit_ridge(records_train, cfg.ridge_lambda, config=cfg)
    return fit_mlp(records_train, records_val, cfg)


def predict_batch(model: TrainedForecaster, x: np.ndarray) -> np.ndarray:
    """Predictions for a stack of input windows (n, M, L) -> (n, M, H)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != model.num_variables or x.shape[2] != model.lookback:
        raise ForecasterError(
            f"predict: expected (n, {model.num_variables}, {model.lookback}) inputs, got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ForecasterError("predict: non-finite inputs")
    flat = x.reshape(len(x), -1)
    if model.config.kind == "ridge":
        w = model.params.reshape(model.shapes[0])
        out = np.hstack([flat, np.ones((len(flat), 1))]) @ w
    else:
        out, _ = nn.forward(model.params, [tuple(s) for s in model.shapes], flat)
    return out.reshape(len(x), model.num_variables, model.horizon)


def predict(model: TrainedForecaster, x: np.ndarray) -> np.ndarray:
    """Forecast one input window (M, L) -> (M, H)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ForecasterError("predict: expected a single (M, L) window")
    return predict_batch(model, x[None])[0]


def evaluate(model: TrainedForecaster, records) -> ForecastMetrics:
    """Forecast metrics averaged over records (per-record metrics, then mean)."""
    rs = _coerce(records)
    if len(rs) < 1:
        raise ForecasterError("evaluate: empty record set")
    yhat = predict_batch(model, rs.x)
    return ForecastMetrics(
        mse=float(signals.mse_batch(rs.y, yhat).mean()),
        mae=float(signals.mae_batch(rs.y, yhat).mean()),
        smape=float(signals.smape_batch(rs.y, yhat).mean()),
        nd=float(signals.nd_batch(rs.y, yhat).mean()),
    )


def save_forecaster(model: TrainedForecaster, path) -> None:
    """Versioned, portable serialization; reloads bit-exactly."""
    meta = {
        "version": SERIALIZATION_VERSION,
        "config": dataclasses.asdict(model.config),
        "num_variables": model.num_variables,
        "lookback": model.lookback,
        "horizon": model.horizon,
        "shapes": [list(s) for s in model.shapes],
        "history": list(model.history),
    }
    np.savez(path, params=model.params, meta=np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8))


def load_forecaster(path) -> TrainedForecaster:
    with np.load(path) as archive:
        params = archive["params"]
        meta = json.loads(archive["meta"].tobytes().decode())
    if meta.get("version") != SERIALIZATION_VERSION:
        raise ForecasterError(f"unsupported serialization version {meta.get('version')}")
    cfg_dict = dict(meta["config"])
    cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
    cfg = ForecasterConfig(**cfg_dict)
    return TrainedForecaster(
        config=cfg,
        num_variables=int(meta["num_variables"]),
        lookback=int(meta["lookback"]),
        horizon=int(meta["horizon"]),
        params=params,
        shapes=tuple(tuple(s) for s in meta["shapes"]),
        history=tuple(meta["history"]),
    )
