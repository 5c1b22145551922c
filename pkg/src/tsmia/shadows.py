"""Shadow-model harness: subset planning, ensemble training, and the
record x model x signal tensor.

Membership is user-level throughout: a record counts as "in" shadow i
iff the record's user belongs to shadow i's training subset. Online
plans draw half-pool subsets from train+test users; offline plans draw
from the auxiliary users, so audit records (train/test users) are out
of every offline shadow.
"""

from __future__ import annotations

import dataclasses
import json
import pathlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import forecasters, signals
from .forecasters import ForecasterConfig, TrainedForecaster
from .rng import derive_seed, rng_for
from .series import PopulationSplit, RecordSet, SeriesError, UserSeries, window_series_batch

PLAN_MODES = ("online", "offline")
_GUARD_ATTEMPTS_PER_SHADOW = 64


class ShadowError(RuntimeError):
    """Shadow planning or training failure."""


@dataclass(frozen=True)
class ShadowPlan:
    """K user subsets for shadow training plus the pool they came from."""

    mode: str
    k: int
    subsets: tuple[tuple[str, ...], ...]
    pool: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if self.mode not in PLAN_MODES:
            raise ShadowError(f"unknown shadow mode {self.mode!r}")
        if self.k < 2 or len(self.subsets) != self.k:
            raise ShadowError("shadow plan needs k >= 2 subsets")
        pool = set(self.pool)
        for sub in self.subsets:
            if not set(sub) <= pool:
                raise ShadowError("shadow subset escapes its pool")


@dataclass(frozen=True)
class ShadowEnsemble:
    plan: ShadowPlan
    models: tuple[TrainedForecaster, ...]

    def __post_init__(self):
        if len(self.models) != self.plan.k:
            raise ShadowError("ensemble size does not match plan")


@dataclass(frozen=True)
class SignalTensor:
    """Signals for every (audit record, model) pair.

    ``values`` has shape (n_records, K+1, n_signals); model index K is
    the target model, indices 0..K-1 are the shadows in plan order.
    """

    values: np.ndarray
    signal_ids: tuple[signals.SignalId, ...]
    record_user_ids: np.ndarray
    record_origins: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] != len(self.signal_ids):
            raise ShadowError("signal tensor shape inconsistent with signal ids")
        if not np.all(np.isfinite(self.values)):
            raise ShadowError("signal tensor contains non-finite values")

    @property
    def num_shadows(self) -> int:
        return self.values.shape[1] - 1

    def shadow_values(self) -> np.ndarray:
        return self.values[:, :-1, :]

    def target_values(self) -> np.ndarray:
        return self.values[:, -1, :]

    def record_keys(self) -> list[str]:
        return [f"{u}:{o}" for u, o in zip(self.record_user_ids, self.record_origins)]


def plan_shadows(
    split: PopulationSplit,
    mode: str,
    k: int,
    seed: int,
    offline_fraction: float = 0.5,
) -> ShadowPlan:
    """Draw K user subsets: online takes ceil(50%) of train+test users,
    offline takes ceil(offline_fraction) of the auxiliary users.

    A resampling guard redraws subsets until every pool user is inside at
    least one subset and outside at least one, so per-record in/out
    populations are never empty downstream; it gives up after a bounded
    number of redraws.
    """
    if mode not in PLAN_MODES:
        raise ShadowError(f"unknown shadow mode {mode!r}")
    if k < 2:
        raise ShadowError("need k >= 2 shadow models")
    pool = sorted(split.train_users + split.test_users) if mode == "online" else sorted(split.aux_users)
    if not pool:
        raise ShadowError(f"{mode} shadow pool is empty")
    fraction = 0.5 if mode == "online" else offline_fraction
    if not 0 < fraction <= 1:
        raise ShadowError("subset fraction must be in (0, 1]")
    size = int(np.ceil(fraction * len(pool)))
    if size < 1 or (size == len(pool) and k > 1):
        raise ShadowError(f"pool of {len(pool)} users cannot support subsets of {size}")
    rng = rng_for(seed, f"shadow-plan-{mode}")

    def draw() -> tuple[str, ...]:
        idx = rng.choice(len(pool), size=size, replace=False)
        return tuple(sorted(pool[i] for i in np.sort(idx)))

    subsets = [draw() for _ in range(k)]
    for _ in range(_GUARD_ATTEMPTS_PER_SHADOW * k):
        counts = {u: 0 for u in pool}
        for sub in subsets:
            for u in sub:
                counts[u] += 1
        bad = [u for u, c in counts.items() if c == 0 or c == k]
        if not bad:
            break
        subsets[int(rng.integers(k))] = draw()
    else:
        raise ShadowError("could not draw subsets with both in- and out-models per user")
    return ShadowPlan(mode=mode, k=k, subsets=tuple(subsets), pool=tuple(pool), seed=seed)


def _shadow_record_split(
    subset: Sequence[str],
    series_by_user: dict[str, UserSeries],
    lookback: int,
    horizon: int,
    stride: int,
    early_stopping: bool,
    seed: int,
    index: int,
) -> tuple[RecordSet, RecordSet | None]:
    """Window one shadow's records; with early stopping, hold out 20% of
    the subset's users (at least one) for shadow-local validation."""
    users = sorted(subset)
    val_users: list[str] = []
    if early_stopping:
        if len(users) < 2:
            raise ShadowError("shadow subset too small for a validation split")
        n_val = max(1, int(round(0.2 * len(users))))
        rng = rng_for(seed, "shadow-val-split", index)
        picks = rng.choice(len(users), size=n_val, replace=False)
        val_users = [users[i] for i in sorted(picks)]
    train_users = [u for u in users if u not in set(val_users)]
    train = RecordSet.concat(
        [window_series_batch(series_by_user[u], lookback, horizon, stride) for u in train_users]
    )
    val = None
    if val_users:
        val = RecordSet.concat(
            [window_series_batch(series_by_user[u], lookback, horizon, stride) for u in val_users]
        )
    return train, val


def train_shadow_ensemble(
    plan: ShadowPlan,
    population: Sequence[UserSeries],
    forecaster_cfg: ForecasterConfig,
    lookback: int,
    horizon: int,
    stride: int = 1,
    jobs: int = 1,
) -> ShadowEnsemble:
    """Train one forecaster per planned subset with the target's exact
    configuration and a per-shadow derived seed."""
    series_by_user = {s.user_id: s for s in population}
    missing = [u for u in plan.pool if u not in series_by_user]
    if missing:
        raise ShadowError(f"population is missing plan users {missing[:3]}")

    def train_one(i: int) -> TrainedForecaster:
        cfg = dataclasses.replace(
            forecaster_cfg, seed=derive_seed(plan.seed, "shadow-train", i)
        )
        try:
            train, val = _shadow_record_split(
                plan.subsets[i], series_by_user, lookback, horizon, stride,
                cfg.kind == "mlp" and cfg.early_stopping, plan.seed, i,
            )
            return forecasters.fit_forecaster(train, val, cfg)
        except (forecasters.ForecasterError, SeriesError, ShadowError) as err:
            raise ShadowError(f"shadow {i} failed: {err}") from err

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            models = list(pool.map(train_one, range(plan.k)))
    else:
        models = [train_one(i) for i in range(plan.k)]
    return ShadowEnsemble(plan=plan, models=tuple(models))


def membership_matrix(user_ids: np.ndarray, plan: ShadowPlan) -> np.ndarray:
    """Boolean (n_records, K) matrix: record j in shadow i iff j's user is
    in subset i. All false for audit records under an offline plan."""
    out = np.zeros((len(user_ids), plan.k), dtype=bool)
    for i, sub in enumerate(plan.subsets):
        out[:, i] = np.isin(user_ids, tuple(sub))
    return out


def predict_all_models(
    models: Sequence[TrainedForecaster], records: RecordSet, jobs: int = 1
) -> np.ndarray:
    """Predictions of every model on every record: (n, n_models, M, H)."""

    def run(model):
        return forecasters.predict_batch(model, records.x)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            preds = list(pool.map(run, models))
    else:
        preds = [run(m) for m in models]
    return np.stack(preds, axis=1)


def signal_tensor_from_predictions(
    records: RecordSet,
    predictions: np.ndarray,
    signal_set: Sequence[signals.SignalId],
    *,
    trend_degree: int = 1,
    embedder: signals.Embedder | None = None,
) -> SignalTensor:
    """Fill the tensor from cached predictions (bit-identical to the
    direct path, which is this function composed with predict_all_models)."""
    order = signals.canonical_order(signal_set)
    n, n_models = predictions.shape[:2]
    if n != len(records):
        raise ShadowError("predictions do not match the record set")
    values = np.empty((n, n_models, len(order)))
    for i in range(n_models):
        try:
            values[:, i, :] = signals.compute_signal_matrix(
                records.y, predictions[:, i], order,
                trend_degree=trend_degree, embedder=embedder,
            )
        except signals.SignalError as err:
            raise ShadowError(
                f"signal failure at record={err.record_index} model={i}: {err}"
            ) from err
    return SignalTensor(
        values=values,
        signal_ids=order,
        record_user_ids=records.user_ids.copy(),
        record_origins=records.origins.copy(),
    )


def compute_signal_tensor(
    ensemble: ShadowEnsemble,
    target: TrainedForecaster,
    audit_records: RecordSet,
    signal_set: Sequence[signals.SignalId],
    *,
    trend_degree: int = 1,
    embedder: signals.Embedder | None = None,
    jobs: int = 1,
) -> tuple[SignalTensor, np.ndarray]:
    """Signals of every audit record under each shadow and the target
    (model index K), plus the user-level membership matrix."""
    models = list(ensemble.models) + [target]
    predictions = predict_all_models(models, audit_records, jobs=jobs)
    tensor = signal_tensor_from_predictions(
        audit_records, predictions, signal_set,
        trend_degree=trend_degree, embedder=embedder,
    )
    membership = membership_matrix(audit_records.user_ids, ensemble.plan)
    return tensor, membership


def export_signal_tensor(tensor: SignalTensor, path) -> None:
    """Columnar text export: record_id,model_index,signal_id,value."""
    keys = tensor.record_keys()
    with open(path, "w") as fh:
        fh.write("record_id,model_index,signal_id,value\n")
        for j, key in enumerate(keys):
            for i in range(tensor.values.shape[1]):
                for s, sid in enumerate(tensor.signal_ids):
                    fh.write(f"{key},{i},{sid.value},{float(tensor.values[j, i, s])!r}\n")


def save_ensemble(ensemble: ShadowEnsemble, directory) -> None:
    """One serialized model per shadow plus a manifest with the plan."""
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": forecasters.SERIALIZATION_VERSION,
        "plan": {
            "mode": ensemble.plan.mode,
            "k": ensemble.plan.k,
            "subsets": [list(s) for s in ensemble.plan.subsets],
            "pool": list(ensemble.plan.pool),
            "seed": ensemble.plan.seed,
        },
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    for i, model in enumerate(ensemble.models):
        forecasters.save_forecaster(model, directory / f"shadow_{i:03d}.npz")


def load_ensemble(directory) -> ShadowEnsemble:
    directory = pathlib.Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("version") != forecasters.SERIALIZATION_VERSION:
        raise ShadowError("unsupported ensemble cache version")
    p = manifest["plan"]
    plan = ShadowPlan(
        mode=p["mode"],
        k=int(p["k"]),
        subsets=tuple(tuple(s) for s in p["subsets"]),
        pool=tuple(p["pool"]),
        seed=int(p["seed"]),
    )
    models = tuple(
        forecasters.load_forecaster(directory / f"shadow_{i:03d}.npz") for i in range(plan.k)
    )
    return ShadowEnsemble(plan=plan, models=models)
