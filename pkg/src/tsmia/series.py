"""Time-series data model.

User series, forecast records, sliding-window construction, robust
(median/IQR) scaling, and user-level population splits. All operations
are pure and deterministic given their inputs and seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import rng_for


class SeriesError(ValueError):
    """Invalid series data or incompatible shapes."""


class DegenerateScaleError(SeriesError):
    """A variable has zero interquartile range; scaling is ill-defined."""


@dataclass(frozen=True)
class UserSeries:
    """One entity's multivariate series: a (variables x time) matrix."""

    user_id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise SeriesError(
                f"series {self.user_id!r}: values must be a (M, T) matrix with M,T >= 1"
            )
        if not np.all(np.isfinite(v)):
            raise SeriesError(f"series {self.user_id!r}: non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def num_variables(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ForecastRecord:
    """One (input window, target horizon) pair cut from a user's series.

    ``origin`` is the 0-based index of the last input column: the input
    covers columns [origin-L+1, origin] and the target covers
    [origin+1, origin+H].
    """

    user_id: str
    origin: int
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class RecordSet:
    """Columnar batch of forecast records (the vectorized counterpart of
    a list of ForecastRecord)."""

    user_ids: np.ndarray  # (n,) str
    origins: np.ndarray  # (n,) int
    x: np.ndarray  # (n, M, L)
    y: np.ndarray  # (n, M, H)

    def __post_init__(self):
        n = len(self.user_ids)
        if not (len(self.origins) == self.x.shape[0] == self.y.shape[0] == n):
            raise SeriesError("record set: inconsistent lengths")
        if self.x.ndim != 3 or self.y.ndim != 3 or self.x.shape[1] != self.y.shape[1]:
            raise SeriesError("record set: x/y must be (n, M, L) and (n, M, H)")

    def __len__(self) -> int:
        return len(self.user_ids)

    @property
    def num_variables(self) -> int:
        return self.x.shape[1]

    @property
    def lookback(self) -> int:
        return self.x.shape[2]

    @property
    def horizon(self) -> int:
        return self.y.shape[2]

    def to_records(self) -> list[ForecastRecord]:
        return [
            ForecastRecord(str(u), int(o), self.x[i].copy(), self.y[i].copy())
            for i, (u, o) in enumerate(zip(self.user_ids, self.origins))
        ]

    def subset(self, idx: np.ndarray) -> "RecordSet":
        return RecordSet(self.user_ids[idx], self.origins[idx], self.x[idx], self.y[idx])

    @staticmethod
    def concat(parts: list["RecordSet"]) -> "RecordSet":
        if not parts:
            raise SeriesError("record set: nothing to concatenate")
        return RecordSet(
            np.concatenate([p.user_ids for p in parts]),
            np.concatenate([p.origins for p in parts]),
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
        )

    @staticmethod
    def from_records(records: list[ForecastRecord]) -> "RecordSet":
        if not records:
            raise SeriesError("record set: empty record list")
        return RecordSet(
            np.array([r.user_id for r in records]),
            np.array([r.origin for r in records], dtype=np.int64),
            np.stack([r.x for r in records]),
            np.stack([r.y for r in records]),
        )


def window_count(length: int, lookback: int, horizon: int, stride: int) -> int:
    """Number of windows: floor((T - L - H)/stride) + 1, or 0 if T < L + H."""
    if length < lookback + horizon:
        return 0
    return (length - lookback - horizon) // stride + 1


def window_series_batch(
    series: UserSeries, lookback: int, horizon: int, stride: int = 1
) -> RecordSet:
    """Cut all sliding windows of one series into a columnar RecordSet.

    Windows are emitted in increasing origin order; record j has origin
    t_j = lookback - 1 + j*stride.
    """
    if lookback < 1 or horizon < 1 or stride < 1:
        raise SeriesError("window: lookback, horizon and stride must be >= 1")
    m, t = series.values.shape
    n = window_count(t, lookback, horizon, stride)
    origins = lookback - 1 + stride * np.arange(n, dtype=np.int64)
    if n == 0:
        return RecordSet(
            np.empty(0, dtype=object),
            origins,
            np.empty((0, m, lookback)),
            np.empty((0, m, horizon)),
        )
    # (M, n_starts, L+H) view of every full-length window, then split.
    win = np.lib.stride_tricks.sliding_window_view(series.values, lookback + horizon, axis=1)
    win = win[:, ::stride, :][:, :n, :]
    x = np.ascontiguousarray(win[:, :, :lookback].transpose(1, 0, 2))
    y = np.ascontiguousarray(win[:, :, lookback:].transpose(1, 0, 2))
    user_ids = np.array([series.user_id] * n)
    return RecordSet(user_ids, origins, x, y)


def window_series(
    series: UserSeries, lookback: int, horizon: int, stride: int = 1
) -> list[ForecastRecord]:
    """List-of-records view of :func:`window_series_batch`."""
    return window_series_batch(series, lookback, horizon, stride).to_records()


@dataclass(frozen=True)
class ScalerParams:
    """Per-variable robust scaling parameters: center (median) and scale (IQR)."""

    center: np.ndarray  # (M,)
    scale: np.ndarray  # (M,)

    def __post_init__(self):
        if self.center.shape != self.scale.shape or self.center.ndim != 1:
            raise SeriesError("scaler: center/scale must be matching 1-d arrays")
        if np.any(self.scale <= 0):
            raise DegenerateScaleError("scaler: non-positive scale")


def fit_scaler(series_set: list[UserSeries], unit_scale_fallback: bool = False) -> ScalerParams:
    """Fit median/IQR per variable over all values pooled across the given series.

    Quantiles use linear interpolation between order statistics. A zero
    IQR raises DegenerateScaleError unless ``unit_scale_fallback`` is set,
    in which case the offending variable gets scale 1.
    """
    if not series_set:
        raise SeriesError("scaler: empty series set")
    m = series_set[0].num_variables
    if any(s.num_variables != m for s in series_set):
        raise SeriesError("scaler: inconsistent variable counts")
    pooled = np.concatenate([s.values for s in series_set], axis=1)
    center = np.median(pooled, axis=1)
    q25, q75 = np.percentile(pooled, [25.0, 75.0], axis=1, method="linear")
    scale = q75 - q25
    degenerate = scale <= 0
    if np.any(degenerate):
        if not unit_scale_fallback:
            bad = np.flatnonzero(degenerate).tolist()
            raise DegenerateScaleError(f"scaler: zero IQR for variable(s) {bad}")
        scale = np.where(degenerate, 1.0, scale)
    return ScalerParams(center, scale)


def apply_scaler(series: UserSeries, params: ScalerParams) -> UserSeries:
    """Map each value x -> (x - median) / IQR per variable."""
    if series.num_variables != len(params.center):
        raise SeriesError("scaler: variable count mismatch")
    scaled = (series.values - params.center[:, None]) / params.scale[:, None]
    return UserSeries(series.user_id, scaled)


def invert_scaler(series: UserSeries, params: ScalerParams) -> UserSeries:
    """Exact inverse of :func:`apply_scaler`."""
    if series.num_variables != len(params.center):
        raise SeriesError("scaler: variable count mismatch")
    raw = series.values * params.scale[:, None] + params.center[:, None]
    return UserSeries(series.user_id, raw)


@dataclass(frozen=True)
class PopulationSplit:
    """Disjoint user-id pools for train / validation / test / auxiliary."""

    train_users: tuple[str, ...]
    val_users: tuple[str, ...]
    test_users: tuple[str, ...]
    aux_users: tuple[str, ...]

    def __post_init__(self):
        pools = [self.train_users, self.val_users, self.test_users, self.aux_users]
        flat = [u for p in pools for u in p]
        if len(flat) != len(set(flat)):
            raise SeriesError("split: pools are not disjoint")

    @property
    def all_users(self) -> tuple[str, ...]:
        return self.train_users + self.val_users + self.test_users + self.aux_users


def split_users(
    user_ids, sizes: tuple[int, int, int, int], seed: int
) -> PopulationSplit:
    """Uniform random split of users into four disjoint pools.

    Deterministic for a fixed seed; the input order of ``user_ids`` does
    not matter (ids are sorted before shuffling).
    """
    users = sorted(str(u) for u in user_ids)
    if len(set(users)) != len(users):
        raise SeriesError("split: duplicate user ids")
    n_train, n_val, n_test, n_aux = sizes
    if min(sizes) < 0:
        raise SeriesError("split: negative pool size")
    total = n_train + n_val + n_test + n_aux
    if total > len(users):
        raise SeriesError(f"split: sizes sum to {total} but only {len(users)} users")
    perm = rng_for(seed, "user-split").permutation(len(users))
    shuffled = [users[i] for i in perm]
    bounds = np.cumsum([0, n_train, n_val, n_test, n_aux])
    pools = [tuple(sorted(shuffled[bounds[i] : bounds[i + 1]])) for i in range(4)]
    return PopulationSplit(*pools)
