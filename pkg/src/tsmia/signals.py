"""Per-record attack signals computed from a true horizon Y and a
predicted horizon Yhat (both M x H matrices).

Every signal here is error-like: it is 0 (rSMAPE: at its clamp floor)
when the prediction is perfect and grows with discrepancy. Attack code
that needs "larger = more member-like" must flip orientation via
``orient_values``; see SIGNAL_ORIENTATION.

Batch variants operate on stacks shaped (n, M, H) and return (n,).
"""

from __future__ import annotations

import enum
from typing import Callable, Sequence

import numpy as np


class SignalError(ValueError):
    """Invalid input to a signal computation."""

    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index


class UndefinedMetricError(SignalError):
    """The metric is undefined for this input (e.g. ND with all-zero target)."""


class IllPosedFitError(SignalError):
    """Polynomial trend fit with more coefficients than samples."""


class SignalId(enum.Enum):
    """Available attack signals. Enumeration order is the canonical
    layout of signal vectors."""

    MSE = "mse"
    MAE = "mae"
    SMAPE = "smape"
    RSMAPE = "rsmape"
    ND = "nd"
    TREND = "trend"
    SEASONALITY = "seasonality"
    EMBEDDING = "embedding"


_CANONICAL = list(SignalId)

# Direction each signal must be multiplied by so that larger oriented
# values mean "more member-like". Every current signal is an error or a
# distance, hence -1; kept explicit per signal so score-like additions
# cannot silently inherit the wrong sign.
SIGNAL_ORIENTATION: dict[SignalId, float] = {s: -1.0 for s in SignalId}

# Clamp for the SMAPE -> logit rescaling: SMAPE is clipped into
# [RSMAPE_EPS, 1 - RSMAPE_EPS] before taking log(p / (1-p)).
RSMAPE_EPS = 1e-9

Embedder = Callable[[np.ndarray], np.ndarray]


def canonical_order(signal_set: Sequence[SignalId]) -> tuple[SignalId, ...]:
    """The configured signals in canonical (enumeration) order."""
    chosen = set(signal_set)
    if len(chosen) != len(list(signal_set)):
        raise SignalError("signal set contains duplicates")
    return tuple(s for s in _CANONICAL if s in chosen)


def _check_pair(y: np.ndarray, yhat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise SignalError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    return y, yhat


def _as_batch(y: np.ndarray, yhat: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    y, yhat = _check_pair(y, yhat)
    if y.ndim == 2:
        return y[None], yhat[None], True
    if y.ndim == 3:
        return y, yhat, False
    raise SignalError(f"expected (M, H) or (n, M, H) arrays, got ndim={y.ndim}")


def mse_batch(y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    y, yhat, _ = _as_batch(y, yhat)
    return np.mean((y - yhat) ** 2, axis=(1, 2))


def mae_batch(y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    y, yhat, _ = _as_batch(y, yhat)
    return np.mean(np.abs(y - yhat), axis=(1, 2))


def smape_batch(y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    """Mean of |y - yhat| / (|y| + |yhat|) over all H*M entries, with the
    0/0 term defined as 0. Always in [0, 1]."""
    y, yhat, _ = _as_batch(y, yhat)
    num = np.abs(y - yhat)
    den = np.abs(y) + np.abs(yhat)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return np.mean(terms, axis=(1, 2))


def rsmape_batch(y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    """logit of SMAPE, clamped into [RSMAPE_EPS, 1 - RSMAPE_EPS]; unbounded
    in both directions distributionally but total as a function."""
    s = np.clip(smape_batch(y, yhat), RSMAPE_EPS, 1.0 - RSMAPE_EPS)
    return np.log(s / (1.0 - s))


def nd_batch(y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    """Normalized deviation: sum |y - yhat| / sum |y|. Undefined for an
    all-zero target."""
    y, yhat, _ = _as_batch(y, yhat)
    den = np.sum(np.abs(y), axis=(1, 2))
    bad = np.flatnonzero(den == 0)
    if bad.size:
        raise UndefinedMetricError(
            "nd undefined: all-zero target", record_index=int(bad[0])
        )
    return np.sum(np.abs(y - yhat), axis=(1, 2)) / den


def _trend_coeffs(batch: np.ndarray, degree: int) -> np.ndarray:
    """Least-squares polynomial coefficients (increasing powers) fitted per
    variable over normalized time in [0, 1]; batch is (n, M, H)."""
    h = batch.shape[2]
    if h <= degree:
        raise IllPosedFitError(f"trend fit needs H >= degree+1 (H={h}, degree={degree})")
    t = np.linspace(0.0, 1.0, h) if h > 1 else np.zeros(1)
    v = np.vander(t, degree + 1, increasing=True)  # (H, d+1)
    pinv = np.linalg.pinv(v)  # (d+1, H)
    return np.einsum("dh,nmh->nmd", pinv, batch)


def trend_signal_batch(y: np.ndarray, yhat: np.ndarray, degree: int = 1) -> np.ndarray:
    """Mean over variables of the L2 distance between the polynomial trend
    coefficients of y and yhat."""
    y, yhat, _ = _as_batch(y, yhat)
    cy = _trend_coeffs(y, degree)
    cyhat = _trend_coeffs(yhat, degree)
    return np.linalg.norm(cy - cyhat, axis=2).mean(axis=1)


def seasonality_signal_batch(y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    """L2 distance between the 2-D DFT magnitude spectra of y and yhat,
    taken over the full M x H grid (phase-insensitive)."""
    y, yhat, _ = _as_batch(y, yhat)
    my = np.abs(np.fft.fft2(y, axes=(1, 2)))
    myhat = np.abs(np.fft.fft2(yhat, axes=(1, 2)))
    return np.sqrt(np.sum((my - myhat) ** 2, axis=(1, 2)))


def default_embedding(batch: np.ndarray) -> np.ndarray:
    """Naive summary embedding: per variable (mean, stddev, mean first
    difference), concatenated. batch is (n, M, H) -> (n, 3M)."""
    mean = batch.mean(axis=2)
    std = batch.std(axis=2)
    if batch.shape[2] > 1:
        dmean = np.diff(batch, axis=2).mean(axis=2)
    else:
        dmean = np.zeros_like(mean)
    return np.concatenate([mean, std, dmean], axis=1)


def embedding_signal_batch(
    y: np.ndarray, yhat: np.ndarray, embedder: Embedder | None = None
) -> np.ndarray:
    """L2 distance between embeddings of y and yhat. ``embedder`` maps one
    (M, H) matrix to a fixed-length vector; None selects the naive default."""
    y, yhat, _ = _as_batch(y, yhat)
    if embedder is None:
        ey = default_embedding(y)
        eyhat = default_embedding(yhat)
    else:
        ey = np.stack([np.asarray(embedder(rec), dtype=np.float64).ravel() for rec in y])
        eyhat = np.stack([np.asarray(embedder(rec), dtype=np.float64).ravel() for rec in yhat])
        if ey.shape != eyhat.shape:
            raise SignalError(
                f"embedder dimension mismatch: {ey.shape[1]} vs {eyhat.shape[1]}"
            )
    return np.linalg.norm(ey - eyhat, axis=1)


def _scalar(values: np.ndarray) -> float:
    return float(values.reshape(-1)[0])


def mse(y, yhat) -> float:
    return _scalar(mse_batch(*_check_pair(y, yhat)))


def mae(y, yhat) -> float:
    return _scalar(mae_batch(*_check_pair(y, yhat)))


def smape(y, yhat) -> float:
    return _scalar(smape_batch(*_check_pair(y, yhat)))


def rsmape(y, yhat) -> float:
    return _scalar(rsmape_batch(*_check_pair(y, yhat)))


def nd(y, yhat) -> float:
    return _scalar(nd_batch(*_check_pair(y, yhat)))


def trend_signal(y, yhat, degree: int = 1) -> float:
    return _scalar(trend_signal_batch(y, yhat, degree))


def seasonality_signal(y, yhat) -> float:
    return _scalar(seasonality_signal_batch(y, yhat))


def embedding_signal(y, yhat, embedder: Embedder | None = None) -> float:
    return _scalar(embedding_signal_batch(y, yhat, embedder))


def compute_signal_matrix(
    y: np.ndarray,
    yhat: np.ndarray,
    signal_set: Sequence[SignalId],
    *,
    trend_degree: int = 1,
    embedder: Embedder | None = None,
) -> np.ndarray:
    """All configured signals for a batch of (Y, Yhat) pairs.

    Returns an (n, |signals|) matrix with columns in canonical order,
    independent of the order given in ``signal_set``.
    """
    order = canonical_order(signal_set)
    if not order:
        raise SignalError("empty signal set")
    y, yhat, _ = _as_batch(y, yhat)
    columns = []
    for sid in order:
        if sid is SignalId.MSE:
            columns.append(mse_batch(y, yhat))
        elif sid is SignalId.MAE:
            columns.append(mae_batch(y, yhat))
        elif sid is SignalId.SMAPE:
            columns.append(smape_batch(y, yhat))
        elif sid is SignalId.RSMAPE:
            columns.append(rsmape_batch(y, yhat))
        elif sid is SignalId.ND:
            columns.append(nd_batch(y, yhat))
        elif sid is SignalId.TREND:
            columns.append(trend_signal_batch(y, yhat, trend_degree))
        elif sid is SignalId.SEASONALITY:
            columns.append(seasonality_signal_batch(y, yhat))
        elif sid is SignalId.EMBEDDING:
            columns.append(embedding_signal_batch(y, yhat, embedder))
        else:  # pragma: no cover - enum is closed
            raise SignalError(f"unknown signal {sid}")
    return np.stack(columns, axis=1)


def signal_vector(
    y: np.ndarray,
    yhat: np.ndarray,
    signal_set: Sequence[SignalId],
    *,
    trend_degree: int = 1,
    embedder: Embedder | None = None,
) -> np.ndarray:
    """Signal vector for a single (Y, Yhat) pair, in canonical order."""
    y, yhat = _check_pair(y, yhat)
    return compute_signal_matrix(
        y[None], yhat[None], signal_set, trend_degree=trend_degree, embedder=embedder
    )[0]


def orient_values(values: np.ndarray, signal_ids: Sequence[SignalId]) -> np.ndarray:
    """Flip error-like signals so larger oriented values read as more
    member-like. ``values`` has signals on its last axis."""
    signs = np.array([SIGNAL_ORIENTATION[s] for s in signal_ids])
    if values.shape[-1] != len(signs):
        raise SignalError("orientation: signal axis length mismatch")
    return values * signs
