"""Statistics-based membership attacks over the shadow signal tensor.

* Gaussian likelihood-ratio attack (LiRA), single- or multi-signal,
  with a diagonal covariance: online mode scores the ratio of in- and
  out-model signal densities, offline mode the product of per-signal
  out-model tail probabilities.
* RMIA: dominance fraction of calibrated probability ratios against a
  population sample, with threshold gamma and an offline interpolation
  controlled by alpha.
* A simplified ensemble-of-stumps baseline with a logistic combiner.
* Log-domain product aggregation of record scores to user scores.

Products here are always computed in log space; ROC/AUC and TPR@FPR
depend only on the score ordering, so log-domain outputs are exact for
evaluation. Error-like signals are orientation-flipped (negated) before
any Gaussian machinery so that larger score means more member-like.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from . import metrics
from .rng import rng_for
from .signals import SignalId, orient_values

SIGMA_FLOOR = 1e-6
SCORE_FLOOR = 1e-300  # clamp for log-domain aggregation of probability-like scores


class AttackError(ValueError):
    """Invalid attack inputs or configuration."""


class EmptyGroupError(AttackError):
    """A record has no in-models or no out-models in online mode."""


@dataclass(frozen=True)
class GaussianSignalModel:
    """Per-record, per-signal Gaussian fits of oriented shadow signals.

    ``mu_in``/``sigma_in`` are None for offline fits. All arrays are
    (n_records, n_signals); standard deviations are population-convention
    (divide by n) and floored at ``sigma_floor``.
    """

    mu_out: np.ndarray
    sigma_out: np.ndarray
    mu_in: np.ndarray | None
    sigma_in: np.ndarray | None
    variance_mode: str
    sigma_floor: float
    signal_ids: tuple[SignalId, ...]

    @property
    def online(self) -> bool:
        return self.mu_in is not None


def _group_stats(values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Masked per-record mean/variance over the model axis.

    values: (n, K, S); mask: (n, K). Returns (mean, var, counts)."""
    counts = mask.sum(axis=1)
    m = mask[:, :, None]
    total = np.where(m, values, 0.0).sum(axis=1)
    mean = total / counts[:, None]
    sq = np.where(m, (values - mean[:, None, :]) ** 2, 0.0).sum(axis=1)
    var = sq / counts[:, None]
    return mean, var, counts


def fit_gaussian_model(
    shadow_values: np.ndarray,
    membership: np.ndarray,
    signal_ids: Sequence[SignalId],
    mode: str,
    variance_mode: str = "per-example",
    sigma_floor: float = SIGMA_FLOOR,
) -> GaussianSignalModel:
    """Fit per-record in/out Gaussians from oriented shadow signals.

    ``shadow_values`` is the (n, K, S) shadow slice of a signal tensor,
    already orientation-flipped. In offline mode only the out-model side
    is fitted (every shadow is an out-model). ``variance_mode`` selects
    the per-example variance or a single pooled variance per signal.
    """
    if mode not in ("online", "offline"):
        raise AttackError(f"unknown attack mode {mode!r}")
    if variance_mode not in ("per-example", "global"):
        raise AttackError(f"unknown variance mode {variance_mode!r}")
    if shadow_values.ndim != 3 or membership.shape != shadow_values.shape[:2]:
        raise AttackError("gaussian fit: tensor/membership shape mismatch")
    ids = tuple(signal_ids)
    if shadow_values.shape[2] != len(ids):
        raise AttackError("gaussian fit: signal axis mismatch")

    if mode == "offline":
        if membership.any():
            raise AttackError("offline fit requires an all-out membership matrix")
        out_mask = np.ones(membership.shape, dtype=bool)
        mu_out, var_out, _ = _group_stats(shadow_values, out_mask)
        mu_in = sigma_in = None
    else:
        in_counts = membership.sum(axis=1)
        if np.any(in_counts == 0) or np.any(in_counts == membership.shape[1]):
            bad = int(np.flatnonzero((in_counts == 0) | (in_counts == membership.shape[1]))[0])
            raise EmptyGroupError(f"record {bad} lacks in- or out-models")
        mu_in, var_in, _ = _group_stats(shadow_values, membership)
        mu_out, var_out, _ = _group_stats(shadow_values, ~membership)

    def finalize(var: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
        if variance_mode == "global":
            if mask is None:
                mask = np.ones(shadow_values.shape[:2], dtype=bool)
            pooled = var * mask.sum(axis=1)[:, None]  # back to sum of squares
            sigma2 = pooled.sum(axis=0) / mask.sum()
            var = np.broadcast_to(sigma2, var.shape).copy()
        return np.maximum(np.sqrt(var), sigma_floor)

    sigma_out = finalize(var_out, None if mode == "offline" else ~membership)
    if mode == "online":
        sigma_in = finalize(var_in, membership)
    return GaussianSignalModel(
        mu_out=mu_out,
        sigma_out=sigma_out,
        mu_in=mu_in,
        sigma_in=sigma_in,
        variance_mode=variance_mode,
        sigma_floor=sigma_floor,
        signal_ids=ids,
    )


def lira_online_log_scores(model: GaussianSignalModel, target_values: np.ndarray) -> np.ndarray:
    """Per-record log likelihood ratio of oriented target signals:
    sum over signals of log N(s; in) - log N(s; out)."""
    if not model.online:
        raise AttackError("online scoring needs an in-model fit")
    if target_values.shape != model.mu_out.shape:
        raise AttackError("lira: target signal shape mismatch")
    z_in = (target_values - model.mu_in) / model.sigma_in
    z_out = (target_values - model.mu_out) / model.sigma_out
    per_signal = np.log(model.sigma_out) - np.log(model.sigma_in) + 0.5 * (z_out**2 - z_in**2)
    return per_signal.sum(axis=1)


def lira_offline_log_scores(model: GaussianSignalModel, target_values: np.ndarray) -> np.ndarray:
    """Per-record log of the product over signals of Pr(Z <= s) under the
    out-model Gaussian (elementwise tail probability, diagonal covariance)."""
    if target_values.shape != model.mu_out.shape:
        raise AttackError("lira: target signal shape mismatch")
    z = (target_values - model.mu_out) / model.sigma_out
    return norm.logcdf(z).sum(axis=1)


def lira_attack(
    tensor_values: np.ndarray,
    membership: np.ndarray,
    signal_ids: Sequence[SignalId],
    mode: str,
    variance_mode: str = "per-example",
    sigma_floor: float = SIGMA_FLOOR,
) -> np.ndarray:
    """Full LiRA pass over a signal tensor slice: orient, fit, score.

    ``tensor_values`` is (n, K+1, S) with the target model last. Returns
    log-domain scores, one per record.
    """
    ids = tuple(signal_ids)
    oriented = orient_values(tensor_values, ids)
    model = fit_gaussian_model(
        oriented[:, :-1, :], membership, ids, mode,
        variance_mode=variance_mode, sigma_floor=sigma_floor,
    )
    target = oriented[:, -1, :]
    if mode == "online":
        return lira_online_log_scores(model, target)
    return lira_offline_log_scores(model, target)


@dataclass(frozen=True)
class RmiaConfig:
    gamma: float = 1.0
    alpha: float = 1.0 / 3.0
    mode: str = "online"
    population_size: int = 256

    def __post_init__(self):
        if self.gamma <= 0:
            raise AttackError("rmia: gamma must be > 0")
        if not 0 <= self.alpha <= 1:
            raise AttackError("rmia: alpha must be in [0, 1]")
        if self.mode not in ("online", "offline"):
            raise AttackError(f"rmia: unknown mode {self.mode!r}")
        if self.population_size < 1:
            raise AttackError("rmia: population_size must be >= 1")


def _rmia_probability(signal_values: np.ndarray) -> np.ndarray:
    """Monotonically decreasing map g(s) = 1/(1+s) from a bounded-below
    error signal to a probability-like score."""
    if np.any(signal_values <= -1.0):
        raise AttackError("rmia: signal must be bounded below by -1")
    return 1.0 / (1.0 + signal_values)


def _rmia_marginal(shadow_probs: np.ndarray, membership: np.ndarray, cfg: RmiaConfig) -> np.ndarray:
    """Mean shadow probability per record: over all shadows online, or the
    alpha-interpolated out-model mean offline."""
    if cfg.mode == "online":
        return shadow_probs.mean(axis=1)
    out_mask = ~membership
    counts = out_mask.sum(axis=1)
    if np.any(counts == 0):
        raise EmptyGroupError("rmia: a record has no out-models")
    p_out = np.where(out_mask, shadow_probs, 0.0).sum(axis=1) / counts
    return 0.5 * ((1.0 + cfg.alpha) * p_out + (1.0 - cfg.alpha))


def rmia_scores(
    audit_values: np.ndarray,
    audit_membership: np.ndarray,
    population_values: np.ndarray,
    population_membership: np.ndarray,
    cfg: RmiaConfig,
    signal: SignalId,
) -> np.ndarray:
    """RMIA score per audit record: the fraction of population records z
    whose calibrated ratio the audit record dominates at threshold gamma
    (ties count, ">=").

    ``audit_values`` and ``population_values`` are raw single-signal
    slices shaped (n, K+1) with the target model last.
    """
    if signal is SignalId.RSMAPE:
        raise AttackError("rmia: rsmape is unbounded and not usable")
    if audit_values.ndim != 2 or population_values.ndim != 2:
        raise AttackError("rmia: expected (n, K+1) signal slices")
    if population_values.shape[0] < 1:
        raise AttackError("rmia: empty population sample")
    p_target_x = _rmia_probability(audit_values[:, -1])
    p_target_z = _rmia_probability(population_values[:, -1])
    shadow_x = _rmia_probability(audit_values[:, :-1])
    shadow_z = _rmia_probability(population_values[:, :-1])
    ratio_x = p_target_x / _rmia_marginal(shadow_x, audit_membership, cfg)
    ratio_z = p_target_z / _rmia_marginal(shadow_z, population_membership, cfg)
    dominated = ratio_x[:, None] >= cfg.gamma * ratio_z[None, :]
    return dominated.mean(axis=1)


@dataclass(frozen=True)
class EnsembleConfig:
    executions: int = 5
    repetitions: int = 3
    subset_size: int = 50
    combinations: int = 9

    def __post_init__(self):
        for name in ("executions", "repetitions", "subset_size", "combinations"):
            if getattr(self, name) < 1:
                raise AttackError(f"ensemble: {name} must be >= 1")
        if self.subset_size < 4:
            raise AttackError("ensemble: subset_size must be >= 4")


def _fit_stumps(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-signal threshold stump minimizing training error. Returns
    (thresholds, directions); direction +1 votes member when value >=
    threshold, -1 when value < threshold."""
    n, s = x.shape
    thresholds = np.empty(s)
    directions = np.empty(s)
    for j in range(s):
        order = np.argsort(x[:, j], kind="stable")
        xs, ys = x[order, j], y[order]
        cuts = np.concatenate([[-np.inf], (xs[1:] + xs[:-1]) / 2.0, [np.inf]])
        # cuts between tied values do not separate them; rule those out
        valid = np.ones(n + 1, dtype=bool)
        valid[1:n] = xs[1:] > xs[:-1]
        below = np.concatenate([[0], np.cumsum(ys)])  # members strictly below each cut
        neg_below = np.arange(n + 1) - below
        # direction +1 predicts member iff x >= cut: errors are the members
        # below plus the non-members at or above; direction -1 is the complement
        err_plus = np.where(valid, below + (neg_below[-1] - neg_below), np.inf)
        err_minus = np.where(valid, n - (below + (neg_below[-1] - neg_below)), np.inf)
        best_plus = int(np.argmin(err_plus))
        best_minus = int(np.argmin(err_minus))
        if err_plus[best_plus] <= err_minus[best_minus]:
            thresholds[j], directions[j] = cuts[best_plus], 1.0
        else:
            thresholds[j], directions[j] = cuts[best_minus], -1.0
    return thresholds, directions


def _stump_votes(x: np.ndarray, thresholds: np.ndarray, directions: np.ndarray) -> np.ndarray:
    ge = x >= thresholds[None, :]
    return np.where(directions[None, :] > 0, ge, ~ge).astype(np.float64)


def _fit_logistic(x: np.ndarray, y: np.ndarray, iters: int = 300, lr: float = 1.0) -> np.ndarray:
    """Plain gradient-descent logistic regression (deterministic, zero
    init); returns weights with the intercept last."""
    a = np.hstack([x, np.ones((len(x), 1))])
    w = np.zeros(a.shape[1])
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-np.clip(a @ w, -500, 500)))
        w -= lr * a.T @ (p - y) / len(y)
    return w


def _logistic_prob(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    a = np.hstack([x, np.ones((len(x), 1))])
    return 1.0 / (1.0 + np.exp(-np.clip(a @ w, -500, 500)))


def ensemble_attack(
    member_values: np.ndarray,
    nonmember_values: np.ndarray,
    audit_values: np.ndarray,
    cfg: EnsembleConfig,
    seed: int,
) -> np.ndarray:
    """Simplified ensemble baseline over target-model signal vectors.

    Labeled member/non-member signal vectors are partitioned into
    ``combinations`` disjoint balanced subsets per execution. Each subset
    trains ``repetitions`` stump+logistic candidates on random halves,
    keeps the one with the best held-out ROC-AUC, and the audit score is
    the mean member-vote fraction over all kept classifiers. Report this
    attack as "Ensemble (simplified)": the base-classifier family is a
    fixed choice, not part of the original recipe.
    """
    member_values = np.atleast_2d(member_values)
    nonmember_values = np.atleast_2d(nonmember_values)
    audit_values = np.atleast_2d(audit_values)
    half = cfg.subset_size // 2
    need = cfg.combinations * half
    if len(member_values) < need or len(nonmember_values) < need:
        raise AttackError(
            f"ensemble: need {need} labeled records per class, have "
            f"{len(member_values)}/{len(nonmember_values)}"
        )
    votes = np.zeros(len(audit_values))
    n_classifiers = 0
    for e in range(cfg.executions):
        rng = rng_for(seed, "ensemble-exec", e)
        mem_order = rng.permutation(len(member_values))[:need].reshape(cfg.combinations, half)
        non_order = rng.permutation(len(nonmember_values))[:need].reshape(cfg.combinations, half)
        for c in range(cfg.combinations):
            x = np.vstack([member_values[mem_order[c]], nonmember_values[non_order[c]]])
            y = np.concatenate([np.ones(half), np.zeros(half)])
            best_auc, best_clf = -np.inf, None
            for r in range(cfg.repetitions):
                split_rng = rng_for(seed, "ensemble-split", e * 10_000 + c * 100 + r)
                tr_m = split_rng.permutation(half)
                tr_n = split_rng.permutation(half)
                train_idx = np.concatenate([tr_m[: half // 2], half + tr_n[: half // 2]])
                hold_idx = np.concatenate([tr_m[half // 2 :], half + tr_n[half // 2 :]])
                thresholds, directions = _fit_stumps(x[train_idx], y[train_idx])
                feats_train = _stump_votes(x[train_idx], thresholds, directions)
                w = _fit_logistic(feats_train, y[train_idx])
                feats_hold = _stump_votes(x[hold_idx], thresholds, directions)
                probs_hold = _logistic_prob(feats_hold, w)
                try:
                    candidate_auc = metrics.auc(metrics.roc_curve(probs_hold, y[hold_idx]))
                except metrics.SingleClassError:
                    candidate_auc = 0.5
                if candidate_auc > best_auc:
                    best_auc = candidate_auc
                    best_clf = (thresholds, directions, w)
            thresholds, directions, w = best_clf
            audit_probs = _logistic_prob(_stump_votes(audit_values, thresholds, directions), w)
            votes += (audit_probs >= 0.5).astype(np.float64)
            n_classifiers += 1
    return votes / n_classifiers


def aggregate_user_scores(
    user_ids: np.ndarray,
    record_scores: np.ndarray,
    log_domain: bool = False,
    floor: float = SCORE_FLOOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Log-domain product aggregation of record scores per user.

    Probability-like scores are clamped at ``floor`` before the log;
    scores already in log domain are summed as-is. Returns (sorted unique
    user ids, per-user summed log scores). Ranking-equivalent to the
    plain product and safe against underflow.
    """
    user_ids = np.asarray(user_ids)
    record_scores = np.asarray(record_scores, dtype=np.float64)
    if user_ids.shape != record_scores.shape or user_ids.ndim != 1:
        raise AttackError("aggregate: user ids and scores must be matching 1-d arrays")
    if len(user_ids) == 0:
        raise AttackError("aggregate: no records")
    logs = record_scores if log_domain else np.log(np.maximum(record_scores, floor))
    users, inverse = np.unique(user_ids, return_inverse=True)
    sums = np.zeros(len(users))
    np.add.at(sums, inverse, logs)
    return users, sums
