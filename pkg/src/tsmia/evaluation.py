"""Privacy-game harnesses and report assembly.

The record game audits a balanced batch of member records (train users)
and non-member records (test users); the user game audits users as
units, aggregating their record scores in the log domain. Audit sets
are sampled once per run and shared by every attack, so metric
differences reflect attacks rather than sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .attacks import aggregate_user_scores
from .rng import rng_for
from .series import RecordSet

RECORD_FPR_TARGETS = (1e-3, 1e-4)


class GameError(ValueError):
    pass


@dataclass(frozen=True)
class GameConfig:
    record_samples_per_class: int = 500
    user_records_per_user: int = 64  # 0 = every record of each audited user
    calibration_per_class: int = 256  # labeled pool for the ensemble baseline

    def __post_init__(self):
        if self.record_samples_per_class < 1:
            raise GameError("record_samples_per_class must be >= 1")
        if self.user_records_per_user < 0 or self.calibration_per_class < 0:
            raise GameError("negative game sizes")


@dataclass(frozen=True)
class AttackScoreSet:
    """Scores plus ground-truth membership labels for one attack at one
    granularity ('record' or 'user')."""

    attack_id: str
    level: str
    scores: np.ndarray
    labels: np.ndarray
    log_domain: bool
    units: np.ndarray | None = None  # user ids for the user level

    def __post_init__(self):
        if self.scores.shape != self.labels.shape:
            raise GameError("score set: scores/labels mismatch")
        if not np.all(np.isfinite(self.scores)):
            raise GameError("score set: non-finite scores")


@dataclass(frozen=True)
class RecordAudit:
    records: RecordSet
    labels: np.ndarray  # bool, member = train user


@dataclass(frozen=True)
class UserAudit:
    records: RecordSet  # concatenated per-user record samples
    users: tuple[str, ...]
    user_labels: np.ndarray  # bool per user


def _sample_rows(rs: RecordSet, n: int, rng: np.random.Generator) -> tuple[RecordSet, np.ndarray]:
    if n > len(rs):
        raise GameError(f"need {n} records but pool has {len(rs)}")
    idx = np.sort(rng.choice(len(rs), size=n, replace=False))
    return rs.subset(idx), idx


def sample_record_audit(
    member_pool: RecordSet, nonmember_pool: RecordSet, n_per_class: int, seed: int
) -> tuple[RecordAudit, np.ndarray, np.ndarray]:
    """Balanced audit batch; also returns the sampled row indices so a
    disjoint calibration set can be drawn from the remainder."""
    members, m_idx = _sample_rows(member_pool, n_per_class, rng_for(seed, "audit-record-members"))
    nonmembers, n_idx = _sample_rows(
        nonmember_pool, n_per_class, rng_for(seed, "audit-record-nonmembers")
    )
    records = RecordSet.concat([members, nonmembers])
    labels = np.concatenate([np.ones(n_per_class, bool), np.zeros(n_per_class, bool)])
    return RecordAudit(records, labels), m_idx, n_idx


def sample_calibration(
    member_pool: RecordSet,
    nonmember_pool: RecordSet,
    exclude_members: np.ndarray,
    exclude_nonmembers: np.ndarray,
    n_per_class: int,
    seed: int,
) -> RecordAudit:
    """Labeled records for attacks that assume known members/non-members,
    disjoint from the audit batch."""
    rng = rng_for(seed, "audit-calibration")
    picks = []
    for pool, exclude in ((member_pool, exclude_members), (nonmember_pool, exclude_nonmembers)):
        remaining = np.setdiff1d(np.arange(len(pool)), exclude)
        if len(remaining) < n_per_class:
            raise GameError(
                f"calibration needs {n_per_class} records per class, "
                f"only {len(remaining)} left outside the audit set"
            )
        sel = np.sort(rng.choice(remaining, size=n_per_class, replace=False))
        picks.append(pool.subset(sel))
    records = RecordSet.concat(picks)
    labels = np.concatenate([np.ones(n_per_class, bool), np.zeros(n_per_class, bool)])
    return RecordAudit(records, labels)


def sample_user_audit(
    member_pool: RecordSet, nonmember_pool: RecordSet, records_per_user: int, seed: int
) -> UserAudit:
    """One unit per train user (member) and per test user (non-member),
    each represented by a per-user record sample."""
    parts, users, labels = [], [], []
    for pool, is_member in ((member_pool, True), (nonmember_pool, False)):
        for user in sorted(set(pool.user_ids.tolist())):
            rows = np.flatnonzero(pool.user_ids == user)
            if records_per_user and len(rows) > records_per_user:
                rng = rng_for(seed, f"audit-user-{int(is_member)}", len(users))
                rows = np.sort(rng.choice(rows, size=records_per_user, replace=False))
            if len(rows) == 0:
                raise GameError(f"user {user!r} has no records")
            parts.append(pool.subset(rows))
            users.append(user)
            labels.append(is_member)
    return UserAudit(RecordSet.concat(parts), tuple(users), np.array(labels, dtype=bool))


def user_scores_from_records(
    audit: UserAudit, record_scores: np.ndarray, log_domain: bool
) -> np.ndarray:
    """Aggregate per-record scores to one score per audited user, in the
    order of ``audit.users``."""
    users, sums = aggregate_user_scores(
        audit.records.user_ids, record_scores, log_domain=log_domain
    )
    lookup = dict(zip(users.tolist(), sums))
    missing = [u for u in audit.users if u not in lookup]
    if missing:
        raise GameError(f"no record scores for users {missing[:3]}")
    return np.array([lookup[u] for u in audit.users])


def score_set_metrics(score_set: AttackScoreSet) -> dict:
    """ROC-derived metrics for one score set: record level reports
    TPR@0.1%/0.01% FPR and AUC, user level reports TPR@0% FPR and AUC."""
    roc = metrics.roc_curve(score_set.scores, score_set.labels)
    out: dict[str, float] = {}
    if score_set.level == "record":
        for target in RECORD_FPR_TARGETS:
            out[f"record_tpr_at_fpr_{target:g}"] = metrics.tpr_at_fpr(roc, target)
        out["record_auc"] = metrics.auc(roc)
    else:
        out["user_tpr_at_fpr_0"] = metrics.tpr_at_fpr(roc, 0.0)
        out["user_auc"] = metrics.auc(roc)
    return out


def roc_points(score_set: AttackScoreSet) -> list[tuple[float, float, float]]:
    roc = metrics.roc_curve(score_set.scores, score_set.labels)
    return list(zip(roc.thresholds.tolist(), roc.fpr.tolist(), roc.tpr.tolist()))


def build_attack_entry(record_set: AttackScoreSet, user_set: AttackScoreSet) -> dict:
    """Report fragment for one attack: scores, labels and derived metrics
    at both granularities (everything needed to recompute the metrics)."""
    entry = {
        "record": {
            "scores": record_set.scores.tolist(),
            "labels": record_set.labels.astype(int).tolist(),
            "log_domain": record_set.log_domain,
        },
        "user": {
            "scores": user_set.scores.tolist(),
            "labels": user_set.labels.astype(int).tolist(),
            "users": list(user_set.units) if user_set.units is not None else None,
            "log_domain": user_set.log_domain,
        },
        "metrics": {},
    }
    entry["metrics"].update(score_set_metrics(record_set))
    entry["metrics"].update(score_set_metrics(user_set))
    return entry


def aggregate_runs(reports: list[dict]) -> dict:
    """Mean and sample std (n-1 denominator; 0 with a flag when n=1) of
    every attack metric across per-seed reports with matching configs."""
    if not reports:
        raise GameError("aggregate: no reports")
    digests = {r["config_digest"] for r in reports}
    if len(digests) != 1:
        raise GameError(f"aggregate: mixed config digests {sorted(digests)}")
    attack_keys = list(reports[0]["attacks"])
    for r in reports[1:]:
        if list(r["attacks"]) != attack_keys:
            raise GameError("aggregate: attack sets differ between reports")
    summary: dict = {
        "schema": 1,
        "config_digest": reports[0]["config_digest"],
        "seeds": [r["seed"] for r in reports],
        "n_runs": len(reports),
        "attacks": {},
    }
    for key in attack_keys:
        per_metric: dict = {}
        metric_names = reports[0]["attacks"][key]["metrics"].keys()
        for name in metric_names:
            values = np.array([r["attacks"][key]["metrics"][name] for r in reports])
            per_metric[name] = {
                "mean": float(values.mean()),
                "std": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
                "n": len(values),
                "single_run": len(values) == 1,
            }
        summary["attacks"][key] = per_metric
    return summary
