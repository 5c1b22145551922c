import math

import numpy as np
import pytest

from tsmia.evaluation import (
    AttackScoreSet,
    GameConfig,
    GameError,
    aggregate_runs,
    sample_calibration,
    sample_record_audit,
    sample_user_audit,
    score_set_metrics,
    user_scores_from_records,
)
from tsmia.series import RecordSet, UserSeries, window_series_batch


def pool_for(users, length=40, lookback=5, horizon=2, offset=0.0):
    parts = []
    for i, user in enumerate(users):
        values = (np.arange(length, dtype=float) * 0.1 + i + offset).reshape(1, length)
        parts.append(window_series_batch(UserSeries(user, values), lookback, horizon))
    return RecordSet.concat(parts)


class TestRecordAudit:
    def test_balanced_batch(self):
        members = pool_for(["m1", "m2"])
        nonmembers = pool_for(["n1", "n2"])
        audit, m_idx, n_idx = sample_record_audit(members, nonmembers, 10, seed=0)
        assert len(audit.records) == 20
        assert audit.labels.sum() == 10
        assert set(audit.records.user_ids[audit.labels]) <= {"m1", "m2"}
        assert set(audit.records.user_ids[~audit.labels]) <= {"n1", "n2"}
        assert len(m_idx) == len(n_idx) == 10

    def test_seed_determinism(self):
        members = pool_for(["m1"])
        nonmembers = pool_for(["n1"])
        a, _, _ = sample_record_audit(members, nonmembers, 5, seed=3)
        b, _, _ = sample_record_audit(members, nonmembers, 5, seed=3)
        np.testing.assert_array_equal(a.records.origins, b.records.origins)

    def test_insufficient_pool(self):
        members = pool_for(["m1"], length=10)
        nonmembers = pool_for(["n1"], length=10)
        with pytest.raises(GameError):
            sample_record_audit(members, nonmembers, 1000, seed=0)


class TestCalibration:
    def test_disjoint_from_audit(self):
        members = pool_for(["m1", "m2"])
        nonmembers = pool_for(["n1", "n2"])
        audit, m_idx, n_idx = sample_record_audit(members, nonmembers, 20, seed=1)
        calibration = sample_calibration(members, nonmembers, m_idx, n_idx, 15, seed=1)
        audit_keys = {
            (u, o) for u, o in zip(audit.records.user_ids, audit.records.origins)
        }
        cal_keys = {
            (u, o)
            for u, o in zip(calibration.records.user_ids, calibration.records.origins)
        }
        assert audit_keys.isdisjoint(cal_keys)
        assert calibration.labels.sum() == 15

    def test_insufficient_remainder(self):
        members = pool_for(["m1"])
        nonmembers = pool_for(["n1"])
        _, m_idx, n_idx = sample_record_audit(members, nonmembers, 30, seed=0)
        with pytest.raises(GameError):
            sample_calibration(members, nonmembers, m_idx, n_idx, 10, seed=0)


class TestUserAudit:
    def test_every_user_exactly_once(self):
        members = pool_for(["m1", "m2", "m3"])
        nonmembers = pool_for(["n1", "n2"])
        audit = sample_user_audit(members, nonmembers, records_per_user=6, seed=2)
        assert audit.users == ("m1", "m2", "m3", "n1", "n2")
        np.testing.assert_array_equal(audit.user_labels, [True, True, True, False, False])
        for user in audit.users:
            assert np.sum(audit.records.user_ids == user) == 6

    def test_zero_takes_all_records(self):
        members = pool_for(["m1"], length=20)
        nonmembers = pool_for(["n1"], length=20)
        audit = sample_user_audit(members, nonmembers, records_per_user=0, seed=2)
        assert np.sum(audit.records.user_ids == "m1") == len(members)

    def test_user_aggregation_matches_product_rule(self):
        members = pool_for(["m1", "m2"])
        nonmembers = pool_for(["n1"])
        audit = sample_user_audit(members, nonmembers, records_per_user=4, seed=0)
        rng = np.random.default_rng(0)
        record_scores = rng.uniform(0.1, 1.0, size=len(audit.records))
        user_scores = user_scores_from_records(audit, record_scores, log_domain=False)
        for i, user in enumerate(audit.users):
            rows = audit.records.user_ids == user
            expected = float(np.sum(np.log(record_scores[rows])))
            assert user_scores[i] == pytest.approx(expected, abs=1e-12)

    def test_single_record_user_reduces_to_record_score(self):
        members = pool_for(["m1"], length=8, lookback=5, horizon=2)  # exactly 2 records
        nonmembers = pool_for(["n1"], length=8, lookback=5, horizon=2)
        audit = sample_user_audit(members, nonmembers, records_per_user=1, seed=0)
        scores = np.array([0.3, 0.8])
        got = user_scores_from_records(audit, scores, log_domain=False)
        np.testing.assert_allclose(got, np.log(scores), atol=1e-15)


class TestScoreSetMetrics:
    def test_record_level_names(self):
        score_set = AttackScoreSet(
            attack_id="x", level="record",
            scores=np.array([0.9, 0.1]), labels=np.array([True, False]),
            log_domain=False,
        )
        metrics = score_set_metrics(score_set)
        assert set(metrics) == {
            "record_tpr_at_fpr_0.001", "record_tpr_at_fpr_0.0001", "record_auc",
        }
        assert metrics["record_auc"] == 1.0

    def test_user_level_names(self):
        score_set = AttackScoreSet(
            attack_id="x", level="user",
            scores=np.array([0.9, 0.1]), labels=np.array([True, False]),
            log_domain=True,
        )
        metrics = score_set_metrics(score_set)
        assert set(metrics) == {"user_tpr_at_fpr_0", "user_auc"}
        assert metrics["user_tpr_at_fpr_0"] == 1.0


def fake_report(seed, value, digest="d1"):
    return {
        "schema": 1,
        "seed": seed,
        "config_digest": digest,
        "attacks": {
            "lira-online:multi": {
                "metrics": {"record_auc": value, "user_tpr_at_fpr_0": value / 2}
            }
        },
    }


class TestAggregateRuns:
    def test_identical_runs_zero_std(self):
        summary = aggregate_runs([fake_report(1, 0.8), fake_report(2, 0.8)])
        cell = summary["attacks"]["lira-online:multi"]["record_auc"]
        assert cell["mean"] == 0.8 and cell["std"] == 0.0 and cell["n"] == 2

    def test_two_run_hand_computed(self):
        summary = aggregate_runs([fake_report(1, 0.2), fake_report(2, 0.4)])
        cell = summary["attacks"]["lira-online:multi"]["record_auc"]
        assert cell["mean"] == pytest.approx(0.3, abs=1e-15)
        assert cell["std"] == pytest.approx(math.sqrt(0.02), abs=1e-12)  # n-1 denominator

    def test_single_run_flagged(self):
        summary = aggregate_runs([fake_report(1, 0.7)])
        cell = summary["attacks"]["lira-online:multi"]["record_auc"]
        assert cell["std"] == 0.0 and cell["single_run"] is True

    def test_config_mismatch_rejected(self):
        with pytest.raises(GameError):
            aggregate_runs([fake_report(1, 0.5), fake_report(2, 0.5, digest="other")])

    def test_empty_rejected(self):
        with pytest.raises(GameError):
            aggregate_runs([])


class TestGameConfigValidation:
    def test_bad_sizes(self):
        with pytest.raises(GameError):
            GameConfig(record_samples_per_class=0)
        with pytest.raises(GameError):
            GameConfig(user_records_per_user=-1)
