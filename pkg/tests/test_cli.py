import hashlib
import json
import pathlib
import shutil

import numpy as np
import pytest

from tsmia import metrics, pipeline
from tsmia.cli import main
from tsmia.config import config_from_dict
from tsmia.data import generate_population, ingest_csv
from tsmia.rng import derive_seed

from conftest import tiny_config_dict

CONFIG_TEXT = """
schema_version = 1
data.synthetic.users = 12
data.synthetic.length = 300
window.lookback = 20
window.horizon = 5
split.train = 3
split.val = 2
split.test = 3
split.aux = 4
forecaster.kind = "ridge"
forecaster.ridge_lambda = 0.001
shadows.k = 4
game.record_samples_per_class = 40
game.user_records_per_user = 10
game.calibration_per_class = 30
attack = {"name": "lira", "mode": "online"}
attack = {"name": "rmia", "mode": "online", "signal": "mae", "population_size": 50}
seeds = [1]
"""


def bundle_fingerprint(root):
    root = pathlib.Path(root)
    entries = []
    for path in sorted(root.rglob("*")):
        if path.is_file() and "cache" not in path.parts:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            entries.append((path.relative_to(root).as_posix(), digest))
    return entries


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(CONFIG_TEXT)
    return path


class TestSynth:
    def test_writes_ingestable_population(self, tmp_path, config_file, capsys):
        out = tmp_path / "pop.csv"
        assert main(["synth", "--config", str(config_file), "--out", str(out)]) == 0
        series = ingest_csv(out)
        assert len(series) == 12
        assert all(s.length == 300 for s in series)

    def test_round_trip_matches_in_memory_population(self, tmp_path, config_file, capsys):
        out = tmp_path / "pop.csv"
        main(["synth", "--config", str(config_file), "--out", str(out)])
        cfg = config_from_dict(tiny_config_dict())
        expected = generate_population(cfg.data.synthetic)
        got = ingest_csv(out)
        for a, b in zip(expected, got):
            assert a.user_id == b.user_id
            np.testing.assert_array_equal(a.values, b.values)

    def test_seed_determinism(self, tmp_path, config_file, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["synth", "--config", str(config_file), "--out", str(a)])
        main(["synth", "--config", str(config_file), "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_small_population(self, tmp_path, capsys):
        cfg_path = tmp_path / "small.cfg"
        cfg_path.write_text(
            "schema_version = 1\ndata.synthetic.users = 4\n"
            "data.synthetic.length = 50\nsplit.train = 1\nsplit.val = 1\n"
            "split.test = 1\nsplit.aux = 1\n"
        )
        out = tmp_path / "small.csv"
        assert main(["synth", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert len(ingest_csv(out)) == 4


class TestRun:
    def test_run_and_report(self, tmp_path, config_file, capsys):
        out = tmp_path / "bundle"
        assert main(["run", "--config", str(config_file), "--out", str(out)]) == 0
        assert (out / "summary.json").exists()
        assert (out / "seed_1" / "report.json").exists()
        assert main(["report", str(out)]) == 0
        table = capsys.readouterr().out
        assert "lira-online:multi" in table

    def test_cache_deletion_reproduces_identical_reports(self, tmp_path, config_file, capsys):
        out = tmp_path / "bundle"
        main(["run", "--config", str(config_file), "--out", str(out)])
        first = bundle_fingerprint(out)
        shutil.rmtree(out / "cache")
        main(["run", "--config", str(config_file), "--out", str(out)])
        assert bundle_fingerprint(out) == first

    def test_seed_flag_appends(self, tmp_path, config_file, capsys):
        out = tmp_path / "bundle"
        main(["run", "--config", str(config_file), "--out", str(out), "--seed", "7"])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [1, 7]
        assert (out / "seed_7" / "report.json").exists()

    def test_unknown_attack_fails_before_any_work(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text(CONFIG_TEXT + 'attack = {"name": "gradient"}\n')
        out = tmp_path / "bundle"
        assert main(["run", "--config", str(bad), "--out", str(out)]) == 2
        assert not out.exists()
        assert "unknown attack" in capsys.readouterr().err


class TestReport:
    def test_missing_bundle_errors(self, tmp_path, capsys):
        empty = tmp_path / "nothing"
        empty.mkdir()
        assert main(["report", str(empty)]) == 2

    def test_single_seed_std_zero(self, tmp_path, config_file, capsys):
        out = tmp_path / "bundle"
        main(["run", "--config", str(config_file), "--out", str(out)])
        summary = json.loads((out / "summary.json").read_text())
        for per_metric in summary["attacks"].values():
            for cell in per_metric.values():
                assert cell["std"] == 0.0 and cell["n"] == 1

    def test_table_matches_recomputation_from_stored_scores(
        self, tmp_path, config_file, capsys
    ):
        out = tmp_path / "bundle"
        main(["run", "--config", str(config_file), "--out", str(out)])
        _, reports, summary = pipeline.load_bundle(out)
        report = reports[0]
        for key, entry in report["attacks"].items():
            roc = metrics.roc_curve(
                np.array(entry["record"]["scores"]),
                np.array(entry["record"]["labels"], dtype=bool),
            )
            assert entry["metrics"]["record_auc"] == pytest.approx(
                metrics.auc(roc), abs=1e-12
            )
            assert summary["attacks"][key]["record_auc"]["mean"] == pytest.approx(
                entry["metrics"]["record_auc"], abs=1e-12
            )
            uroc = metrics.roc_curve(
                np.array(entry["user"]["scores"]),
                np.array(entry["user"]["labels"], dtype=bool),
            )
            assert entry["metrics"]["user_tpr_at_fpr_0"] == pytest.approx(
                metrics.tpr_at_fpr(uroc, 0.0), abs=1e-12
            )

    def test_csv_export(self, tmp_path, config_file, capsys):
        out = tmp_path / "bundle"
        main(["run", "--config", str(config_file), "--out", str(out)])
        csv_path = tmp_path / "summary.csv"
        assert main(["report", str(out), "--csv", str(csv_path)]) == 0
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "attack,metric,mean,std,n"
        assert len(lines) > 1


class TestSeedDerivation:
    def test_tagged_derivation_is_stable_and_distinct(self):
        a = derive_seed(1, "target-train")
        assert a == derive_seed(1, "target-train")
        assert a != derive_seed(1, "shadows")
        assert a != derive_seed(2, "target-train")
        assert derive_seed(1, "shadow-train", 0) != derive_seed(1, "shadow-train", 1)
