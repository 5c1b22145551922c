"""End-to-end experiment pipeline.

Stages: population -> user split -> scaling -> windowing -> target
training -> shadow ensembles -> signal tensors -> attacks -> games ->
per-seed reports -> aggregation. Heavy artifacts (models, predictions)
are cached under ``<out>/cache`` keyed by a digest of exactly the
config fragments they depend on, so attack re-runs skip retraining and
re-prediction. Two runs with the same config produce byte-identical
bundles.
"""

from __future__ import annotations

import dataclasses
import json
import pathlib
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import attacks as attacks_mod
from . import classifier_attack, evaluation, forecasters, shadows, signals
from .config import AttackSpec, ExperimentConfig, digest
from .data import generate_population, ingest_csv
from .evaluation import AttackScoreSet, RecordAudit, UserAudit
from .rng import derive_seed, rng_for
from .series import (
    PopulationSplit,
    RecordSet,
    apply_scaler,
    fit_scaler,
    split_users,
    window_series_batch,
)

REPORT_SCHEMA = 1
_POOLS = ("train", "val", "test", "aux")


class PipelineError(RuntimeError):
    pass


@contextmanager
def _stage(name: str):
    try:
        yield
    except Exception as err:
        raise PipelineError(f"stage {name!r} failed: {err}") from err


@dataclass
class SeedArtifacts:
    seed: int
    split: PopulationSplit
    records: dict[str, RecordSet]
    target: forecasters.TrainedForecaster
    ensembles: dict[str, shadows.ShadowEnsemble]


def _experiment_digest(cfg: ExperimentConfig) -> str:
    """Digest of everything except the seed list and output directory:
    reports from different seeds of the same experiment share it."""
    return digest(
        "experiment", cfg.data, cfg.window, cfg.split, cfg.scaler_unit_fallback,
        cfg.forecaster, cfg.shadows, cfg.signals, cfg.attacks, cfg.game,
    )


def _population_for_seed(cfg: ExperimentConfig, seed: int):
    if cfg.data.source == "csv":
        return ingest_csv(cfg.data.csv_path)
    synth = dataclasses.replace(
        cfg.data.synthetic,
        seed=derive_seed(seed, "population", cfg.data.synthetic.seed),
    )
    return generate_population(synth)


def build_artifacts(
    cfg: ExperimentConfig, seed: int, cache_dir: pathlib.Path, jobs: int = 1
) -> SeedArtifacts:
    cache_dir = pathlib.Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    with _stage("population"):
        population = _population_for_seed(cfg, seed)
        by_user = {s.user_id: s for s in population}
    with _stage("split"):
        split = split_users(sorted(by_user), cfg.split.sizes(), derive_seed(seed, "split"))
    with _stage("scale"):
        scaler = fit_scaler(
            [by_user[u] for u in split.train_users], cfg.scaler_unit_fallback
        )
        scaled = {u: apply_scaler(s, scaler) for u, s in by_user.items()}
    with _stage("window"):
        records = {}
        for pool, users in (
            ("train", split.train_users),
            ("val", split.val_users),
            ("test", split.test_users),
            ("aux", split.aux_users),
        ):
            parts = [
                window_series_batch(
                    scaled[u], cfg.window.lookback, cfg.window.horizon, cfg.window.stride
                )
                for u in users
            ]
            parts = [p for p in parts if len(p)]
            if not parts:
                raise PipelineError(
                    f"pool {pool!r} has no records; series shorter than lookback+horizon"
                )
            records[pool] = RecordSet.concat(parts)

    base = (cfg.data, cfg.window, cfg.split, cfg.scaler_unit_fallback, cfg.forecaster)
    with _stage("target-train"):
        target_key = digest("target", *base, seed)
        target_path = cache_dir / f"target-{target_key}.npz"
        if target_path.exists():
            target = forecasters.load_forecaster(target_path)
        else:
            target_cfg = dataclasses.replace(
                cfg.forecaster, seed=derive_seed(seed, "target-train")
            )
            target = forecasters.fit_forecaster(records["train"], records["val"], target_cfg)
            forecasters.save_forecaster(target, target_path)
    ensembles: dict[str, shadows.ShadowEnsemble] = {}
    for mode in cfg.needed_modes():
        with _stage(f"shadows-{mode}"):
            key = digest("shadows", mode, *base, cfg.shadows, seed)
            ens_dir = cache_dir / f"shadows-{key}"
            if (ens_dir / "manifest.json").exists():
                ensembles[mode] = shadows.load_ensemble(ens_dir)
            else:
                plan = shadows.plan_shadows(
                    split, mode, cfg.shadows.k, derive_seed(seed, "shadows"),
                    cfg.shadows.offline_fraction,
                )
                population_scaled = list(scaled.values())
                ensembles[mode] = shadows.train_shadow_ensemble(
                    plan, population_scaled, cfg.forecaster,
                    cfg.window.lookback, cfg.window.horizon, cfg.window.stride,
                    jobs=jobs,
                )
                shadows.save_ensemble(ensembles[mode], ens_dir)
    return SeedArtifacts(
        seed=seed, split=split, records=records, target=target, ensembles=ensembles
    )


def _cached_predictions(
    cache_dir: pathlib.Path,
    key: str,
    models,
    records: RecordSet,
    jobs: int,
) -> np.ndarray:
    path = cache_dir / f"preds-{key}.npz"
    if path.exists():
        with np.load(path) as archive:
            preds = archive["predictions"]
        if preds.shape[0] == len(records) and preds.shape[1] == len(models):
            return preds
    preds = shadows.predict_all_models(models, records, jobs=jobs)
    np.savez(path, predictions=preds)
    return preds


@dataclass
class ModeTensors:
    record: shadows.SignalTensor
    record_membership: np.ndarray
    user: shadows.SignalTensor
    user_membership: np.ndarray
    population: shadows.SignalTensor | None
    population_membership: np.ndarray | None


def _tensors_for_mode(
    cfg: ExperimentConfig,
    art: SeedArtifacts,
    mode: str,
    audit: RecordAudit,
    user_audit: UserAudit,
    population: RecordSet | None,
    cache_dir: pathlib.Path,
    jobs: int,
) -> ModeTensors:
    ensemble = art.ensembles[mode]
    models = list(ensemble.models) + [art.target]
    base = (cfg.data, cfg.window, cfg.split, cfg.scaler_unit_fallback,
            cfg.forecaster, cfg.shadows, cfg.game, art.seed)

    def tensor_for(records: RecordSet, tag: str) -> shadows.SignalTensor:
        key = digest("preds", mode, tag, *base)
        preds = _cached_predictions(cache_dir, key, models, records, jobs)
        return shadows.signal_tensor_from_predictions(
            records, preds, cfg.signals.set, trend_degree=cfg.signals.trend_degree
        )

    record_tensor = tensor_for(audit.records, "record-audit")
    user_tensor = tensor_for(user_audit.records, "user-audit")
    pop_tensor = tensor_for(population, "population") if population is not None else None
    return ModeTensors(
        record=record_tensor,
        record_membership=shadows.membership_matrix(audit.records.user_ids, ensemble.plan),
        user=user_tensor,
        user_membership=shadows.membership_matrix(user_audit.records.user_ids, ensemble.plan),
        population=pop_tensor,
        population_membership=(
            shadows.membership_matrix(population.user_ids, ensemble.plan)
            if population is not None
            else None
        ),
    )


def _signal_columns(tensor: shadows.SignalTensor, wanted) -> np.ndarray:
    order = signals.canonical_order(wanted)
    idx = []
    for sid in order:
        if sid not in tensor.signal_ids:
            raise PipelineError(f"signal {sid.value!r} missing from tensor")
        idx.append(tensor.signal_ids.index(sid))
    return np.array(idx, dtype=np.intp)


def _sample_population(aux: RecordSet, size: int, seed: int) -> RecordSet:
    if len(aux) == 0:
        raise PipelineError("rmia: auxiliary pool has no records")
    n = min(size, len(aux))
    idx = np.sort(rng_for(seed, "audit-population").choice(len(aux), size=n, replace=False))
    return aux.subset(idx)


def _lira_scores(spec: AttackSpec, cfg, tensors: ModeTensors, level: str) -> np.ndarray:
    # Audit records come from train/test users, so under an offline plan
    # (aux subsets) the membership matrix is genuinely all-false.
    tensor = tensors.record if level == "record" else tensors.user
    membership = tensors.record_membership if level == "record" else tensors.user_membership
    wanted = spec.signals if spec.signals is not None else cfg.signals.set
    cols = _signal_columns(tensor, wanted)
    ids = tuple(tensor.signal_ids[i] for i in cols)
    return attacks_mod.lira_attack(
        tensor.values[:, :, cols],
        membership,
        ids,
        spec.mode,
        variance_mode=spec.variance_mode,
    )


def _rmia_scores(spec: AttackSpec, tensors: ModeTensors, level: str) -> np.ndarray:
    tensor = tensors.record if level == "record" else tensors.user
    membership = tensors.record_membership if level == "record" else tensors.user_membership
    col = int(_signal_columns(tensor, (spec.signal,))[0])
    rmia_cfg = spec.rmia_config()
    n_pop = min(spec.population_size, len(tensors.population.values))
    return attacks_mod.rmia_scores(
        tensor.values[:, :, col],
        membership,
        tensors.population.values[:n_pop, :, col],
        tensors.population_membership[:n_pop],
        rmia_cfg,
        spec.signal,
    )


def run_seed(
    cfg: ExperimentConfig, seed: int, cache_dir: pathlib.Path, jobs: int = 1
) -> dict:
    """Execute one seeded run end to end and return the report dict."""
    art = build_artifacts(cfg, seed, cache_dir, jobs=jobs)
    game = cfg.game
    with _stage("audit-sampling"):
        audit, member_rows, nonmember_rows = evaluation.sample_record_audit(
            art.records["train"], art.records["test"],
            game.record_samples_per_class, derive_seed(seed, "audit"),
        )
        user_audit = evaluation.sample_user_audit(
            art.records["train"], art.records["test"],
            game.user_records_per_user, derive_seed(seed, "audit"),
        )
        needs_calibration = any(a.name == "ensemble" for a in cfg.attacks)
        calibration = None
        if needs_calibration:
            calibration = evaluation.sample_calibration(
                art.records["train"], art.records["test"],
                member_rows, nonmember_rows,
                game.calibration_per_class, derive_seed(seed, "audit"),
            )
        rmia_specs = [a for a in cfg.attacks if a.name == "rmia"]
        population = None
        if rmia_specs:
            max_pop = max(a.population_size for a in rmia_specs)
            population = _sample_population(
                art.records["aux"], max_pop, derive_seed(seed, "audit")
            )

    tensors: dict[str, ModeTensors] = {}
    for mode in cfg.needed_modes():
        with _stage(f"signal-tensor-{mode}"):
            tensors[mode] = _tensors_for_mode(
                cfg, art, mode, audit, user_audit, population, cache_dir, jobs
            )

    with _stage("target-signals"):
        target_audit_yhat = forecasters.predict_batch(art.target, audit.records.x)
        target_user_yhat = forecasters.predict_batch(art.target, user_audit.records.x)

    report_attacks: dict[str, dict] = {}
    for spec in cfg.attacks:
        with _stage(f"attack-{spec.key()}"):
            if spec.name == "lira":
                rec = _lira_scores(spec, cfg, tensors[spec.mode], "record")
                usr = _lira_scores(spec, cfg, tensors[spec.mode], "user")
                log_domain = True
            elif spec.name == "rmia":
                rec = _rmia_scores(spec, tensors[spec.mode], "record")
                usr = _rmia_scores(spec, tensors[spec.mode], "user")
                log_domain = False
            elif spec.name == "ensemble":
                cal_yhat = forecasters.predict_batch(art.target, calibration.records.x)
                cal_signals = signals.compute_signal_matrix(
                    calibration.records.y, cal_yhat, cfg.signals.set,
                    trend_degree=cfg.signals.trend_degree,
                )
                audit_signals = signals.compute_signal_matrix(
                    audit.records.y, target_audit_yhat, cfg.signals.set,
                    trend_degree=cfg.signals.trend_degree,
                )
                user_signals = signals.compute_signal_matrix(
                    user_audit.records.y, target_user_yhat, cfg.signals.set,
                    trend_degree=cfg.signals.trend_degree,
                )
                ens_cfg = spec.ensemble_config()
                ens_seed = derive_seed(seed, "ensemble-attack")
                rec = attacks_mod.ensemble_attack(
                    cal_signals[calibration.labels], cal_signals[~calibration.labels],
                    audit_signals, ens_cfg, ens_seed,
                )
                usr = attacks_mod.ensemble_attack(
                    cal_signals[calibration.labels], cal_signals[~calibration.labels],
                    user_signals, ens_cfg, ens_seed,
                )
                log_domain = False
            else:  # classifier
                source = (
                    RecordSet.concat([art.records["train"], art.records["test"]])
                    if spec.mode == "online"
                    else art.records["aux"]
                )
                examples = classifier_attack.build_membership_examples(
                    art.ensembles[spec.mode], source, spec.fraction,
                    derive_seed(seed, "classifier-data"),
                )
                clf = classifier_attack.train_membership_classifier(
                    examples, hidden=spec.hidden,
                    seed=derive_seed(seed, "classifier-train"),
                    max_epochs=spec.max_epochs, patience=spec.patience,
                )
                rec = classifier_attack.membership_probability(
                    clf, audit.records.y, target_audit_yhat
                )
                usr = classifier_attack.membership_probability(
                    clf, user_audit.records.y, target_user_yhat
                )
                log_domain = False

            record_set = AttackScoreSet(
                attack_id=spec.key(), level="record", scores=np.asarray(rec, dtype=np.float64),
                labels=audit.labels, log_domain=log_domain,
            )
            user_level = evaluation.user_scores_from_records(user_audit, usr, log_domain)
            user_set = AttackScoreSet(
                attack_id=spec.key(), level="user", scores=user_level,
                labels=user_audit.user_labels, log_domain=True,
                units=np.array(user_audit.users),
            )
            entry = evaluation.build_attack_entry(record_set, user_set)
            entry["attack"] = spec.name
            entry["mode"] = spec.mode if spec.name != "ensemble" else None
            entry["label"] = spec.display_label()
            report_attacks[spec.key()] = entry

    with _stage("target-metrics"):
        target_metrics = {
            pool: dataclasses.asdict(forecasters.evaluate(art.target, art.records[pool]))
            for pool in ("train", "val", "test")
        }

    return {
        "schema": REPORT_SCHEMA,
        "seed": seed,
        "config_digest": _experiment_digest(cfg),
        "target_metrics": target_metrics,
        "attacks": dict(sorted(report_attacks.items())),
    }


def _write_json(path: pathlib.Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _safe_name(key: str) -> str:
    return key.replace(":", "_").replace("/", "_")


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> pathlib.Path:
    """Run every configured seed and write the report bundle.

    Layout: ``manifest.json``, one ``seed_<n>/report.json`` (plus ROC CSV
    exports) per seed, and ``summary.json`` with mean +- std per metric.
    """
    out = pathlib.Path(out_dir if out_dir is not None else cfg.out_dir)
    cache_dir = out / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for seed in cfg.seeds:
        report = run_seed(cfg, seed, cache_dir, jobs=jobs)
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        _write_json(seed_dir / "report.json", report)
        for key, entry in report["attacks"].items():
            for level in ("record", "user"):
                score_set = AttackScoreSet(
                    attack_id=key,
                    level=level,
                    scores=np.array(entry[level]["scores"]),
                    labels=np.array(entry[level]["labels"], dtype=bool),
                    log_domain=entry[level]["log_domain"],
                )
                points = evaluation.roc_points(score_set)
                csv_path = seed_dir / f"roc_{_safe_name(key)}_{level}.csv"
                with open(csv_path, "w") as fh:
                    fh.write("threshold,fpr,tpr\n")
                    for thr, fpr, tpr in points:
                        fh.write(f"{thr!r},{fpr!r},{tpr!r}\n")
        reports.append(report)
    summary = evaluation.aggregate_runs(reports)
    _write_json(out / "summary.json", summary)
    _write_json(
        out / "manifest.json",
        {
            "schema": REPORT_SCHEMA,
            "config_digest": _experiment_digest(cfg),
            "seeds": list(cfg.seeds),
            "attacks": sorted(reports[0]["attacks"]),
        },
    )
    return out


_TABLE_METRICS = (
    ("record_tpr_at_fpr_0.001", "TPR@0.1%"),
    ("record_tpr_at_fpr_0.0001", "TPR@0.01%"),
    ("record_auc", "AUC"),
    ("user_tpr_at_fpr_0", "uTPR@0%"),
    ("user_auc", "uAUC"),
)


def format_summary_table(summary: dict, labels: dict[str, str] | None = None) -> str:
    """Human-readable attacks x metrics table (mean +- std)."""
    labels = labels or {}
    header = ["attack"] + [name for _, name in _TABLE_METRICS]
    rows = [header]
    for key in sorted(summary["attacks"]):
        row = [labels.get(key, key)]
        for metric, _ in _TABLE_METRICS:
            cell = summary["attacks"][key].get(metric)
            row.append("-" if cell is None else f"{cell['mean']:.4f}±{cell['std']:.4f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def load_bundle(bundle_dir) -> tuple[dict, list[dict], dict]:
    """Read manifest, per-seed reports and summary from a bundle."""
    bundle = pathlib.Path(bundle_dir)
    manifest_path = bundle / "manifest.json"
    summary_path = bundle / "summary.json"
    if not manifest_path.exists() or not summary_path.exists():
        raise PipelineError(f"not a report bundle: {bundle}")
    manifest = json.loads(manifest_path.read_text())
    summary = json.loads(summary_path.read_text())
    reports = []
    for seed in manifest["seeds"]:
        report_path = bundle / f"seed_{seed}" / "report.json"
        if not report_path.exists():
            raise PipelineError(f"missing report for seed {seed}")
        reports.append(json.loads(report_path.read_text()))
    return manifest, reports, summary


def write_summary_csv(summary: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write("attack,metric,mean,std,n\n")
        for key in sorted(summary["attacks"]):
            for metric in sorted(summary["attacks"][key]):
                cell = summary["attacks"][key][metric]
                fh.write(f"{key},{metric},{cell['mean']!r},{cell['std']!r},{cell['n']}\n")
