"""Privacy auditing for time-series forecasting models.

Quantifies record- and user-level membership-inference risk of a
trained forecaster via shadow-model attack suites (Gaussian
likelihood-ratio, RMIA, an ensemble baseline, and a learned membership
classifier) evaluated with ROC/AUC and TPR at low FPR.
"""

from .attacks import (
    EnsembleConfig,
    GaussianSignalModel,
    RmiaConfig,
    aggregate_user_scores,
    ensemble_attack,
    fit_gaussian_model,
    lira_attack,
    lira_offline_log_scores,
    lira_online_log_scores,
    rmia_scores,
)
from .classifier_attack import (
    MembershipClassifier,
    build_membership_examples,
    featurize,
    membership_probability,
    train_membership_classifier,
)
from .config import ExperimentConfig, load_config
from .data import SyntheticPopulationConfig, generate_population, ingest_csv, write_csv
from .forecasters import (
    ForecastMetrics,
    ForecasterConfig,
    TrainedForecaster,
    evaluate,
    fit_mlp,
    fit_ridge,
    load_forecaster,
    predict,
    predict_batch,
    save_forecaster,
)
from .metrics import RocCurve, auc, roc_curve, tpr_at_fpr
from .series import (
    ForecastRecord,
    PopulationSplit,
    RecordSet,
    ScalerParams,
    UserSeries,
    apply_scaler,
    fit_scaler,
    invert_scaler,
    split_users,
    window_series,
    window_series_batch,
)
from .shadows import (
    ShadowEnsemble,
    ShadowPlan,
    SignalTensor,
    compute_signal_tensor,
    membership_matrix,
    plan_shadows,
    train_shadow_ensemble,
)
from .signals import SignalId, signal_vector

__version__ = "0.1.0"
