"""Learned membership classifier over (true horizon, predicted horizon)
pairs.

Instead of hand-picked scalar signals, this attack trains a small
feed-forward classifier on shadow-model outputs: for each shadow, a
fraction of the source records is predicted and labeled by whether the
record's user was in that shadow's training subset. The trained
classifier then maps the target model's (Y, Yhat) pairs to membership
probabilities. Online and offline variants differ only in the source
record pool handed in by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .forecasters import predict_batch
from .rng import derive_seed, rng_for
from .series import RecordSet
from .shadows import ShadowEnsemble, membership_matrix


class ClassifierAttackError(ValueError):
    pass


@dataclass(frozen=True)
class MembershipExampleSet:
    """Labeled (Y, Yhat) pairs harvested from shadow models.

    ``shadow_index``/``record_key`` keep row provenance for inspection.
    """

    y: np.ndarray  # (n, M, H)
    yhat: np.ndarray  # (n, M, H)
    labels: np.ndarray  # (n,) bool
    shadow_index: np.ndarray  # (n,)
    record_key: np.ndarray  # (n,) str

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class MembershipClassifier:
    """Feed-forward network mapping featurize(Y, Yhat) to a membership
    probability via a sigmoid output."""

    params: np.ndarray
    shapes: tuple[tuple[int, ...], ...]
    hidden: tuple[int, ...]
    num_variables: int
    horizon: int
    history: tuple[dict, ...]


def featurize(y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    """Concatenate flattened Y, Yhat and their difference: length 3*M*H.

    The difference block is derivable from the first two and adds no
    information; it is an inductive-bias convenience for the classifier.
    """
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ClassifierAttackError(f"featurize: shape mismatch {y.shape} vs {yhat.shape}")
    single = y.ndim == 2
    if single:
        y, yhat = y[None], yhat[None]
    flat_y = y.reshape(len(y), -1)
    flat_p = yhat.reshape(len(yhat), -1)
    feats = np.concatenate([flat_y, flat_p, flat_y - flat_p], axis=1)
    return feats[0] if single else feats


def build_membership_examples(
    ensemble: ShadowEnsemble,
    source_records: RecordSet,
    fraction: float,
    seed: int,
) -> MembershipExampleSet:
    """Per shadow, sample ceil(fraction * n) source records without
    replacement, predict them, and label by user-level membership.
    Total rows: K * ceil(fraction * n)."""
    if not 0 < fraction <= 1:
        raise ClassifierAttackError("fraction must be in (0, 1]")
    n = len(source_records)
    if n == 0:
        raise ClassifierAttackError("empty source record pool")
    per_shadow = int(np.ceil(fraction * n))
    member = membership_matrix(source_records.user_ids, ensemble.plan)
    ys, yhats, labels, shadow_idx, keys = [], [], [], [], []
    for i, model in enumerate(ensemble.models):
        rng = rng_for(seed, "classifier-sample", i)
        picks = np.sort(rng.choice(n, size=per_shadow, replace=False))
        sample = source_records.subset(picks)
        ys.append(sample.y)
        yhats.append(predict_batch(model, sample.x))
        labels.append(member[picks, i])
        shadow_idx.append(np.full(per_shadow, i, dtype=np.int64))
        keys.append(
            np.array([f"{u}:{o}" for u, o in zip(sample.user_ids, sample.origins)])
        )
    return MembershipExampleSet(
        y=np.concatenate(ys),
        yhat=np.concatenate(yhats),
        labels=np.concatenate(labels),
        shadow_index=np.concatenate(shadow_idx),
        record_key=np.concatenate(keys),
    )


def export_membership_examples(examples: MembershipExampleSet, path) -> None:
    """Columnar text export: record_id,shadow_index,label,<2MH values>."""
    with open(path, "w") as fh:
        fh.write("record_id,shadow_index,label,values\n")
        for i in range(len(examples)):
            row = np.concatenate([examples.y[i].ravel(), examples.yhat[i].ravel()])
            values = ",".join(repr(float(v)) for v in row)
            fh.write(
                f"{examples.record_key[i]},{examples.shadow_index[i]},"
                f"{int(examples.labels[i])},{values}\n"
            )


def train_membership_classifier(
    examples: MembershipExampleSet,
    hidden: tuple[int, ...] = (64, 32),
    seed: int = 0,
    learning_rate: float = 1e-3,
    max_epochs: int = 64,
    patience: int = 3,
    batch_size: int = 1024,
    val_fraction: float = 0.2,
) -> MembershipClassifier:
    """Binary cross-entropy training with Adam and early stopping on a
    label-stratified held-out split; classes are reweighted to equal
    effective mass. Returns the best-validation snapshot."""
    labels = examples.labels.astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ClassifierAttackError("training set must contain both labels")
    feats = featurize(examples.y, examples.yhat)
    target = labels.astype(np.float64)[:, None]

    rng = rng_for(seed, "classifier-val-split")
    val_mask = np.zeros(len(labels), dtype=bool)
    for cls in (True, False):
        idx = np.flatnonzero(labels == cls)
        n_val = max(1, int(round(val_fraction * len(idx))))
        if n_val >= len(idx):
            raise ClassifierAttackError("too few examples of one class for a validation split")
        val_mask[rng.choice(idx, size=n_val, replace=False)] = True

    weights = np.where(labels, len(labels) / (2.0 * n_pos), len(labels) / (2.0 * n_neg))
    m, h = examples.y.shape[1], examples.y.shape[2]
    sizes = [3 * m * h, *hidden, 1]
    try:
        result = nn.train_network(
            sizes,
            feats[~val_mask],
            target[~val_mask],
            loss="bce",
            seed=derive_seed(seed, "classifier-train"),
            learning_rate=learning_rate,
            max_epochs=max_epochs,
            batch_size=batch_size,
            patience=patience,
            early_stopping=True,
            x_val=feats[val_mask],
            y_val=target[val_mask],
            sample_weights=weights[~val_mask],
            val_weights=weights[val_mask],
        )
    except nn.TrainingError as err:
        raise ClassifierAttackError(f"classifier training failed: {err}") from err
    return MembershipClassifier(
        params=result.params,
        shapes=tuple(tuple(s) for s in result.shapes),
        hidden=tuple(hidden),
        num_variables=m,
        horizon=h,
        history=tuple(result.history),
    )


def membership_probability(
    classifier: MembershipClassifier, y: np.ndarray, yhat: np.ndarray
) -> np.ndarray:
    """Sigmoid membership probability for one pair (M, H) or a batch
    (n, M, H); always in [0, 1]."""
    feats = featurize(y, yhat)
    single = feats.ndim == 1
    if single:
        feats = feats[None]
    expected = 3 * classifier.num_variables * classifier.horizon
    if feats.shape[1] != expected:
        raise ClassifierAttackError(
            f"classifier expects {expected} features, got {feats.shape[1]}"
        )
    logits, _ = nn.forward(classifier.params, [tuple(s) for s in classifier.shapes], feats)
    probs = 1.0 / (1.0 + np.exp(-np.clip(logits[:, 0], -500, 500)))
    return probs[0] if single else probs
