"""Minimal dense feed-forward network trained with Adam.

Shared by the MLP forecaster (MAE regression) and the membership
classifier (weighted binary cross-entropy on a single logit). Parameters
live in one flat float64 vector plus a list of block shapes, which keeps
serialization, gradient checking and snapshotting trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import rng_for

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    """Training failed (divergence, bad inputs)."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


def layer_shapes(sizes: list[int]) -> list[tuple[int, ...]]:
    """Parameter block shapes for fully connected layers: per layer a
    (fan_in, fan_out) weight and a (fan_out,) bias."""
    shapes: list[tuple[int, ...]] = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes.append((fan_in, fan_out))
        shapes.append((fan_out,))
    return shapes


def init_params(sizes: list[int], seed: int) -> tuple[np.ndarray, list[tuple[int, ...]]]:
    """Weights uniform in +-1/sqrt(fan_in), biases zero, seeded."""
    rng = rng_for(seed, "nn-init")
    shapes = layer_shapes(sizes)
    blocks = []
    for shape in shapes:
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            blocks.append(rng.uniform(-bound, bound, size=shape).ravel())
        else:
            blocks.append(np.zeros(shape))
    return np.concatenate(blocks), shapes


def unpack(flat: np.ndarray, shapes: list[tuple[int, ...]]) -> list[np.ndarray]:
    blocks = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        blocks.append(flat[offset : offset + size].reshape(shape))
        offset += size
    if offset != flat.size:
        raise TrainingError("parameter vector length does not match shapes")
    return blocks


def forward(flat: np.ndarray, shapes: list[tuple[int, ...]], x: np.ndarray):
    """Linear output of the network plus the per-layer activations needed
    for backprop. Hidden activations are ReLU; the output is linear."""
    blocks = unpack(flat, shapes)
    acts = [x]
    h = x
    n_layers = len(shapes) // 2
    for i in range(n_layers):
        w, b = blocks[2 * i], blocks[2 * i + 1]
        z = h @ w + b
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    return h, acts


def backward(
    flat: np.ndarray,
    shapes: list[tuple[int, ...]],
    acts: list[np.ndarray],
    dout: np.ndarray,
) -> np.ndarray:
    """Gradient of a scalar loss wrt all parameters, given dL/d(output)."""
    blocks = unpack(flat, shapes)
    n_layers = len(shapes) // 2
    grads: list[np.ndarray | None] = [None] * len(shapes)
    delta = dout
    for i in range(n_layers - 1, -1, -1):
        w = blocks[2 * i]
        h_in = acts[i]
        if i < n_layers - 1:
            delta = delta * (acts[i + 1] > 0)  # ReLU mask on this layer's output
        grads[2 * i] = (h_in.T @ delta).ravel()
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ w.T
    return np.concatenate([g.ravel() for g in grads])  # type: ignore[union-attr]


def mae_loss_and_grad(out: np.ndarray, target: np.ndarray):
    """Mean absolute error over all entries; subgradient at 0 is 0."""
    resid = out - target
    loss = float(np.mean(np.abs(resid)))
    dout = np.sign(resid) / resid.size
    return loss, dout


def bce_logit_loss_and_grad(out: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Weighted binary cross-entropy on a single-logit output (n, 1).

    ``weights`` are per-sample and are normalized to mean 1 by the caller.
    Uses the overflow-safe log(1 + exp(-|z|)) form.
    """
    z = out[:, 0]
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    # log(1 + e^z) = max(z, 0) + log(1 + e^-|z|)
    losses = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float(np.mean(w * losses))
    p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    dout = (w * (p - y) / z.size)[:, None]
    return loss, dout


@dataclass
class Adam:
    """Adam with conventional defaults (beta1=0.9, beta2=0.999, eps=1e-8)."""

    lr: float
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1 - ADAM_BETA2) * grad**2
        m_hat = self.m / (1 - ADAM_BETA1**self.t)
        v_hat = self.v / (1 - ADAM_BETA2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass
class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without strict
    improvement of the validation loss; remembers the best epoch."""

    patience: int
    best_loss: float = np.inf
    best_epoch: int = -1
    bad_epochs: int = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield index arrays covering a fresh permutation of range(n) exactly
    once, in chunks of at most batch_size."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


@dataclass
class TrainResult:
    params: np.ndarray
    shapes: list[tuple[int, ...]]
    history: list[dict]
    best_epoch: int


def train_network(
    sizes: list[int],
    x_train: np.ndarray,
    y_train: np.ndarray,
    *,
    loss: str,
    seed: int,
    learning_rate: float = 1e-3,
    max_epochs: int = 50,
    batch_size: int = 1024,
    patience: int = 3,
    early_stopping: bool = True,
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
    sample_weights: np.ndarray | None = None,
    val_weights: np.ndarray | None = None,
) -> TrainResult:
    """Minibatch Adam training loop with optional early stopping.

    With early stopping the returned parameters are the snapshot from the
    best-validation epoch; otherwise the final-epoch parameters. History
    records per-epoch mean train loss and validation loss (None when
    validation is disabled).
    """
    if len(x_train) == 0:
        raise TrainingError("empty training set")
    if early_stopping and (x_val is None or len(x_val) == 0):
        raise TrainingError("early stopping requires a non-empty validation set")

    def loss_and_grad_out(out, target, idx):
        if loss == "mae":
            return mae_loss_and_grad(out, target)
        if loss == "bce":
            w = sample_weights[idx] if sample_weights is not None else np.ones(len(idx))
            return bce_logit_loss_and_grad(out, target, w)
        raise TrainingError(f"unknown loss {loss!r}")

    def eval_loss(x, y, weights):
        out, _ = forward(params, shapes, x)
        if loss == "mae":
            return mae_loss_and_grad(out, y)[0]
        w = weights if weights is not None else np.ones(len(x))
        return bce_logit_loss_and_grad(out, y, w)[0]

    params, shapes = init_params(sizes, seed)
    opt = Adam(lr=learning_rate)
    stopper = EarlyStopper(patience=patience)
    best_params = params.copy()
    history: list[dict] = []

    for epoch in range(max_epochs):
        rng = rng_for(seed, "nn-epoch", epoch)
        total, count = 0.0, 0
        for idx in iterate_minibatches(len(x_train), batch_size, rng):
            out, acts = forward(params, shapes, x_train[idx])
            batch_loss, dout = loss_and_grad_out(out, y_train[idx], idx)
            if not np.isfinite(batch_loss):
                raise TrainingError("training diverged (non-finite loss)", epoch=epoch)
            grad = backward(params, shapes, acts, dout)
            params = opt.step(params, grad)
            total += batch_loss * len(idx)
            count += len(idx)
        train_loss = total / count
        val_loss = None
        if early_stopping:
            val_loss = eval_loss(x_val, y_val, val_weights)
            if not np.isfinite(val_loss):
                raise TrainingError("validation loss non-finite", epoch=epoch)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if early_stopping:
            improved = val_loss < stopper.best_loss
            stop = stopper.update(epoch, val_loss)
            if improved:
                best_params = params.copy()
            if stop:
                break

    if early_stopping:
        return TrainResult(best_params, shapes, history, stopper.best_epoch)
    return TrainResult(params, shapes, history, len(history) - 1)
