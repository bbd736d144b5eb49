"""The DDAR training loop: minibatches, Adam on (extractor, W, prototypes), EMA centroids."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Iterator, Optional

import numpy as np

from . import autograd as ag
from .data import Dataset
from .exceptions import ContractError, DataError, NumericError
from .losses import LossBreakdown, total_loss
from .model import DdarModel, ExtractorConfig, ForwardTrace, forward, init_model
from .rng import Rng

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Optimization and head hyperparameters.

    Defaults follow the two-moons setup: Adam with learning rate 0.01,
    batch size 64, 64 prototypes, length scale 0.3, loss weight 0.1.
    """

    learning_rate: float = 0.01
    batch_size: int = 64
    max_steps: int = 2000
    loss_weight: float = 0.1
    sigma: float = 0.3
    num_prototypes: int = 64
    centroid_dim: int = 128
    ema_gamma: float = 0.999
    seed: int = 0
    prototype_init: str = "random"
    use_dissimilar: bool = True
    use_entropy: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 0:
            raise ContractError(f"max_steps must be >= 0, got {self.max_steps}")
        if not 0.0 <= self.ema_gamma <= 1.0:
            raise ContractError(f"ema_gamma must be in [0, 1], got {self.ema_gamma}")
        if not 0.0 <= self.loss_weight <= 1.0:
            raise ContractError(f"loss_weight must be in [0, 1], got {self.loss_weight}")
        if not self.sigma > 0:
            raise ContractError(f"sigma must be > 0, got {self.sigma}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass
class TrainState:
    adam: AdamState
    rng: Rng
    step: int = 0
    loss_history: list[LossBreakdown] = field(default_factory=list)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    t = state.t
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def update_centroids_ema(model: DdarModel, trace: ForwardTrace, labels, gamma: float) -> None:
    """``psi_c <- gamma * psi_c + (1 - gamma) * mean_b W_c f_tilde_b`` over class-c rows.

    Uses the model's current ``W_c``. Classes absent from the batch keep
    their centroid. Runs outside the autodiff graph.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"gamma must be in [0, 1], got {gamma}")
    labels = np.asarray(labels)
    f_tilde = trace.f_tilde.value
    n = model.centroid_dim
    for c in np.unique(labels):
        if c < 0:
            continue
        W_c = model.params["rbf_weights"][c * n:(c + 1) * n]
        batch_mean = (f_tilde[labels == c] @ W_c.T).mean(axis=0)
        model.centroids[c] = gamma * model.centroids[c] + (1.0 - gamma) * batch_mean


def minibatches(
    n: int, batch_size: int, rng: Rng, epochs: Optional[int] = None
) -> Iterator[np.ndarray]:
    """Index batches from a fresh permutation each epoch; short last batch kept.

    Runs forever when ``epochs`` is None.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]
        epoch += 1


def _check_labeled(dataset: Dataset) -> int:
    if len(dataset.y) == 0:
        raise DataError("empty dataset")
    y = dataset.y
    if np.any(y < 0):
        raise DataError("training data contains unlabeled (-1) rows")
    num_classes = int(y.max()) + 1
    counts = np.bincount(y, minlength=num_classes)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise DataError(f"class {missing} has zero samples")
    return num_classes


def _assert_finite(params: dict[str, np.ndarray], step: int) -> None:
    for name, p in params.items():
        if not np.all(np.isfinite(p)):
            raise NumericError(f"non-finite value in {name!r} at step {step}")


def run_steps(
    params: dict[str, np.ndarray],
    step_fn: Callable[[np.ndarray], tuple[ag.Node, object, dict[str, ag.Node]]],
    n: int,
    batch_size: int,
    max_steps: int,
    lr: float,
    state: TrainState,
    after_update: Optional[Callable[[np.ndarray, object], None]] = None,
) -> None:
    """Generic minibatch Adam loop shared by DDAR and the softmax baselines.

    ``step_fn(batch_idx)`` builds the graph and returns ``(loss, record,
    leaves)``; ``record`` is appended to the loss history.
    """
    batches = minibatches(n, batch_size, state.rng)
    for _ in range(max_steps):
        idx = next(batches)
        loss, record, leaves = step_fn(idx)
        if not np.isfinite(loss.item()):
            raise NumericError(f"non-finite loss at step {state.step + 1}")
        ag.backward(loss)
        grads = {k: leaf.grad for k, leaf in leaves.items() if leaf.requires_grad}
        adam_step(params, grads, state.adam, lr)
        state.step += 1
        if after_update is not None:
            after_update(idx, record)
        _assert_finite(params, state.step)
        state.loss_history.append(record)


def train(
    dataset: Dataset,
    extractor_config: Optional[ExtractorConfig] = None,
    train_config: Optional[TrainConfig] = None,
) -> tuple[DdarModel, TrainState]:
    """Fit a DDAR model on a labeled dataset.

    Each step: forward (dropout on) -> total loss -> backward -> Adam on
    extractor, prototypes and RBF weights -> EMA update of the centroids.
    The result is a deterministic function of the data, configs and seed.
    """
    cfg = train_config or TrainConfig()
    num_classes = _check_labeled(dataset)
    ext = extractor_config or ExtractorConfig(input_dim=dataset.X.shape[1])
    if ext.input_dim != dataset.X.shape[1]:
        raise DataError(f"dataset has {dataset.X.shape[1]} features, extractor expects {ext.input_dim}")

    root = Rng(cfg.seed)
    model = init_model(
        ext,
        num_classes,
        num_prototypes=cfg.num_prototypes,
        centroid_dim=cfg.centroid_dim,
        sigma=cfg.sigma,
        loss_weight=cfg.loss_weight,
        strategy=cfg.prototype_init,
        rng=Rng(root.spawn_seed()),
        X=dataset.X,
        y=dataset.y,
    )
    state = TrainState(adam=AdamState(), rng=Rng(root.spawn_seed()))
    X, y = dataset.X, dataset.y
    last: dict[str, ForwardTrace] = {}

    def step_fn(idx):
        trace = forward(model, X[idx], training=True, rng=state.rng, requires_grad=True)
        loss, record = total_loss(
            trace, y[idx], cfg.loss_weight, cfg.use_dissimilar, cfg.use_entropy
        )
        last["trace"] = trace
        return loss, record, trace.leaves

    def after_update(idx, record):
        update_centroids_ema(model, last["trace"], y[idx], cfg.ema_gamma)
        if state.step % 500 == 0:
            logger.debug("step %d total %.5f", state.step, record.total)

    run_steps(model.params, step_fn, len(y), cfg.batch_size, cfg.max_steps,
              cfg.learning_rate, state, after_update)
    return model, state


def write_history_csv(history: list[LossBreakdown], path) -> None:
    """Write ``step,rbf,dissimilar,entropy,total`` rows (steps count from 1)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "rbf", "dissimilar", "entropy", "total"])
        for i, rec in enumerate(history, start=1):
            w.writerow([i] + [repr(float(v)) for v in (rec.rbf, rec.dissimilar, rec.entropy, rec.total)])


def smoothed(values, window: int = 50) -> np.ndarray:
    """Trailing moving average; entry ``i`` averages ``values[max(0, i-window+1):i+1]``."""
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(0, idx - window)
    return (csum[idx] - csum[lo]) / (idx - lo)
