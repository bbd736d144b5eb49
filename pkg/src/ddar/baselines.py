"""Softmax comparison methods sharing the DDAR extractor and optimizer:
a plain softmax network, Monte Carlo dropout and a deep ensemble."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Node
from .data import Dataset
from .exceptions import ContractError
from .losses import LossBreakdown, softmax_cross_entropy
from .model import ExtractorConfig, extractor_graph, extractor_param_names, init_extractor
from .rng import Rng
from .training import AdamState, TrainConfig, TrainState, _check_labeled, run_steps

logger = logging.getLogger(__name__)


@dataclass
class SoftmaxModel:
    """Extractor followed by a linear head ``head_w`` (d x C), ``head_b`` (1 x C)."""

    config: ExtractorConfig
    params: dict[str, np.ndarray]

    @property
    def num_classes(self) -> int:
        return self.params["head_w"].shape[1]

    def param_names(self) -> list[str]:
        return extractor_param_names(self.config) + ["head_w", "head_b"]

    def copy(self) -> "SoftmaxModel":
        return copy.deepcopy(self)


@dataclass
class Ensemble:
    members: list[SoftmaxModel]
    seeds: list[int]
    warnings: list[str] = field(default_factory=list)


def init_softmax(config: ExtractorConfig, num_classes: int, rng: Rng) -> SoftmaxModel:
    params = init_extractor(config, rng)
    params["head_w"] = rng.normal((config.embed_dim, num_classes), std=np.sqrt(1.0 / config.embed_dim))
    params["head_b"] = np.zeros((1, num_classes))
    return SoftmaxModel(config, params)


def _graph(model: SoftmaxModel, X, training=False, rng=None, requires_grad=False):
    leaves = {k: Node(v, requires_grad=requires_grad, name=k) for k, v in model.params.items()}
    z = extractor_graph(leaves, model.config, X if isinstance(X, Node) else Node(X), training, rng)
    logits = ag.add(ag.matmul(z, leaves["head_w"]), leaves["head_b"])
    return z, logits, leaves


def embed(model: SoftmaxModel, X) -> np.ndarray:
    """Penultimate (extractor) embedding."""
    return _graph(model, X)[0].value


def logits(model: SoftmaxModel, X, training: bool = False, rng: Optional[Rng] = None) -> np.ndarray:
    return _graph(model, X, training, rng)[1].value


def _softmax(a: np.ndarray) -> np.ndarray:
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def normalized_entropy(probs: np.ndarray) -> np.ndarray:
    """Predictive entropy divided by ``log C``, in ``[0, 1]``."""
    C = probs.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return np.clip(-terms.sum(axis=1) / np.log(C), 0.0, 1.0)


def scores_from_probs(probs: np.ndarray):
    labels = np.argmax(probs, axis=1)
    return labels, probs[np.arange(len(probs)), labels], normalized_entropy(probs)


def train_softmax(
    dataset: Dataset,
    extractor_config: Optional[ExtractorConfig] = None,
    train_config: Optional[TrainConfig] = None,
) -> tuple[SoftmaxModel, TrainState]:
    """Cross-entropy training with the same minibatch/Adam/seeding scheme as DDAR."""
    cfg = train_config or TrainConfig()
    num_classes = _check_labeled(dataset)
    ext = extractor_config or ExtractorConfig(input_dim=dataset.X.shape[1])
    root = Rng(cfg.seed)
    model = init_softmax(ext, num_classes, Rng(root.spawn_seed()))
    state = TrainState(adam=AdamState(), rng=Rng(root.spawn_seed()))
    X, y = dataset.X, dataset.y

    def step_fn(idx):
        _, out, leaves = _graph(model, X[idx], training=True, rng=state.rng, requires_grad=True)
        loss = softmax_cross_entropy(out, y[idx])
        value = loss.item()
        return loss, LossBreakdown(rbf=value, dissimilar=0.0, entropy=0.0, total=value, loss_weight=0.0), leaves

    run_steps(model.params, step_fn, len(y), cfg.batch_size, cfg.max_steps, cfg.learning_rate, state)
    return model, state


def softmax_uncertainty(model: SoftmaxModel, X):
    """``(labels, max probability, normalized predictive entropy)``."""
    return scores_from_probs(_softmax(logits(model, X)))


def mc_dropout_probs(model: SoftmaxModel, X, passes: int = 10, seed: int = 0) -> np.ndarray:
    """Mean class probabilities over ``passes`` stochastic forward passes."""
    if model.config.dropout_rate == 0.0:
        raise ContractError("MC dropout needs a model trained with dropout_rate > 0")
    if passes < 1:
        raise ContractError(f"passes must be >= 1, got {passes}")
    rng = Rng(seed)
    total = np.zeros((len(X), model.num_classes))
    for _ in range(passes):
        total += _softmax(logits(model, X, training=True, rng=rng))
    return total / passes


def mc_dropout_predict(model: SoftmaxModel, X, passes: int = 10, seed: int = 0):
    """``(labels, confidence, uncertainty)`` with uncertainty the normalized entropy of the mean."""
    return scores_from_probs(mc_dropout_probs(model, X, passes, seed))


def deep_ensemble(
    dataset: Dataset,
    extractor_config: Optional[ExtractorConfig],
    train_config: TrainConfig,
    seeds: Sequence[int],
) -> Ensemble:
    """Train one softmax member per seed on the same data."""
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ContractError(f"an ensemble needs at least 2 members, got {len(seeds)}")
    warnings = []
    if len(set(seeds)) != len(seeds):
        msg = f"duplicate ensemble seeds {seeds}; members are not independent"
        logger.warning(msg)
        warnings.append(msg)
    members = [train_softmax(dataset, extractor_config, replace(train_config, seed=s))[0] for s in seeds]
    return Ensemble(members, seeds, warnings)


def ensemble_probs(ensemble: Ensemble, X) -> np.ndarray:
    """Average member probabilities, summed in seed order so the result
    does not depend on the order members were trained or listed."""
    order = sorted(range(len(ensemble.members)), key=lambda i: ensemble.seeds[i])
    probs = np.zeros((len(X), ensemble.members[0].num_classes))
    for i in order:
        probs += _softmax(logits(ensemble.members[i], X))
    return probs / len(ensemble.members)


def ensemble_predict(ensemble: Ensemble, X):
    return scores_from_probs(ensemble_probs(ensemble, X))
