"""The DDAR network.

A residual feed-forward extractor produces an embedding ``z``; a
distinction-maximization (DM) layer takes cosine similarities of ``z``
against a bank of trainable prototypes; ``exp(-similarity)`` gives the
discriminant embedding, which feeds one RBF kernel per class.

All parameters are plain 2-D numpy arrays held in ``DdarModel.params``.
The graph-building functions take a dict of :class:`~ddar.autograd.Node`
leaves so the same code serves evaluation and training.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Node
from .exceptions import ContractError, DimensionError
from .rng import Rng


@dataclass
class ExtractorConfig:
    """Shape of the residual feed-forward feature extractor.

    ``ResFFN-12-128`` corresponds to ``width=128, depth=12``. Each residual
    branch is multiplied by ``residual_scale``; with Adam at learning rate
    0.01 an unscaled 12-block stack collapses every input onto one direction
    within a few dozen steps.
    """

    input_dim: int = 2
    width: int = 128
    depth: int = 12
    embed_dim: int = 128
    dropout_rate: float = 0.01
    residual_scale: float = 0.1

    def __post_init__(self):
        if self.input_dim < 1:
            raise ContractError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.width < 1:
            raise ContractError(f"width must be >= 1, got {self.width}")
        if self.depth < 0:
            raise ContractError(f"depth must be >= 0, got {self.depth}")
        if self.embed_dim < 1:
            raise ContractError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not self.residual_scale > 0:
            raise ContractError(f"residual_scale must be > 0, got {self.residual_scale}")

    @property
    def has_output_projection(self) -> bool:
        return self.embed_dim != self.width


def extractor_param_names(config: ExtractorConfig) -> list[str]:
    names = ["in_w", "in_b"]
    for i in range(config.depth):
        names += [f"res{i}_w", f"res{i}_b"]
    if config.has_output_projection:
        names += ["out_w", "out_b"]
    return names


def init_extractor(config: ExtractorConfig, rng: Rng) -> dict[str, np.ndarray]:
    """He-initialized weights, zero biases."""
    p: dict[str, np.ndarray] = {}
    p["in_w"] = rng.normal((config.input_dim, config.width), std=np.sqrt(2.0 / config.input_dim))
    p["in_b"] = np.zeros((1, config.width))
    for i in range(config.depth):
        p[f"res{i}_w"] = rng.normal((config.width, config.width), std=np.sqrt(2.0 / config.width))
        p[f"res{i}_b"] = np.zeros((1, config.width))
    if config.has_output_projection:
        p["out_w"] = rng.normal((config.width, config.embed_dim), std=np.sqrt(2.0 / config.width))
        p["out_b"] = np.zeros((1, config.embed_dim))
    return p


def extractor_graph(
    leaves: dict[str, Node],
    config: ExtractorConfig,
    X: Node,
    training: bool = False,
    rng: Optional[Rng] = None,
) -> Node:
    """Build ``z = f(X)``: input projection then ``h <- h + dropout(relu(W h + b))``.

    Dropout is inverted (scaled by ``1/(1-rate)`` at train time) and only
    active when ``training`` is true and the rate is positive.
    """
    if X.shape[1] != config.input_dim:
        raise DimensionError(f"expected {config.input_dim} input columns, got {X.shape[1]}")
    h = ag.add(ag.matmul(X, leaves["in_w"]), leaves["in_b"])
    rate = config.dropout_rate
    use_dropout = training and rate > 0.0
    if use_dropout and rng is None:
        raise ContractError("training-mode dropout needs an Rng")
    for i in range(config.depth):
        r = ag.relu(ag.add(ag.matmul(h, leaves[f"res{i}_w"]), leaves[f"res{i}_b"]))
        if use_dropout:
            keep = ~rng.bernoulli(rate, r.shape)
            r = ag.mul(r, keep / (1.0 - rate))
        r = ag.scale(r, config.residual_scale)
        h = ag.add(h, r)
    if config.has_output_projection:
        h = ag.add(ag.matmul(h, leaves["out_w"]), leaves["out_b"])
    return h


@dataclass
class DdarModel:
    """All state of a DDAR classifier.

    Attributes
    ----------
    config : ExtractorConfig
    params : dict of str to ndarray
        Trainable tensors: extractor weights, ``prototypes`` (m x d) and
        ``rbf_weights`` stacking ``W_c`` for every class row-wise
        (C*n x m, class ``c`` occupies rows ``c*n:(c+1)*n``).
    centroids : ndarray of shape (C, n)
        Per-class RBF centroids, updated by moving average only.
    sigma : float
        RBF length scale.
    loss_weight : float
        Weight of the prototype regularizers in the total loss.
    """

    config: ExtractorConfig
    params: dict[str, np.ndarray]
    centroids: np.ndarray
    sigma: float = 0.3
    loss_weight: float = 0.1
    num_classes: int = field(init=False)
    centroid_dim: int = field(init=False)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.num_classes, self.centroid_dim = self.centroids.shape
        self.validate()

    @property
    def prototypes(self) -> np.ndarray:
        return self.params["prototypes"]

    @property
    def num_prototypes(self) -> int:
        return self.params["prototypes"].shape[0]

    def rbf_weight(self, c: int) -> np.ndarray:
        n = self.centroid_dim
        return self.params["rbf_weights"][c * n:(c + 1) * n]

    def param_names(self) -> list[str]:
        return extractor_param_names(self.config) + ["prototypes", "rbf_weights"]

    def validate(self) -> None:
        if not self.sigma > 0:
            raise ContractError(f"sigma must be > 0, got {self.sigma}")
        P = self.params["prototypes"]
        if P.shape[0] < 2:
            raise ContractError(f"need at least 2 prototypes, got {P.shape[0]}")
        if P.shape[1] != self.config.embed_dim:
            raise DimensionError(f"prototypes have {P.shape[1]} columns, embed_dim is {self.config.embed_dim}")
        if np.any(np.linalg.norm(P, axis=1) == 0):
            raise ContractError("prototype rows must have nonzero norm")
        W = self.params["rbf_weights"]
        expected = (self.num_classes * self.centroid_dim, P.shape[0])
        if W.shape != expected:
            raise DimensionError(f"rbf_weights shape {W.shape}, expected {expected}")

    def copy(self) -> "DdarModel":
        return copy.deepcopy(self)

    def leaves(self, requires_grad: bool = False) -> dict[str, Node]:
        return {k: Node(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}


@dataclass
class ForwardTrace:
    """Intermediate nodes of one forward pass.

    ``projections`` holds ``W_c f_tilde`` for every class side by side
    (B x C*n); the centroid update consumes it.
    """

    z: Node
    d_p: Node
    f_tilde: Node
    projections: Node
    kernels: Node
    leaves: dict[str, Node]


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def dm_layer(z: Node, prototypes: Node) -> Node:
    """Cosine similarity of each embedding row to each prototype (B x m)."""
    return ag.cosine_rows(z, prototypes)


def discriminant_embed(d_p: Node) -> Node:
    return ag.exp(ag.neg(d_p))


def _class_block_sum(num_classes: int, centroid_dim: int) -> np.ndarray:
    # (C*n x C) indicator summing each class's n columns
    return np.kron(np.eye(num_classes), np.ones((centroid_dim, 1)))


def rbf_graph(
    f_tilde: Node, rbf_weights: Node, centroids: np.ndarray, sigma: float
) -> tuple[Node, Node]:
    """Per-class kernels ``exp(-|W_c f - psi_c|^2 / (n * 2 sigma^2))``.

    Centroids enter as constants, so no gradient reaches them.
    Returns ``(projections, kernels)``.
    """
    C, n = centroids.shape
    proj = ag.matmul(f_tilde, ag.transpose(rbf_weights))
    diff = ag.sub(proj, ag.constant(centroids.reshape(1, C * n)))
    sqdist = ag.matmul(ag.square(diff), ag.constant(_class_block_sum(C, n)))
    kernels = ag.exp(ag.scale(sqdist, -1.0 / (n * 2.0 * sigma**2)))
    return proj, kernels


def rbf_kernels(f_tilde, model: DdarModel) -> np.ndarray:
    """Kernel values (B x C) for a given discriminant embedding."""
    f_tilde = f_tilde if isinstance(f_tilde, Node) else Node(f_tilde)
    _, k = rbf_graph(f_tilde, Node(model.params["rbf_weights"]), model.centroids, model.sigma)
    return k.value


def feature_extract(
    model: DdarModel, X, training: bool = False, rng: Optional[Rng] = None
) -> np.ndarray:
    leaves = model.leaves()
    return extractor_graph(leaves, model.config, Node(X), training, rng).value


def forward(
    model: DdarModel,
    X,
    training: bool = False,
    rng: Optional[Rng] = None,
    requires_grad: bool = False,
) -> ForwardTrace:
    """Run extractor, DM layer, discriminant embedding and RBF head."""
    return forward_from_leaves(model, model.leaves(requires_grad=requires_grad), X, training, rng)


def forward_from_leaves(
    model: DdarModel,
    leaves: dict[str, Node],
    X,
    training: bool = False,
    rng: Optional[Rng] = None,
) -> ForwardTrace:
    """Same as :func:`forward` but on caller-supplied parameter nodes, so
    gradients land on those nodes. Centroids and hyperparameters come from
    ``model``."""
    X = X if isinstance(X, Node) else Node(X)
    z = extractor_graph(leaves, model.config, X, training, rng)
    d_p = dm_layer(z, leaves["prototypes"])
    f_tilde = discriminant_embed(d_p)
    proj, kernels = rbf_graph(f_tilde, leaves["rbf_weights"], model.centroids, model.sigma)
    return ForwardTrace(z=z, d_p=d_p, f_tilde=f_tilde, projections=proj, kernels=kernels, leaves=leaves)


def scores_from_kernels(kernels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(labels, confidence, uncertainty)`` from a B x C kernel matrix.

    Ties resolve to the lowest class index.
    """
    kernels = np.asarray(kernels, dtype=np.float64)
    labels = np.argmax(kernels, axis=1)
    confidence = kernels[np.arange(len(kernels)), labels]
    return labels, confidence, 1.0 - confidence


def predict(model: DdarModel, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return scores_from_kernels(forward(model, X).kernels.value)


def prototype_class_probs(z: np.ndarray, class_prototypes: np.ndarray) -> np.ndarray:
    """Softmax over negative Euclidean distance to class prototypes.

    A prototypical-network style classifier, useful as a diagnostic of how
    well the embedding clusters by class.
    """
    d = np.linalg.norm(z[:, None, :] - class_prototypes[None, :, :], axis=2)
    logits = -d
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def class_mean_embeddings(z: np.ndarray, y: np.ndarray, num_classes: int) -> np.ndarray:
    """Mean embedding of the support points of each class."""
    out = np.zeros((num_classes, z.shape[1]))
    for c in range(num_classes):
        members = z[y == c]
        if len(members) == 0:
            raise ContractError(f"class {c} has no labeled samples")
        out[c] = members.mean(axis=0)
    return out


def init_model(
    config: ExtractorConfig,
    num_classes: int,
    num_prototypes: int = 64,
    centroid_dim: int = 128,
    sigma: float = 0.3,
    loss_weight: float = 0.1,
    strategy: str = "random",
    rng: Optional[Rng] = None,
    X=None,
    y=None,
) -> DdarModel:
    """Create a fresh model.

    Parameters
    ----------
    strategy : {"random", "class_mean"}
        ``random`` draws Gaussian prototypes and normalizes each row.
        ``class_mean`` sets the first ``num_classes`` prototypes to the mean
        embedding of each class under the freshly initialized extractor (so
        it needs ``X`` and ``y``); any further prototypes are random.
    """
    if rng is None:
        rng = Rng(0)
    if num_classes < 1:
        raise ContractError(f"num_classes must be >= 1, got {num_classes}")
    if num_prototypes < 2:
        raise ContractError(f"need at least 2 prototypes, got {num_prototypes}")
    params = init_extractor(config, rng)
    protos = rng.normal((num_prototypes, config.embed_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    if strategy == "class_mean":
        if X is None or y is None:
            raise ContractError("class_mean initialization needs labeled data")
        y = np.asarray(y)
        if np.any(y < 0):
            raise ContractError("class_mean initialization needs labeled data, got label -1")
        if num_prototypes < num_classes:
            raise ContractError("class_mean initialization needs num_prototypes >= num_classes")
        leaves = {k: Node(v) for k, v in params.items()}
        z = extractor_graph(leaves, config, Node(X)).value
        protos[:num_classes] = class_mean_embeddings(z, y, num_classes)
    elif strategy != "random":
        raise ValueError(f"unknown prototype init strategy {strategy!r}")
    params["prototypes"] = protos
    params["rbf_weights"] = rng.normal((num_classes * centroid_dim, num_prototypes)) / np.sqrt(num_prototypes)
    centroids = np.zeros((num_classes, centroid_dim))
    return DdarModel(config=config, params=params, centroids=centroids, sigma=sigma, loss_weight=loss_weight)
