"""scikit-learn compatible estimators.

These wrap the functional core (``training``, ``baselines``) behind the
usual ``fit`` / ``predict`` / ``transform`` / ``get_params`` API so the
models drop into pipelines, grid searches and ``clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import baselines
from .data import Dataset
from .model import ExtractorConfig, forward, scores_from_kernels
from .training import TrainConfig, train


class _ExtractorParamsMixin:
    """Builds core config objects from the estimator's constructor params."""

    def _extractor_config(self, n_features: int) -> ExtractorConfig:
        return ExtractorConfig(
            input_dim=n_features,
            width=self.width,
            depth=self.depth,
            embed_dim=self.embed_dim,
            dropout_rate=self.dropout_rate,
            residual_scale=self.residual_scale,
        )

    def _train_config(self, **overrides) -> TrainConfig:
        kwargs = dict(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_steps=self.max_steps,
            seed=self.random_state,
        )
        kwargs.update(overrides)
        return TrainConfig(**kwargs)

    def _validate_fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need samples of at least 2 classes")
        self.n_features_in_ = X.shape[1]
        return Dataset(X, y_enc)

    def _validate_predict(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the model was fit with {self.n_features_in_}")
        return X


class DDARClassifier(_ExtractorParamsMixin, ClassifierMixin, BaseEstimator):
    """Prototype/DM-layer classifier with an RBF head and single-pass uncertainty.

    Parameters
    ----------
    width, depth, embed_dim, dropout_rate, residual_scale
        Residual feed-forward extractor (defaults give ResFFN-12-128).
    n_prototypes : int
        Number of trainable prototypes in the DM layer.
    centroid_dim : int
        Dimension of each class centroid (rows of ``W_c``).
    sigma : float
        RBF length scale.
    loss_weight : float
        Weight of the dissimilarity + entropy regularizers.
    learning_rate, batch_size, max_steps
        Adam optimisation budget.
    ema_gamma : float
        Centroid moving-average momentum.
    prototype_init : {"random", "class_mean"}
    use_dissimilar, use_entropy : bool
        Toggle the regularizers individually.
    random_state : int

    Attributes
    ----------
    model_ : DdarModel
    history_ : list of LossBreakdown
    classes_ : ndarray
    """

    def __init__(
        self,
        width=128,
        depth=12,
        embed_dim=128,
        dropout_rate=0.01,
        residual_scale=0.1,
        n_prototypes=64,
        centroid_dim=128,
        sigma=0.3,
        loss_weight=0.1,
        learning_rate=0.01,
        batch_size=64,
        max_steps=2000,
        ema_gamma=0.999,
        prototype_init="random",
        use_dissimilar=True,
        use_entropy=True,
        random_state=0,
    ):
        self.width = width
        self.depth = depth
        self.embed_dim = embed_dim
        self.dropout_rate = dropout_rate
        self.residual_scale = residual_scale
        self.n_prototypes = n_prototypes
        self.centroid_dim = centroid_dim
        self.sigma = sigma
        self.loss_weight = loss_weight
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.ema_gamma = ema_gamma
        self.prototype_init = prototype_init
        self.use_dissimilar = use_dissimilar
        self.use_entropy = use_entropy
        self.random_state = random_state

    def fit(self, X, y):
        data = self._validate_fit(X, y)
        cfg = self._train_config(
            num_prototypes=self.n_prototypes,
            centroid_dim=self.centroid_dim,
            sigma=self.sigma,
            loss_weight=self.loss_weight,
            ema_gamma=self.ema_gamma,
            prototype_init=self.prototype_init,
            use_dissimilar=self.use_dissimilar,
            use_entropy=self.use_entropy,
        )
        self.model_, state = train(data, self._extractor_config(data.X.shape[1]), cfg)
        self.history_ = state.loss_history
        return self

    def decision_function(self, X) -> np.ndarray:
        """Per-class RBF kernel values, shape (n_samples, n_classes)."""
        X = self._validate_predict(X)
        return forward(self.model_, X).kernels.value

    def predict(self, X):
        labels, _, _ = scores_from_kernels(self.decision_function(X))
        return self.classes_[labels]

    def predict_confidence(self, X) -> np.ndarray:
        return self.decision_function(X).max(axis=1)

    def predict_uncertainty(self, X) -> np.ndarray:
        """``1 - max_c K_c``; higher means less like the training data."""
        return 1.0 - self.predict_confidence(X)

    def transform(self, X) -> np.ndarray:
        """Discriminant embedding ``exp(-cos(z, prototypes))``."""
        X = self._validate_predict(X)
        return forward(self.model_, X).f_tilde.value

    def embed(self, X) -> np.ndarray:
        """Raw extractor output ``z``."""
        X = self._validate_predict(X)
        return forward(self.model_, X).z.value


class SoftmaxClassifier(_ExtractorParamsMixin, ClassifierMixin, BaseEstimator):
    """Same extractor with a linear softmax head; uncertainty is normalized entropy."""

    def __init__(
        self,
        width=128,
        depth=12,
        embed_dim=128,
        dropout_rate=0.01,
        residual_scale=0.1,
        learning_rate=0.01,
        batch_size=64,
        max_steps=2000,
        random_state=0,
    ):
        self.width = width
        self.depth = depth
        self.embed_dim = embed_dim
        self.dropout_rate = dropout_rate
        self.residual_scale = residual_scale
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.random_state = random_state

    def fit(self, X, y):
        data = self._validate_fit(X, y)
        self.model_, state = baselines.train_softmax(
            data, self._extractor_config(data.X.shape[1]), self._train_config()
        )
        self.history_ = state.loss_history
        return self

    def predict_proba(self, X) -> np.ndarray:
        X = self._validate_predict(X)
        return baselines._softmax(baselines.logits(self.model_, X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def predict_uncertainty(self, X) -> np.ndarray:
        return baselines.normalized_entropy(self.predict_proba(X))

    def transform(self, X) -> np.ndarray:
        """Penultimate (extractor) embedding."""
        X = self._validate_predict(X)
        return baselines.embed(self.model_, X)


class MCDropoutClassifier(SoftmaxClassifier):
    """Softmax network scored by averaging ``n_passes`` dropout-on forward passes."""

    def __init__(
        self,
        width=128,
        depth=12,
        embed_dim=128,
        dropout_rate=0.01,
        residual_scale=0.1,
        learning_rate=0.01,
        batch_size=64,
        max_steps=2000,
        n_passes=10,
        random_state=0,
    ):
        super().__init__(
            width=width,
            depth=depth,
            embed_dim=embed_dim,
            dropout_rate=dropout_rate,
            residual_scale=residual_scale,
            learning_rate=learning_rate,
            batch_size=batch_size,
            max_steps=max_steps,
            random_state=random_state,
        )
        self.n_passes = n_passes

    def predict_proba(self, X) -> np.ndarray:
        X = self._validate_predict(X)
        return baselines.mc_dropout_probs(self.model_, X, self.n_passes, seed=self.random_state)


class DeepEnsembleClassifier(_ExtractorParamsMixin, ClassifierMixin, BaseEstimator):
    """Average of ``n_members`` softmax networks trained from different seeds.

    Member seeds are ``random_state, random_state + 1, ...`` unless ``seeds``
    is given explicitly.
    """

    def __init__(
        self,
        width=128,
        depth=12,
        embed_dim=128,
        dropout_rate=0.01,
        residual_scale=0.1,
        learning_rate=0.01,
        batch_size=64,
        max_steps=2000,
        n_members=10,
        seeds=None,
        random_state=0,
    ):
        self.width = width
        self.depth = depth
        self.embed_dim = embed_dim
        self.dropout_rate = dropout_rate
        self.residual_scale = residual_scale
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.n_members = n_members
        self.seeds = seeds
        self.random_state = random_state

    def fit(self, X, y):
        data = self._validate_fit(X, y)
        seeds = list(self.seeds) if self.seeds is not None else [
            self.random_state + i for i in range(self.n_members)
        ]
        self.ensemble_ = baselines.deep_ensemble(
            data, self._extractor_config(data.X.shape[1]), self._train_config(), seeds
        )
        return self

    def predict_proba(self, X) -> np.ndarray:
        X = self._validate_predict(X)
        return baselines.ensemble_probs(self.ensemble_, X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def predict_uncertainty(self, X) -> np.ndarray:
        return baselines.normalized_entropy(self.predict_proba(X))
