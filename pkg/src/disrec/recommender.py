"""Scikit-learn style estimator facade over the training engine.

``DisentangledSocialRecommender`` fits on an array of (user, item) index
pairs plus an optional (user, user) social edge array, keeps the
best-validation parameters, and exposes inner-product scoring and top-K
recommendation.  Hyperparameters mirror the engine config, so the estimator
composes with ``sklearn`` model selection utilities via ``get_params`` /
``set_params`` / ``clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import training
from .config import Config
from .data import Dataset
from .encoders import final_representations
from .evaluation import rank_items

__all__ = ["DisentangledSocialRecommender", "check_pair_array"]


def check_pair_array(X, name: str = "X", num_left: int | None = None, num_right: int | None = None) -> np.ndarray:
    """Validate an integer (n, 2) index-pair array."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {X.shape}")
    if X.size and not np.issubdtype(X.dtype, np.number):
        raise ValueError(f"{name} must be numeric indices")
    X = X.astype(np.int64)
    if X.size and X.min() < 0:
        raise ValueError(f"{name} contains negative indices")
    if num_left is not None and X.size and X[:, 0].max() >= num_left:
        raise ValueError(f"{name} first column exceeds {num_left - 1}")
    if num_right is not None and X.size and X[:, 1].max() >= num_right:
        raise ValueError(f"{name} second column exceeds {num_right - 1}")
    return X


class DisentangledSocialRecommender(BaseEstimator):
    """Top-K recommender with per-domain user embeddings and contrastive transfer.

    Parameters mirror the engine configuration: ``lambda1`` weights the
    within-domain view-agreement losses, ``lambda2`` the cross-domain
    transfer loss, ``lambda3`` the squared-L2 regularizer.  Setting
    ``lambda1 = lambda2 = 0`` degenerates to a plain BPR-trained light graph
    convolution.  Fitting splits the given interactions 8:1:1 internally and
    early-stops on validation recall.
    """

    def __init__(
        self,
        dim: int = 64,
        item_layers: int = 2,
        social_layers: int = 2,
        projector_depth: int = 2,
        projector: bool = True,
        tau: float = 0.2,
        lambda1: float = 0.01,
        lambda2: float = 0.001,
        lambda3: float = 1e-4,
        negatives_scope: str = "batch",
        aug_item: tuple[str, str] = ("edge_drop:0.1", "edge_drop:0.1"),
        aug_social: tuple[str, str] = ("edge_drop:0.1", "edge_add:0.1"),
        epochs: int = 200,
        batch_size: int = 2048,
        learning_rate: float = 1e-3,
        patience: int = 20,
        eval_k: int = 5,
        seed: int = 0,
    ):
        self.dim = dim
        self.item_layers = item_layers
        self.social_layers = social_layers
        self.projector_depth = projector_depth
        self.projector = projector
        self.tau = tau
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.negatives_scope = negatives_scope
        self.aug_item = aug_item
        self.aug_social = aug_social
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.eval_k = eval_k
        self.seed = seed

    def _config(self) -> Config:
        return Config(
            dim=self.dim,
            item_layers=self.item_layers,
            social_layers=self.social_layers,
            projector_depth=self.projector_depth,
            projector=self.projector,
            tau=self.tau,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            lambda3=self.lambda3,
            negatives_scope=self.negatives_scope,
            aug_item_view1=self.aug_item[0],
            aug_item_view2=self.aug_item[1],
            aug_social_view1=self.aug_social[0],
            aug_social_view2=self.aug_social[1],
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            patience=self.patience,
            eval_k=self.eval_k,
            seed=self.seed,
        )

    def fit(self, X, y=None, social=None, num_users: int | None = None, num_items: int | None = None):
        """Fit on (user, item) index pairs; ``social`` holds (user, user) pairs.

        Universe sizes default to ``max index + 1``.
        """
        X = check_pair_array(X, "X")
        if social is not None and len(social):
            social = check_pair_array(social, "social")
        dataset = Dataset.from_pairs(
            X, social, num_users=num_users, num_items=num_items, seed=self.seed
        )
        config = self._config()
        result = training.fit(dataset, config)
        params, log = result.params, result.log
        user_repr, item_repr = final_representations(
            dataset.interaction_adj, params.user_emb, params.item_emb, config.item_layers
        )
        self.n_users_ = dataset.num_users
        self.n_items_ = dataset.num_items
        self.params_ = params
        self.train_log_ = log
        self.user_factors_ = user_repr
        self.item_factors_ = item_repr
        self.train_items_ = dataset.train_items
        return self

    def predict(self, X) -> np.ndarray:
        """Inner-product scores for (user, item) pairs."""
        check_is_fitted(self, "user_factors_")
        X = check_pair_array(X, "X", self.n_users_, self.n_items_)
        return np.sum(self.user_factors_[X[:, 0]] * self.item_factors_[X[:, 1]], axis=1)

    def recommend(self, users=None, k: int = 5, exclude_seen: bool = True) -> np.ndarray:
        """Top-``k`` item indices per user, rows ordered like ``users``."""
        check_is_fitted(self, "user_factors_")
        if users is None:
            users = np.arange(self.n_users_)
        users = np.asarray(users, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= self.n_users_):
            raise ValueError("user index out of range")
        out = np.empty((len(users), k), dtype=np.int64)
        for row, u in enumerate(users):
            exclude = self.train_items_[int(u)] if exclude_seen else ()
            out[row] = rank_items(int(u), self.user_factors_, self.item_factors_, exclude)[:k]
        return out
