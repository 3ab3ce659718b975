"""Estimator-style wrapper around the training engine.

ContrastiveEmbedder exposes the pipeline through the familiar
fit/transform/score surface so it can sit inside sklearn tooling: fit trains
the two-tower encoder on paired (or self-paired) records, transform maps raw
vectors to unit-norm embeddings, and score reports retrieval precision@1.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import PairDataset, sample_batch
from .encoder import init_encoder
from .errors import InputError, InvalidConfigError
from .gradcache import embed_in_chunks, make_plan, train_step
from .harness import retrieval_metrics
from .infonce import similarity_matrix


def _split_pairs(X) -> tuple[np.ndarray, np.ndarray]:
    """Accept (n, m) self-paired rows or (n, 2, m) query/target pairs."""
    arr = check_array(X, dtype=np.float64, allow_nd=True, ensure_min_samples=2)
    if arr.ndim == 2:
        return arr, arr.copy()
    if arr.ndim == 3 and arr.shape[1] == 2:
        return np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1])
    raise InputError(
        f"X must be (n, features) or (n, 2, features), got shape {arr.shape}"
    )


def _as_dataset(queries: np.ndarray, targets: np.ndarray, y) -> PairDataset:
    n = queries.shape[0]
    if y is None:
        labels = np.arange(n, dtype=np.int64)
    else:
        labels = np.asarray(y)
        if labels.shape != (n,):
            raise InputError(f"y must have shape ({n},), got {labels.shape}")
        _, labels = np.unique(labels, return_inverse=True)
        labels = labels.astype(np.int64)
    class_ids = np.unique(labels)
    if len(class_ids) < 2:
        raise InvalidConfigError("need at least 2 distinct classes to contrast")
    records_by_class = [np.flatnonzero(labels == c).astype(np.int64) for c in class_ids]
    return PairDataset(queries, targets, labels, class_ids, records_by_class)


class ContrastiveEmbedder(TransformerMixin, BaseEstimator):
    """Two-tower MLP embedder trained with hardness-amplified info-NCE.

    Parameters follow the engine defaults: temperature tau, hardness scale
    alpha (alpha=0 or mode="baseline" disables amplification), in-batch
    negatives drawn as distinct classes per batch.
    """

    def __init__(
        self,
        hidden_widths=(64,),
        embed_dim=16,
        tau=0.02,
        alpha=20.0,
        mode="ega",
        hardness="relative",
        batch_size=32,
        chunk_size=8,
        steps=300,
        lr=2e-3,
        random_state=0,
    ):
        self.hidden_widths = hidden_widths
        self.embed_dim = embed_dim
        self.tau = tau
        self.alpha = alpha
        self.mode = mode
        self.hardness = hardness
        self.batch_size = batch_size
        self.chunk_size = chunk_size
        self.steps = steps
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y=None):
        queries, targets = _split_pairs(X)
        dataset = _as_dataset(queries, targets, y)
        self.n_features_in_ = queries.shape[1]
        widths = (self.n_features_in_, *tuple(self.hidden_widths), int(self.embed_dim))
        self.params_ = init_encoder(widths, int(self.random_state))

        b = min(int(self.batch_size), dataset.num_classes)
        plan = make_plan(b, min(int(self.chunk_size), b))
        self.loss_curve_ = []
        for step in range(int(self.steps)):
            q_in, t_in, _ = sample_batch(dataset, b, int(self.random_state), step)
            result = train_step(
                self.params_,
                q_in,
                t_in,
                tau=self.tau,
                alpha=self.alpha,
                plan=plan,
                lr=self.lr,
                mode=self.mode,
                hardness=self.hardness,
            )
            self.loss_curve_.append(result.loss_mean)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        arr = check_array(X, dtype=np.float64)
        if arr.shape[1] != self.n_features_in_:
            raise InputError(
                f"X has {arr.shape[1]} features, expected {self.n_features_in_}"
            )
        plan = make_plan(arr.shape[0], min(int(self.chunk_size), arr.shape[0]))
        return embed_in_chunks(self.params_, arr, plan)

    def score(self, X, y=None) -> float:
        """Precision@1 of retrieving each row's own target among all targets."""
        check_is_fitted(self, "params_")
        queries, targets = _split_pairs(X)
        scores = similarity_matrix(self.transform(queries), self.transform(targets))
        return retrieval_metrics(scores, np.arange(queries.shape[0]))["precision_at_1"]
